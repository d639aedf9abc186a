#pragma once

#include <random>
#include <vector>

#include "retarget/nn.h"

namespace retarget {

struct PPOConfig {
  int iterations = 20000;
  int num_envs = 4096;
  int steps_per_env = 24;
  int mini_batches = 4;
  int epochs = 5;
  double clip = 0.2;
  double entropy_coef = 0.0025;
  double gamma = 0.97;
  double lambda = 0.95;
  double desired_kl = 0.009;
  double max_grad_norm = 1.0;
  double learning_rate = 1e-3;  // initial; adapted from the measured KL
  double min_learning_rate = 1e-5;
  double max_learning_rate = 1e-2;
  double value_coef = 1.0;
  double init_std = 1.0;
  std::vector<int> hidden = {512, 512, 512};

  // Small networks and few environments for single-machine runs.
  static PPOConfig desk_scale();
  void validate() const;
};

// Running mean/variance of observations (parallel-merge update).
class ObsNormalizer {
 public:
  ObsNormalizer() = default;
  explicit ObsNormalizer(int dim);

  void update(const MatX& batch);
  MatX apply(const MatX& obs) const;  // clipped to +-5 sd

  const VecX& mean() const { return mean_; }
  const VecX& var() const { return var_; }
  double count() const { return count_; }
  void restore(const VecX& mean, const VecX& var, double count);

 private:
  VecX mean_, var_;
  double count_ = 0.0;
};

// Diagonal Gaussian policy with state-independent log-std and a separate
// value network of the same shape.
class ActorCritic {
 public:
  ActorCritic() = default;
  ActorCritic(int obs_dim, int act_dim, const std::vector<int>& hidden, double init_std,
              std::mt19937_64& rng);

  int obs_dim() const { return actor.input_dim(); }
  int act_dim() const { return actor.output_dim(); }

  // Flat layout: [actor | log_std | critic].
  VecX flat() const;
  void set_flat(const VecX& p);
  int num_params() const;

  Mlp actor;
  Mlp critic;
  VecX log_std;
};

VecX gaussian_log_prob(const MatX& mean, const VecX& log_std, const MatX& actions);

// One step of on-policy experience for N environments, stored flat with
// index t * N + env.
struct RolloutBuffer {
  int num_envs = 0;
  int steps = 0;
  MatX obs;      // normalized observations fed to the policy
  MatX actions;
  MatX means;
  VecX rewards;
  VecX dones;       // 1 where the episode ended after this step
  VecX bootstrap;   // value of the final state on truncation, 0 on termination
  VecX values;
  VecX log_probs;
  VecX log_std;     // policy log-std while collecting

  void reset(int num_envs, int steps, int obs_dim, int act_dim);
  int size() const { return num_envs * steps; }
};

struct Advantages {
  VecX advantages;
  VecX returns;
};

// GAE(gamma, lambda). `last_values` are V(s_T) per environment for the
// step after the buffer.
Advantages compute_gae(const RolloutBuffer& buf, const VecX& last_values, double gamma,
                       double lambda);

struct PPOStats {
  double kl = 0.0;
  double clip_fraction = 0.0;
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double learning_rate = 0.0;
};

class PPO {
 public:
  PPO() = default;
  PPO(ActorCritic policy, const PPOConfig& cfg);

  ActorCritic& policy() { return policy_; }
  const ActorCritic& policy() const { return policy_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  const PPOConfig& config() const { return cfg_; }

  // Samples actions; fills means, values and log-probs for the batch.
  void act(const MatX& obs, std::mt19937_64& rng, MatX& actions, MatX& means, VecX& values,
           VecX& log_probs) const;

  // Throws RuntimeFault on a non-finite loss.
  PPOStats update(const RolloutBuffer& buf, const VecX& last_values, std::mt19937_64& rng);

 private:
  ActorCritic policy_;
  PPOConfig cfg_;
  Adam adam_;
  double lr_ = 1e-3;
};

}  // namespace retarget
