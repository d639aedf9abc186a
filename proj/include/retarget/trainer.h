#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "retarget/bilevel.h"
#include "retarget/morphology.h"
#include "retarget/motion_clip.h"
#include "retarget/objective.h"
#include "retarget/ppo.h"
#include "retarget/sim.h"

namespace retarget {

struct TerminationThresholds {
  double position = 1.0;         // m
  double angle = M_PI / 4.0;     // rad
  void validate() const;
};

// True iff the root strays more than the thresholds from the reference root
// (strict inequalities) or the simulator flagged a fault.
bool check_termination(const Frame& root, const Frame& reference_root, bool fault,
                       const TerminationThresholds& th);

// Proprioceptive layout: h, projected gravity, v, w (root frame), q, qd,
// a_{t-1}, a_{t-2}, psi.
int proprio_dim(int num_joints, int action_dim);
VecX build_observation(const SimState& s, const VecX& prev_action, const VecX& prev_action2,
                       double psi);

// Reference features in the root frame: per pair position (3) and the first
// two rotation columns (6), then the root pair's linear and angular velocity.
int reference_dim(int num_pairs);
VecX reference_features(const Frame& root, const std::vector<Frame>& reference, int root_pair);

class MotionSampler {
 public:
  MotionSampler() = default;
  MotionSampler(int num_motions, double floor);

  // p_i proportional to (failures_i + floor) / (samples_i + 1).
  std::vector<double> probabilities() const;
  int sample(std::mt19937_64& rng) const;
  void record(int motion, bool failed);

  const std::vector<long>& failures() const { return failures_; }
  const std::vector<long>& samples() const { return samples_; }
  void restore(std::vector<long> failures, std::vector<long> samples);
  double floor() const { return floor_; }

 private:
  double floor_ = 0.1;
  std::vector<long> failures_;
  std::vector<long> samples_;
};

// Everything immutable about one retargeting problem.
struct Problem {
  std::shared_ptr<const Morphology> source;
  std::shared_ptr<const Morphology> target;
  CorrespondenceSet pairs;
  Calibration cal;
  std::vector<MotionClip> clips;
  std::vector<double> z_nom;               // per clip
  std::vector<std::vector<int>> columns;   // per clip, per pair

  // Resolves pairs, calibrates, precomputes z_nom and fills missing velocities.
  static Problem build(Morphology source, Morphology target,
                       const std::vector<CorrespondencePair>& pairs, std::vector<MotionClip> clips);
  int num_motions() const { return static_cast<int>(clips.size()); }
};

struct EpisodeContext {
  int motion = 0;
  int start_frame = 0;
  int steps = 0;        // control steps since the episode began
  int ramp_steps = 50;  // T_ramp in control steps

  double psi() const {
    return ramp_steps <= 0 ? 1.0 : std::min(1.0, static_cast<double>(steps) / ramp_steps);
  }
  // Reference time in the clip; paused at the start frame during the ramp.
  double reference_time(double fps, double dt) const {
    return start_frame / fps + std::max(0, steps - ramp_steps) * dt;
  }
};

struct TrainerConfig {
  PPOConfig ppo = PPOConfig::desk_scale();
  UpdateConfig update;
  ConstraintBox box;
  SimConfig sim;
  LossWeights loss;
  RewardConfig reward = RewardConfig::retargeting();
  TerminationThresholds termination;
  double ramp_time = 1.0;        // s
  double init_sigma = 0.1;       // rad, joint initialization spread
  double action_scale = 0.5;     // rad per unit joint action
  double action_clip = 5.0;      // applied actions are clamped to +-clip
  double sampler_floor = 0.1;
  double max_episode_time = 10.0;  // s of tracking after the ramp
  bool bilevel = true;
  std::uint64_t seed = 1;

  void validate() const;
};

// Root reference at `start_frame`, q ~ N(nominal, sigma^2) clamped to the
// limits, qd = 0, psi = 0.
std::pair<SimState, EpisodeContext> init_episode(const Problem& problem, const Simulator& sim,
                                                 const RetargetParams& params, int motion,
                                                 int start_frame, double sigma, int ramp_steps,
                                                 std::mt19937_64& rng);

struct IterationLog {
  int iteration = 0;
  double mean_reward = 0.0;     // per control step, before dt scaling
  double upper_loss = 0.0;      // mean batch loss at the rollout parameters
  double update_rate = 0.0;     // ||p_new - p_old||
  double kl = 0.0;
  double learning_rate = 0.0;
  double failure_rate = 0.0;    // early terminations / finished episodes
  int upper_samples = 0;
  double mean_root_force = 0.0; // N, applied after deadband
  Saturation saturation;
};

// One control step of one environment, for replay checks.
struct StepRecord {
  int env = 0;
  int motion = 0;
  double psi = 0.0;
  SimState state;
  std::vector<Frame> reference;
  VecX setpoints, setpoints_prev, setpoints_prev2;
  double reward = 0.0;
  bool terminated = false;
};

// Per-environment episode state.
struct EnvSlot {
  SimState state;
  EpisodeContext ctx;
  VecX prev_action, prev_action2;
  VecX setpoints_prev, setpoints_prev2;
};

// Everything needed to resume training bit-for-bit.
struct TrainerState {
  int iteration = 0;
  VecX policy;
  VecX adam_m, adam_v;
  long adam_steps = 0;
  double learning_rate = 0.0;
  VecX obs_mean, obs_var;
  double obs_count = 0.0;
  RetargetParams params;
  std::vector<long> failures, samples;
  std::string rng;
  std::vector<EnvSlot> envs;
};

struct ExportedMotion {
  MotionClip trajectory;   // target body frames, one per reference frame
  bool success = true;     // no early termination
  double max_root_force = 0.0;  // N, over the tracking phase
};

class Trainer {
 public:
  Trainer(std::shared_ptr<const Problem> problem, TrainerConfig cfg);

  const Problem& problem() const { return *problem_; }
  const TrainerConfig& config() const { return cfg_; }
  const RetargetParams& params() const { return params_; }
  void set_params(const RetargetParams& p) { params_ = p; }
  const PPO& ppo() const { return ppo_; }
  const MotionSampler& sampler() const { return sampler_; }
  int iteration() const { return iteration_; }
  int observation_dim() const { return obs_dim_; }
  int action_dim() const { return act_dim_; }

  // Collects one rollout without learning; returns the filtered upper batch.
  UpperBatch rollout(RolloutBuffer& buf, VecX& last_values, std::vector<double>& rewards,
                     int& terminations, int& episodes, double& root_force);
  // rollout + PPO update + upper-level step.
  IterationLog iterate();

  void set_recorder(std::function<void(const StepRecord&)> r) { recorder_ = std::move(r); }

  // Deterministic (mean-action) playback of a whole clip from frame 0.
  ExportedMotion retarget(int motion) const;

  TrainerState state() const;
  void restore(const TrainerState& s);

 private:
  VecX observe(const EnvSlot& e) const;
  void reset_env(EnvSlot& e);
  ControlInput control(const VecX& action, VecX& setpoints) const;
  std::vector<Frame> reference(const EpisodeContext& ctx) const;
  std::vector<Frame> simulated(const SimState& s) const;

  std::shared_ptr<const Problem> problem_;
  TrainerConfig cfg_;
  std::shared_ptr<const Simulator> sim_;
  int ramp_steps_ = 0;
  int obs_dim_ = 0;
  int act_dim_ = 0;
  std::mt19937_64 rng_;
  PPO ppo_;
  ObsNormalizer normalizer_;
  RetargetParams params_;
  MotionSampler sampler_;
  std::vector<EnvSlot> envs_;
  int iteration_ = 0;
  std::function<void(const StepRecord&)> recorder_;
};

}  // namespace retarget
