#include "retarget/ppo.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "retarget/errors.h"

namespace retarget {
namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

PPOConfig PPOConfig::desk_scale() {
  PPOConfig c;
  c.iterations = 300;
  c.num_envs = 64;
  c.hidden = {128, 128};
  return c;
}

void PPOConfig::validate() const {
  if (iterations < 0 || num_envs < 1 || steps_per_env < 1 || mini_batches < 1 || epochs < 1) {
    throw ValidationError("ppo: counts must be positive");
  }
  if (num_envs * steps_per_env < mini_batches) {
    throw ValidationError("ppo: fewer samples than mini-batches");
  }
  if (!(clip > 0.0 && clip < 1.0)) throw ValidationError("ppo: clip must lie in (0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("ppo: gamma must lie in (0, 1] and lambda in [0, 1]");
  }
  if (!(desired_kl > 0.0 && max_grad_norm > 0.0 && learning_rate > 0.0 && init_std > 0.0)) {
    throw ValidationError("ppo: desired_kl, max_grad_norm, learning_rate, init_std must be > 0");
  }
  if (!(min_learning_rate > 0.0 && min_learning_rate <= max_learning_rate)) {
    throw ValidationError("ppo: invalid learning-rate bounds");
  }
  if (entropy_coef < 0.0 || value_coef < 0.0) throw ValidationError("ppo: coefficients must be >= 0");
  for (int h : hidden) {
    if (h < 1) throw ValidationError("ppo: hidden sizes must be >= 1");
  }
}

ObsNormalizer::ObsNormalizer(int dim) : mean_(VecX::Zero(dim)), var_(VecX::Ones(dim)) {}

void ObsNormalizer::update(const MatX& batch) {
  const double n = static_cast<double>(batch.cols());
  if (n == 0) return;
  const VecX bm = batch.rowwise().mean();
  const VecX bv = (batch.colwise() - bm).rowwise().squaredNorm() / n;
  const double total = count_ + n;
  const VecX delta = bm - mean_;
  mean_ += delta * (n / total);
  var_ = (var_ * count_ + bv * n + delta.cwiseAbs2() * (count_ * n / total)) / total;
  count_ = total;
}

MatX ObsNormalizer::apply(const MatX& obs) const {
  const VecX inv = (var_.array() + 1e-8).rsqrt();
  return ((obs.colwise() - mean_).array().colwise() * inv.array()).cwiseMax(-5.0).cwiseMin(5.0);
}

void ObsNormalizer::restore(const VecX& mean, const VecX& var, double count) {
  mean_ = mean;
  var_ = var;
  count_ = count;
}

ActorCritic::ActorCritic(int obs_dim, int act_dim, const std::vector<int>& hidden, double init_std,
                         std::mt19937_64& rng)
    : actor(obs_dim, hidden, act_dim, rng, 0.01),
      critic(obs_dim, hidden, 1, rng, 1.0),
      log_std(VecX::Constant(act_dim, std::log(init_std))) {}

int ActorCritic::num_params() const {
  return actor.num_params() + static_cast<int>(log_std.size()) + critic.num_params();
}

VecX ActorCritic::flat() const {
  VecX p(num_params());
  p << actor.params(), log_std, critic.params();
  return p;
}

void ActorCritic::set_flat(const VecX& p) {
  if (p.size() != num_params()) throw ValidationError("policy: parameter count mismatch");
  const int a = actor.num_params();
  const int s = static_cast<int>(log_std.size());
  actor.set_params(p.head(a));
  log_std = p.segment(a, s);
  critic.set_params(p.tail(critic.num_params()));
}

VecX gaussian_log_prob(const MatX& mean, const VecX& log_std, const MatX& actions) {
  const VecX inv_std = (-log_std.array()).exp();
  const MatX z = (actions - mean).array().colwise() * inv_std.array();
  const double norm = log_std.sum() + 0.5 * kLog2Pi * static_cast<double>(log_std.size());
  return (-0.5 * z.colwise().squaredNorm().array() - norm).matrix().transpose();
}

void RolloutBuffer::reset(int n, int t, int obs_dim, int act_dim) {
  num_envs = n;
  steps = t;
  obs.resize(obs_dim, n * t);
  actions.resize(act_dim, n * t);
  means.resize(act_dim, n * t);
  rewards = VecX::Zero(n * t);
  dones = VecX::Zero(n * t);
  bootstrap = VecX::Zero(n * t);
  values = VecX::Zero(n * t);
  log_probs = VecX::Zero(n * t);
}

Advantages compute_gae(const RolloutBuffer& buf, const VecX& last_values, double gamma,
                       double lambda) {
  const int N = buf.num_envs;
  Advantages out;
  out.advantages = VecX::Zero(buf.size());
  for (int i = 0; i < N; ++i) {
    double next_adv = 0.0;
    double next_value = last_values[i];
    for (int t = buf.steps - 1; t >= 0; --t) {
      const int k = t * N + i;
      const bool done = buf.dones[k] > 0.5;
      const double v_next = done ? buf.bootstrap[k] : next_value;
      const double delta = buf.rewards[k] + gamma * v_next - buf.values[k];
      next_adv = delta + (done ? 0.0 : gamma * lambda * next_adv);
      out.advantages[k] = next_adv;
      next_value = buf.values[k];
    }
  }
  out.returns = out.advantages + buf.values;
  return out;
}

PPO::PPO(ActorCritic policy, const PPOConfig& cfg)
    : policy_(std::move(policy)), cfg_(cfg), adam_(policy_.num_params()), lr_(cfg.learning_rate) {}

void PPO::act(const MatX& obs, std::mt19937_64& rng, MatX& actions, MatX& means, VecX& values,
              VecX& log_probs) const {
  means = policy_.actor.forward(obs);
  values = policy_.critic.forward(obs).row(0).transpose();
  std::normal_distribution<double> normal(0.0, 1.0);
  const VecX std = policy_.log_std.array().exp();
  actions.resize(means.rows(), means.cols());
  for (int c = 0; c < means.cols(); ++c) {
    for (int r = 0; r < means.rows(); ++r) actions(r, c) = means(r, c) + std[r] * normal(rng);
  }
  log_probs = gaussian_log_prob(means, policy_.log_std, actions);
}

PPOStats PPO::update(const RolloutBuffer& buf, const VecX& last_values, std::mt19937_64& rng) {
  const Advantages gae = compute_gae(buf, last_values, cfg_.gamma, cfg_.lambda);
  VecX adv = gae.advantages;
  const double adv_mean = adv.mean();
  const double adv_std =
      std::sqrt((adv.array() - adv_mean).square().sum() / std::max(1.0, adv.size() - 1.0));
  adv = (adv.array() - adv_mean) / (adv_std + 1e-8);

  const int B = buf.size();
  const int A = policy_.act_dim();
  const int mb = B / cfg_.mini_batches;
  std::vector<int> index(B);
  PPOStats stats;
  int passes = 0;

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::iota(index.begin(), index.end(), 0);
    std::shuffle(index.begin(), index.end(), rng);
    for (int m = 0; m < cfg_.mini_batches; ++m) {
      const int n = m + 1 == cfg_.mini_batches ? B - m * mb : mb;
      MatX obs(buf.obs.rows(), n), act(A, n), old_mean(A, n);
      VecX old_logp(n), a_mb(n), ret(n);
      for (int j = 0; j < n; ++j) {
        const int k = index[m * mb + j];
        obs.col(j) = buf.obs.col(k);
        act.col(j) = buf.actions.col(k);
        old_mean.col(j) = buf.means.col(k);
        old_logp[j] = buf.log_probs[k];
        a_mb[j] = adv[k];
        ret[j] = gae.returns[k];
      }

      Mlp::Cache actor_cache, critic_cache;
      const MatX mean = policy_.actor.forward(obs, actor_cache);
      const VecX value = policy_.critic.forward(obs, critic_cache).row(0).transpose();
      const VecX& ls = policy_.log_std;
      const VecX inv_var = (-2.0 * ls.array()).exp();
      const VecX logp = gaussian_log_prob(mean, ls, act);

      // KL(old || new) of the diagonal Gaussians, averaged over the batch.
      const MatX dmu = old_mean - mean;
      const VecX old_var = (2.0 * buf.log_std.array()).exp();
      const double kl_const = (ls - buf.log_std).sum() +
                              0.5 * (old_var.array() * inv_var.array()).sum() - 0.5 * A;
      const double kl =
          kl_const +
          0.5 * (dmu.array().square().colwise() * inv_var.array()).colwise().sum().mean();

      double surrogate = 0.0;
      int clipped = 0;
      VecX dlogp(n);
      for (int j = 0; j < n; ++j) {
        const double r = std::exp(logp[j] - old_logp[j]);
        const double rc = std::clamp(r, 1.0 - cfg_.clip, 1.0 + cfg_.clip);
        const double u = r * a_mb[j];
        const double c = rc * a_mb[j];
        if (rc != r) ++clipped;
        surrogate -= std::min(u, c) / n;
        dlogp[j] = u <= c ? -a_mb[j] * r / n : 0.0;
      }
      const VecX verr = value - ret;
      const double value_loss = verr.squaredNorm() / n;
      const double entropy = ls.sum() + 0.5 * (1.0 + kLog2Pi) * A;
      const double loss = surrogate + cfg_.value_coef * value_loss - cfg_.entropy_coef * entropy;
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "ppo: non-finite loss (surrogate " << surrogate << ", value " << value_loss
            << ", entropy " << entropy << ")";
        throw RuntimeFault(msg.str());
      }

      // d logp / d mean = (a - mean) / var; d logp / d log_std = z^2 - 1.
      const MatX diff = act - mean;
      const MatX dmean = (diff.array().colwise() * inv_var.array()).rowwise() * dlogp.transpose().array();
      const MatX z2 = diff.array().square().colwise() * inv_var.array();
      VecX dls = ((z2.array() - 1.0).rowwise() * dlogp.transpose().array()).rowwise().sum();
      dls.array() -= cfg_.entropy_coef;
      const MatX dvalue = (2.0 * cfg_.value_coef / n) * verr.transpose();

      VecX grad(policy_.num_params());
      grad << policy_.actor.backward(actor_cache, dmean), dls,
          policy_.critic.backward(critic_cache, dvalue);
      const double gn = grad.norm();
      if (!std::isfinite(gn)) throw RuntimeFault("ppo: non-finite gradient");
      if (gn > cfg_.max_grad_norm) grad *= cfg_.max_grad_norm / gn;

      if (kl > 2.0 * cfg_.desired_kl) {
        lr_ = std::max(cfg_.min_learning_rate, lr_ / 2.0);
      } else if (kl < 0.5 * cfg_.desired_kl) {
        lr_ = std::min(cfg_.max_learning_rate, lr_ * 2.0);
      }
      VecX p = policy_.flat();
      adam_.step(p, grad, lr_);
      policy_.set_flat(p);

      stats.kl += kl;
      stats.clip_fraction += static_cast<double>(clipped) / n;
      stats.surrogate += surrogate;
      stats.value_loss += value_loss;
      stats.entropy += entropy;
      ++passes;
    }
  }
  stats.kl /= passes;
  stats.clip_fraction /= passes;
  stats.surrogate /= passes;
  stats.value_loss /= passes;
  stats.entropy /= passes;
  stats.learning_rate = lr_;
  return stats;
}

}  // namespace retarget
