#include "retarget/trainer.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "retarget/errors.h"
#include "retarget/refmap.h"

namespace retarget {

void TerminationThresholds::validate() const {
  if (!(position > 0.0 && angle > 0.0)) throw ValidationError("termination thresholds must be > 0");
}

bool check_termination(const Frame& root, const Frame& reference_root, bool fault,
                       const TerminationThresholds& th) {
  if (fault) return true;
  if ((root.pos - reference_root.pos).norm() > th.position) return true;
  return geodesic_error(reference_root.rot, root.rot).norm() > th.angle;
}

int proprio_dim(int num_joints, int action_dim) { return 11 + 2 * num_joints + 2 * action_dim; }

VecX build_observation(const SimState& s, const VecX& prev_action, const VecX& prev_action2,
                       double psi) {
  const int n = static_cast<int>(s.q.size());
  const int a = static_cast<int>(prev_action.size());
  VecX o(proprio_dim(n, a));
  const Mat3 Rt = s.root.rot.transpose();
  o[0] = s.root.pos.z();
  o.segment<3>(1) = Rt * Vec3(0.0, 0.0, -1.0);
  o.segment<3>(4) = Rt * s.root.linvel;
  o.segment<3>(7) = Rt * s.root.angvel;
  o.segment(10, n) = s.q;
  o.segment(10 + n, n) = s.qd;
  o.segment(10 + 2 * n, a) = prev_action;
  o.segment(10 + 2 * n + a, a) = prev_action2;
  o[10 + 2 * n + 2 * a] = psi;
  return o;
}

int reference_dim(int num_pairs) { return 9 * num_pairs + 6; }

VecX reference_features(const Frame& root, const std::vector<Frame>& reference, int root_pair) {
  const int P = static_cast<int>(reference.size());
  VecX f(reference_dim(P));
  const Mat3 Rt = root.rot.transpose();
  for (int b = 0; b < P; ++b) {
    f.segment<3>(9 * b) = Rt * (reference[b].pos - root.pos);
    const Mat3 Rrel = Rt * reference[b].rot;
    f.segment<3>(9 * b + 3) = Rrel.col(0);
    f.segment<3>(9 * b + 6) = Rrel.col(1);
  }
  f.segment<3>(9 * P) = Rt * reference[root_pair].linvel;
  f.segment<3>(9 * P + 3) = Rt * reference[root_pair].angvel;
  return f;
}

MotionSampler::MotionSampler(int num_motions, double floor)
    : floor_(floor), failures_(num_motions, 0), samples_(num_motions, 0) {
  if (num_motions < 1) throw ValidationError("sampler: need at least one motion");
  if (!(floor > 0.0)) throw ValidationError("sampler: floor must be > 0");
}

std::vector<double> MotionSampler::probabilities() const {
  std::vector<double> p(failures_.size());
  double total = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = (failures_[i] + floor_) / (samples_[i] + 1.0);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

int MotionSampler::sample(std::mt19937_64& rng) const {
  const auto p = probabilities();
  std::discrete_distribution<int> d(p.begin(), p.end());
  return d(rng);
}

void MotionSampler::record(int motion, bool failed) {
  ++samples_.at(motion);
  if (failed) ++failures_[motion];
}

void MotionSampler::restore(std::vector<long> failures, std::vector<long> samples) {
  if (failures.size() != failures_.size() || samples.size() != samples_.size()) {
    throw ValidationError("sampler: restored counts have the wrong size");
  }
  failures_ = std::move(failures);
  samples_ = std::move(samples);
}

Problem Problem::build(Morphology source, Morphology target,
                       const std::vector<CorrespondencePair>& pairs, std::vector<MotionClip> clips) {
  if (clips.empty()) throw ValidationError("problem: no motion clips");
  Problem p;
  p.source = std::make_shared<const Morphology>(std::move(source));
  p.target = std::make_shared<const Morphology>(std::move(target));
  p.pairs = resolve_correspondences(pairs, *p.source, *p.target);
  p.cal = calibrate(*p.source, *p.target, p.pairs);
  for (auto& c : clips) {
    validate_clip(c);
    if (c.num_frames() < 2) throw ValidationError("clip '" + c.id + "' needs at least two frames");
    if (!c.has_velocities) fill_velocities(c);
    c.z_nom = precompute_z_nom(c, *p.source, p.cal);
    p.z_nom.push_back(c.z_nom);
    p.columns.push_back(pair_columns(c, *p.source, p.pairs));
  }
  p.clips = std::move(clips);
  return p;
}

void TrainerConfig::validate() const {
  ppo.validate();
  update.validate();
  box.validate();
  sim.validate();
  reward.validate();
  termination.validate();
  if (loss.w_x < 0 || loss.w_R < 0 || loss.w_v < 0 || loss.w_w < 0) {
    throw ValidationError("loss weights must be >= 0");
  }
  if (ramp_time < 0.0 || init_sigma < 0.0) throw ValidationError("ramp_time and init_sigma must be >= 0");
  if (!(action_scale > 0.0 && action_clip > 0.0 && max_episode_time > 0.0)) {
    throw ValidationError("action_scale, action_clip and max_episode_time must be > 0");
  }
  if (!(sampler_floor > 0.0)) throw ValidationError("sampler_floor must be > 0");
}

namespace {

// Snaps fractional frame positions that are integers up to rounding, so
// that clip frames are hit exactly when the control and clip rates agree.
std::vector<Frame> frames_at(const MotionClip& clip, double time) {
  const double u = time * clip.fps;
  const double r = std::round(u);
  if (std::abs(u - r) < 1e-9) {
    const int i = std::clamp(static_cast<int>(r), 0, clip.num_frames() - 1);
    return clip.frames[i];
  }
  return sample_clip(clip, time);
}

}  // namespace

std::pair<SimState, EpisodeContext> init_episode(const Problem& problem, const Simulator& sim,
                                                 const RetargetParams& params, int motion,
                                                 int start_frame, double sigma, int ramp_steps,
                                                 std::mt19937_64& rng) {
  if (motion < 0 || motion >= problem.num_motions()) {
    throw ValidationError("init_episode: unknown motion " + std::to_string(motion));
  }
  const MotionClip& clip = problem.clips[motion];
  if (start_frame < 0 || start_frame >= clip.num_frames()) {
    throw ValidationError("init_episode: invalid start frame " + std::to_string(start_frame));
  }
  const int rp = problem.pairs.root_pair;
  const Frame& src = clip.frames[start_frame][problem.columns[motion][rp]];
  const Frame root = map_reference(problem.cal, params, src, rp, motion, problem.z_nom[motion]);

  const Morphology& m = *problem.target;
  VecX q = m.nominal_q();
  if (sigma > 0.0) {
    std::normal_distribution<double> n(0.0, sigma);
    for (int j = 0; j < m.num_joints(); ++j) {
      q[j] = std::clamp(q[j] + n(rng), m.joints()[j].lower, m.joints()[j].upper);
    }
  }
  EpisodeContext ctx;
  ctx.motion = motion;
  ctx.start_frame = start_frame;
  ctx.ramp_steps = ramp_steps;
  return {sim.make_state(root, q, VecX::Zero(m.num_joints())), ctx};
}

Trainer::Trainer(std::shared_ptr<const Problem> problem, TrainerConfig cfg)
    : problem_(std::move(problem)), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  const Problem& p = *problem_;
  sim_ = std::make_shared<const Simulator>(p.target, cfg_.sim);
  ramp_steps_ = static_cast<int>(std::lround(cfg_.ramp_time / cfg_.sim.control_dt));
  const int n = p.target->num_joints();
  act_dim_ = n + 6;
  obs_dim_ = proprio_dim(n, act_dim_) + reference_dim(p.pairs.size());
  ActorCritic policy(obs_dim_, act_dim_, cfg_.ppo.hidden, cfg_.ppo.init_std, rng_);
  ppo_ = PPO(std::move(policy), cfg_.ppo);
  normalizer_ = ObsNormalizer(obs_dim_);
  params_ = RetargetParams::zeros(p.pairs.size(), p.num_motions());
  sampler_ = MotionSampler(p.num_motions(), cfg_.sampler_floor);
  envs_.resize(cfg_.ppo.num_envs);
  for (auto& e : envs_) reset_env(e);
}

std::vector<Frame> Trainer::reference(const EpisodeContext& ctx) const {
  const Problem& p = *problem_;
  const MotionClip& clip = p.clips[ctx.motion];
  const auto row = frames_at(clip, ctx.reference_time(clip.fps, cfg_.sim.control_dt));
  return map_reference_set(p.cal, params_, row, p.columns[ctx.motion], ctx.motion,
                           p.z_nom[ctx.motion]);
}

std::vector<Frame> Trainer::simulated(const SimState& s) const {
  std::vector<Frame> out;
  for (const auto& rp : problem_->pairs.resolved) out.push_back(s.body_frames[rp.target_body]);
  return out;
}

void Trainer::reset_env(EnvSlot& e) {
  const Problem& p = *problem_;
  const int motion = sampler_.sample(rng_);
  std::uniform_int_distribution<int> start(0, p.clips[motion].num_frames() - 2);
  auto [state, ctx] =
      init_episode(p, *sim_, params_, motion, start(rng_), cfg_.init_sigma, ramp_steps_, rng_);
  e.state = std::move(state);
  e.ctx = ctx;
  e.prev_action = VecX::Zero(act_dim_);
  e.prev_action2 = VecX::Zero(act_dim_);
  e.setpoints_prev = p.target->nominal_q();
  e.setpoints_prev2 = p.target->nominal_q();
}

VecX Trainer::observe(const EnvSlot& e) const {
  VecX o(obs_dim_);
  const int pd = proprio_dim(problem_->target->num_joints(), act_dim_);
  o.head(pd) = build_observation(e.state, e.prev_action, e.prev_action2, e.ctx.psi());
  o.tail(obs_dim_ - pd) =
      reference_features(e.state.root, reference(e.ctx), problem_->pairs.root_pair);
  return o;
}

ControlInput Trainer::control(const VecX& action, VecX& setpoints) const {
  const int n = problem_->target->num_joints();
  const VecX a = action.cwiseMax(-cfg_.action_clip).cwiseMin(cfg_.action_clip);
  setpoints = problem_->target->nominal_q() + cfg_.action_scale * a.head(n);
  ControlInput u;
  u.setpoints = setpoints;
  u.force = a.segment<3>(n);
  u.torque = a.segment<3>(n + 3);
  return u;
}

UpperBatch Trainer::rollout(RolloutBuffer& buf, VecX& last_values, std::vector<double>& rewards,
                            int& terminations, int& episodes, double& root_force) {
  const Problem& p = *problem_;
  const int N = static_cast<int>(envs_.size());
  const int T = cfg_.ppo.steps_per_env;
  const double dt = cfg_.sim.control_dt;
  buf.reset(N, T, obs_dim_, act_dim_);
  buf.log_std = ppo_.policy().log_std;
  UpperBatch upper;
  rewards.clear();
  terminations = 0;
  episodes = 0;
  root_force = 0.0;

  MatX raw(obs_dim_, N);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < N; ++i) raw.col(i) = observe(envs_[i]);
    normalizer_.update(raw);
    const MatX obs = normalizer_.apply(raw);
    MatX actions, means;
    VecX values, logp;
    ppo_.act(obs, rng_, actions, means, values, logp);

    for (int i = 0; i < N; ++i) {
      EnvSlot& e = envs_[i];
      const int k = t * N + i;
      VecX setpoints;
      const ControlInput u = control(actions.col(i), setpoints);
      e.state = sim_->step(e.state, u);
      ++e.ctx.steps;
      const double psi = e.ctx.psi();
      const auto ref = reference(e.ctx);
      const auto sim_frames = simulated(e.state);

      RewardInputs in;
      in.reference = &ref;
      in.simulated = &sim_frames;
      in.pairs = &p.pairs;
      in.joint_torques = &e.state.last_joint_torques;
      in.joint_acc = &e.state.last_joint_acc;
      in.setpoints = &setpoints;
      in.setpoints_prev = &e.setpoints_prev;
      in.setpoints_prev2 = &e.setpoints_prev2;
      in.root_force = e.state.applied_force;
      in.root_torque = e.state.applied_torque;
      in.psi = psi;
      const double r = step_reward(in, cfg_.reward).total;

      const bool terminated = check_termination(sim_frames[p.pairs.root_pair], ref[p.pairs.root_pair],
                                                e.state.fault, cfg_.termination);
      if (!terminated && psi >= 1.0) {
        const MotionClip& clip = p.clips[e.ctx.motion];
        const auto row = frames_at(clip, e.ctx.reference_time(clip.fps, dt));
        for (int b = 0; b < p.pairs.size(); ++b) {
          UpperSample s;
          s.pair = b;
          s.motion = e.ctx.motion;
          s.z_nom = p.z_nom[e.ctx.motion];
          s.source = row[p.columns[e.ctx.motion][b]];
          s.simulated = sim_frames[b];
          upper.add(s, psi);
        }
      }
      if (recorder_) {
        recorder_(StepRecord{i, e.ctx.motion, psi, e.state, ref, setpoints, e.setpoints_prev,
                             e.setpoints_prev2, r, terminated});
      }
      rewards.push_back(r);
      root_force += e.state.applied_force.norm();

      buf.obs.col(k) = obs.col(i);
      buf.actions.col(k) = actions.col(i);
      buf.means.col(k) = means.col(i);
      buf.values[k] = values[i];
      buf.log_probs[k] = logp[i];
      buf.rewards[k] = r * dt;

      e.prev_action2 = e.prev_action;
      e.prev_action = actions.col(i).cwiseMax(-cfg_.action_clip).cwiseMin(cfg_.action_clip);
      e.setpoints_prev2 = e.setpoints_prev;
      e.setpoints_prev = setpoints;

      const MotionClip& clip = p.clips[e.ctx.motion];
      const double t_ref = e.ctx.reference_time(clip.fps, dt);
      const double tracked = std::max(0, e.ctx.steps - e.ctx.ramp_steps) * dt;
      const bool truncated = !terminated && (t_ref >= clip.duration() - 1e-9 ||
                                             tracked >= cfg_.max_episode_time - 1e-9);
      if (terminated || truncated) {
        buf.dones[k] = 1.0;
        if (truncated) {
          const MatX last = normalizer_.apply(observe(e));
          buf.bootstrap[k] = ppo_.policy().critic.forward(last)(0, 0);
        }
        sampler_.record(e.ctx.motion, terminated);
        ++episodes;
        if (terminated) ++terminations;
        reset_env(e);
      }
    }
  }
  for (int i = 0; i < N; ++i) raw.col(i) = observe(envs_[i]);
  last_values = ppo_.policy().critic.forward(normalizer_.apply(raw)).row(0).transpose();
  root_force /= static_cast<double>(N * T);
  return upper;
}

IterationLog Trainer::iterate() {
  const Problem& p = *problem_;
  RolloutBuffer buf;
  VecX last_values;
  std::vector<double> rewards;
  IterationLog log;
  log.iteration = iteration_;
  int terminations = 0, episodes = 0;
  const UpperBatch upper = rollout(buf, last_values, rewards, terminations, episodes,
                                   log.mean_root_force);
  double sum = 0.0;
  for (double r : rewards) sum += r;
  log.mean_reward = rewards.empty() ? 0.0 : sum / rewards.size();
  log.failure_rate = episodes > 0 ? static_cast<double>(terminations) / episodes : 0.0;

  const PPOStats stats = ppo_.update(buf, last_values, rng_);
  log.kl = stats.kl;
  log.learning_rate = stats.learning_rate;

  log.upper_samples = static_cast<int>(upper.size());
  if (!upper.empty()) log.upper_loss = batch_loss(upper, params_, p.cal, p.pairs, cfg_.loss);
  if (cfg_.bilevel && !upper.empty()) {
    const auto g = grad_estimate(upper, params_, p.cal, p.pairs, cfg_.loss, cfg_.update.sensitivity);
    const auto step = ttsa_step(params_, g.grad, cfg_.update.annealed_step(iteration_), cfg_.box);
    params_ = step.params;
    log.update_rate = step.update_norm;
  }
  log.saturation = saturation(params_, cfg_.box);
  ++iteration_;
  return log;
}

ExportedMotion Trainer::retarget(int motion) const {
  const Problem& p = *problem_;
  if (motion < 0 || motion >= p.num_motions()) {
    throw ValidationError("retarget: unknown motion " + std::to_string(motion));
  }
  const MotionClip& clip = p.clips[motion];
  const double dt = cfg_.sim.control_dt;
  std::mt19937_64 unused(0);
  auto [state, ctx] = init_episode(p, *sim_, params_, motion, 0, 0.0, ramp_steps_, unused);
  EnvSlot e;
  e.state = std::move(state);
  e.ctx = ctx;
  e.prev_action = VecX::Zero(act_dim_);
  e.prev_action2 = VecX::Zero(act_dim_);

  ExportedMotion out;
  out.trajectory.id = clip.id;
  out.trajectory.fps = 1.0 / dt;
  for (const auto& b : p.target->bodies()) out.trajectory.bodies.push_back(b.name);
  if (ramp_steps_ == 0) out.trajectory.frames.push_back(e.state.body_frames);

  while (true) {
    const MatX obs = normalizer_.apply(observe(e));
    const VecX action = ppo_.policy().actor.forward(obs).col(0);
    VecX setpoints;
    e.state = sim_->step(e.state, control(action, setpoints));
    ++e.ctx.steps;
    e.prev_action2 = e.prev_action;
    e.prev_action = action.cwiseMax(-cfg_.action_clip).cwiseMin(cfg_.action_clip);
    const auto ref = reference(e.ctx);
    const int rp = p.pairs.root_pair;
    const bool terminated = check_termination(e.state.body_frames[p.pairs.resolved[rp].target_body],
                                              ref[rp], e.state.fault, cfg_.termination);
    if (e.ctx.steps >= e.ctx.ramp_steps) {
      out.trajectory.frames.push_back(e.state.body_frames);
      out.max_root_force = std::max(out.max_root_force, e.state.applied_force.norm());
    }
    if (terminated) {
      out.success = false;
      // A fall during the ramp still leaves the terminal pose to inspect.
      if (out.trajectory.frames.empty()) out.trajectory.frames.push_back(e.state.body_frames);
      break;
    }
    if (e.ctx.reference_time(clip.fps, dt) >= clip.duration() - 1e-9) break;
  }
  return out;
}

TrainerState Trainer::state() const {
  TrainerState s;
  s.iteration = iteration_;
  s.policy = ppo_.policy().flat();
  s.adam_m = ppo_.optimizer().m();
  s.adam_v = ppo_.optimizer().v();
  s.adam_steps = ppo_.optimizer().steps();
  s.learning_rate = ppo_.learning_rate();
  s.obs_mean = normalizer_.mean();
  s.obs_var = normalizer_.var();
  s.obs_count = normalizer_.count();
  s.params = params_;
  s.failures = sampler_.failures();
  s.samples = sampler_.samples();
  std::ostringstream rng;
  rng << rng_;
  s.rng = rng.str();
  s.envs = envs_;
  return s;
}

void Trainer::restore(const TrainerState& s) {
  if (s.envs.size() != envs_.size()) throw ValidationError("checkpoint: environment count mismatch");
  if (s.params.num_pairs() != params_.num_pairs() || s.params.num_motions() != params_.num_motions()) {
    throw ValidationError("checkpoint: parameter shape mismatch");
  }
  iteration_ = s.iteration;
  ppo_.policy().set_flat(s.policy);
  ppo_.optimizer().restore(s.adam_m, s.adam_v, s.adam_steps);
  ppo_.set_learning_rate(s.learning_rate);
  normalizer_.restore(s.obs_mean, s.obs_var, s.obs_count);
  params_ = s.params;
  sampler_.restore(s.failures, s.samples);
  std::istringstream rng(s.rng);
  rng >> rng_;
  if (!rng) throw ValidationError("checkpoint: unreadable RNG state");
  envs_ = s.envs;
  for (auto& e : envs_) {
    e.state = sim_->make_state(e.state.root, e.state.q, e.state.qd);
  }
}

}  // namespace retarget
