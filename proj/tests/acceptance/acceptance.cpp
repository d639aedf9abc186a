// Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on
// stderr. `acceptance 1 3` runs a subset; no arguments runs all seven.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "retarget/bilevel.h"
#include "retarget/errors.h"
#include "retarget/metrics.h"
#include "retarget/nn.h"
#include "retarget/objective.h"
#include "retarget/ppo.h"
#include "retarget/refmap.h"
#include "retarget/rotmath.h"
#include "retarget/sim.h"
#include "retarget/toy.h"
#include "retarget/trainer.h"

using namespace retarget;

namespace {

// Collects failed checks with their measured values.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failures_.empty(); }
  std::string summary() const {
    std::ostringstream s;
    const auto& list = ok() ? notes_ : failures_;
    for (size_t i = 0; i < list.size(); ++i) s << (i ? "; " : "") << list[i];
    return s.str();
  }

 private:
  std::vector<std::string> failures_, notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Vec3 random_vector(std::mt19937& rng, double max_norm) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized() * (max_norm * u(rng));
}

Frame random_frame(std::mt19937& rng, double spread) {
  std::normal_distribution<double> n(0.0, spread);
  Frame f;
  f.pos = Vec3(n(rng), n(rng), 1.0 + n(rng));
  f.rot = exp_map(Vec3(n(rng), n(rng), n(rng)));
  f.linvel = Vec3(n(rng), n(rng), n(rng));
  f.angvel = Vec3(n(rng), n(rng), n(rng));
  return f;
}

RetargetParams random_params(std::mt19937& rng, int pairs, int motions, double spread) {
  std::normal_distribution<double> n(0.0, spread);
  auto p = RetargetParams::zeros(pairs, motions);
  for (int b = 0; b < pairs; ++b) {
    p.p_pos[b] = Vec3(n(rng), n(rng), n(rng));
    p.p_ori[b] = Vec3(n(rng), n(rng), n(rng));
  }
  for (auto& z : p.p_z) z = n(rng);
  return p;
}

struct ToySetup {
  Morphology src = toy::source_morphology();
  Morphology tgt = toy::target_morphology();
  CorrespondenceSet pairs = resolve_correspondences(toy::correspondences(), src, tgt);
  Calibration cal = calibrate(src, tgt, pairs);
};

// ---------------------------------------------------------------- 1

Checks math_core() {
  Checks c;
  std::mt19937 rng(101);

  double worst = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const Vec3 v = random_vector(rng, M_PI - 1e-6);
    worst = std::max(worst, (log_map(exp_map(v)) - v).norm());
  }
  c.expect(worst < 1e-9, "exp/log round trip " + fmt("%.2e", worst));
  c.note("exp/log " + fmt("%.1e", worst));

  worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Mat3 R = exp_map(random_vector(rng, M_PI - 1e-3));
    const Vec3 axis = random_vector(rng, 1.0).normalized();
    const auto st = swing_twist(R, axis);
    worst = std::max(worst, (st.swing * st.twist - R).cwiseAbs().maxCoeff());
    const Vec3 tw = log_map(st.twist);
    worst = std::max(worst, (tw - tw.dot(axis) * axis).norm());
  }
  c.expect(worst < 1e-9, "swing-twist reconstruction " + fmt("%.2e", worst));
  c.note("swing-twist " + fmt("%.1e", worst));

  ToySetup t;
  const auto fs = nominal_frames(t.src);
  const auto ft = nominal_frames(t.tgt);
  double closure = 0.0, identity = 0.0;
  const auto zero = RetargetParams::zeros(t.pairs.size(), 1);
  for (int b = 0; b < t.pairs.size(); ++b) {
    const auto& p = t.pairs.resolved[b];
    const Frame& s = fs[p.source_body];
    const Frame& g = ft[p.target_body];
    const Vec3 x = t.cal.scale * s.pos + s.rot * t.cal.x_nom[b];
    closure = std::max({closure, (x - g.pos).norm(), (s.rot * t.cal.R_nom[b] - g.rot).cwiseAbs().maxCoeff()});
    const Frame m = map_reference(t.cal, zero, s, b, 0, 0.0);
    identity = std::max({identity, (m.pos - g.pos).norm(), (m.rot - g.rot).cwiseAbs().maxCoeff()});
  }
  c.expect(closure < 1e-12, "calibration closure " + fmt("%.2e", closure));
  c.expect(identity < 1e-12, "nominal identity " + fmt("%.2e", identity));

  // Reference Jacobian against central differences of map_reference.
  const double h = 1e-6;
  auto rel = [](const Mat3& a, const Mat3& b) { return (a - b).norm() / std::max(1.0, b.norm()); };
  worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto p = random_params(rng, t.pairs.size(), 2, 0.15);
    const Frame m = random_frame(rng, 1.0);
    const int b = i % t.pairs.size(), mo = i % 2;
    const auto J = reference_jacobian(t.cal, p, m, b, mo);
    const Mat3 R0 = map_reference(t.cal, p, m, b, mo, 0.0).rot;
    Mat3 dx, dv, dr;
    for (int k = 0; k < 3; ++k) {
      auto pp = p, pm = p;
      pp.p_pos[b][k] += h;
      pm.p_pos[b][k] -= h;
      const Frame a = map_reference(t.cal, pp, m, b, mo, 0.0), d = map_reference(t.cal, pm, m, b, mo, 0.0);
      dx.col(k) = (a.pos - d.pos) / (2 * h);
      dv.col(k) = (a.linvel - d.linvel) / (2 * h);
      auto qp = p, qm = p;
      qp.p_ori[b][k] += h;
      qm.p_ori[b][k] -= h;
      dr.col(k) = (log_map(R0.transpose() * map_reference(t.cal, qp, m, b, mo, 0.0).rot) -
                   log_map(R0.transpose() * map_reference(t.cal, qm, m, b, mo, 0.0).rot)) /
                  (2 * h);
    }
    auto zp = p, zm = p;
    zp.p_z[mo] += h;
    zm.p_z[mo] -= h;
    const Vec3 dz = (map_reference(t.cal, zp, m, b, mo, 0.0).pos - map_reference(t.cal, zm, m, b, mo, 0.0).pos) / (2 * h);
    worst = std::max({worst, rel(J.dx_dpos, dx), rel(J.dv_dpos, dv), rel(J.rot_right_dori, dr), (dz - J.dx_dz).norm()});
  }
  c.expect(worst < 1e-5, "reference Jacobian rel. err " + fmt("%.2e", worst));
  c.note("Jacobian " + fmt("%.1e", worst));

  const ConstraintBox box{0.3, 0.4, 0.2};
  bool idem = true, feasible = true;
  for (int i = 0; i < 500; ++i) {
    const auto once = project(random_params(rng, 4, 3, 0.5), box);
    idem = idem && project(once, box).flatten() == once.flatten();
    for (int b = 0; b < 4; ++b) {
      feasible = feasible && once.p_pos[b].norm() <= box.pos * (1 + 1e-15) &&
                 once.p_ori[b].norm() <= box.ori * (1 + 1e-15);
    }
    for (double z : once.p_z) feasible = feasible && std::abs(z) <= box.z;
  }
  c.expect(idem, "projection not idempotent");
  c.expect(feasible, "projection left the constraint set");

  // Deadband: zero inside, shifted identity outside, continuous at the edges.
  const double d = 0.1;
  const Vec3 w = apply_deadband(Vec3(0.05, 0.3, -0.3), d);
  c.expect(w.x() == 0.0 && std::abs(w.y() - 0.2) < 1e-15 && std::abs(w.z() + 0.2) < 1e-15, "deadband values");
  double jump = 0.0;
  for (double e : {1e-3, 1e-6, 1e-9}) {
    for (double edge : {d, -d}) {
      const double a = apply_deadband(Vec3::Constant(edge - e), d).x();
      const double b = apply_deadband(Vec3::Constant(edge + e), d).x();
      jump = std::max(jump, std::abs(a - b) / (2 * e));
    }
  }
  c.expect(jump <= 1.0 + 1e-6, "deadband not 1-Lipschitz at the edges " + fmt("%.3g", jump));
  return c;
}

// ---------------------------------------------------------------- 2

UpperBatch mapped_batch(const ToySetup& t, const RetargetParams& truth, std::mt19937& rng, int n, double noise) {
  std::normal_distribution<double> e(0.0, noise);
  UpperBatch batch;
  for (int i = 0; i < n; ++i) {
    UpperSample s;
    s.pair = i % t.pairs.size();
    s.motion = i % truth.num_motions();
    s.z_nom = 0.01 * i;
    s.source = random_frame(rng, 0.5);
    s.simulated = map_reference(t.cal, truth, s.source, s.pair, s.motion, s.z_nom);
    if (noise > 0) {
      s.simulated.pos += Vec3(e(rng), e(rng), e(rng));
      s.simulated.rot = s.simulated.rot * exp_map(Vec3(e(rng), e(rng), e(rng)));
      s.simulated.linvel += Vec3(e(rng), e(rng), e(rng));
      s.simulated.angvel += Vec3(e(rng), e(rng), e(rng));
    }
    batch.add(s, 1.0);
  }
  return batch;
}

Checks gradient_estimate() {
  Checks c;
  ToySetup t;
  std::mt19937 rng(202);
  const int P = t.pairs.size();

  const LossWeights w{10.0, 1.0, 0.3, 0.2};
  const double alpha = 0.25, h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto batch = mapped_batch(t, random_params(rng, P, 3, 0.1), rng, 24, 0.2);
    const auto p = random_params(rng, P, 3, 0.1);
    const VecX g = grad_estimate(batch, p, t.cal, t.pairs, w, alpha).grad.flatten();
    const VecX x = p.flatten();
    VecX fd(x.size());
    for (int k = 0; k < x.size(); ++k) {
      VecX xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      fd[k] = (1 - alpha) *
              (batch_loss(batch, RetargetParams::unflatten(xp, P, 3), t.cal, t.pairs, w) -
               batch_loss(batch, RetargetParams::unflatten(xm, P, 3), t.cal, t.pairs, w)) / (2 * h);
    }
    worst = std::max(worst, (g - fd).norm() / fd.norm());
  }
  c.expect(worst < 1e-5, "grad vs finite differences " + fmt("%.2e", worst));
  c.note("grad rel. err " + fmt("%.1e", worst));

  const auto truth = random_params(rng, P, 2, 0.1);
  const auto exact = mapped_batch(t, truth, rng, 40, 0.0);
  const double g0 = grad_estimate(exact, truth, t.cal, t.pairs, LossWeights{1, 1, 1, 1}, 0.0).grad.flatten().norm();
  c.expect(g0 < 1e-9, "gradient at zero error " + fmt("%.2e", g0));
  const auto noisy = mapped_batch(t, truth, rng, 12, 0.3);
  const double g1 = grad_estimate(noisy, RetargetParams::zeros(P, 2), t.cal, t.pairs, LossWeights{}, 1.0).grad.flatten().norm();
  c.expect(g1 == 0.0, "gradient at alpha = 1 " + fmt("%.2e", g1));

  // Fixed-batch convergence. Position and velocity losses are quadratic in
  // (p_pos, p_z) because the mapping is affine in them. The truth sits above
  // the z bound, so the constrained optimum has p_z on the bound and p_pos
  // from the least-squares problem with p_z fixed (checked through KKT).
  const LossWeights wq{10.0, 0.0, 1.0, 0.0};
  const ConstraintBox box{0.5, 0.5, 0.05};
  auto target = random_params(rng, P, 1, 0.05);
  for (auto& o : target.p_ori) o.setZero();
  target.p_z[0] = 0.12;
  const UpperBatch batch = mapped_batch(t, target, rng, 64, 0.02);

  // Oracle: the loss is a quadratic in x = flatten(p); recover it by
  // central differences (exact up to roundoff), then solve with p_z fixed.
  const int n = RetargetParams::zeros(P, 1).dim();
  auto L = [&](const VecX& x) { return batch_loss(batch, RetargetParams::unflatten(x, P, 1), t.cal, t.pairs, wq); };
  const VecX x0 = VecX::Zero(n);
  const double step = 1e-2;
  Eigen::MatrixXd H(n, n);
  VecX b(n);
  for (int i = 0; i < n; ++i) {
    VecX ei = VecX::Zero(n);
    ei[i] = step;
    b[i] = (L(x0 + ei) - L(x0 - ei)) / (2 * step);
    for (int j = 0; j < n; ++j) {
      VecX ej = VecX::Zero(n);
      ej[j] = step;
      H(i, j) = (L(x0 + ei + ej) - L(x0 + ei - ej) - L(x0 - ei + ej) + L(x0 - ei - ej)) / (4 * step * step);
    }
  }
  // Orientation coordinates carry no loss here; keep them at zero.
  std::vector<int> free;
  for (int i = 0; i < 3 * P; ++i) free.push_back(i);
  const int zi = 6 * P;
  Eigen::MatrixXd Hf(free.size(), free.size());
  VecX rhs(free.size());
  for (size_t i = 0; i < free.size(); ++i) {
    rhs[i] = -(b[free[i]] + H(free[i], zi) * box.z);
    for (size_t j = 0; j < free.size(); ++j) Hf(i, j) = H(free[i], free[j]);
  }
  const VecX sol = Hf.ldlt().solve(rhs);
  VecX opt = VecX::Zero(n);
  for (size_t i = 0; i < free.size(); ++i) opt[free[i]] = sol[i];
  opt[zi] = box.z;
  const double dz = b[zi] + H.row(zi).dot(opt);
  c.expect(dz < 0.0, "oracle: z bound not active (dL/dz " + fmt("%.3g", dz) + ")");
  const auto opt_p = RetargetParams::unflatten(opt, P, 1);
  for (int k = 0; k < P; ++k) c.expect(opt_p.p_pos[k].norm() < box.pos, "oracle: position ball active");

  auto p = RetargetParams::zeros(P, 1);
  const double eta = 1.0 / Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().maxCoeff();
  double prev = batch_loss(batch, p, t.cal, t.pairs, wq);
  bool monotone = true;
  for (int it = 0; it < 3000; ++it) {
    p = ttsa_step(p, grad_estimate(batch, p, t.cal, t.pairs, wq, 0.0).grad, eta, box).params;
    const double now = batch_loss(batch, p, t.cal, t.pairs, wq);
    monotone = monotone && now <= prev + 1e-15;
    prev = now;
  }
  const double gap = (p.flatten() - opt).cwiseAbs().maxCoeff();
  c.expect(monotone, "ttsa loss not monotone");
  c.expect(gap < 1e-6, "ttsa distance to constrained optimum " + fmt("%.2e", gap));
  c.note("ttsa gap " + fmt("%.1e", gap));
  return c;
}

// ---------------------------------------------------------------- 3

std::shared_ptr<const Morphology> ball(double mass, double radius) {
  BodySpec b{"ball", mass, toy::sphere_inertia(mass, radius), Vec3::Zero(), {{Vec3::Zero(), Vec3::Zero(), radius}}};
  Frame root;
  root.pos = Vec3(0, 0, radius);
  return std::make_shared<const Morphology>(std::vector<BodySpec>{b}, std::vector<JointSpec>{}, 0,
                                            std::vector<int>{0}, VecX(), root);
}

ControlInput hold(const SimState& s) { return ControlInput{s.q, Vec3::Zero(), Vec3::Zero()}; }

Checks simulator() {
  Checks c;
  {
    auto m = ball(2.0, 0.1);
    Simulator sim(m, SimConfig{});
    Frame root = m->nominal_root();
    root.pos = Vec3(0, 0, 10);
    root.linvel = Vec3(1, 0, 2);
    SimState s = sim.make_state(root, VecX(), VecX());
    for (int i = 0; i < 25; ++i) s = sim.step(s, hold(s));
    const double t = 0.5;
    const double err = (s.root.pos - Vec3(t, 0, 10 + 2 * t - 0.5 * 9.81 * t * t)).norm();
    c.expect(err < 1e-3, "free fall error " + fmt("%.2e", err) + " m");
    c.note("free fall " + fmt("%.1e", err) + " m");
  }
  {
    const auto base = toy::target_morphology();
    auto joints = base.joints();
    for (auto& j : joints) j.kp = j.kd = 0.0;
    auto m = std::make_shared<const Morphology>(base.bodies(), joints, 0, base.contact_bodies(), base.nominal_q(),
                                                base.nominal_root());
    SimConfig cfg;
    cfg.gravity = 0.0;
    Simulator sim(m, cfg);
    Frame root = m->nominal_root();
    root.pos.z() = 5.0;
    root.linvel = Vec3(0.3, -0.2, 0.1);
    root.angvel = Vec3(0.5, 1.0, -0.7);
    VecX q(3), qd(3);
    q << 0.3, -0.4, 0.8;
    qd << 1.0, -0.5, 2.0;
    SimState s = sim.make_state(root, q, qd);
    const Vec3 p0 = sim.linear_momentum(s), L0 = sim.angular_momentum(s);
    for (int i = 0; i < 100; ++i) s = sim.step(s, ControlInput{q, Vec3::Zero(), Vec3::Zero()});
    const double drift = std::max((sim.linear_momentum(s) - p0).norm() / p0.norm(),
                                  (sim.angular_momentum(s) - L0).norm() / L0.norm());
    c.expect(drift < 1e-6, "momentum drift " + fmt("%.2e", drift));
    c.note("momentum " + fmt("%.1e", drift));
  }
  {
    const double mass = 1.5;
    auto m = ball(mass, 0.1);
    SimConfig cfg;
    Simulator sim(m, cfg);
    SimState s = sim.make_state(m->nominal_root(), VecX(), VecX());
    for (int i = 0; i < 150; ++i) s = sim.step(s, hold(s));
    double normal = 0.0;
    for (const auto& p : s.contacts) normal += p.normal_force;
    const double rel = std::abs(normal - mass * cfg.gravity) / (mass * cfg.gravity);
    c.expect(rel < 0.02, "resting normal force off by " + fmt("%.2f%%", 100 * rel));
    c.note("rest " + fmt("%.2f%%", 100 * rel));
  }
  {
    auto m = std::make_shared<const Morphology>(toy::target_morphology());
    const int n = 32;
    auto inputs = [](std::mt19937& rng, int k) {
      std::normal_distribution<double> d(0.0, 0.4);
      std::vector<ControlInput> u(k);
      for (auto& x : u) {
        x.setpoints = VecX::NullaryExpr(3, [&] { return d(rng); });
        x.force = Vec3(d(rng), d(rng), d(rng));
        x.torque = Vec3(d(rng), d(rng), d(rng));
      }
      return u;
    };
    auto run = [&] {
      EnvBatch batch = make_env_batch(m, SimConfig{}, n);
      std::mt19937 rng(31);
      for (int t = 0; t < 30; ++t) batch.step(inputs(rng, n));
      return batch;
    };
    const EnvBatch a = run(), b = run();
    Simulator single(m, SimConfig{});
    std::vector<SimState> seq(n, single.make_state(m->nominal_root(), m->nominal_q(), VecX::Zero(3)));
    std::mt19937 rng(31);
    for (int t = 0; t < 30; ++t) {
      const auto u = inputs(rng, n);
      for (int i = 0; i < n; ++i) seq[i] = single.step(seq[i], u[i]);
    }
    bool same = true;
    for (int i = 0; i < n; ++i) {
      same = same && a.state(i).root.pos == b.state(i).root.pos && a.state(i).qd == b.state(i).qd &&
             a.state(i).root.pos == seq[i].root.pos && a.state(i).q == seq[i].q && a.state(i).qd == seq[i].qd;
    }
    c.expect(same, "batch and sequential stepping differ");

    // Seeded training rollouts are bitwise reproducible.
    auto problem = std::make_shared<const Problem>(Problem::build(
        toy::source_morphology(), toy::target_morphology(), toy::correspondences(), toy::source_clips(1.0)));
    TrainerConfig cfg;
    cfg.ppo.num_envs = 4;
    cfg.ppo.hidden = {16};
    cfg.ramp_time = 0.1;
    cfg.seed = 5;
    auto policy_after = [&] {
      Trainer tr(problem, cfg);
      for (int i = 0; i < 2; ++i) tr.iterate();
      return tr.state();
    };
    const TrainerState s1 = policy_after(), s2 = policy_after();
    c.expect(s1.policy == s2.policy && s1.params.flatten() == s2.params.flatten() && s1.rng == s2.rng,
             "seeded training not reproducible");
  }
  return c;
}

// ---------------------------------------------------------------- 4

Checks rl_machinery() {
  Checks c;
  {
    RolloutBuffer buf;
    buf.reset(1, 3, 1, 1);
    buf.rewards << 1.0, 2.0, 3.0;
    buf.values << 0.5, 1.0, 1.5;
    VecX last(1);
    last << 4.0;
    const double g = 0.9, lam = 0.5;
    // delta_t = r_t + g V_{t+1} - V_t; A_t = delta_t + g lam A_{t+1}.
    const double d2 = 3.0 + g * 4.0 - 1.5, d1 = 2.0 + g * 1.5 - 1.0, d0 = 1.0 + g * 1.0 - 0.5;
    const double a2 = d2, a1 = d1 + g * lam * a2, a0 = d0 + g * lam * a1;
    const Advantages a = compute_gae(buf, last, g, lam);
    const double err = std::max({std::abs(a.advantages[0] - a0), std::abs(a.advantages[1] - a1),
                                 std::abs(a.advantages[2] - a2), std::abs(a.returns[0] - (a0 + 0.5))});
    c.expect(err < 1e-12, "GAE error " + fmt("%.2e", err));
  }
  {
    std::mt19937_64 rng(3);
    Mlp net(4, {7, 5}, 3, rng, 0.7);
    std::normal_distribution<double> n(0.0, 1.0);
    VecX p = net.params();
    for (int i = 0; i < p.size(); ++i) p[i] += 0.1 * n(rng);
    net.set_params(p);
    MatX x(4, 6), dy(3, 6);
    for (int i = 0; i < x.size(); ++i) x(i) = n(rng);
    for (int i = 0; i < dy.size(); ++i) dy(i) = n(rng);
    Mlp::Cache cache;
    net.forward(x, cache);
    const VecX g = net.backward(cache, dy);
    const double h = 1e-6;
    double worst = 0.0;
    for (int i = 0; i < p.size(); ++i) {
      VecX pp = p, pm = p;
      pp[i] += h;
      pm[i] -= h;
      net.set_params(pp);
      const double fp = (net.forward(x).array() * dy.array()).sum();
      net.set_params(pm);
      const double fm = (net.forward(x).array() * dy.array()).sum();
      const double fd = (fp - fm) / (2 * h);
      if (std::abs(fd) > 1e-6) worst = std::max(worst, std::abs(g[i] - fd) / std::abs(fd));
    }
    c.expect(worst < 1e-4, "backprop rel. err " + fmt("%.2e", worst));
    c.note("backprop " + fmt("%.1e", worst));
  }
  {
    // Bandit with reward -(a - 10)^2; the policy is N(mu, sigma^2), so two
    // parameters (mu, log sigma) and E[r] = -(mu - 10)^2 - sigma^2.
    PPOConfig cfg;
    cfg.hidden = {};
    cfg.num_envs = 256;
    cfg.steps_per_env = 1;
    cfg.entropy_coef = 0.0;
    cfg.learning_rate = 1e-2;
    std::mt19937_64 init(2), rng(11);
    PPO ppo(ActorCritic(1, 1, cfg.hidden, cfg.init_std, init), cfg);
    auto expected = [&] {
      const double mu = ppo.policy().actor.params().tail(1)[0];
      const double sd = std::exp(ppo.policy().log_std[0]);
      return -(mu - 10.0) * (mu - 10.0) - sd * sd;
    };
    double prev = expected();
    const double start = prev;
    bool monotone = true;
    for (int it = 0; it < 50; ++it) {
      RolloutBuffer buf;
      buf.reset(cfg.num_envs, 1, 1, 1);
      buf.log_std = ppo.policy().log_std;
      buf.obs.setZero();
      MatX actions, means;
      VecX values, logp;
      ppo.act(buf.obs, rng, actions, means, values, logp);
      buf.actions = actions;
      buf.means = means;
      buf.values = values;
      buf.log_probs = logp;
      for (int i = 0; i < cfg.num_envs; ++i) {
        buf.rewards[i] = -(actions(0, i) - 10.0) * (actions(0, i) - 10.0);
        buf.dones[i] = 1.0;
      }
      ppo.update(buf, VecX::Zero(cfg.num_envs), rng);
      const double now = expected();
      monotone = monotone && now > prev;
      prev = now;
    }
    c.expect(monotone, "bandit expected reward not monotone");
    c.note("bandit " + fmt("%.1f", start) + " -> " + fmt("%.1f", prev));
  }
  {
    MotionSampler s(3, 1.0);
    s.record(0, true);
    s.record(1, false);
    s.record(2, false);
    const auto p = s.probabilities();
    c.expect(p[0] == 0.5 && p[1] == 0.25 && p[2] == 0.25, "sampler probabilities");
    std::mt19937_64 rng(9);
    const int n = 100000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < n; ++i) ++counts[s.sample(rng)];
    double worst = 0.0;
    for (int k = 0; k < 3; ++k) {
      worst = std::max(worst, std::abs(counts[k] - n * p[k]) / std::sqrt(n * p[k] * (1 - p[k])));
    }
    c.expect(worst < 3.0, "sampler deviation " + fmt("%.2f", worst) + " sigma");
    c.note("sampler " + fmt("%.2f", worst) + " sigma");
  }
  {
    const TerminationThresholds th;
    Frame ref;
    Frame f = ref;
    f.pos.x() = 1.0;
    const bool at_pos = check_termination(f, ref, false, th);
    f.pos.x() = std::nextafter(1.0, 2.0);
    const bool past_pos = check_termination(f, ref, false, th);
    f = ref;
    f.rot = exp_map(Vec3(M_PI / 4 - 1e-9, 0, 0));
    const bool below_ang = check_termination(f, ref, false, th);
    f.rot = exp_map(Vec3(0, M_PI / 4 + 1e-9, 0));
    const bool past_ang = check_termination(f, ref, false, th);
    c.expect(!at_pos && past_pos, "position threshold not strict at 1 m");
    c.expect(!below_ang && past_ang, "angle threshold not at 45 deg");
  }
  return c;
}

// ---------------------------------------------------------------- 5

constexpr double kR = 0.05;

// hub (root, no geometry) with sphere children foot, ball_a, ball_b and
// ball_c hanging off ball_a.
Morphology probe_morphology() {
  std::vector<BodySpec> bodies(5);
  bodies[0] = {"hub", 1.0, Mat3::Identity(), Vec3::Zero(), {}};
  const char* names[] = {"foot", "ball_a", "ball_b", "ball_c"};
  for (int i = 1; i < 5; ++i) {
    bodies[i] = {names[i - 1], 1.0, Mat3::Identity() * 1e-3, Vec3::Zero(), {CollisionShape{Vec3::Zero(), Vec3::Zero(), kR}}};
  }
  auto joint = [](const char* n, int parent, int child) {
    JointSpec j;
    j.name = n;
    j.parent_body = parent;
    j.child_body = child;
    j.axis = Vec3::UnitY();
    return j;
  };
  Frame root;
  root.pos = Vec3(0, 0, 1);
  return Morphology(bodies, {joint("j_foot", 0, 1), joint("j_a", 0, 2), joint("j_b", 0, 3), joint("j_c", 2, 4)}, 0,
                    {1}, VecX::Zero(4), root);
}

Frame at(double x, double y, double z) {
  Frame f;
  f.pos = Vec3(x, y, z);
  return f;
}

MotionClip make_traj(const Morphology& m, int frames, const std::function<Frame(int, int)>& place) {
  MotionClip c;
  c.id = "probe";
  c.fps = 50.0;
  for (const auto& b : m.bodies()) c.bodies.push_back(b.name);
  for (int t = 0; t < frames; ++t) {
    std::vector<Frame> row;
    for (int b = 0; b < m.num_bodies(); ++b) row.push_back(place(t, b));
    c.frames.push_back(row);
  }
  return c;
}

Checks metrics() {
  Checks c;
  const Morphology m = probe_morphology();
  std::vector<CorrespondencePair> list;
  for (const auto& b : m.bodies()) list.push_back({b.name, b.name, OrientationMode::kFull, Vec3::UnitZ(), b.name == "hub"});
  const auto pairs = resolve_correspondences(list, m, m);

  // 100 frames: ball_a 3 cm into the ground on [0, 20); ball_a and ball_b
  // overlapping by 2 cm on [40, 70); source foot planted on [20, 80) while
  // the target foot hovers 3 cm up moving at 0.2 m/s; ball_c overlapping its
  // parent on [70, 100), which must be ignored.
  MotionClip src = make_traj(m, 100, [](int t, int b) {
    switch (b) {
      case 1: return (t >= 20 && t < 80) ? at(0, 0, kR) : at(0, 0, 0.5);
      case 2: return at(1, 0, 1);
      case 3: return at(2, 0, 1);
      case 4: return at(3, 0, 1);
      default: return at(0, 0, 1);
    }
  });
  MotionClip traj = make_traj(m, 100, [](int t, int b) {
    switch (b) {
      case 1: {
        Frame f = at(0.2 * t / 50.0, 0, kR + 0.03);
        f.linvel = Vec3(0.2, 0.0, 0.1);
        return f;
      }
      case 2: return t < 20 ? at(1, 0, kR - 0.03) : at(1, 0, 1);
      case 3: return (t >= 40 && t < 70) ? at(1.08, 0, 1) : at(2, 0, 1);
      case 4: return t >= 70 ? at(1.01, 0, 1) : at(3, 0, 1);
      default: return at(0, 0, 1);
    }
  });
  const MetricsReport r = evaluate_motion(traj, m, src, m, pairs, ContactThresholds{});
  const std::pair<double, double> got_want[] = {{r.ground_pen_time, 0.20}, {r.ground_pen_cm, 3.0},
                                                {r.self_pen_time, 0.30},   {r.self_pen_cm, 2.0},
                                                {r.foot_slide_cm_s, 20.0}, {r.foot_float_cm, 3.0}};
  double worst = 0.0;
  for (const auto& [got, want] : got_want) worst = std::max(worst, std::abs(got - want) / want);
  c.expect(worst < 0.01, "injected artifact rel. err " + fmt("%.2e", worst));
  c.note("artifacts " + fmt("%.1e", worst));

  const Mat3 Y = yaw_rotation(0.7);
  const Vec3 shift(4.0, -3.0, 0.0);
  for (MotionClip* clip : {&src, &traj}) {
    for (auto& row : clip->frames) {
      for (auto& f : row) {
        f.pos = Y * f.pos + shift;
        f.rot = Y * f.rot;
        f.linvel = Y * f.linvel;
        f.angvel = Y * f.angvel;
      }
    }
  }
  const MetricsReport moved = evaluate_motion(traj, m, src, m, pairs, ContactThresholds{});
  const double drift = std::max({std::abs(moved.ground_pen_time - r.ground_pen_time), std::abs(moved.ground_pen_cm - r.ground_pen_cm),
                                 std::abs(moved.self_pen_time - r.self_pen_time), std::abs(moved.self_pen_cm - r.self_pen_cm),
                                 std::abs(moved.foot_slide_cm_s - r.foot_slide_cm_s), std::abs(moved.foot_float_cm - r.foot_float_cm)});
  c.expect(drift < 1e-9, "yaw/translation drift " + fmt("%.2e", drift));

  // The scripted walk plants the left foot on even steps (0.6 s each).
  const Morphology sm = toy::source_morphology();
  const MotionClip walk = toy::source_clips()[0];
  const ContactEstimate est = estimate_reference_contacts(walk, sm, ContactThresholds{});
  long inter = 0, uni = 0;
  for (int t = 0; t < walk.num_frames(); ++t) {
    const int stepno = static_cast<int>(std::floor(t / 50.0 / 0.6 + 0.5));
    for (size_t k = 0; k < est.bodies.size(); ++k) {
      const bool left = sm.bodies()[est.bodies[k]].name == "left_leg";
      const bool truth = left == (stepno % 2 == 0);
      const bool got = est.flags[t][k];
      inter += truth && got;
      uni += truth || got;
    }
  }
  const double iou = uni ? static_cast<double>(inter) / uni : 0.0;
  c.expect(walk.id == "walk" && est.bodies.size() == 2 && iou >= 0.95, "walk contact IoU " + fmt("%.3f", iou));
  c.note("IoU " + fmt("%.3f", iou));
  return c;
}

// ---------------------------------------------------------------- 6, 7

struct ToyRun {
  std::vector<IterationLog> logs;
  std::vector<ExportedMotion> exported;
  std::vector<MetricsReport> reports;
  double seconds = 0.0;

  double tail_mean(double IterationLog::*f) const {
    const size_t n = std::max<size_t>(1, logs.size() / 10);
    double s = 0.0;
    for (size_t i = logs.size() - n; i < logs.size(); ++i) s += logs[i].*f;
    return s / n;
  }
  double peak_rate() const {
    double p = 0.0;
    for (const auto& l : logs) p = std::max(p, l.update_rate);
    return p;
  }
  double mean_max_force() const {
    double s = 0.0;
    for (const auto& e : exported) s += e.max_root_force;
    return s / exported.size();
  }
  int successes() const {
    int n = 0;
    for (const auto& e : exported) n += e.success;
    return n;
  }
};

ToyRun toy_run(const std::string& label, bool bilevel, double force_weight) {
  static const auto problem = std::make_shared<const Problem>(Problem::build(
      toy::source_morphology(), toy::target_morphology(), toy::correspondences(), toy::source_clips()));
  TrainerConfig cfg = toy::trainer_config();
  cfg.bilevel = bilevel;
  cfg.reward.weights[kRootForce] = force_weight;
  const auto t0 = std::chrono::steady_clock::now();
  Trainer trainer(problem, cfg);
  ToyRun run;
  for (int i = 0; i < cfg.ppo.iterations; ++i) {
    run.logs.push_back(trainer.iterate());
    if ((i + 1) % 50 == 0) {
      const auto& l = run.logs.back();
      std::cerr << "  [" << label << "] it " << i + 1 << " reward " << fmt("%.2f", l.mean_reward) << " upper "
                << fmt("%.4f", l.upper_loss) << " fail " << fmt("%.2f", l.failure_rate) << "\n";
    }
  }
  for (int m = 0; m < problem->num_motions(); ++m) {
    run.exported.push_back(trainer.retarget(m));
    run.reports.push_back(evaluate_motion(run.exported.back().trajectory, *problem->target, problem->clips[m],
                                          *problem->source, problem->pairs, ContactThresholds{}, 0.01));
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

constexpr double kDefaultForceWeight = 1e-2;
std::optional<ToyRun> g_bilevel_run;

Checks toy_bilevel() {
  Checks c;
  const double w = kDefaultForceWeight;
  g_bilevel_run = toy_run("bilevel", true, w);
  const ToyRun plain = toy_run("no-bilevel", false, w);
  const ToyRun& bi = *g_bilevel_run;

  const double loss_bi = bi.tail_mean(&IterationLog::upper_loss);
  const double loss_plain = plain.tail_mean(&IterationLog::upper_loss);
  c.expect(loss_bi < loss_plain, "(a) final upper loss " + fmt("%.4f", loss_bi) + " vs no-bilevel " + fmt("%.4f", loss_plain));

  const double ratio = bi.tail_mean(&IterationLog::update_rate) / std::max(bi.peak_rate(), 1e-300);
  c.expect(bi.peak_rate() > 0.0 && ratio < 0.2, "(b) final update rate / peak " + fmt("%.3f", ratio));

  double pen = 0.0;
  for (const auto& r : bi.reports) pen = std::max({pen, r.ground_pen_time, r.self_pen_time});
  c.expect(pen == 0.0, "(c) penetration time fraction " + fmt("%.3f", pen));

  c.note("(a) " + fmt("%.4f", loss_bi) + " < " + fmt("%.4f", loss_plain));
  c.note("(b) rate ratio " + fmt("%.3f", ratio));
  c.note("(c) penetration 0");
  c.note(std::to_string(bi.successes()) + "/" + std::to_string(bi.exported.size()) + " clips tracked");
  return c;
}

Checks force_trend() {
  Checks c;
  const double w_mid = kDefaultForceWeight;
  if (!g_bilevel_run) g_bilevel_run = toy_run("w=1e-2", true, w_mid);
  const ToyRun low = toy_run("w=1e-3", true, 1e-3);
  const ToyRun high = toy_run("w=1e-1", true, 1e-1);
  const double f[3] = {low.mean_max_force(), g_bilevel_run->mean_max_force(), high.mean_max_force()};
  c.expect(f[0] > f[1] && f[1] > f[2], "mean max force not decreasing: " + fmt("%.1f", f[0]) + ", " + fmt("%.1f", f[1]) +
                                          ", " + fmt("%.1f", f[2]) + " N");
  c.note("w 1e-3/1e-2/1e-1: " + fmt("%.1f", f[0]) + " > " + fmt("%.1f", f[1]) + " > " + fmt("%.1f", f[2]) + " N");
  c.note("tracked clips " + std::to_string(low.successes()) + "/" + std::to_string(g_bilevel_run->successes()) + "/" +
         std::to_string(high.successes()));
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Checks()> run;
  };
  const std::vector<Criterion> all = {
      {1, "math core", 60, math_core},
      {2, "gradient estimate", 60, gradient_estimate},
      {3, "simulator", 120, simulator},
      {4, "RL machinery", 300, rl_machinery},
      {5, "metrics", 60, metrics},
      {6, "toy bilevel run", 1800, toy_bilevel},
      {7, "force-weight trend", 1800, force_trend},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  bool all_ok = true;
  for (const auto& cr : all) {
    if (!wanted.empty() && !wanted.count(cr.id)) continue;
    std::cerr << "running criterion " << cr.id << " (" << cr.name << ")\n";
    const auto t0 = std::chrono::steady_clock::now();
    Checks c;
    try {
      c = cr.run();
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.expect(sec <= cr.budget_s, "took " + fmt("%.0f", sec) + " s, budget " + fmt("%.0f", cr.budget_s) + " s");
    all_ok = all_ok && c.ok();
    std::cout << "criterion " << cr.id << " [" << cr.name << "]: " << (c.ok() ? "PASS" : "FAIL") << " ("
              << c.summary() << "; " << fmt("%.1f", sec) << " s)" << std::endl;
  }
  return all_ok ? 0 : 1;
}
