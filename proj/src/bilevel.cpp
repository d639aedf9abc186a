#include "retarget/bilevel.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "retarget/errors.h"
#include "retarget/refmap.h"

namespace retarget {
namespace {

Vec3 project_ball(const Vec3& v, double radius) {
  const double n = v.norm();
  if (n <= radius) return v;
  Vec3 out = v * (radius / n);
  // Rounding can leave the norm an ulp outside; shrink until it is inside so
  // a second projection is a no-op.
  while (out.norm() > radius) out *= std::nextafter(1.0, 0.0);
  return out;
}

}  // namespace

void ConstraintBox::validate() const {
  if (!(pos > 0.0 && ori > 0.0 && z > 0.0)) {
    throw ValidationError("constraint box: all deviations must be > 0");
  }
}

double UpdateConfig::annealed_step(int iteration) const {
  if (step_decay_iterations <= 0.0) return step_size;
  return step_size / (1.0 + iteration / step_decay_iterations);
}

double UpdateConfig::effective_step(int iteration) const {
  return (1.0 - sensitivity) * annealed_step(iteration);
}

void UpdateConfig::validate() const {
  if (!(step_size > 0.0)) throw ValidationError("update: step_size must be > 0");
  if (!(sensitivity >= 0.0 && sensitivity < 1.0)) {
    throw ValidationError("update: sensitivity must lie in [0, 1)");
  }
  if (step_decay_iterations < 0.0) throw ValidationError("update: step_decay_iterations must be >= 0");
}

bool UpperBatch::add(const UpperSample& sample, double psi) {
  if (psi < 1.0) return false;
  samples_.push_back(sample);
  return true;
}

void UpperBatch::append(const UpperBatch& other) {
  samples_.insert(samples_.end(), other.samples_.begin(), other.samples_.end());
}

RetargetParams project(const RetargetParams& params, const ConstraintBox& box) {
  RetargetParams out = params;
  for (auto& p : out.p_pos) p = project_ball(p, box.pos);
  for (auto& p : out.p_ori) p = project_ball(p, box.ori);
  for (auto& z : out.p_z) z = std::clamp(z, -box.z, box.z);
  return out;
}

GradientEstimate grad_estimate(const UpperBatch& batch, const RetargetParams& params,
                               const Calibration& cal, const CorrespondenceSet& pairs,
                               const LossWeights& weights, double alpha) {
  GradientEstimate out;
  out.grad = RetargetParams::zeros(params.num_pairs(), params.num_motions());
  if (batch.empty()) {
    out.skipped = true;
    return out;
  }
  double loss_sum = 0.0;
  for (const auto& s : batch.samples()) {
    const Frame g = map_reference(cal, params, s.source, s.pair, s.motion, s.z_nom);
    const BodyError e = body_losses(g, s.simulated, pairs.resolved[s.pair]);
    loss_sum += weighted_loss(e, weights);

    const auto J = reference_jacobian(cal, params, s.source, s.pair, s.motion);
    const Vec3 dl_dx = 2.0 * weights.w_x * e.err_x;
    const Vec3 dl_dv = 2.0 * weights.w_v * e.err_v;
    out.grad.p_pos[s.pair] += J.dx_dpos.transpose() * dl_dx + J.dv_dpos.transpose() * dl_dv;
    out.grad.p_ori[s.pair] += weights.w_R * (J.rot_right_dori.transpose() * e.grad_R);
    out.grad.p_z[s.motion] += J.dx_dz.dot(dl_dx);
  }
  const double scale = (1.0 - alpha) / static_cast<double>(batch.size());
  for (auto& g : out.grad.p_pos) g *= scale;
  for (auto& g : out.grad.p_ori) g *= scale;
  for (auto& g : out.grad.p_z) g *= scale;
  out.mean_loss = loss_sum / static_cast<double>(batch.size());
  return out;
}

double batch_loss(const UpperBatch& batch, const RetargetParams& params, const Calibration& cal,
                  const CorrespondenceSet& pairs, const LossWeights& weights) {
  if (batch.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : batch.samples()) {
    const Frame g = map_reference(cal, params, s.source, s.pair, s.motion, s.z_nom);
    sum += weighted_loss(body_losses(g, s.simulated, pairs.resolved[s.pair]), weights);
  }
  return sum / static_cast<double>(batch.size());
}

StepResult ttsa_step(const RetargetParams& params, const RetargetParams& grad, double eta,
                     const ConstraintBox& box) {
  const Eigen::VectorXd g = grad.flatten();
  if (!g.allFinite()) {
    std::ostringstream msg;
    msg << "ttsa_step: non-finite upper-level gradient (norm entries: ";
    for (int i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) msg << i << ' ';
    }
    msg << ")";
    throw RuntimeFault(msg.str());
  }
  const Eigen::VectorXd x = params.flatten();
  StepResult out;
  out.params = project(
      RetargetParams::unflatten(x - eta * g, params.num_pairs(), params.num_motions()), box);
  out.update_norm = (out.params.flatten() - x).norm();
  return out;
}

Saturation saturation(const RetargetParams& params, const ConstraintBox& box) {
  Saturation s;
  constexpr double kTol = 1e-9;
  for (const auto& p : params.p_pos) s.pos += p.norm() >= box.pos * (1.0 - kTol);
  for (const auto& p : params.p_ori) s.ori += p.norm() >= box.ori * (1.0 - kTol);
  for (double z : params.p_z) s.z += std::abs(z) >= box.z * (1.0 - kTol);
  if (!params.p_pos.empty()) s.pos /= params.p_pos.size();
  if (!params.p_ori.empty()) s.ori /= params.p_ori.size();
  if (!params.p_z.empty()) s.z /= params.p_z.size();
  return s;
}

}  // namespace retarget
