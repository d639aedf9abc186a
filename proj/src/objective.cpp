#include "retarget/objective.h"

#include <cmath>
#include <string>

#include "retarget/errors.h"

namespace retarget {
namespace {

constexpr std::array<std::string_view, kNumRewardTerms> kTermNames = {
    "root_pos_xy",       "root_height",      "root_ori",     "root_lin_vel",
    "root_ang_vel",      "rbs_pos",          "rbs_ori",      "survival",
    "joint_torques",     "joint_acc",        "joint_action_rate",
    "joint_action_acc",  "root_force",       "root_torque"};

// acos(n) / sqrt(1 - n^2), continuous at n = 1.
double acos_ratio(double n) {
  const double d = 1.0 - n;
  if (d < 1e-6) return 1.0 + d / 3.0;
  return std::acos(n) / std::sqrt(1.0 - n * n);
}

}  // namespace

OrientationLoss orientation_loss(const Mat3& E, OrientationMode mode, const Vec3& axis) {
  OrientationLoss out;
  if (mode == OrientationMode::kFull) {
    const Vec3 e = log_map(E);
    out.value = e.squaredNorm();
    out.grad = 2.0 * right_jacobian_inverse(e).transpose() * e;
    return out;
  }

  // Quaternion q = (w, u) of E, canonical w >= 0. The twist about `axis`
  // has scalar w and vector part sigma * axis (renormalized by n), and the
  // swing has scalar part n = sqrt(w^2 + sigma^2).
  Eigen::Quaterniond q(E);
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double w = q.w();
  const Vec3 u = q.vec();
  const double sigma = u.dot(axis);
  const double n2 = w * w + sigma * sigma;
  const double n = std::sqrt(n2);
  if (n < 1e-9) {
    out.degenerate = true;
    out.value = mode == OrientationMode::kSwing ? M_PI * M_PI : 0.0;
    return out;
  }
  // Under E -> E Exp(d): dw = -u.d / 2 and du = (w d + u x d) / 2.
  const Vec3 dw = -0.5 * u;
  const Vec3 dsigma = 0.5 * (w * axis + axis.cross(u));
  if (mode == OrientationMode::kTwist) {
    const double theta = 2.0 * std::atan2(sigma, w);
    const Vec3 dtheta = 2.0 * (w * dsigma - sigma * dw) / n2;
    out.value = theta * theta;
    out.grad = 2.0 * theta * dtheta;
  } else {
    const double nc = std::min(n, 1.0);
    const double theta = 2.0 * std::acos(nc);
    const Vec3 dn = (w * dw + sigma * dsigma) / n;
    out.value = theta * theta;
    out.grad = -8.0 * acos_ratio(nc) * dn;
  }
  return out;
}

BodyError body_losses(const Frame& g, const Frame& s, const ResolvedPair& pair) {
  BodyError e;
  e.err_x = g.pos - s.pos;
  e.err_v = g.linvel - s.linvel;
  e.err_w = g.angvel - s.angvel;
  e.x = e.err_x.squaredNorm();
  e.v = e.err_v.squaredNorm();
  e.w = e.err_w.squaredNorm();
  const auto ori = orientation_loss(s.rot.transpose() * g.rot, pair.mode, pair.twist_axis);
  e.R = ori.value;
  e.grad_R = ori.grad;
  e.degenerate = ori.degenerate;
  return e;
}

double weighted_loss(const BodyError& e, const LossWeights& w) {
  return w.w_x * e.x + w.w_R * e.R + w.w_v * e.v + w.w_w * e.w;
}

double upper_loss(const std::vector<BodyError>& errors, const LossWeights& w) {
  double total = 0.0;
  for (const auto& e : errors) total += weighted_loss(e, w);
  return total;
}

std::string_view reward_term_name(int term) { return kTermNames.at(term); }

int reward_term_from_name(std::string_view name) {
  for (int k = 0; k < kNumRewardTerms; ++k) {
    if (kTermNames[k] == name) return k;
  }
  throw ValidationError("unknown reward term '" + std::string(name) + "'");
}

void RewardConfig::validate() const {
  for (int k = 0; k < kNumRewardTerms; ++k) {
    if (!std::isfinite(weights[k])) {
      throw ValidationError("reward weight '" + std::string(kTermNames[k]) + "' is not finite");
    }
    if (phase_scaled[k] && k != kRbsPos && k != kRbsOri && k != kRootForce && k != kRootTorque) {
      throw ValidationError("reward term '" + std::string(kTermNames[k]) + "' cannot be phase scaled");
    }
  }
}

RewardConfig RewardConfig::retargeting() {
  RewardConfig c;
  c.weights[kRootPosXY] = 2.0;
  c.weights[kRootHeight] = 10.0;
  c.weights[kRootOri] = 2.0;
  c.weights[kRootLinVel] = 0.5;
  c.weights[kRootAngVel] = 0.5;
  c.weights[kRbsPos] = 2.0;
  c.weights[kRbsOri] = 2.0;
  c.weights[kSurvival] = 20.0;
  c.weights[kJointTorques] = 1e-4;
  c.weights[kJointAcc] = 1e-6;
  c.weights[kJointActionRate] = 1e-2;
  c.weights[kJointActionAcc] = 1e-2;
  c.weights[kRootForce] = 1e-2;
  c.weights[kRootTorque] = 1e-2;
  c.phase_scaled[kRbsPos] = true;
  c.phase_scaled[kRbsOri] = true;
  c.phase_scaled[kRootForce] = true;
  c.phase_scaled[kRootTorque] = true;
  return c;
}

RewardConfig RewardConfig::downstream_g1() {
  RewardConfig c;
  c.weights[kRootPosXY] = 5.0;
  c.weights[kRootHeight] = 5.0;
  c.weights[kRootOri] = 3.0;
  c.weights[kRootLinVel] = 0.5;
  c.weights[kRootAngVel] = 0.5;
  c.weights[kRbsPos] = 5.0;
  c.weights[kRbsOri] = 2.5;
  c.weights[kSurvival] = 10.0;
  c.weights[kJointTorques] = 1e-4;
  c.weights[kJointAcc] = 2.5e-8;
  c.weights[kJointActionRate] = 0.15;
  c.weights[kJointActionAcc] = 1e-2;
  return c;
}

RewardConfig RewardConfig::downstream_lima() {
  RewardConfig c = downstream_g1();
  c.weights[kSurvival] = 1.0;
  c.weights[kJointTorques] = 1e-3;
  c.weights[kJointAcc] = 2.5e-6;
  c.weights[kJointActionRate] = 3.0;
  c.weights[kJointActionAcc] = 1.0;
  return c;
}

RewardConfig RewardConfig::preset(std::string_view name) {
  if (name == "retargeting") return retargeting();
  if (name == "downstream_g1") return downstream_g1();
  if (name == "downstream_lima") return downstream_lima();
  throw ValidationError("unknown reward preset '" + std::string(name) + "'");
}

RewardBreakdown step_reward(const RewardInputs& in, const RewardConfig& cfg) {
  const auto& ref = *in.reference;
  const auto& sim = *in.simulated;
  const auto& pairs = *in.pairs;
  std::array<double, kNumRewardTerms> raw{};

  for (int b = 0; b < pairs.size(); ++b) {
    const auto e = body_losses(ref[b], sim[b], pairs.resolved[b]);
    if (b == pairs.root_pair) {
      raw[kRootPosXY] = -e.err_x.head<2>().squaredNorm();
      raw[kRootHeight] = -e.err_x.z() * e.err_x.z();
      raw[kRootOri] = -e.R;
      raw[kRootLinVel] = -e.v;
      raw[kRootAngVel] = -e.w;
    } else {
      raw[kRbsPos] -= e.x;
      raw[kRbsOri] -= e.R;
    }
  }
  raw[kSurvival] = 1.0;
  if (in.joint_torques) raw[kJointTorques] = -in.joint_torques->squaredNorm();
  if (in.joint_acc) raw[kJointAcc] = -in.joint_acc->squaredNorm();
  if (in.setpoints && in.setpoints_prev) {
    raw[kJointActionRate] = -(*in.setpoints - *in.setpoints_prev).squaredNorm();
    if (in.setpoints_prev2) {
      raw[kJointActionAcc] =
          -(*in.setpoints - 2.0 * *in.setpoints_prev + *in.setpoints_prev2).squaredNorm();
    }
  }
  raw[kRootForce] = -in.root_force.lpNorm<1>();
  raw[kRootTorque] = -in.root_torque.lpNorm<1>();

  RewardBreakdown out;
  for (int k = 0; k < kNumRewardTerms; ++k) {
    const double scale = cfg.phase_scaled[k] ? in.psi : 1.0;
    out.terms[k] = cfg.weights[k] * scale * raw[k];
    out.total += out.terms[k];
  }
  return out;
}

}  // namespace retarget
