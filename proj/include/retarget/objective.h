#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "retarget/morphology.h"

namespace retarget {

struct LossWeights {
  double w_x = 10.0;
  double w_R = 1.0;
  double w_v = 0.0;
  double w_w = 0.0;
};

// Tracking losses of one correspondence pair plus what the upper-level
// gradient needs: raw error vectors and the gradient of the orientation loss
// with respect to a right perturbation of the reference rotation,
// R_g -> R_g Exp(d).
struct BodyError {
  double x = 0.0;
  double R = 0.0;
  double v = 0.0;
  double w = 0.0;
  Vec3 err_x = Vec3::Zero();
  Vec3 err_v = Vec3::Zero();
  Vec3 err_w = Vec3::Zero();
  Vec3 grad_R = Vec3::Zero();
  bool degenerate = false;  // swing/twist split undefined; grad_R zeroed
};

// Orientation loss on the error rotation E = R_s^T R_g. For swing/twist
// modes only the matching component about `axis` is penalized.
struct OrientationLoss {
  double value = 0.0;
  Vec3 grad = Vec3::Zero();  // d value / d(right perturbation of E)
  bool degenerate = false;
};
OrientationLoss orientation_loss(const Mat3& E, OrientationMode mode, const Vec3& axis);

BodyError body_losses(const Frame& g, const Frame& s, const ResolvedPair& pair);

double weighted_loss(const BodyError& e, const LossWeights& w);
double upper_loss(const std::vector<BodyError>& errors, const LossWeights& w);

enum RewardTerm : int {
  kRootPosXY,
  kRootHeight,
  kRootOri,
  kRootLinVel,
  kRootAngVel,
  kRbsPos,
  kRbsOri,
  kSurvival,
  kJointTorques,
  kJointAcc,
  kJointActionRate,
  kJointActionAcc,
  kRootForce,
  kRootTorque,
  kNumRewardTerms
};

std::string_view reward_term_name(int term);
int reward_term_from_name(std::string_view name);  // throws ValidationError

struct RewardConfig {
  std::array<double, kNumRewardTerms> weights{};
  std::array<bool, kNumRewardTerms> phase_scaled{};

  void validate() const;

  // Tracking preset used while retargeting.
  static RewardConfig retargeting();
  // Downstream tracking presets for the two robots of the reference setup.
  static RewardConfig downstream_g1();
  static RewardConfig downstream_lima();
  static RewardConfig preset(std::string_view name);  // throws ValidationError
};

struct RewardInputs {
  const std::vector<Frame>* reference = nullptr;  // per pair
  const std::vector<Frame>* simulated = nullptr;  // per pair (target body frames)
  const CorrespondenceSet* pairs = nullptr;
  const VecX* joint_torques = nullptr;
  const VecX* joint_acc = nullptr;
  const VecX* setpoints = nullptr;       // a_t (joint part)
  const VecX* setpoints_prev = nullptr;  // a_{t-1}
  const VecX* setpoints_prev2 = nullptr; // a_{t-2}
  Vec3 root_force = Vec3::Zero();        // applied, after deadband
  Vec3 root_torque = Vec3::Zero();
  double psi = 1.0;
};

struct RewardBreakdown {
  std::array<double, kNumRewardTerms> terms{};
  double total = 0.0;
};

// Weighted reward for one control step; terms[k] holds the signed, weighted
// contribution of term k and total is their sum.
RewardBreakdown step_reward(const RewardInputs& in, const RewardConfig& cfg);

}  // namespace retarget
