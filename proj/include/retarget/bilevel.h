#pragma once

#include <vector>

#include "retarget/morphology.h"
#include "retarget/objective.h"
#include "retarget/params.h"

namespace retarget {

struct ConstraintBox {
  double pos = 0.5;
  double ori = 0.5;
  double z = 0.5;

  void validate() const;
};

struct UpdateConfig {
  double step_size = 1e-4;    // eta
  double sensitivity = 0.0;   // alpha in [0, 1)
  // Optional 1/(1 + iteration / decay) annealing of eta; 0 disables it.
  double step_decay_iterations = 0.0;

  // eta at `iteration`, without the (1 - alpha) factor that grad_estimate applies.
  double annealed_step(int iteration) const;
  // (1 - alpha) * annealed_step: the step size the update actually takes.
  double effective_step(int iteration) const;
  void validate() const;
};

// One (pair, time step) sample collected once tracking is active.
struct UpperSample {
  int pair = -1;
  int motion = -1;
  double z_nom = 0.0;
  Frame source;     // m_t for the pair's source body
  Frame simulated;  // s_t for the pair's target body
};

// Holds only samples with retargeting phase psi == 1; add() drops the rest.
class UpperBatch {
 public:
  bool add(const UpperSample& sample, double psi);
  void append(const UpperBatch& other);
  const std::vector<UpperSample>& samples() const { return samples_; }
  bool empty() const { return samples_.empty(); }
  size_t size() const { return samples_.size(); }
  void clear() { samples_.clear(); }

 private:
  std::vector<UpperSample> samples_;
};

RetargetParams project(const RetargetParams& params, const ConstraintBox& box);

struct GradientEstimate {
  RetargetParams grad;
  double mean_loss = 0.0;  // mean weighted per-sample loss at `params`
  bool skipped = false;    // empty batch
};

// (1 - alpha) / |D| * sum over samples of d loss / d g * d g / d p, with the
// simulated frames held fixed.
GradientEstimate grad_estimate(const UpperBatch& batch, const RetargetParams& params,
                               const Calibration& cal, const CorrespondenceSet& pairs,
                               const LossWeights& weights, double alpha);

// Mean of the weighted per-sample loss, (1 - alpha) excluded.
double batch_loss(const UpperBatch& batch, const RetargetParams& params, const Calibration& cal,
                  const CorrespondenceSet& pairs, const LossWeights& weights);

struct StepResult {
  RetargetParams params;
  double update_norm = 0.0;  // ||p_new - p_old||
};

// project(params - eta * grad); throws RuntimeFault on a non-finite gradient.
StepResult ttsa_step(const RetargetParams& params, const RetargetParams& grad, double eta,
                     const ConstraintBox& box);

struct Saturation {
  double pos = 0.0;
  double ori = 0.0;
  double z = 0.0;
};
// Fraction of parameter blocks sitting on their constraint boundary.
Saturation saturation(const RetargetParams& params, const ConstraintBox& box);

}  // namespace retarget
