#pragma once

#include <vector>

#include "retarget/morphology.h"
#include "retarget/motion_clip.h"
#include "retarget/params.h"

namespace retarget {

// Vertical shift that puts the lowest scaled contact-body surface point of
// the whole clip on z = 0.
double precompute_z_nom(const MotionClip& clip, const Morphology& source, const Calibration& cal);

// Maps the source frame of pair `pair` to its parameterized reference frame:
//   x_g = R_m (R_nom p_pos + x_nom) + s x_m + (z_nom + p_z) e_z
//   R_g = R_m R_nom Exp(p_ori)
//   v_g = w_m x R_m (R_nom p_pos + x_nom) + s v_m
//   w_g = w_m
Frame map_reference(const Calibration& cal, const RetargetParams& params, const Frame& source,
                    int pair, int motion, double z_nom);

// Partials of the mapped frame with respect to the pair's parameters and the
// motion's vertical offset. The orientation partial is the right-perturbation
// Jacobian: R_g(p_ori + d) ~= R_g Exp(rot_right_dori * d).
struct ReferenceJacobian {
  Mat3 dx_dpos;
  Vec3 dx_dz;
  Mat3 dv_dpos;
  Mat3 rot_right_dori;
};

ReferenceJacobian reference_jacobian(const Calibration& cal, const RetargetParams& params,
                                     const Frame& source, int pair, int motion);

// Clip column holding each pair's source body.
std::vector<int> pair_columns(const MotionClip& clip, const Morphology& source,
                              const CorrespondenceSet& pairs);

// Reference frames of all pairs for one clip time step (source frames given
// in clip column order).
std::vector<Frame> map_reference_set(const Calibration& cal, const RetargetParams& params,
                                     const std::vector<Frame>& clip_row,
                                     const std::vector<int>& columns, int motion, double z_nom);

}  // namespace retarget
