#include "retarget/refmap.h"

#include <algorithm>
#include <limits>

#include "retarget/errors.h"

namespace retarget {
namespace {

void check_indices(const Calibration& cal, const RetargetParams& params, int pair, int motion) {
  if (pair < 0 || pair >= params.num_pairs() || pair >= static_cast<int>(cal.x_nom.size())) {
    throw ValidationError("map_reference: unknown pair " + std::to_string(pair));
  }
  if (motion < 0 || motion >= params.num_motions()) {
    throw ValidationError("map_reference: unknown motion " + std::to_string(motion));
  }
}

}  // namespace

double precompute_z_nom(const MotionClip& clip, const Morphology& source, const Calibration& cal) {
  if (source.contact_bodies().empty()) {
    throw ValidationError("precompute_z_nom: source morphology has no contact bodies");
  }
  const auto cols = clip_columns_for(clip, source);
  double lowest = std::numeric_limits<double>::infinity();
  for (int body : source.contact_bodies()) {
    if (cols[body] < 0) {
      throw ValidationError("precompute_z_nom: clip '" + clip.id + "' lacks contact body '" +
                            source.bodies()[body].name + "'");
    }
    for (const auto& row : clip.frames) {
      lowest = std::min(lowest, lowest_point_height(source, row[cols[body]], body));
    }
  }
  if (!std::isfinite(lowest)) {
    throw ValidationError("precompute_z_nom: contact bodies have no collision geometry");
  }
  return -cal.scale * lowest;
}

Frame map_reference(const Calibration& cal, const RetargetParams& params, const Frame& source,
                    int pair, int motion, double z_nom) {
  check_indices(cal, params, pair, motion);
  const Vec3 local = cal.R_nom[pair] * params.p_pos[pair] + cal.x_nom[pair];
  const Vec3 offset = source.rot * local;
  Frame g;
  g.pos = offset + cal.scale * source.pos + (z_nom + params.p_z[motion]) * Vec3::UnitZ();
  g.rot = source.rot * cal.R_nom[pair] * exp_map(params.p_ori[pair]);
  g.linvel = source.angvel.cross(offset) + cal.scale * source.linvel;
  g.angvel = source.angvel;
  return g;
}

ReferenceJacobian reference_jacobian(const Calibration& cal, const RetargetParams& params,
                                     const Frame& source, int pair, int motion) {
  check_indices(cal, params, pair, motion);
  ReferenceJacobian J;
  J.dx_dpos = source.rot * cal.R_nom[pair];
  J.dx_dz = Vec3::UnitZ();
  J.dv_dpos = hat(source.angvel) * J.dx_dpos;
  J.rot_right_dori = right_jacobian(params.p_ori[pair]);
  return J;
}

std::vector<int> pair_columns(const MotionClip& clip, const Morphology& source,
                              const CorrespondenceSet& pairs) {
  std::vector<int> cols;
  for (const auto& p : pairs.resolved) {
    cols.push_back(clip.column(source.bodies()[p.source_body].name));
  }
  return cols;
}

std::vector<Frame> map_reference_set(const Calibration& cal, const RetargetParams& params,
                                     const std::vector<Frame>& clip_row,
                                     const std::vector<int>& columns, int motion, double z_nom) {
  std::vector<Frame> out;
  out.reserve(columns.size());
  for (size_t b = 0; b < columns.size(); ++b) {
    out.push_back(map_reference(cal, params, clip_row[columns[b]], static_cast<int>(b), motion, z_nom));
  }
  return out;
}

}  // namespace retarget
