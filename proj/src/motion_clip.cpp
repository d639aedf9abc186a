#include "retarget/motion_clip.h"

#include <algorithm>
#include <cmath>

#include "retarget/errors.h"
#include "retarget/morphology.h"

namespace retarget {

int MotionClip::column(const std::string& body) const {
  for (size_t k = 0; k < bodies.size(); ++k) {
    if (bodies[k] == body) return static_cast<int>(k);
  }
  throw ValidationError("clip '" + id + "': missing body '" + body + "'");
}

void validate_clip(const MotionClip& clip) {
  if (!(clip.fps > 0.0)) throw ValidationError("clip '" + clip.id + "': fps must be > 0");
  if (clip.frames.empty()) throw ValidationError("clip '" + clip.id + "': no frames");
  for (size_t t = 0; t < clip.frames.size(); ++t) {
    const auto& row = clip.frames[t];
    if (row.size() != clip.bodies.size()) {
      throw ValidationError("clip '" + clip.id + "': frame " + std::to_string(t) + " is incomplete");
    }
    for (const auto& f : row) {
      if (!f.pos.allFinite() || !f.linvel.allFinite() || !f.angvel.allFinite() ||
          !is_rotation(f.rot, 1e-6)) {
        throw ValidationError("clip '" + clip.id + "': invalid frame " + std::to_string(t));
      }
    }
  }
}

void fill_velocities(MotionClip& clip) {
  const int n = clip.num_frames();
  const double dt = 1.0 / clip.fps;
  for (size_t k = 0; k < clip.bodies.size(); ++k) {
    for (int t = 0; t < n; ++t) {
      Frame& f = clip.frames[t][k];
      if (n == 1) {
        f.linvel.setZero();
        f.angvel.setZero();
        continue;
      }
      const int a = std::max(t - 1, 0);
      const int b = std::min(t + 1, n - 1);
      const double span = (b - a) * dt;
      const Frame& fa = clip.frames[a][k];
      const Frame& fb = clip.frames[b][k];
      f.linvel = (fb.pos - fa.pos) / span;
      f.angvel = log_map(fb.rot * fa.rot.transpose()) / span;
    }
  }
  clip.has_velocities = true;
}

std::vector<Frame> sample_clip(const MotionClip& clip, double t) {
  const int n = clip.num_frames();
  const double u = std::clamp(t * clip.fps, 0.0, static_cast<double>(n - 1));
  const int i0 = std::min(static_cast<int>(std::floor(u)), n - 1);
  const int i1 = std::min(i0 + 1, n - 1);
  const double a = u - i0;
  if (a == 0.0 || i0 == i1) return clip.frames[i0];
  std::vector<Frame> out(clip.bodies.size());
  for (size_t k = 0; k < out.size(); ++k) {
    const Frame& f0 = clip.frames[i0][k];
    const Frame& f1 = clip.frames[i1][k];
    out[k].pos = (1.0 - a) * f0.pos + a * f1.pos;
    out[k].rot = f0.rot * exp_map(a * geodesic_error(f0.rot, f1.rot));
    out[k].linvel = (1.0 - a) * f0.linvel + a * f1.linvel;
    out[k].angvel = (1.0 - a) * f0.angvel + a * f1.angvel;
  }
  return out;
}

std::vector<int> clip_columns_for(const MotionClip& clip, const Morphology& morph) {
  std::vector<int> cols(morph.num_bodies(), -1);
  for (size_t k = 0; k < clip.bodies.size(); ++k) {
    if (auto b = morph.find_body(clip.bodies[k])) cols[*b] = static_cast<int>(k);
  }
  return cols;
}

}  // namespace retarget
