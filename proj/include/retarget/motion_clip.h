#pragma once

#include <string>
#include <vector>

#include "retarget/frame.h"

namespace retarget {

class Morphology;

// Recorded motion: per time step, one world Frame per listed body.
struct MotionClip {
  std::string id;
  double fps = 50.0;
  std::vector<std::string> bodies;
  std::vector<std::vector<Frame>> frames;  // [frame][body column]
  double z_nom = 0.0;
  bool has_velocities = true;

  int num_frames() const { return static_cast<int>(frames.size()); }
  double duration() const { return num_frames() > 1 ? (num_frames() - 1) / fps : 0.0; }
  int column(const std::string& body) const;  // throws ValidationError
};

// Checks fps, frame completeness and finiteness.
void validate_clip(const MotionClip& clip);

// Central differences in the interior, one-sided at the ends. Angular
// velocity is the world-frame rate Log(R_next R_prev^T) / dt.
void fill_velocities(MotionClip& clip);

// Frames at time t (seconds, clamped to the clip), interpolating linearly in
// position/velocity and geodesically in orientation.
std::vector<Frame> sample_clip(const MotionClip& clip, double t);

// Maps clip columns to morphology body ids; -1 where the body is absent.
std::vector<int> clip_columns_for(const MotionClip& clip, const Morphology& morph);

}  // namespace retarget
