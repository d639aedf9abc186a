#pragma once

#include "retarget/rotmath.h"

namespace retarget {

// World-frame pose and twist of one rigid body. Linear velocity is that of
// the frame origin.
struct Frame {
  Vec3 pos = Vec3::Zero();
  Mat3 rot = Mat3::Identity();
  Vec3 linvel = Vec3::Zero();
  Vec3 angvel = Vec3::Zero();
};

inline Vec3 point_velocity(const Frame& f, const Vec3& world_point) {
  return f.linvel + f.angvel.cross(world_point - f.pos);
}

}  // namespace retarget
