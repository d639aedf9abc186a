#include "retarget/toy.h"

#include <cmath>

namespace retarget::toy {
namespace {

CollisionShape capsule(double z0, double z1, double r) {
  return {Vec3(0, 0, z0), Vec3(0, 0, z1), r};
}

CollisionShape sphere(double z, double r) { return {Vec3(0, 0, z), Vec3(0, 0, z), r}; }

JointSpec pitch_joint(const char* name, int parent, int child, const Vec3& origin, double lo,
                      double hi, double limit, double kp, double kd) {
  JointSpec j;
  j.name = name;
  j.parent_body = parent;
  j.child_body = child;
  j.axis = Vec3::UnitY();
  j.origin_pos = origin;
  j.lower = lo;
  j.upper = hi;
  j.torque_limit = limit;
  j.kp = kp;
  j.kd = kd;
  return j;
}

Frame root_at(double x, double z) {
  Frame f;
  f.pos = Vec3(x, 0.0, z);
  return f;
}

}  // namespace

Mat3 capsule_inertia(double mass, double radius, double length) {
  const double side = mass * (3.0 * radius * radius + length * length) / 12.0;
  return Vec3(side, side, 0.5 * mass * radius * radius).asDiagonal();
}

Mat3 sphere_inertia(double mass, double radius) {
  return Mat3::Identity() * (0.4 * mass * radius * radius);
}

Morphology source_morphology() {
  std::vector<BodySpec> bodies(5);
  bodies[0] = {"torso", 20.0, capsule_inertia(20.0, 0.1, 0.45), Vec3(0, 0, 0.25),
               {capsule(0.05, 0.5, 0.1)}};
  for (int i : {1, 2}) {
    bodies[i] = {i == 1 ? "left_leg" : "right_leg", 4.0, capsule_inertia(4.0, 0.05, 0.8),
                 Vec3(0, 0, -0.45), {capsule(-0.05, -0.75, 0.05), sphere(-0.85, 0.05)}};
  }
  bodies[3] = {"upper_arm", 2.0, capsule_inertia(2.0, 0.04, 0.3), Vec3(0, 0, -0.15),
               {capsule(-0.03, -0.27, 0.04)}};
  bodies[4] = {"forearm", 1.5, capsule_inertia(1.5, 0.035, 0.3), Vec3(0, 0, -0.15),
               {capsule(-0.03, -0.27, 0.035)}};
  std::vector<JointSpec> joints = {
      pitch_joint("hip_l", 0, 1, Vec3(0, 0.1, 0), -1.2, 1.2, 200, 300, 10),
      pitch_joint("hip_r", 0, 2, Vec3(0, -0.1, 0), -1.2, 1.2, 200, 300, 10),
      pitch_joint("shoulder", 0, 3, Vec3(0, 0.22, 0.45), -2.5, 2.5, 100, 100, 5),
      pitch_joint("elbow", 3, 4, Vec3(0, 0, -0.3), -2.4, 0.1, 50, 50, 2),
  };
  return Morphology(std::move(bodies), std::move(joints), 0, {1, 2}, VecX::Zero(4),
                    root_at(0.0, 0.9));
}

Morphology target_morphology() {
  std::vector<BodySpec> bodies(4);
  bodies[0] = {"torso", 4.0, capsule_inertia(4.0, 0.07, 0.3), Vec3(0, 0, 0.15),
               {capsule(0.03, 0.3, 0.07)}};
  for (int i : {1, 2}) {
    bodies[i] = {i == 1 ? "left_leg" : "right_leg", 1.0, capsule_inertia(1.0, 0.03, 0.46),
                 Vec3(0, 0, -0.23), {capsule(-0.03, -0.38, 0.03), sphere(-0.46, 0.04)}};
  }
  bodies[3] = {"arm", 0.5, capsule_inertia(0.5, 0.025, 0.28), Vec3(0, 0, -0.14),
               {capsule(-0.03, -0.25, 0.025)}};
  std::vector<JointSpec> joints = {
      pitch_joint("hip_l", 0, 1, Vec3(0, 0.07, -0.05), -1.2, 1.2, 30, 60, 2),
      pitch_joint("hip_r", 0, 2, Vec3(0, -0.07, -0.05), -1.2, 1.2, 30, 60, 2),
      pitch_joint("shoulder", 0, 3, Vec3(0, 0.16, 0.27), -2.5, 2.5, 10, 20, 0.5),
  };
  return Morphology(std::move(bodies), std::move(joints), 0, {1, 2}, VecX::Zero(3),
                    root_at(0.0, 0.55));
}

TrainerConfig trainer_config() {
  TrainerConfig c;
  c.ppo = PPOConfig::desk_scale();
  c.update.step_size = 1e-4;
  c.update.step_decay_iterations = 100.0;
  c.seed = 1;
  return c;
}

std::vector<CorrespondencePair> correspondences() {
  return {
      {"torso", "torso", OrientationMode::kFull, Vec3::UnitZ(), true},
      {"left_leg", "left_leg", OrientationMode::kFull, Vec3::UnitZ(), false},
      {"right_leg", "right_leg", OrientationMode::kFull, Vec3::UnitZ(), false},
      {"forearm", "arm", OrientationMode::kSwing, Vec3::UnitZ(), false},
  };
}

MotionClip make_clip(const Morphology& morph, const char* id, double fps, int frames,
                     const std::vector<Frame>& roots, const std::vector<VecX>& joint_angles) {
  MotionClip clip;
  clip.id = id;
  clip.fps = fps;
  for (const auto& b : morph.bodies()) clip.bodies.push_back(b.name);
  for (int t = 0; t < frames; ++t) {
    clip.frames.push_back(forward_kinematics(morph, joint_angles[t], roots[t]));
  }
  fill_velocities(clip);
  return clip;
}

std::vector<MotionClip> source_clips(double seconds) {
  const Morphology m = source_morphology();
  constexpr double kFps = 50.0;
  constexpr double kFoot = 0.85;  // hip to foot-sphere center
  constexpr double kFootRadius = 0.05;
  const int n = static_cast<int>(std::lround(seconds * kFps)) + 1;
  std::vector<MotionClip> clips;

  // Compass gait: the stance foot center stays planted, the swing leg
  // mirrors it. Legs pitch forward for positive theta (q = -theta).
  {
    const double amp = 0.3;
    const double step_time = 0.6;
    std::vector<Frame> roots(n);
    std::vector<VecX> qs(n, VecX::Zero(4));
    for (int t = 0; t < n; ++t) {
      const double u = t / kFps / step_time + 0.5;
      const int step = static_cast<int>(std::floor(u));
      const double tau = u - step;
      const double foot_x = step * 2.0 * kFoot * std::sin(amp);
      const double th = amp * (1.0 - 2.0 * tau);
      roots[t] = root_at(foot_x - kFoot * std::sin(th), kFoot * std::cos(th) + kFootRadius);
      const bool left_stance = step % 2 == 0;
      const double th_left = left_stance ? th : -th;
      qs[t] << -th_left, th_left, 0.8 * th_left, -0.3 - 0.15 * std::cos(2.0 * M_PI * tau);
    }
    clips.push_back(make_clip(m, "walk", kFps, n, roots, qs));
  }
  // Sway over planted feet; frame 60 carries a 6 cm dip like a capture glitch.
  {
    std::vector<Frame> roots(n);
    std::vector<VecX> qs(n, VecX::Zero(4));
    for (int t = 0; t < n; ++t) {
      const double time = t / kFps;
      const double th = 0.2 * std::sin(2.0 * M_PI * 0.4 * time);
      roots[t] = root_at(-kFoot * std::sin(th), kFoot * std::cos(th) + kFootRadius);
      if (t == 60) roots[t].pos.z() -= 0.06;
      qs[t] << -th, -th, 0.3 * std::sin(2.0 * M_PI * 0.4 * time), -0.2;
    }
    clips.push_back(make_clip(m, "sway", kFps, n, roots, qs));
  }
  // Standing arm wave.
  {
    std::vector<Frame> roots(n, root_at(0.0, 0.9));
    std::vector<VecX> qs(n, VecX::Zero(4));
    for (int t = 0; t < n; ++t) {
      const double time = t / kFps;
      const double raise = std::min(1.0, time);
      qs[t] << 0.0, 0.0, raise * (-1.5 + 0.5 * std::sin(2.0 * M_PI * 0.6 * time)),
          raise * (-0.6 - 0.5 * std::sin(2.0 * M_PI * 1.2 * time));
    }
    clips.push_back(make_clip(m, "wave", kFps, n, roots, qs));
  }
  return clips;
}

}  // namespace retarget::toy
