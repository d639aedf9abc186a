#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "retarget/frame.h"

namespace retarget {

using VecX = Eigen::VectorXd;

// Sphere when p0 == p1, capsule otherwise. Points in body frame.
struct CollisionShape {
  Vec3 p0 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();
  double radius = 0.0;

  bool is_sphere() const { return p0 == p1; }
};

struct BodySpec {
  std::string name;
  double mass = 1.0;
  Mat3 inertia = Mat3::Identity();  // about the COM, body axes
  Vec3 com_offset = Vec3::Zero();
  std::vector<CollisionShape> collision;
};

// Revolute joint. The child body frame sits at `origin_pos` in the parent
// frame, rotated by `origin_rot`, then by angle q about `axis`.
struct JointSpec {
  std::string name;
  int parent_body = -1;
  int child_body = -1;
  Vec3 axis = Vec3::UnitZ();
  Vec3 origin_pos = Vec3::Zero();
  Mat3 origin_rot = Mat3::Identity();
  double lower = -1.0;
  double upper = 1.0;
  double torque_limit = 30.0;
  double kp = 60.0;
  double kd = 2.0;
};

class Morphology {
 public:
  Morphology() = default;
  Morphology(std::vector<BodySpec> bodies, std::vector<JointSpec> joints, int root_body,
             std::vector<int> contact_bodies, VecX nominal_q, Frame nominal_root);

  const std::vector<BodySpec>& bodies() const { return bodies_; }
  const std::vector<JointSpec>& joints() const { return joints_; }
  int root_body() const { return root_body_; }
  const std::vector<int>& contact_bodies() const { return contact_bodies_; }
  const VecX& nominal_q() const { return nominal_q_; }
  const Frame& nominal_root() const { return nominal_root_; }

  int num_bodies() const { return static_cast<int>(bodies_.size()); }
  int num_joints() const { return static_cast<int>(joints_.size()); }

  // Joints sorted so that every joint comes after the joint of its parent body.
  const std::vector<int>& joint_order() const { return joint_order_; }
  // Joint whose child is `body`, or -1 for the root.
  int parent_joint(int body) const { return parent_joint_[body]; }
  int parent_body(int body) const;
  // Joints on the path from the root to `body`, root side first.
  const std::vector<int>& ancestor_joints(int body) const { return ancestors_[body]; }
  bool adjacent(int body_a, int body_b) const;

  std::optional<int> find_body(const std::string& name) const;
  int body_index(const std::string& name) const;  // throws ValidationError
  double total_mass() const;

 private:
  void validate_and_index();

  std::vector<BodySpec> bodies_;
  std::vector<JointSpec> joints_;
  int root_body_ = 0;
  std::vector<int> contact_bodies_;
  VecX nominal_q_;
  Frame nominal_root_;

  std::vector<int> joint_order_;
  std::vector<int> parent_joint_;
  std::vector<std::vector<int>> ancestors_;
};

// World frames of all bodies, indexed by body id. Velocities are filled
// when `qd` is given; the root twist comes from `root`.
std::vector<Frame> forward_kinematics(const Morphology& morph, const VecX& q, const Frame& root,
                                      const VecX* qd = nullptr);

std::vector<Frame> nominal_frames(const Morphology& morph);

// World-space collision shape endpoints of `body` placed at `frame`.
struct WorldShape {
  Vec3 p0;
  Vec3 p1;
  double radius;
  int body;
};
std::vector<WorldShape> world_shapes(const Morphology& morph, const Frame& frame, int body);

// Lowest world z over a body's collision geometry (surface, not centers).
// Returns +inf for bodies without geometry.
double lowest_point_height(const Morphology& morph, const Frame& frame, int body);

enum class OrientationMode { kFull, kSwing, kTwist };

struct CorrespondencePair {
  std::string source;
  std::string target;
  OrientationMode mode = OrientationMode::kFull;
  Vec3 twist_axis = Vec3::UnitZ();  // target body frame, used for swing/twist
  bool is_root = false;
};

// Pair with body names resolved against a source/target morphology pair.
struct ResolvedPair {
  int source_body = -1;
  int target_body = -1;
  OrientationMode mode = OrientationMode::kFull;
  Vec3 twist_axis = Vec3::UnitZ();
  bool is_root = false;
};

struct CorrespondenceSet {
  std::vector<CorrespondencePair> pairs;
  std::vector<ResolvedPair> resolved;
  int root_pair = -1;

  int size() const { return static_cast<int>(resolved.size()); }
};

// Validates the pair list (exactly one root, known bodies, unit twist axes).
CorrespondenceSet resolve_correspondences(const std::vector<CorrespondencePair>& pairs,
                                          const Morphology& source, const Morphology& target);

struct Calibration {
  double scale = 1.0;
  std::vector<Vec3> x_nom;
  std::vector<Mat3> R_nom;
  std::vector<std::string> warnings;
};

Calibration calibrate(const Morphology& source, const Morphology& target,
                      const CorrespondenceSet& pairs);

}  // namespace retarget
