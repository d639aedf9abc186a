#include "retarget/morphology.h"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <set>

#include "retarget/errors.h"

namespace retarget {

Morphology::Morphology(std::vector<BodySpec> bodies, std::vector<JointSpec> joints,
                       int root_body, std::vector<int> contact_bodies, VecX nominal_q,
                       Frame nominal_root)
    : bodies_(std::move(bodies)),
      joints_(std::move(joints)),
      root_body_(root_body),
      contact_bodies_(std::move(contact_bodies)),
      nominal_q_(std::move(nominal_q)),
      nominal_root_(nominal_root) {
  validate_and_index();
}

void Morphology::validate_and_index() {
  const int nb = num_bodies();
  const int nj = num_joints();
  if (nb == 0) throw ValidationError("morphology: no bodies");
  if (root_body_ < 0 || root_body_ >= nb) throw ValidationError("morphology: bad root body index");

  std::set<std::string> names;
  for (const auto& b : bodies_) {
    if (!names.insert(b.name).second) {
      throw ValidationError("morphology: duplicate body name '" + b.name + "'");
    }
    if (!(b.mass > 0.0)) throw ValidationError("morphology: body '" + b.name + "' mass <= 0");
    if ((b.inertia - b.inertia.transpose()).cwiseAbs().maxCoeff() > 1e-9 ||
        b.inertia.llt().info() != Eigen::Success) {
      throw ValidationError("morphology: body '" + b.name + "' inertia not SPD");
    }
    for (const auto& c : b.collision) {
      if (!(c.radius > 0.0)) {
        throw ValidationError("morphology: body '" + b.name + "' has non-positive collision radius");
      }
    }
  }

  parent_joint_.assign(nb, -1);
  for (int j = 0; j < nj; ++j) {
    auto& jt = joints_[j];
    if (jt.parent_body < 0 || jt.parent_body >= nb || jt.child_body < 0 || jt.child_body >= nb) {
      throw ValidationError("morphology: joint '" + jt.name + "' references unknown body");
    }
    if (jt.parent_body == jt.child_body) {
      throw ValidationError("morphology: joint '" + jt.name + "' connects a body to itself");
    }
    if (std::abs(jt.axis.norm() - 1.0) > 1e-6) {
      throw ValidationError("morphology: joint '" + jt.name + "' axis is not unit length");
    }
    jt.axis.normalize();
    if (!(jt.lower < jt.upper)) throw ValidationError("morphology: joint '" + jt.name + "' lower >= upper");
    if (!(jt.torque_limit > 0.0)) {
      throw ValidationError("morphology: joint '" + jt.name + "' torque limit must be > 0");
    }
    if (jt.kp < 0.0 || jt.kd < 0.0) throw ValidationError("morphology: joint '" + jt.name + "' negative gains");
    if (!is_rotation(jt.origin_rot)) {
      throw ValidationError("morphology: joint '" + jt.name + "' origin rotation invalid");
    }
    if (jt.child_body == root_body_) {
      throw ValidationError("morphology: root body cannot be a joint child");
    }
    if (parent_joint_[jt.child_body] != -1) {
      throw ValidationError("morphology: body '" + bodies_[jt.child_body].name +
                            "' has more than one parent joint");
    }
    parent_joint_[jt.child_body] = j;
  }

  // Breadth-first from the root gives a parent-first joint order and detects
  // disconnected bodies (a cycle necessarily leaves some body unreachable
  // since every non-root body has at most one parent).
  std::vector<std::vector<int>> child_joints(nb);
  for (int j = 0; j < nj; ++j) child_joints[joints_[j].parent_body].push_back(j);
  joint_order_.clear();
  ancestors_.assign(nb, {});
  std::vector<bool> seen(nb, false);
  std::deque<int> queue{root_body_};
  seen[root_body_] = true;
  while (!queue.empty()) {
    const int b = queue.front();
    queue.pop_front();
    for (int j : child_joints[b]) {
      const int c = joints_[j].child_body;
      if (seen[c]) throw ValidationError("morphology: joint graph has a cycle");
      seen[c] = true;
      joint_order_.push_back(j);
      ancestors_[c] = ancestors_[b];
      ancestors_[c].push_back(j);
      queue.push_back(c);
    }
  }
  for (int b = 0; b < nb; ++b) {
    if (!seen[b]) {
      throw ValidationError("morphology: body '" + bodies_[b].name + "' is not connected to the root");
    }
  }

  for (int c : contact_bodies_) {
    if (c < 0 || c >= nb) throw ValidationError("morphology: bad contact body index");
  }
  if (nominal_q_.size() == 0 && nj > 0) nominal_q_ = VecX::Zero(nj);
  if (nominal_q_.size() != nj) throw ValidationError("morphology: nominal_q has wrong size");
  for (int j = 0; j < nj; ++j) {
    if (nominal_q_[j] < joints_[j].lower || nominal_q_[j] > joints_[j].upper) {
      throw ValidationError("morphology: nominal_q outside limits for joint '" + joints_[j].name + "'");
    }
  }
  if (!is_rotation(nominal_root_.rot)) throw ValidationError("morphology: nominal root rotation invalid");
}

int Morphology::parent_body(int body) const {
  const int j = parent_joint_[body];
  return j < 0 ? -1 : joints_[j].parent_body;
}

bool Morphology::adjacent(int body_a, int body_b) const {
  return body_a == body_b || parent_body(body_a) == body_b || parent_body(body_b) == body_a;
}

std::optional<int> Morphology::find_body(const std::string& name) const {
  for (int b = 0; b < num_bodies(); ++b) {
    if (bodies_[b].name == name) return b;
  }
  return std::nullopt;
}

int Morphology::body_index(const std::string& name) const {
  auto b = find_body(name);
  if (!b) throw ValidationError("unknown body '" + name + "'");
  return *b;
}

double Morphology::total_mass() const {
  double m = 0.0;
  for (const auto& b : bodies_) m += b.mass;
  return m;
}

std::vector<Frame> forward_kinematics(const Morphology& morph, const VecX& q, const Frame& root,
                                      const VecX* qd) {
  if (q.size() != morph.num_joints() || (qd && qd->size() != morph.num_joints())) {
    throw ValidationError("forward_kinematics: joint vector dimension mismatch");
  }
  std::vector<Frame> frames(morph.num_bodies());
  frames[morph.root_body()] = root;
  if (!qd) {
    frames[morph.root_body()].linvel.setZero();
    frames[morph.root_body()].angvel.setZero();
  }
  for (int j : morph.joint_order()) {
    const JointSpec& jt = morph.joints()[j];
    const Frame& parent = frames[jt.parent_body];
    Frame& child = frames[jt.child_body];
    const Mat3 joint_rot = parent.rot * jt.origin_rot;
    child.pos = parent.pos + parent.rot * jt.origin_pos;
    child.rot = joint_rot * Eigen::AngleAxisd(q[j], jt.axis).toRotationMatrix();
    if (qd) {
      child.angvel = parent.angvel + joint_rot * jt.axis * (*qd)[j];
      child.linvel = parent.linvel + parent.angvel.cross(child.pos - parent.pos);
    }
  }
  return frames;
}

std::vector<Frame> nominal_frames(const Morphology& morph) {
  return forward_kinematics(morph, morph.nominal_q(), morph.nominal_root());
}

std::vector<WorldShape> world_shapes(const Morphology& morph, const Frame& frame, int body) {
  std::vector<WorldShape> out;
  const Frame& f = frame;
  for (const auto& c : morph.bodies()[body].collision) {
    out.push_back({f.pos + f.rot * c.p0, f.pos + f.rot * c.p1, c.radius, body});
  }
  return out;
}

double lowest_point_height(const Morphology& morph, const Frame& frame, int body) {
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& c : morph.bodies()[body].collision) {
    const double z0 = (frame.pos + frame.rot * c.p0).z();
    const double z1 = (frame.pos + frame.rot * c.p1).z();
    lowest = std::min(lowest, std::min(z0, z1) - c.radius);
  }
  return lowest;
}

CorrespondenceSet resolve_correspondences(const std::vector<CorrespondencePair>& pairs,
                                          const Morphology& source, const Morphology& target) {
  CorrespondenceSet set;
  set.pairs = pairs;
  if (pairs.empty()) throw ValidationError("correspondences: empty pair list");
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const auto sb = source.find_body(p.source);
    const auto tb = target.find_body(p.target);
    if (!sb) throw ValidationError("correspondences: unknown source body '" + p.source + "'");
    if (!tb) throw ValidationError("correspondences: unknown target body '" + p.target + "'");
    if (p.mode != OrientationMode::kFull && std::abs(p.twist_axis.norm() - 1.0) > 1e-6) {
      throw ValidationError("correspondences: twist_axis of pair '" + p.source + "'/'" + p.target +
                            "' must be a unit vector");
    }
    if (p.is_root) {
      if (set.root_pair >= 0) throw ValidationError("correspondences: more than one root pair");
      set.root_pair = static_cast<int>(i);
    }
    set.resolved.push_back({*sb, *tb, p.mode, p.twist_axis.normalized(), p.is_root});
  }
  if (set.root_pair < 0) throw ValidationError("correspondences: missing root pair (exactly one is_root required)");
  return set;
}

Calibration calibrate(const Morphology& source, const Morphology& target,
                      const CorrespondenceSet& pairs) {
  const double h_source = source.nominal_root().pos.z();
  const double h_target = target.nominal_root().pos.z();
  if (!(h_source > 0.0)) throw ValidationError("calibrate: source nominal root height must be > 0");
  if (!(h_target > 0.0)) throw ValidationError("calibrate: target nominal root height must be > 0");

  Calibration cal;
  cal.scale = h_target / h_source;
  const auto src = nominal_frames(source);
  const auto tgt = nominal_frames(target);
  for (const auto& p : pairs.resolved) {
    if (p.source_body >= source.num_bodies() || p.target_body >= target.num_bodies()) {
      throw ValidationError("calibrate: pair references unknown body");
    }
    const Frame& fs = src[p.source_body];
    const Frame& ft = tgt[p.target_body];
    cal.x_nom.push_back(fs.rot.transpose() * (ft.pos - cal.scale * fs.pos));
    cal.R_nom.push_back(fs.rot.transpose() * ft.rot);
  }

  // Nominal poses are expected to share heading (x forward, z up).
  const Vec3 hs = source.nominal_root().rot.col(0);
  const Vec3 ht = target.nominal_root().rot.col(0);
  const double yaw_s = std::atan2(hs.y(), hs.x());
  const double yaw_t = std::atan2(ht.y(), ht.x());
  const double dyaw = std::abs(std::remainder(yaw_s - yaw_t, 2.0 * M_PI));
  if (dyaw > 0.5) {
    cal.warnings.push_back("nominal root headings differ by " + std::to_string(dyaw) +
                           " rad; nominal configurations should be coarsely aligned");
  }
  return cal;
}

}  // namespace retarget
