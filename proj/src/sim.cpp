#include "retarget/sim.h"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

#include "retarget/errors.h"

namespace retarget {

void SimConfig::validate() const {
  if (!(control_dt > 0.0)) throw ValidationError("sim: control_dt must be > 0");
  if (substeps < 1) throw ValidationError("sim: substeps must be >= 1");
  if (!(contact.stiffness > 0.0)) throw ValidationError("sim: contact stiffness must be > 0");
  if (contact.damping < 0.0 || contact.friction < 0.0 || !(contact.slip_velocity > 0.0)) {
    throw ValidationError("sim: invalid contact parameters");
  }
  if (deadband < 0.0) throw ValidationError("sim: deadband must be >= 0");
  if (force_scale < 0.0 || torque_scale < 0.0) throw ValidationError("sim: wrench scales must be >= 0");
}

Vec3 apply_deadband(const Vec3& w, double d) {
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    const double mag = std::max(0.0, std::abs(w[i]) - d);
    out[i] = w[i] > 0.0 ? mag : (w[i] < 0.0 ? -mag : 0.0);
  }
  return out;
}

VecX pd_torques(const VecX& q, const VecX& qd, const VecX& setpoints, const VecX& kp,
                const VecX& kd, const VecX& torque_limits) {
  const VecX raw = kp.cwiseProduct(setpoints - q) - kd.cwiseProduct(qd);
  return raw.cwiseMax(-torque_limits).cwiseMin(torque_limits);
}

struct Simulator::Kinematics {
  std::vector<Vec3> origin;
  std::vector<Mat3> rot;
  std::vector<Vec3> angvel;
  std::vector<Vec3> linvel;       // of the body origin
  std::vector<Vec3> ang_bias;     // angular acceleration at zero generalized acceleration
  std::vector<Vec3> lin_bias;     // origin acceleration at zero generalized acceleration
  std::vector<Vec3> joint_axis;   // world
};

Simulator::Simulator(std::shared_ptr<const Morphology> morph, SimConfig cfg)
    : morph_(std::move(morph)), cfg_(cfg) {
  cfg_.validate();
  const int n = morph_->num_joints();
  kp_.resize(n);
  kd_.resize(n);
  limits_.resize(n);
  for (int j = 0; j < n; ++j) {
    kp_[j] = morph_->joints()[j].kp;
    kd_[j] = morph_->joints()[j].kd;
    limits_[j] = morph_->joints()[j].torque_limit;
  }
  for (int b = 0; b < morph_->num_bodies(); ++b) {
    const bool is_contact = std::find(morph_->contact_bodies().begin(),
                                      morph_->contact_bodies().end(), b) !=
                            morph_->contact_bodies().end();
    if ((cfg_.contact.all_bodies || is_contact) && !morph_->bodies()[b].collision.empty()) {
      colliding_bodies_.push_back(b);
    }
  }
}

SimState Simulator::make_state(const Frame& root, const VecX& q, const VecX& qd) const {
  const int n = morph_->num_joints();
  if (q.size() != n || qd.size() != n) throw ValidationError("make_state: joint dimension mismatch");
  SimState s;
  s.root = root;
  s.q = q;
  s.qd = qd;
  s.body_frames = forward_kinematics(*morph_, q, root, &qd);
  s.last_joint_torques = VecX::Zero(n);
  s.last_joint_acc = VecX::Zero(n);
  return s;
}

Simulator::Config Simulator::from_state(const SimState& s) {
  Config c;
  c.pos = s.root.pos;
  c.quat = Eigen::Quaterniond(s.root.rot);
  c.q = s.q;
  c.u.resize(6 + s.q.size());
  c.u << s.root.linvel, s.root.angvel, s.qd;
  return c;
}

void Simulator::kinematics(const Config& c, Kinematics& k) const {
  const Morphology& m = *morph_;
  const int nb = m.num_bodies();
  k.origin.resize(nb);
  k.rot.resize(nb);
  k.angvel.resize(nb);
  k.linvel.resize(nb);
  k.ang_bias.resize(nb);
  k.lin_bias.resize(nb);
  k.joint_axis.resize(m.num_joints());

  const int r = m.root_body();
  k.origin[r] = c.pos;
  k.rot[r] = c.quat.normalized().toRotationMatrix();
  k.linvel[r] = c.u.segment<3>(0);
  k.angvel[r] = c.u.segment<3>(3);
  k.ang_bias[r].setZero();
  k.lin_bias[r].setZero();
  for (int j : m.joint_order()) {
    const JointSpec& jt = m.joints()[j];
    const int p = jt.parent_body;
    const int ch = jt.child_body;
    const Mat3 jrot = k.rot[p] * jt.origin_rot;
    const Vec3 axis = jrot * jt.axis;
    const double qd = c.u[6 + j];
    k.joint_axis[j] = axis;
    k.origin[ch] = k.origin[p] + k.rot[p] * jt.origin_pos;
    k.rot[ch] = jrot * Eigen::AngleAxisd(c.q[j], jt.axis).toRotationMatrix();
    const Vec3 rel = k.origin[ch] - k.origin[p];
    const Vec3& wp = k.angvel[p];
    k.angvel[ch] = wp + axis * qd;
    k.linvel[ch] = k.linvel[p] + wp.cross(rel);
    k.ang_bias[ch] = k.ang_bias[p] + wp.cross(axis * qd);
    k.lin_bias[ch] = k.lin_bias[p] + k.ang_bias[p].cross(rel) + wp.cross(wp.cross(rel));
  }
}

VecX Simulator::dynamics(const Config& c, const VecX& setpoints, const Vec3& force,
                         const Vec3& torque, VecX* joint_torques,
                         std::vector<ContactPoint>* contacts) const {
  const Morphology& m = *morph_;
  const int n = m.num_joints();
  const int N = 6 + n;
  Kinematics k;
  kinematics(c, k);
  const Vec3 root_pos = k.origin[m.root_body()];

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(N, N);
  VecX tau = VecX::Zero(N);
  Eigen::Matrix<double, 3, Eigen::Dynamic> Jv(3, N), Jw(3, N);

  // Generalized force of a world force F applied at world point x on `body`.
  auto add_point_force = [&](int body, const Vec3& x, const Vec3& F) {
    tau.segment<3>(0) += F;
    tau.segment<3>(3) += (x - root_pos).cross(F);
    for (int j : m.ancestor_joints(body)) {
      const Vec3& oj = k.origin[m.joints()[j].child_body];
      tau[6 + j] += k.joint_axis[j].dot((x - oj).cross(F));
    }
  };

  const Vec3 gravity(0.0, 0.0, -cfg_.gravity);
  for (int b = 0; b < m.num_bodies(); ++b) {
    const BodySpec& body = m.bodies()[b];
    const Vec3 dcom = k.rot[b] * body.com_offset;
    const Vec3 com = k.origin[b] + dcom;
    const Mat3 Iw = k.rot[b] * body.inertia * k.rot[b].transpose();
    const Vec3& w = k.angvel[b];

    Jv.setZero();
    Jw.setZero();
    Jv.block<3, 3>(0, 0).setIdentity();
    Jv.block<3, 3>(0, 3) = -hat(com - root_pos);
    Jw.block<3, 3>(0, 3).setIdentity();
    for (int j : m.ancestor_joints(b)) {
      const Vec3& oj = k.origin[m.joints()[j].child_body];
      Jv.col(6 + j) = k.joint_axis[j].cross(com - oj);
      Jw.col(6 + j) = k.joint_axis[j];
    }
    M.noalias() += body.mass * Jv.transpose() * Jv;
    M.noalias() += Jw.transpose() * Iw * Jw;

    const Vec3 a_com = k.lin_bias[b] + k.ang_bias[b].cross(dcom) + w.cross(w.cross(dcom));
    tau.noalias() -= Jv.transpose() * (body.mass * a_com);
    tau.noalias() -= Jw.transpose() * (Iw * k.ang_bias[b] + w.cross(Iw * w));
    tau.noalias() += Jv.transpose() * (body.mass * gravity);
  }

  // Ground contact: spring-damper normal, regularized Coulomb tangential.
  const auto& cc = cfg_.contact;
  for (int b : colliding_bodies_) {
    for (const auto& shape : m.bodies()[b].collision) {
      const int ends = shape.is_sphere() ? 1 : 2;
      for (int e = 0; e < ends; ++e) {
        const Vec3 center = k.origin[b] + k.rot[b] * (e == 0 ? shape.p0 : shape.p1);
        const double depth = shape.radius - center.z();
        if (depth <= 0.0) continue;
        const Vec3 x = center - shape.radius * Vec3::UnitZ();
        const Vec3 vx = k.linvel[b] + k.angvel[b].cross(x - k.origin[b]);
        const double normal = std::max(0.0, cc.stiffness * depth - cc.damping * vx.z());
        const Vec3 vt(vx.x(), vx.y(), 0.0);
        const double speed = vt.norm();
        const Vec3 ft = -cc.friction * normal * vt / std::max(speed, cc.slip_velocity);
        add_point_force(b, x, Vec3(ft.x(), ft.y(), normal));
        if (contacts) contacts->push_back({b, x, normal, vt});
      }
    }
  }

  const VecX qd = c.u.tail(n);
  const VecX pd = pd_torques(c.q, qd, setpoints, kp_, kd_, limits_);
  tau.tail(n) += pd - cfg_.joint_damping * qd;
  if (joint_torques) *joint_torques = pd;

  tau.segment<3>(0) += force;
  tau.segment<3>(3) += torque;

  return M.ldlt().solve(tau);
}

SimState Simulator::step(const SimState& state, const ControlInput& u) const {
  const Morphology& m = *morph_;
  const int n = m.num_joints();
  if (u.setpoints.size() != n) throw ValidationError("step: setpoint dimension mismatch");
  if (state.fault) return state;

  const Vec3 force = cfg_.force_scale * apply_deadband(u.force, cfg_.deadband);
  const Vec3 torque = cfg_.torque_scale * apply_deadband(u.torque, cfg_.deadband);
  const double h = cfg_.physics_dt();

  Config c = from_state(state);
  VecX torques = VecX::Zero(n);
  std::vector<ContactPoint> contacts;
  bool fault = false;

  struct Deriv {
    Vec3 dp;
    Eigen::Vector4d dquat;  // (x, y, z, w) coefficient order
    VecX dq;
    VecX du;
  };
  auto derivative = [&](const Config& x, VecX* tq, std::vector<ContactPoint>* cp) {
    Deriv d;
    d.dp = x.u.segment<3>(0);
    const Vec3 w = x.u.segment<3>(3);
    const Eigen::Quaterniond wq(0.0, w.x(), w.y(), w.z());
    d.dquat = 0.5 * (wq * x.quat).coeffs();
    d.dq = x.u.tail(n);
    d.du = dynamics(x, u.setpoints, force, torque, tq, cp);
    return d;
  };
  auto advance = [](const Config& x, const Deriv& d, double dt) {
    Config y = x;
    y.pos += dt * d.dp;
    y.quat.coeffs() += dt * d.dquat;
    y.q += dt * d.dq;
    y.u += dt * d.du;
    return y;
  };

  for (int s = 0; s < cfg_.substeps; ++s) {
    const bool last = s + 1 == cfg_.substeps;
    if (last) contacts.clear();
    const Deriv k1 = derivative(c, last ? &torques : nullptr, last ? &contacts : nullptr);
    const Deriv k2 = derivative(advance(c, k1, 0.5 * h), nullptr, nullptr);
    const Deriv k3 = derivative(advance(c, k2, 0.5 * h), nullptr, nullptr);
    const Deriv k4 = derivative(advance(c, k3, h), nullptr, nullptr);
    Config next = c;
    next.pos += h / 6.0 * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
    next.quat.coeffs() += h / 6.0 * (k1.dquat + 2.0 * k2.dquat + 2.0 * k3.dquat + k4.dquat);
    next.quat.normalize();
    next.q += h / 6.0 * (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq);
    next.u += h / 6.0 * (k1.du + 2.0 * k2.du + 2.0 * k3.du + k4.du);

    const double bound = cfg_.divergence_bound;
    if (!next.pos.allFinite() || !next.q.allFinite() || !next.u.allFinite() ||
        !next.quat.coeffs().allFinite() || next.u.cwiseAbs().maxCoeff() > bound ||
        next.pos.cwiseAbs().maxCoeff() > bound) {
      fault = true;
      break;
    }
    c = next;
  }

  Frame root;
  root.pos = c.pos;
  root.rot = c.quat.toRotationMatrix();
  root.linvel = c.u.segment<3>(0);
  root.angvel = c.u.segment<3>(3);
  SimState out = make_state(root, c.q, c.u.tail(n));
  out.last_joint_torques = torques;
  out.last_joint_acc = (out.qd - state.qd) / cfg_.control_dt;
  out.applied_force = force;
  out.applied_torque = torque;
  out.contacts = std::move(contacts);
  out.fault = fault;
  return out;
}

double Simulator::kinetic_energy(const SimState& s) const {
  double e = 0.0;
  for (int b = 0; b < morph_->num_bodies(); ++b) {
    const auto& body = morph_->bodies()[b];
    const Frame& f = s.body_frames[b];
    const Vec3 vcom = point_velocity(f, f.pos + f.rot * body.com_offset);
    const Mat3 Iw = f.rot * body.inertia * f.rot.transpose();
    e += 0.5 * body.mass * vcom.squaredNorm() + 0.5 * f.angvel.dot(Iw * f.angvel);
  }
  return e;
}

Vec3 Simulator::linear_momentum(const SimState& s) const {
  Vec3 p = Vec3::Zero();
  for (int b = 0; b < morph_->num_bodies(); ++b) {
    const auto& body = morph_->bodies()[b];
    const Frame& f = s.body_frames[b];
    p += body.mass * point_velocity(f, f.pos + f.rot * body.com_offset);
  }
  return p;
}

Vec3 Simulator::angular_momentum(const SimState& s) const {
  Vec3 L = Vec3::Zero();
  for (int b = 0; b < morph_->num_bodies(); ++b) {
    const auto& body = morph_->bodies()[b];
    const Frame& f = s.body_frames[b];
    const Vec3 com = f.pos + f.rot * body.com_offset;
    const Mat3 Iw = f.rot * body.inertia * f.rot.transpose();
    L += com.cross(body.mass * point_velocity(f, com)) + Iw * f.angvel;
  }
  return L;
}

EnvBatch::EnvBatch(std::shared_ptr<const Simulator> sim, int n) : sim_(std::move(sim)) {
  if (n < 1) throw ValidationError("env batch: n must be >= 1");
  const Morphology& m = sim_->morphology();
  const SimState s = sim_->make_state(m.nominal_root(), m.nominal_q(), VecX::Zero(m.num_joints()));
  states_.assign(n, s);
}

void EnvBatch::step(const std::vector<ControlInput>& inputs) {
  if (static_cast<int>(inputs.size()) != size()) {
    throw ValidationError("env batch: input count mismatch");
  }
  for (int i = 0; i < size(); ++i) states_[i] = sim_->step(states_[i], inputs[i]);
}

EnvBatch make_env_batch(std::shared_ptr<const Morphology> morph, const SimConfig& cfg, int n) {
  return EnvBatch(std::make_shared<const Simulator>(std::move(morph), cfg), n);
}

}  // namespace retarget
