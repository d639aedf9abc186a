#pragma once

#include <memory>
#include <vector>

#include "retarget/morphology.h"

namespace retarget {

struct ContactConfig {
  double stiffness = 2e4;     // N/m
  double damping = 400.0;     // N s/m
  double friction = 0.8;      // Coulomb coefficient
  double slip_velocity = 0.1; // m/s, friction regularization
  bool all_bodies = true;     // ground contact for every body with geometry
};

struct SimConfig {
  double control_dt = 0.02;
  int substeps = 4;
  double gravity = 9.81;       // along -z
  double deadband = 0.1;       // on the wrench action, before scaling
  double force_scale = 50.0;   // N per unit wrench action
  double torque_scale = 20.0;  // N m per unit wrench action
  double joint_damping = 0.05; // N m s/rad, passive
  double divergence_bound = 1e4;
  ContactConfig contact;

  double physics_dt() const { return control_dt / substeps; }
  void validate() const;
};

struct ContactPoint {
  int body = -1;
  Vec3 point = Vec3::Zero();
  double normal_force = 0.0;
  Vec3 tangential_velocity = Vec3::Zero();
};

struct SimState {
  Frame root;
  VecX q;
  VecX qd;
  std::vector<Frame> body_frames;
  VecX last_joint_torques;
  VecX last_joint_acc;
  Vec3 applied_force = Vec3::Zero();
  Vec3 applied_torque = Vec3::Zero();
  std::vector<ContactPoint> contacts;
  bool fault = false;
};

// Joint setpoints plus a root wrench in action units (deadband and scaling
// happen inside the simulator). The wrench acts at the root origin, world axes.
struct ControlInput {
  VecX setpoints;
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
};

// sgn(w) * max(0, |w| - d), componentwise.
Vec3 apply_deadband(const Vec3& w, double d);

// clamp(kp (a - q) - kd qd, +-limit) per joint.
VecX pd_torques(const VecX& q, const VecX& qd, const VecX& setpoints, const VecX& kp,
                const VecX& kd, const VecX& torque_limits);

class Simulator {
 public:
  Simulator(std::shared_ptr<const Morphology> morph, SimConfig cfg);

  const Morphology& morphology() const { return *morph_; }
  const SimConfig& config() const { return cfg_; }

  SimState make_state(const Frame& root, const VecX& q, const VecX& qd) const;

  // Advances one control step. On divergence the returned state carries
  // fault = true and the last finite configuration.
  SimState step(const SimState& state, const ControlInput& u) const;

  double kinetic_energy(const SimState& state) const;
  Vec3 linear_momentum(const SimState& state) const;
  Vec3 angular_momentum(const SimState& state) const;  // about the world origin

 private:
  struct Kinematics;
  struct Config {
    Vec3 pos;
    Eigen::Quaterniond quat;
    VecX q;
    VecX u;  // [v, w, qd]
  };

  void kinematics(const Config& c, Kinematics& k) const;
  VecX dynamics(const Config& c, const VecX& setpoints, const Vec3& force, const Vec3& torque,
                VecX* joint_torques, std::vector<ContactPoint>* contacts) const;
  static Config from_state(const SimState& s);

  std::shared_ptr<const Morphology> morph_;
  SimConfig cfg_;
  VecX kp_, kd_, limits_;
  std::vector<int> colliding_bodies_;
};

// n independent environments sharing one immutable simulator.
class EnvBatch {
 public:
  EnvBatch(std::shared_ptr<const Simulator> sim, int n);

  int size() const { return static_cast<int>(states_.size()); }
  const Simulator& simulator() const { return *sim_; }
  SimState& state(int i) { return states_[i]; }
  const SimState& state(int i) const { return states_[i]; }
  void step(const std::vector<ControlInput>& inputs);

 private:
  std::shared_ptr<const Simulator> sim_;
  std::vector<SimState> states_;
};

EnvBatch make_env_batch(std::shared_ptr<const Morphology> morph, const SimConfig& cfg, int n);

}  // namespace retarget
