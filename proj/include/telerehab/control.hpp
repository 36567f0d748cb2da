// Copyright 2026 The telerehab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Task-space impedance control, the nonlinear disturbance observer and the
// command composition used by both robots.
//
// All model-based terms are evaluated on the controller's estimate of the
// robot (never the true plant). The planar robots have no gravity term.

#pragma once

#include <string>
#include <utility>

#include <unsupported/Eigen/MatrixFunctions>

#include "telerehab/common.hpp"
#include "telerehab/kin2.hpp"
#include "telerehab/plant.hpp"

namespace telerehab {

struct ImpedanceGains {
  Mat2 K = Mat2::Zero();  // N/m
  Mat2 D = Mat2::Zero();  // N s/m

  /// Critically damped isotropic gains for a unit Cartesian mass: K = k I, D = 2 sqrt(k) I.
  static ImpedanceGains critically_damped(double k) {
    return {k * Mat2::Identity(), 2.0 * std::sqrt(k) * Mat2::Identity()};
  }
};

namespace detail {
inline bool symmetric(const Mat2& A, double tol = 1e-12) { return (A - A.transpose()).cwiseAbs().maxCoeff() <= tol; }
inline double min_eigenvalue(const Mat2& A) {
  return Eigen::SelfAdjointEigenSolver<Mat2>(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly).eigenvalues()[0];
}
}  // namespace detail

inline void validate(const ImpedanceGains& g, bool require_stiffness) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kConfigInvalid, "impedance gains: " + why); };
  if (!detail::symmetric(g.K) || !detail::symmetric(g.D)) fail("K and D must be symmetric");
  if (detail::min_eigenvalue(g.K) < 0.0 || detail::min_eigenvalue(g.D) < 0.0) fail("K and D must be positive semi-definite");
  if (require_stiffness && !(detail::min_eigenvalue(g.K) > 0.0)) fail("K must be positive definite for tracking");
}

enum class ObserverInertia { kEstimated, kConstant };

struct NdobConfig {
  Mat2 Y = Mat2::Identity();
  ObserverInertia inertia = ObserverInertia::kEstimated;
  Mat2 M_const = Mat2::Identity();  // used when inertia == kConstant
};

inline void validate(const NdobConfig& c) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kConfigInvalid, "observer: " + why); };
  if (std::abs(c.Y.determinant()) < 1e-15) fail("Y must be invertible");
  if (c.inertia == ObserverInertia::kConstant &&
      (!detail::symmetric(c.M_const) || !(detail::min_eigenvalue(c.M_const) > 0.0))) {
    fail("constant observer inertia must be symmetric positive definite");
  }
}

struct NdobState {
  Vec2 z = Vec2::Zero();         // N m
  Vec2 estimate = Vec2::Zero();  // N m, last tau_NDOB
};

/// Observer state whose estimate is zero at joint velocity qdot.
inline NdobState ndob_initial_state(const NdobConfig& c, const Vec2& qdot) {
  return {-(c.Y * qdot), Vec2::Zero()};
}

enum class Mode { kTracking, kSetpoint, kPhri };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kTracking: return "tracking";
    case Mode::kSetpoint: return "setpoint";
    case Mode::kPhri: return "phri";
  }
  return "tracking";
}

inline Mode mode_from_string(std::string_view s) {
  if (s == "tracking") return Mode::kTracking;
  if (s == "setpoint") return Mode::kSetpoint;
  if (s == "phri") return Mode::kPhri;
  throw Error(ErrorCode::kConfigInvalid, "unknown control mode '" + std::string(s) + "'");
}

struct ControlMode {
  Mode mode = Mode::kTracking;
  bool ndob_enabled = true;
  bool feedback_enabled = false;
};

namespace detail {
inline Mat2 checked_inverse(const Mat2& J) {
  constexpr double kMinDet = 1e-8;
  if (std::abs(J.determinant()) < kMinDet) {
    throw Error(ErrorCode::kSingularConfiguration, "|det J| = " + std::to_string(std::abs(J.determinant())));
  }
  return J.inverse();
}
}  // namespace detail

/// Impedance control law. With the model exact it realizes the target
/// impedance M_x (xdd - xdd_d) + (S_x + D)(xd - xd_d) + K (x - x_d) = F_ext,
/// the apparent inertia being the robot's own Cartesian inertia.
inline Vec2 impedance_torque(const RobotModel& est, const ImpedanceGains& g, const JointState& s,
                             const CartesianState& desired) {
  const Mat2 J = jacobian(est, s.q);
  const Mat2 Jinv = detail::checked_inverse(J);
  const Mat2 Jd = jacobian_dot(est, s.q, s.qdot);
  const Vec2 x = forward_kinematics(est, s.q);
  const Vec2 xdot = J * s.qdot;
  const Vec2 qdot_d = Jinv * desired.xdot;
  const Vec2 feedforward = inertia_matrix(est, s.q) * (Jinv * (desired.xddot - Jd * qdot_d)) +
                           coriolis_matrix(est, s.q, s.qdot) * qdot_d;
  return feedforward + J.transpose() * (g.D * (desired.xdot - xdot) + g.K * (desired.x - x));
}

/// Set-point law: task-space PD (gravity compensation is zero here).
inline Vec2 setpoint_torque(const RobotModel& est, const ImpedanceGains& g, const JointState& s, const Vec2& x_d) {
  const Mat2 J = jacobian(est, s.q);
  return J.transpose() * (g.K * (x_d - forward_kinematics(est, s.q)) - g.D * (J * s.qdot));
}

/// pHRI law: Cartesian damping plus the rendered feedback torque.
inline Vec2 phri_torque(const RobotModel& est, const ImpedanceGains& g, const JointState& s, const Vec2& tau_ff) {
  const Mat2 J = jacobian(est, s.q);
  return -(J.transpose() * (g.D * (J * s.qdot))) + tau_ff;
}

/// One step of the disturbance observer. Returns the new state and the
/// lumped-disturbance estimate tau_NDOB = z + Y qdot, which estimates the
/// torque acting on the plant beyond M_obs qdd + S qdot - tau.
///
/// The input is held over the step and z is advanced with the exact
/// solution of zdot = -L (z - z_eq), so a constant disturbance is recovered
/// at the continuous rate e^{-L t} for any dt.
inline std::pair<NdobState, Vec2> ndob_update(const NdobConfig& c, const NdobState& st, const RobotModel& est,
                                              const JointState& s, const Vec2& tau_applied, double dt) {
  const Mat2 M_obs = c.inertia == ObserverInertia::kEstimated ? inertia_matrix(est, s.q) : c.M_const;
  const Eigen::JacobiSVD<Mat2> svd(M_obs);
  const double smax = svd.singularValues()[0];
  const double smin = svd.singularValues()[1];
  if (!(smin > 0.0) || smax / smin > 1e12) {
    throw Error(ErrorCode::kIllConditionedObserver, "observer inertia condition number " + std::to_string(smax / smin));
  }
  const Mat2 L = c.Y * M_obs.inverse();
  const Vec2 p = c.Y * s.qdot;
  const Vec2 z_eq = coriolis_matrix(est, s.q, s.qdot) * s.qdot - tau_applied - p;
  const Mat2 decay = (-dt * L).exp();
  NdobState next;
  next.z = z_eq + decay * (st.z - z_eq);
  next.estimate = next.z + p;
  return {next, next.estimate};
}

/// Final command for one robot. The observer estimate is subtracted, the
/// feedback torque only enters in pHRI with feedback on, and saturation is
/// applied last.
inline Vec2 compose_command(const ControlMode& mode, const Vec2& tau_law, const Vec2& tau_ndob, const Vec2& tau_ff,
                            double actuator_limit) {
  Vec2 tau = tau_law;
  if (mode.ndob_enabled) tau -= tau_ndob;
  if (mode.mode == Mode::kPhri && mode.feedback_enabled) tau += tau_ff;
  return saturate(tau, actuator_limit);
}

/// Cartesian inertia and Coriolis matrices of the estimated model.
inline std::pair<Mat2, Mat2> cartesian_dynamics(const RobotModel& est, const JointState& s) {
  const Mat2 J = jacobian(est, s.q);
  const Mat2 Jinv = detail::checked_inverse(J);
  const Mat2 Mx = Jinv.transpose() * inertia_matrix(est, s.q) * Jinv;
  const Mat2 Sx = Jinv.transpose() * coriolis_matrix(est, s.q, s.qdot) * Jinv -
                  Mx * jacobian_dot(est, s.q, s.qdot) * Jinv;
  return {Mx, Sx};
}

enum class Role { kMaster, kSecond };

inline std::string_view to_string(Role r) { return r == Role::kMaster ? "master" : "second"; }

struct ControllerConfig {
  RobotModel estimate;
  ImpedanceGains gains;
  NdobConfig ndob;
  ControlMode mode;
  double actuator_limit = 5.0;  // N m
  bool phri_damping = true;     // keep the -J^T D J qdot term in pHRI
};

/// Per-robot controller: control law, observer and mode switches.
///
/// Call command() once per tick with the measured state, then observe()
/// with the torque the plant actually received.
class RobotController {
 public:
  RobotController(Role role, ControllerConfig config) : role_(role), config_(std::move(config)) {
    validate(config_.estimate);
    validate(config_.ndob);
    validate(config_.gains, config_.mode.mode != Mode::kPhri);
    config_.mode = normalized(config_.mode);
  }

  Role role() const { return role_; }
  const ControllerConfig& config() const { return config_; }
  const ControlMode& mode() const { return config_.mode; }
  const NdobState& observer() const { return ndob_; }

  /// Reinitializes the observer to a zero estimate at the current velocity.
  void reset_observer(const Vec2& qdot) { ndob_ = ndob_initial_state(config_.ndob, qdot); }

  /// Master in pHRI cannot run the observer: it would cancel the operator's force.
  ControlMode normalized(ControlMode m) const {
    if (role_ == Role::kMaster && m.mode == Mode::kPhri) m.ndob_enabled = false;
    return m;
  }

  void set_mode(const ControlMode& m, const Vec2& qdot) {
    const ControlMode next = normalized(m);
    if (next.ndob_enabled && !config_.mode.ndob_enabled) reset_observer(qdot);
    config_.mode = next;
  }

  void set_gains(const ImpedanceGains& g) {
    validate(g, config_.mode.mode != Mode::kPhri);
    config_.gains = g;
  }

  /// Control law before observer compensation and saturation.
  Vec2 law(const JointState& s, const CartesianState& desired) const {
    switch (config_.mode.mode) {
      case Mode::kTracking:
        return impedance_torque(config_.estimate, config_.gains, s, desired);
      case Mode::kSetpoint:
        return setpoint_torque(config_.estimate, config_.gains, s, desired.x);
      case Mode::kPhri: {
        ImpedanceGains g = config_.gains;
        if (!config_.phri_damping) g.D.setZero();
        return phri_torque(config_.estimate, g, s, Vec2::Zero());
      }
    }
    return Vec2::Zero();
  }

  Vec2 command(const JointState& s, const CartesianState& desired, const Vec2& tau_ff) {
    last_law_ = law(s, desired);
    const Vec2 ndob = config_.mode.ndob_enabled ? ndob_.estimate : Vec2::Zero();
    return compose_command(config_.mode, last_law_, ndob, tau_ff, config_.actuator_limit);
  }

  void observe(const JointState& s, const Vec2& tau_applied, double dt) {
    if (!config_.mode.ndob_enabled) return;
    ndob_ = ndob_update(config_.ndob, ndob_, config_.estimate, s, tau_applied, dt).first;
  }

  /// Estimate currently compensated (zero while the observer is off).
  Vec2 active_estimate() const { return config_.mode.ndob_enabled ? ndob_.estimate : Vec2::Zero(); }
  const Vec2& last_law() const { return last_law_; }

 private:
  Role role_;
  ControllerConfig config_;
  NdobState ndob_;
  Vec2 last_law_ = Vec2::Zero();
};

}  // namespace telerehab
