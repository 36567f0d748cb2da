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

// Ground-truth rigid-body simulation of one planar robot.
//
// The plant integrates
//
//   M_aug qdd = tau + J^T F_ext - S qd - tau_fric - tau_limit - m J^T Jd qd
//
// where M_aug = M + m J^T J accounts for a point payload of mass m held at
// the end-effector. Gravity does not act in the horizontal plane.

#pragma once

#include <array>
#include <optional>
#include <string>

#include "telerehab/common.hpp"
#include "telerehab/kin2.hpp"

namespace telerehab {

/// Identified-form inertia matrix.
inline Mat2 inertia_matrix(const RobotModel& m, const Vec2& q) {
  const double off = -0.5 * m.alpha[1] * std::sin(q[0] - q[1]);
  Mat2 M;
  M << m.alpha[0], off, off, m.alpha[2];
  return M;
}

/// Coriolis/centrifugal matrix built from the Christoffel symbols of
/// inertia_matrix, so that Mdot - 2S is skew-symmetric.
inline Mat2 coriolis_matrix(const RobotModel& m, const Vec2& q, const Vec2& qdot) {
  const double h = 0.5 * m.alpha[1] * std::cos(q[0] - q[1]);
  Mat2 S;
  S << 0.0, h * qdot[1], -h * qdot[0], 0.0;
  return S;
}

/// Viscous joint friction.
inline Vec2 friction_torque(const RobotModel& m, const Vec2& qdot) {
  return {m.alpha[3] * qdot[0], m.alpha[4] * qdot[1]};
}

/// One-sided spring-damper half-plane. The free side is
/// {p : normal . p + offset > 0}; `normal` points out of the wall.
struct Wall {
  Vec2 normal{-1.0, 0.0};
  double offset = 0.0;         // m
  double stiffness = 5000.0;   // N/m
  double damping = 10.0;       // N s/m

  double penetration(const Vec2& p) const { return -(normal.dot(p) + offset); }
};

struct LimitSpring {
  double stiffness = 500.0;  // N m/rad
  double damping = 5.0;      // N m s/rad
};

enum class IntegratorMethod { kSemiImplicitEuler, kRk4 };

struct IntegratorConfig {
  IntegratorMethod method = IntegratorMethod::kSemiImplicitEuler;
  double dt = 1e-3;  // s
};

/// Multiplicative factors applied to each identified coefficient alpha1..alpha5.
using MismatchFactors = std::array<double, 5>;

inline RobotModel apply_mismatch(RobotModel identified_model, const MismatchFactors& factors) {
  for (std::size_t i = 0; i < 5; ++i) identified_model.alpha[i] *= factors[i];
  return identified_model;
}

struct PlantConfig {
  RobotModel true_model;
  MismatchFactors mismatch{1.0, 1.0, 1.0, 1.0, 1.0};  // documents how true_model was derived
  double payload_mass = 0.0;                         // kg
  std::optional<Wall> wall;
  IntegratorConfig integrator;
  LimitSpring limit_spring;
  double actuator_limit = 5.0;  // N m per joint
};

inline void validate(const PlantConfig& c) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kConfigInvalid, "plant: " + why); };
  validate(c.true_model);
  if (!(c.integrator.dt > 0.0)) fail("dt must be positive");
  if (!(c.payload_mass >= 0.0)) fail("payload mass must be non-negative");
  for (double f : c.mismatch) {
    if (!(f > 0.0)) fail("mismatch factors must be positive");
  }
  if (c.wall) {
    if (!(c.wall->stiffness > 0.0)) fail("wall stiffness must be positive");
    if (!(c.wall->damping >= 0.0)) fail("wall damping must be non-negative");
    if (std::abs(c.wall->normal.norm() - 1.0) > 1e-9) fail("wall normal must be a unit vector");
  }
  if (!(c.actuator_limit > 0.0)) fail("actuator limit must be positive");
}

enum class WrenchSource { kNone, kWall, kHand, kWallAndHand };

inline std::string_view to_string(WrenchSource s) {
  switch (s) {
    case WrenchSource::kNone: return "none";
    case WrenchSource::kWall: return "wall";
    case WrenchSource::kHand: return "hand";
    case WrenchSource::kWallAndHand: return "wall+hand";
  }
  return "none";
}

/// Force applied at the end-effector, in the base frame.
struct ExternalWrench {
  Vec2 force = Vec2::Zero();  // N
  WrenchSource source = WrenchSource::kNone;
};

/// Environment force at the end-effector: wall contact plus the hand force.
/// The wall only pushes; it never pulls the end-effector back in.
inline ExternalWrench environment_wrench(const PlantConfig& c, const Vec2& x, const Vec2& xdot, double /*t*/,
                                         const std::optional<Vec2>& hand_force) {
  ExternalWrench w;
  bool wall_active = false;
  if (c.wall) {
    const double pen = c.wall->penetration(x);
    if (pen > 0.0) {
      const double pen_rate = -c.wall->normal.dot(xdot);
      const double push = std::max(0.0, c.wall->stiffness * pen + c.wall->damping * pen_rate);
      w.force += push * c.wall->normal;
      wall_active = true;
    }
  }
  if (hand_force) {
    w.force += *hand_force;
    w.source = wall_active ? WrenchSource::kWallAndHand : WrenchSource::kHand;
  } else if (wall_active) {
    w.source = WrenchSource::kWall;
  }
  return w;
}

/// Generalized torque of the virtual limit springs. Zero inside the stops.
/// Each violated stop acts along the gradient of its constraint and never
/// pulls the joint further out.
inline Vec2 limit_torque(const RobotModel& m, const LimitSpring& spring, const Vec2& q, const Vec2& qdot) {
  Vec2 tau = Vec2::Zero();
  auto push = [&](const Vec2& grad, double excess) {
    if (excess <= 0.0) return;
    const double rate = grad.dot(qdot);
    tau += grad * std::max(0.0, spring.stiffness * excess + spring.damping * rate);
  };
  const auto& l = m.limits;
  const double c = coupled_angle(q);
  push({1.0, 0.0}, q[0] - l.q1_max);
  push({-1.0, 0.0}, l.q1_min - q[0]);
  push({0.0, 1.0}, q[1] - l.q2_max);
  push({0.0, -1.0}, l.q2_min - q[1]);
  push({1.0, -1.0}, c - l.coupled_max);
  push({-1.0, 1.0}, l.coupled_min - c);
  return tau;
}

/// Inertia including the end-effector payload.
inline Mat2 augmented_inertia(const PlantConfig& c, const Vec2& q) {
  Mat2 M = inertia_matrix(c.true_model, q);
  if (c.payload_mass > 0.0) {
    const Mat2 J = jacobian(c.true_model, q);
    M += c.payload_mass * J.transpose() * J;
  }
  return M;
}

inline double kinetic_energy(const PlantConfig& c, const JointState& s) {
  return 0.5 * s.qdot.dot(augmented_inertia(c, s.q) * s.qdot);
}

/// Joint acceleration of the true plant for a held command torque and hand force.
inline Vec2 forward_dynamics(const PlantConfig& c, const Vec2& q, const Vec2& qdot, const Vec2& tau,
                             const std::optional<Vec2>& hand_force, double t) {
  const RobotModel& m = c.true_model;
  const Mat2 J = jacobian(m, q);
  const ExternalWrench w = environment_wrench(c, forward_kinematics(m, q), J * qdot, t, hand_force);
  Vec2 rhs = tau + J.transpose() * w.force - coriolis_matrix(m, q, qdot) * qdot - friction_torque(m, qdot) -
             limit_torque(m, c.limit_spring, q, qdot);
  Mat2 M = inertia_matrix(m, q);
  if (c.payload_mass > 0.0) {
    M += c.payload_mass * J.transpose() * J;
    rhs -= c.payload_mass * J.transpose() * (jacobian_dot(m, q, qdot) * qdot);
  }
  return M.llt().solve(rhs);
}

/// Advances the plant by one integrator step. The command is saturated at
/// the actuator limit and held constant over the step.
inline JointState step(const JointState& s, const Vec2& tau_cmd, const PlantConfig& c,
                       const std::optional<Vec2>& hand_force, double t) {
  const Vec2 tau = saturate(tau_cmd, c.actuator_limit);
  const double dt = c.integrator.dt;
  JointState next;
  switch (c.integrator.method) {
    case IntegratorMethod::kSemiImplicitEuler: {
      next.qdot = s.qdot + dt * forward_dynamics(c, s.q, s.qdot, tau, hand_force, t);
      next.q = s.q + dt * next.qdot;
      break;
    }
    case IntegratorMethod::kRk4: {
      auto f = [&](const Vec2& q, const Vec2& qd, double tt) { return forward_dynamics(c, q, qd, tau, hand_force, tt); };
      const Vec2 k1q = s.qdot;
      const Vec2 k1v = f(s.q, s.qdot, t);
      const Vec2 k2q = s.qdot + 0.5 * dt * k1v;
      const Vec2 k2v = f(s.q + 0.5 * dt * k1q, k2q, t + 0.5 * dt);
      const Vec2 k3q = s.qdot + 0.5 * dt * k2v;
      const Vec2 k3v = f(s.q + 0.5 * dt * k2q, k3q, t + 0.5 * dt);
      const Vec2 k4q = s.qdot + dt * k3v;
      const Vec2 k4v = f(s.q + dt * k3q, k4q, t + dt);
      next.q = s.q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
      next.qdot = s.qdot + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
      break;
    }
  }
  if (!next.finite()) {
    throw Error(ErrorCode::kNumericalDivergence, "non-finite plant state at t=" + std::to_string(t) + " s (" +
                                                     c.true_model.name + "); check gains and dt");
  }
  return next;
}

/// Single-owner plant instance: configuration, state and simulated time.
class Plant {
 public:
  Plant(PlantConfig config, JointState initial) : config_(std::move(config)), state_(initial) { validate(config_); }

  const PlantConfig& config() const { return config_; }
  PlantConfig& mutable_config() { return config_; }
  const JointState& state() const { return state_; }
  double time() const { return time_; }

  Vec2 ee_position() const { return forward_kinematics(config_.true_model, state_.q); }
  Vec2 ee_velocity() const { return jacobian(config_.true_model, state_.q) * state_.qdot; }

  /// Wrench the environment applies at the current state.
  ExternalWrench wrench(const std::optional<Vec2>& hand_force) const {
    return environment_wrench(config_, ee_position(), ee_velocity(), time_, hand_force);
  }

  const JointState& advance(const Vec2& tau_cmd, const std::optional<Vec2>& hand_force = std::nullopt) {
    state_ = step(state_, tau_cmd, config_, hand_force, time_);
    time_ += config_.integrator.dt;
    return state_;
  }

 private:
  PlantConfig config_;
  JointState state_;
  double time_ = 0.0;
};

}  // namespace telerehab
