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

// Closed-form kinematics of the 2-DOF planar rehabilitation robot.
//
// Both joint angles are measured from the base frame (parallelogram
// linkage), so the end-effector is
//
//   x = L1 cos q1 + L2 sin q2
//   y = L1 sin q1 - L2 cos q2
//
// and the mechanical stops form a convex polygon in (q1, q2): two boxes plus
// the coupled elbow stop 35deg <= q1 - q2 + 90deg <= 145deg.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "telerehab/common.hpp"

namespace telerehab {

/// Mechanical joint stops in radians. Bounds are inclusive.
struct JointLimits {
  double q1_min = 0.0;
  double q1_max = 0.0;
  double q2_min = 0.0;
  double q2_max = 0.0;
  // Bounds on q1 - q2 + pi/2.
  double coupled_min = deg2rad(35.0);
  double coupled_max = deg2rad(145.0);
};

/// Link lengths, identified dynamic coefficients and joint limits.
///
/// alpha[0..2] parameterize the inertia matrix, alpha[3..4] the viscous
/// joint friction. The same struct describes a true plant and a
/// controller-side estimate.
struct RobotModel {
  std::string name = "custom";
  double L1 = 0.0;  // m
  double L2 = 0.0;  // m
  std::array<double, 5> alpha{};
  JointLimits limits;
};

namespace identified {
// Coefficients identified on the black robot; both robots' controllers use them.
inline constexpr double kAlpha1 = 0.06929;
inline constexpr double kAlpha2 = 0.04217;
inline constexpr double kAlpha3 = 0.04416;
inline constexpr double kAlpha4 = 0.06510;
inline constexpr double kAlpha5 = 0.07389;
inline constexpr std::array<double, 5> kAlpha{kAlpha1, kAlpha2, kAlpha3, kAlpha4, kAlpha5};
}  // namespace identified

/// Rehab robot 1.0 (black), used as the master.
inline RobotModel master_black() {
  RobotModel m;
  m.name = "master-black";
  m.L1 = 0.254;
  m.L2 = 0.2667;
  m.alpha = identified::kAlpha;
  m.limits = {deg2rad(-55.0), deg2rad(90.0), deg2rad(0.0), deg2rad(145.0), deg2rad(35.0), deg2rad(145.0)};
  return m;
}

/// Rehab robot 2.0 (white), used as the second robot.
inline RobotModel second_white() {
  RobotModel m;
  m.name = "second-white";
  m.L1 = 0.340;
  m.L2 = 0.375;
  m.alpha = identified::kAlpha;
  m.limits = {deg2rad(-86.0), deg2rad(132.0), deg2rad(-49.0), deg2rad(154.0), deg2rad(35.0), deg2rad(145.0)};
  return m;
}

/// Throws ConfigInvalid when the model breaks its structural invariants.
inline void validate(const RobotModel& m) {
  auto fail = [&](const std::string& why) { throw Error(ErrorCode::kConfigInvalid, "robot model '" + m.name + "': " + why); };
  if (!(m.L1 > 0.0) || !(m.L2 > 0.0)) fail("link lengths must be positive");
  if (!(m.alpha[0] > 0.0) || !(m.alpha[2] > 0.0)) fail("alpha1 and alpha3 must be positive");
  if (!(m.alpha[3] >= 0.0) || !(m.alpha[4] >= 0.0)) fail("friction coefficients must be non-negative");
  // Positive definiteness of the inertia matrix for every q.
  if (!(0.25 * m.alpha[1] * m.alpha[1] < m.alpha[0] * m.alpha[2])) fail("inertia matrix is not positive definite");
  const auto& l = m.limits;
  if (!(l.q1_min <= l.q1_max) || !(l.q2_min <= l.q2_max) || !(l.coupled_min <= l.coupled_max)) fail("inverted joint limits");
}

inline Vec2 forward_kinematics(const RobotModel& m, const Vec2& q) {
  return {m.L1 * std::cos(q[0]) + m.L2 * std::sin(q[1]), m.L1 * std::sin(q[0]) - m.L2 * std::cos(q[1])};
}

/// Closed-form inverse kinematics. Returns the single elbow branch of the
/// closed form, which is the only branch with |q1 - q2| < 90deg and thus the
/// only one compatible with the coupled stop.
inline Vec2 inverse_kinematics(const RobotModel& m, const Vec2& x) {
  constexpr double kClampTol = 1e-12;
  const double r2 = x.squaredNorm();
  const double r = std::sqrt(r2);
  const double L1 = m.L1;
  const double L2 = m.L2;
  auto checked_acos = [&](double arg) {
    if (!std::isfinite(arg) || arg > 1.0 + kClampTol || arg < -1.0 - kClampTol) {
      throw Error(ErrorCode::kUnreachable, "target (" + std::to_string(x.x()) + ", " + std::to_string(x.y()) +
                                               ") outside the reachable annulus of " + m.name);
    }
    return std::acos(std::clamp(arg, -1.0, 1.0));
  };
  const double q1 = checked_acos((r2 + L1 * L1 - L2 * L2) / (2.0 * L1 * r)) + std::atan2(x.y(), x.x());
  const double q2 = q1 + checked_acos((L1 * L1 + L2 * L2 - r2) / (2.0 * L1 * L2)) - kPi / 2.0;
  return {q1, q2};
}

inline Mat2 jacobian(const RobotModel& m, const Vec2& q) {
  Mat2 J;
  J << -m.L1 * std::sin(q[0]), m.L2 * std::cos(q[1]),
        m.L1 * std::cos(q[0]), m.L2 * std::sin(q[1]);
  return J;
}

/// Time derivative of the Jacobian along a motion with joint velocity qdot.
inline Mat2 jacobian_dot(const RobotModel& m, const Vec2& q, const Vec2& qdot) {
  Mat2 Jd;
  Jd << -m.L1 * std::cos(q[0]) * qdot[0], -m.L2 * std::sin(q[1]) * qdot[1],
        -m.L1 * std::sin(q[0]) * qdot[0],  m.L2 * std::cos(q[1]) * qdot[1];
  return Jd;
}

/// Pose of the end-effector frame in the base frame.
inline Mat4 homogeneous_transform(const RobotModel& m, const Vec2& q) {
  const double s2 = std::sin(q[1]);
  const double c2 = std::cos(q[1]);
  const Vec2 p = forward_kinematics(m, q);
  Mat4 T;
  T << s2, c2, 0.0, p.x(),
      -c2, s2, 0.0, p.y(),
      0.0, 0.0, 1.0, 0.0,
      0.0, 0.0, 0.0, 1.0;
  return T;
}

enum class LimitedJoint { kJoint1, kJoint2, kCoupled };
enum class LimitBound { kLower, kUpper };

struct LimitViolation {
  LimitedJoint joint;
  LimitBound bound;
  double bound_value;  // rad
  double margin;       // rad beyond the bound, > 0
};

inline std::string to_string(const LimitViolation& v) {
  const char* joint = v.joint == LimitedJoint::kJoint1 ? "q1" : v.joint == LimitedJoint::kJoint2 ? "q2" : "q1-q2+90";
  return std::string(joint) + (v.bound == LimitBound::kLower ? " below " : " above ") +
         std::to_string(rad2deg(v.bound_value)) + " deg by " + std::to_string(rad2deg(v.margin)) + " deg";
}

/// Value of the coupled elbow coordinate q1 - q2 + 90deg.
inline double coupled_angle(const Vec2& q) { return q[0] - q[1] + kPi / 2.0; }

inline std::vector<LimitViolation> check_joint_limits(const RobotModel& m, const Vec2& q) {
  std::vector<LimitViolation> out;
  auto check = [&](LimitedJoint joint, double value, double lo, double hi) {
    if (value < lo) out.push_back({joint, LimitBound::kLower, lo, lo - value});
    if (value > hi) out.push_back({joint, LimitBound::kUpper, hi, value - hi});
  };
  const auto& l = m.limits;
  check(LimitedJoint::kJoint1, q[0], l.q1_min, l.q1_max);
  check(LimitedJoint::kJoint2, q[1], l.q2_min, l.q2_max);
  check(LimitedJoint::kCoupled, coupled_angle(q), l.coupled_min, l.coupled_max);
  return out;
}

/// True when q satisfies every stop, allowing `tol` rad of slack.
inline bool within_limits(const RobotModel& m, const Vec2& q, double tol = 0.0) {
  const auto& l = m.limits;
  const double c = coupled_angle(q);
  return q[0] >= l.q1_min - tol && q[0] <= l.q1_max + tol && q[1] >= l.q2_min - tol && q[1] <= l.q2_max + tol &&
         c >= l.coupled_min - tol && c <= l.coupled_max + tol;
}

/// Upper bound on cond(J) over the joint-limit set.
///
/// J^T J = [[L1^2, L1 L2 rho], [L1 L2 rho, L2^2]] with rho = sin(q2 - q1), so
/// the condition number depends only on |q1 - q2| and is largest at the
/// widest elbow deviation permitted by the coupled stop.
inline double jacobian_condition_bound(const RobotModel& m) {
  const auto& l = m.limits;
  const double max_dev = std::max(std::abs(l.coupled_min - kPi / 2.0), std::abs(l.coupled_max - kPi / 2.0));
  const double rho = std::sin(std::min(max_dev, kPi / 2.0));
  const double a = m.L1 * m.L1;
  const double b = m.L2 * m.L2;
  const double c = m.L1 * m.L2 * rho;
  const double mean = 0.5 * (a + b);
  const double rad = std::sqrt(0.25 * (a - b) * (a - b) + c * c);
  const double lmin = mean - rad;
  if (lmin <= 0.0) return std::numeric_limits<double>::infinity();
  return std::sqrt((mean + rad) / lmin);
}

/// Vertices (counter-clockwise) of the convex joint-limit polygon in (q1, q2).
inline std::vector<Vec2> joint_limit_polygon(const RobotModel& m) {
  const auto& l = m.limits;
  std::vector<Vec2> poly{{l.q1_min, l.q2_min}, {l.q1_max, l.q2_min}, {l.q1_max, l.q2_max}, {l.q1_min, l.q2_max}};
  // Clip against a*q1 + b*q2 <= c.
  auto clip = [](const std::vector<Vec2>& in, double a, double b, double c) {
    std::vector<Vec2> out;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2& p = in[i];
      const Vec2& nxt = in[(i + 1) % in.size()];
      const double fp = a * p.x() + b * p.y() - c;
      const double fn = a * nxt.x() + b * nxt.y() - c;
      if (fp <= 0.0) out.push_back(p);
      if ((fp < 0.0 && fn > 0.0) || (fp > 0.0 && fn < 0.0)) out.push_back(p + (nxt - p) * (fp / (fp - fn)));
    }
    return out;
  };
  // q1 - q2 <= coupled_max - pi/2 and -(q1 - q2) <= pi/2 - coupled_min.
  poly = clip(poly, 1.0, -1.0, l.coupled_max - kPi / 2.0);
  poly = clip(poly, -1.0, 1.0, kPi / 2.0 - l.coupled_min);
  return poly;
}

/// End-effector centroid of the joint-limit set, sampling joint space on a
/// regular grid and mapping each admissible sample through forward kinematics.
inline Vec2 workspace_centroid(const RobotModel& m, int grid = 200) {
  const auto& l = m.limits;
  Vec2 sum = Vec2::Zero();
  long count = 0;
  for (int i = 0; i < grid; ++i) {
    const double q1 = l.q1_min + (l.q1_max - l.q1_min) * i / (grid - 1);
    for (int j = 0; j < grid; ++j) {
      const Vec2 q(q1, l.q2_min + (l.q2_max - l.q2_min) * j / (grid - 1));
      if (!within_limits(m, q)) continue;
      sum += forward_kinematics(m, q);
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

/// True when x is reachable with joint angles inside the stops.
inline bool in_workspace(const RobotModel& m, const Vec2& x, double tol = 1e-9) {
  const double r = x.norm();
  if (r < std::abs(m.L1 - m.L2) || r > m.L1 + m.L2) return false;
  return within_limits(m, inverse_kinematics(m, x), tol);
}

/// Nearest workspace point to x (x itself when already inside).
///
/// Inside the stops J is never singular, so the workspace boundary is the
/// image of the joint-polygon boundary; that boundary is scanned and the
/// best edge segment refined by golden-section search.
inline Vec2 clamp_to_workspace(const RobotModel& m, const Vec2& x) {
  if (in_workspace(m, x)) return x;
  const auto poly = joint_limit_polygon(m);
  const Vec2 centre = [&] {
    Vec2 c = Vec2::Zero();
    for (const auto& v : poly) c += v;
    return Vec2(c / static_cast<double>(poly.size()));
  }();
  // Pull boundary samples a hair inside so the result passes the limit check.
  auto point_on = [&](std::size_t edge, double s) {
    const Vec2& a = poly[edge];
    const Vec2& b = poly[(edge + 1) % poly.size()];
    Vec2 q = a + (b - a) * s;
    q += (centre - q).normalized() * 1e-10;
    return q;
  };
  auto dist = [&](std::size_t edge, double s) { return (forward_kinematics(m, point_on(edge, s)) - x).norm(); };

  constexpr int kSamples = 400;
  std::size_t best_edge = 0;
  double best_s = 0.0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < poly.size(); ++e) {
    for (int k = 0; k <= kSamples; ++k) {
      const double s = static_cast<double>(k) / kSamples;
      const double d = dist(e, s);
      if (d < best_d) {
        best_d = d;
        best_edge = e;
        best_s = s;
      }
    }
  }
  double lo = std::max(0.0, best_s - 1.0 / kSamples);
  double hi = std::min(1.0, best_s + 1.0 / kSamples);
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 60; ++it) {
    const double a = hi - g * (hi - lo);
    const double b = lo + g * (hi - lo);
    if (dist(best_edge, a) < dist(best_edge, b)) {
      hi = b;
    } else {
      lo = a;
    }
  }
  return forward_kinematics(m, point_on(best_edge, 0.5 * (lo + hi)));
}

}  // namespace telerehab
