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

// Shared value types, error type and unit helpers.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace telerehab {

inline constexpr std::string_view kVersion = "0.1.0";

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

inline bool all_finite(const Vec2& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); }

/// Joint-space state of one robot.
struct JointState {
  Vec2 q = Vec2::Zero();     // rad
  Vec2 qdot = Vec2::Zero();  // rad/s

  bool finite() const { return all_finite(q) && all_finite(qdot); }
};

/// End-effector state in the base frame. Desired trajectories fill xddot.
struct CartesianState {
  Vec2 x = Vec2::Zero();      // m
  Vec2 xdot = Vec2::Zero();   // m/s
  Vec2 xddot = Vec2::Zero();  // m/s^2
};

enum class ErrorCode {
  kUnreachable,
  kSingularConfiguration,
  kNumericalDivergence,
  kIllConditionedObserver,
  kTransportDown,
  kNonMonotonicTick,
  kOutOfRange,
  kConfigInvalid,
  kEmptyWindow,
  kUnknownSession,
  kInvalidTransition,
  kModeGuard,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnreachable: return "Unreachable";
    case ErrorCode::kSingularConfiguration: return "SingularConfiguration";
    case ErrorCode::kNumericalDivergence: return "NumericalDivergence";
    case ErrorCode::kIllConditionedObserver: return "IllConditionedObserver";
    case ErrorCode::kTransportDown: return "TransportDown";
    case ErrorCode::kNonMonotonicTick: return "NonMonotonicTick";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kEmptyWindow: return "EmptyWindow";
    case ErrorCode::kUnknownSession: return "UnknownSession";
    case ErrorCode::kInvalidTransition: return "InvalidTransition";
    case ErrorCode::kModeGuard: return "ModeGuard";
  }
  return "Unknown";
}

/// Every failure raised by the library. Simulation errors raised inside a
/// bilateral session carry the robot role and the control tick.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  const std::string& robot() const noexcept { return robot_; }
  std::optional<std::int64_t> tick() const noexcept { return tick_; }

  /// Copy of this error attributed to a robot and tick.
  Error attributed(std::string robot, std::int64_t tick) const {
    Error e(code_, robot + " robot at tick " + std::to_string(tick) + ": " + what(), raw_tag{});
    e.robot_ = std::move(robot);
    e.tick_ = tick;
    return e;
  }

 private:
  struct raw_tag {};
  Error(ErrorCode code, const std::string& full, raw_tag) : std::runtime_error(full), code_(code) {}

  ErrorCode code_;
  std::string robot_;
  std::optional<std::int64_t> tick_;
};

/// Clamps each component to [-limit, limit].
inline Vec2 saturate(const Vec2& v, double limit) {
  return v.cwiseMax(-limit).cwiseMin(limit);
}

}  // namespace telerehab
