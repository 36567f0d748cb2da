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

// Experiment presets, configuration files, metrics and telemetry output.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "telerehab/common.hpp"
#include "telerehab/control.hpp"
#include "telerehab/kin2.hpp"
#include "telerehab/link.hpp"
#include "telerehab/plant.hpp"
#include "telerehab/traj.hpp"

namespace telerehab {

using Json = nlohmann::ordered_json;

enum class ExperimentId { kExp1, kExp2, kExp3, kExp4, kExp5, kCustom };

inline std::string_view to_string(ExperimentId id) {
  switch (id) {
    case ExperimentId::kExp1: return "exp1";
    case ExperimentId::kExp2: return "exp2";
    case ExperimentId::kExp3: return "exp3";
    case ExperimentId::kExp4: return "exp4";
    case ExperimentId::kExp5: return "exp5";
    case ExperimentId::kCustom: return "custom";
  }
  return "custom";
}

inline ExperimentId experiment_from_string(std::string_view s) {
  for (auto id : {ExperimentId::kExp1, ExperimentId::kExp2, ExperimentId::kExp3, ExperimentId::kExp4,
                  ExperimentId::kExp5, ExperimentId::kCustom}) {
    if (to_string(id) == s) return id;
  }
  throw Error(ErrorCode::kConfigInvalid, "unknown experiment '" + std::string(s) + "'");
}

/// Scripted operator: the hand target the virtual hand pulls toward.
///
///   loop:   center + (a_x sin wt, a_y sin 2wt)
///   stroke: center + a (1 - cos wt) / 2, out and back once per period
struct HandPath {
  enum class Kind { kNone, kLoop, kStroke } kind = Kind::kNone;
  Vec2 center = Vec2::Zero();     // m
  Vec2 amplitude = Vec2::Zero();  // m
  double period = 10.0;           // s

  Vec2 target(double t) const {
    const double w = 2.0 * kPi / period;
    switch (kind) {
      case Kind::kLoop:
        return center + Vec2(amplitude.x() * std::sin(w * t), amplitude.y() * std::sin(2.0 * w * t));
      case Kind::kStroke:
        return center + amplitude * 0.5 * (1.0 - std::cos(w * t));
      case Kind::kNone:
        break;
    }
    return center;
  }
};

inline std::string_view to_string(HandPath::Kind k) {
  switch (k) {
    case HandPath::Kind::kLoop: return "loop";
    case HandPath::Kind::kStroke: return "stroke";
    case HandPath::Kind::kNone: return "none";
  }
  return "none";
}

enum class Scenario { kNone, kWall, kPayload };

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::kNone: return "none";
    case Scenario::kWall: return "wall";
    case Scenario::kPayload: return "payload";
  }
  return "none";
}

struct ExperimentConfig {
  ExperimentId id = ExperimentId::kCustom;
  RobotSetup master;
  RobotSetup second;
  ChannelConfig channel;
  FeedbackConfig feedback;
  Vec2 offset{0.1, 0.0};  // m
  double reference_cutoff_hz = 50.0;
  TrajectorySpec trajectory = TrajectorySpec::preset(TrajectoryKind::kCircle);
  std::optional<Vec2> center;  // m; defaults to the master workspace centroid
  HandModel hand;
  HandPath hand_path;
  Scenario scenario = Scenario::kNone;
  double wall_clearance = 0.02;  // m, wall distance from the second robot's start along +x
  double demo_sample_rate = 500.0;
  std::string demo_path;  // replay input; empty regenerates the scripted demonstration
  double replay_cutoff_hz = 50.0;
  double duration = 30.0;  // s
  double warmup = -1.0;    // s; negative selects one period, capped at half the duration
  std::string output_dir;
  std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// Presets

/// Controller gains and observer settings used on each robot.
inline ControllerConfig master_controller_defaults() {
  ControllerConfig c;
  c.estimate = master_black();
  c.gains = ImpedanceGains::critically_damped(30.0);
  c.ndob.Y = 1.92 * Mat2::Identity();
  c.ndob.inertia = ObserverInertia::kEstimated;
  return c;
}

inline ControllerConfig second_controller_defaults() {
  ControllerConfig c;
  c.estimate = second_white();
  c.gains = ImpedanceGains::critically_damped(20.0);
  c.ndob.Y = 0.048 * Mat2::Identity();
  c.ndob.inertia = ObserverInertia::kConstant;
  c.ndob.M_const = 0.001 * Mat2::Identity();
  return c;
}

/// Unknown true parameters of each physical robot, as factors on the
/// identified coefficients.
inline constexpr MismatchFactors kMasterMismatch{1.1, 1.1, 1.1, 1.5, 1.5};
inline constexpr MismatchFactors kSecondMismatch{3.5, 3.2, 3.5, 0.35 / identified::kAlpha4,
                                                 0.38 / identified::kAlpha5};

inline PlantConfig plant_defaults(const RobotModel& identified_model, const MismatchFactors& mismatch) {
  PlantConfig p;
  p.true_model = apply_mismatch(identified_model, mismatch);
  p.mismatch = mismatch;
  return p;
}

inline ExperimentConfig preset(ExperimentId id) {
  ExperimentConfig c;
  c.id = id;
  c.master.plant = plant_defaults(master_black(), kMasterMismatch);
  c.master.controller = master_controller_defaults();
  c.second.plant = plant_defaults(second_white(), kSecondMismatch);
  c.second.controller = second_controller_defaults();
  switch (id) {
    case ExperimentId::kExp1:
      c.trajectory = TrajectorySpec::preset(TrajectoryKind::kCircle);
      c.duration = 30.0;
      break;
    case ExperimentId::kExp2:
    case ExperimentId::kCustom:
      c.trajectory = TrajectorySpec::preset(TrajectoryKind::kCircle);
      c.duration = 20.0;
      break;
    case ExperimentId::kExp3:
      c.master.controller.mode.mode = Mode::kPhri;
      c.hand_path.kind = HandPath::Kind::kLoop;
      c.hand_path.amplitude = {0.06, 0.04};
      c.hand_path.period = 10.0;
      c.duration = 10.0;
      c.warmup = 0.0;
      break;
    case ExperimentId::kExp4:
      c.master.controller.mode = {Mode::kPhri, false, true};
      c.scenario = Scenario::kWall;
      c.hand_path.kind = HandPath::Kind::kStroke;
      c.hand_path.amplitude = {0.09, 0.0};
      c.hand_path.period = 6.0;
      c.duration = 12.0;
      c.warmup = 0.0;
      break;
    case ExperimentId::kExp5:
      c.trajectory.kind = TrajectoryKind::kReplay;
      c.warmup = 0.0;
      break;
  }
  return c;
}

/// Scenario-specific defaults for the payload variant of exp4.
inline ExperimentConfig exp4_payload_preset() {
  ExperimentConfig c = preset(ExperimentId::kExp4);
  c.scenario = Scenario::kPayload;
  c.hand_path.amplitude = {0.0, 0.12};
  c.hand_path.period = 1.5;
  c.duration = 6.0;
  return c;
}

struct PresetInfo {
  std::string name;
  std::string description;
};

inline std::vector<PresetInfo> list_presets() {
  return {
      {"exp1", "each robot alone tracks the circle; compare runs with and without the observer"},
      {"exp2", "teleoperation: master tracks a pattern (--traj), second follows over the link"},
      {"exp3", "master in pHRI dragged by a scripted hand; second follows; demonstration recorded"},
      {"exp4", "bilateral force feedback; second meets a stiff wall (--scenario payload: 1.13 kg load)"},
      {"exp5", "master replays the exp3 demonstration; second follows"},
  };
}

// ---------------------------------------------------------------------------
// Configuration files (JSON). Keys mirror ExperimentConfig; absent keys keep
// the preset value.

namespace detail {
inline Mat2 mat2_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>() * Mat2::Identity();
  if (j.is_array() && j.size() == 2 && j[0].is_number()) return Vec2(j[0].get<double>(), j[1].get<double>()).asDiagonal();
  if (j.is_array() && j.size() == 2 && j[0].is_array()) {
    Mat2 m;
    m << j[0].at(0).get<double>(), j[0].at(1).get<double>(), j[1].at(0).get<double>(), j[1].at(1).get<double>();
    return m;
  }
  throw Error(ErrorCode::kConfigInvalid, "expected a scalar, a diagonal [a, b] or a 2x2 matrix, got " + j.dump());
}
inline Json mat2_to_json(const Mat2& m) { return Json::array({{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}}); }
inline Vec2 vec2_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::kConfigInvalid, "expected [x, y], got " + j.dump());
  return {j[0].get<double>(), j[1].get<double>()};
}
inline Json vec2_to_json(const Vec2& v) { return Json::array({v.x(), v.y()}); }

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline RobotModel model_from_name(const std::string& name) {
  if (name == "master-black") return master_black();
  if (name == "second-white") return second_white();
  throw Error(ErrorCode::kConfigInvalid, "unknown robot model '" + name + "'");
}

inline void model_from_json(const Json& j, RobotModel& m) {
  if (j.contains("model")) m = model_from_name(j.at("model").get<std::string>());
  read(j, "L1", m.L1);
  read(j, "L2", m.L2);
  if (j.contains("alpha")) {
    const auto a = j.at("alpha").get<std::vector<double>>();
    if (a.size() != 5) throw Error(ErrorCode::kConfigInvalid, "alpha needs five coefficients");
    std::copy(a.begin(), a.end(), m.alpha.begin());
  }
  if (j.contains("limits_deg")) {
    const Json& l = j.at("limits_deg");
    auto deg = [&](const char* key, double& out) {
      if (l.contains(key)) out = deg2rad(l.at(key).get<double>());
    };
    deg("q1_min", m.limits.q1_min);
    deg("q1_max", m.limits.q1_max);
    deg("q2_min", m.limits.q2_min);
    deg("q2_max", m.limits.q2_max);
    deg("coupled_min", m.limits.coupled_min);
    deg("coupled_max", m.limits.coupled_max);
  }
}

inline Json model_to_json(const RobotModel& m) {
  const auto& l = m.limits;
  return {{"name", m.name},
          {"L1", m.L1},
          {"L2", m.L2},
          {"alpha", std::vector<double>(m.alpha.begin(), m.alpha.end())},
          {"limits_deg",
           {{"q1_min", rad2deg(l.q1_min)},
            {"q1_max", rad2deg(l.q1_max)},
            {"q2_min", rad2deg(l.q2_min)},
            {"q2_max", rad2deg(l.q2_max)},
            {"coupled_min", rad2deg(l.coupled_min)},
            {"coupled_max", rad2deg(l.coupled_max)}}}};
}

inline void robot_from_json(const Json& j, RobotSetup& r) {
  ControllerConfig& c = r.controller;
  PlantConfig& p = r.plant;
  if (j.contains("estimate")) model_from_json(j.at("estimate"), c.estimate);
  // An explicit plant model is taken verbatim; otherwise the plant is the
  // identified model scaled by the mismatch factors.
  bool rescale = j.contains("estimate");
  if (j.contains("mismatch")) {
    const auto f = j.at("mismatch").get<std::vector<double>>();
    if (f.size() != 5) throw Error(ErrorCode::kConfigInvalid, "mismatch needs five factors");
    std::copy(f.begin(), f.end(), p.mismatch.begin());
    rescale = true;
  }
  if (j.contains("plant_model")) {
    model_from_json(j.at("plant_model"), p.true_model);
  } else if (rescale) {
    p.true_model = apply_mismatch(c.estimate, p.mismatch);
  }
  read(j, "payload_mass", p.payload_mass);
  read(j, "actuator_limit", p.actuator_limit);
  c.actuator_limit = p.actuator_limit;
  if (j.contains("integrator")) {
    const Json& i = j.at("integrator");
    read(i, "dt", p.integrator.dt);
    if (i.contains("method")) {
      const auto m = i.at("method").get<std::string>();
      if (m == "semi-implicit-euler") p.integrator.method = IntegratorMethod::kSemiImplicitEuler;
      else if (m == "rk4") p.integrator.method = IntegratorMethod::kRk4;
      else throw Error(ErrorCode::kConfigInvalid, "unknown integrator '" + m + "'");
    }
  }
  if (j.contains("limit_spring")) {
    read(j.at("limit_spring"), "stiffness", p.limit_spring.stiffness);
    read(j.at("limit_spring"), "damping", p.limit_spring.damping);
  }
  if (j.contains("gains")) {
    const Json& g = j.at("gains");
    if (g.contains("K")) c.gains.K = mat2_from_json(g.at("K"));
    if (g.contains("D")) c.gains.D = mat2_from_json(g.at("D"));
  }
  if (j.contains("ndob")) {
    const Json& n = j.at("ndob");
    read(n, "enabled", c.mode.ndob_enabled);
    if (n.contains("Y")) c.ndob.Y = mat2_from_json(n.at("Y"));
    if (n.contains("inertia")) {
      const auto s = n.at("inertia").get<std::string>();
      if (s == "estimated") c.ndob.inertia = ObserverInertia::kEstimated;
      else if (s == "constant") c.ndob.inertia = ObserverInertia::kConstant;
      else throw Error(ErrorCode::kConfigInvalid, "observer inertia must be 'estimated' or 'constant'");
    }
    if (n.contains("M_const")) c.ndob.M_const = mat2_from_json(n.at("M_const"));
  }
  if (j.contains("mode")) c.mode.mode = mode_from_string(j.at("mode").get<std::string>());
  read(j, "feedback_enabled", c.mode.feedback_enabled);
  read(j, "phri_damping", c.phri_damping);
}

inline Json robot_to_json(const RobotSetup& r) {
  const ControllerConfig& c = r.controller;
  const PlantConfig& p = r.plant;
  return {{"estimate", model_to_json(c.estimate)},
          {"plant_model", model_to_json(p.true_model)},
          {"mismatch", std::vector<double>(p.mismatch.begin(), p.mismatch.end())},
          {"payload_mass", p.payload_mass},
          {"actuator_limit", p.actuator_limit},
          {"integrator",
           {{"method", p.integrator.method == IntegratorMethod::kRk4 ? "rk4" : "semi-implicit-euler"},
            {"dt", p.integrator.dt}}},
          {"limit_spring", {{"stiffness", p.limit_spring.stiffness}, {"damping", p.limit_spring.damping}}},
          {"gains", {{"K", mat2_to_json(c.gains.K)}, {"D", mat2_to_json(c.gains.D)}}},
          {"ndob",
           {{"enabled", c.mode.ndob_enabled},
            {"Y", mat2_to_json(c.ndob.Y)},
            {"inertia", c.ndob.inertia == ObserverInertia::kEstimated ? "estimated" : "constant"},
            {"M_const", mat2_to_json(c.ndob.M_const)}}},
          {"mode", std::string(to_string(c.mode.mode))},
          {"feedback_enabled", c.mode.feedback_enabled},
          {"phri_damping", c.phri_damping}};
}
}  // namespace detail

/// Applies a JSON tree on top of `cfg`. A robot's "plant_model" is the true
/// plant as is; "mismatch" alone rescales the identified model.
inline void apply_json(ExperimentConfig& cfg, const Json& j) {
  using detail::read;
  try {
    if (j.contains("experiment")) {
      const auto id = experiment_from_string(j.at("experiment").get<std::string>());
      if (id != cfg.id) cfg = preset(id);
    }
    if (j.contains("scenario")) {
      const auto sc = j.at("scenario").get<std::string>();
      if (sc == "payload" && cfg.scenario != Scenario::kPayload) {
        const auto id = cfg.id;
        cfg = exp4_payload_preset();
        cfg.id = id;
      } else if (sc == "wall") {
        cfg.scenario = Scenario::kWall;
      } else if (sc == "none") {
        cfg.scenario = Scenario::kNone;
      } else if (sc != "payload") {
        throw Error(ErrorCode::kConfigInvalid, "scenario must be 'wall', 'payload' or 'none'");
      }
    }
    if (j.contains("master")) detail::robot_from_json(j.at("master"), cfg.master);
    if (j.contains("second")) detail::robot_from_json(j.at("second"), cfg.second);
    if (j.contains("channel")) {
      const Json& c = j.at("channel");
      read(c, "rate", cfg.channel.rate);
      read(c, "delay_ticks", cfg.channel.delay_ticks);
      read(c, "jitter_ticks", cfg.channel.jitter_ticks);
      read(c, "drop_probability", cfg.channel.drop_probability);
      read(c, "host", cfg.channel.host);
      read(c, "port", cfg.channel.port);
      if (c.contains("transport")) {
        const auto t = c.at("transport").get<std::string>();
        if (t == "in-process") cfg.channel.transport = Transport::kInProcess;
        else if (t == "udp") cfg.channel.transport = Transport::kUdp;
        else throw Error(ErrorCode::kConfigInvalid, "transport must be 'in-process' or 'udp'");
      }
    }
    if (j.contains("feedback")) {
      const Json& f = j.at("feedback");
      if (f.contains("K_ff")) cfg.feedback.K_ff = detail::mat2_from_json(f.at("K_ff"));
      read(f, "force_clip", cfg.feedback.force_clip);
    }
    if (j.contains("offset")) cfg.offset = detail::vec2_from_json(j.at("offset"));
    read(j, "reference_cutoff_hz", cfg.reference_cutoff_hz);
    if (j.contains("trajectory")) {
      const Json& t = j.at("trajectory");
      if (t.contains("kind")) {
        const auto kind = trajectory_kind_from_string(t.at("kind").get<std::string>());
        if (kind != cfg.trajectory.kind) {
          const double scale = cfg.trajectory.time_scale;
          cfg.trajectory = TrajectorySpec::preset(kind);
          cfg.trajectory.time_scale = scale;
        }
      }
      read(t, "R", cfg.trajectory.R);
      read(t, "t1", cfg.trajectory.t1);
      read(t, "r", cfg.trajectory.r);
      read(t, "d", cfg.trajectory.d);
      read(t, "n", cfg.trajectory.n);
      read(t, "k", cfg.trajectory.k);
      read(t, "time_scale", cfg.trajectory.time_scale);
    }
    if (j.contains("center")) cfg.center = detail::vec2_from_json(j.at("center"));
    if (j.contains("hand")) {
      read(j.at("hand"), "K_h", cfg.hand.K_h);
      read(j.at("hand"), "D_h", cfg.hand.D_h);
    }
    if (j.contains("hand_path")) {
      const Json& h = j.at("hand_path");
      if (h.contains("kind")) {
        const auto k = h.at("kind").get<std::string>();
        if (k == "loop") cfg.hand_path.kind = HandPath::Kind::kLoop;
        else if (k == "stroke") cfg.hand_path.kind = HandPath::Kind::kStroke;
        else if (k == "none") cfg.hand_path.kind = HandPath::Kind::kNone;
        else throw Error(ErrorCode::kConfigInvalid, "hand path must be 'loop', 'stroke' or 'none'");
      }
      if (h.contains("amplitude")) cfg.hand_path.amplitude = detail::vec2_from_json(h.at("amplitude"));
      read(h, "period", cfg.hand_path.period);
    }
    read(j, "wall_clearance", cfg.wall_clearance);
    read(j, "demo_sample_rate", cfg.demo_sample_rate);
    read(j, "demo", cfg.demo_path);
    read(j, "replay_cutoff_hz", cfg.replay_cutoff_hz);
    read(j, "duration", cfg.duration);
    read(j, "warmup", cfg.warmup);
    read(j, "output", cfg.output_dir);
    read(j, "seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigInvalid, std::string("config: ") + e.what());
  }
}

/// Parses a config file; comments are allowed.
inline Json read_config_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kConfigInvalid, "cannot open config " + path);
  Json j;
  try {
    j = Json::parse(f, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigInvalid, path + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kConfigInvalid, path + ": top level must be an object");
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  const Json j = read_config_json(path);
  ExperimentConfig cfg = preset(ExperimentId::kCustom);
  apply_json(cfg, j);
  return cfg;
}

inline Json to_json(const ExperimentConfig& c) {
  Json traj = {{"kind", std::string(to_string(c.trajectory.kind))}, {"time_scale", c.trajectory.time_scale}};
  switch (c.trajectory.kind) {
    case TrajectoryKind::kCircle:
    case TrajectoryKind::kFigure8: traj["R"] = c.trajectory.R; traj["t1"] = c.trajectory.t1; break;
    case TrajectoryKind::kTetragon: traj["R"] = c.trajectory.R; break;
    case TrajectoryKind::kPentagram:
      traj["R"] = c.trajectory.R; traj["r"] = c.trajectory.r; traj["d"] = c.trajectory.d; traj["n"] = c.trajectory.n;
      break;
    case TrajectoryKind::kRose: traj["R"] = c.trajectory.R; traj["k"] = c.trajectory.k; break;
    case TrajectoryKind::kReplay: break;
  }
  Json j = {
      {"experiment", std::string(to_string(c.id))},
      {"seed", c.seed},
      {"duration", c.duration},
      {"warmup", c.warmup},
      {"trajectory", traj},
      {"offset", detail::vec2_to_json(c.offset)},
      {"reference_cutoff_hz", c.reference_cutoff_hz},
      {"channel",
       {{"rate", c.channel.rate},
        {"delay_ticks", c.channel.delay_ticks},
        {"jitter_ticks", c.channel.jitter_ticks},
        {"drop_probability", c.channel.drop_probability},
        {"transport", c.channel.transport == Transport::kUdp ? "udp" : "in-process"},
        {"host", c.channel.host},
        {"port", c.channel.port}}},
      {"feedback", {{"K_ff", detail::mat2_to_json(c.feedback.K_ff)}, {"force_clip", c.feedback.force_clip}}},
      {"hand", {{"K_h", c.hand.K_h}, {"D_h", c.hand.D_h}}},
      {"hand_path",
       {{"kind", std::string(to_string(c.hand_path.kind))},
        {"amplitude", detail::vec2_to_json(c.hand_path.amplitude)},
        {"period", c.hand_path.period}}},
      {"scenario", std::string(to_string(c.scenario))},
      {"wall_clearance", c.wall_clearance},
      {"demo_sample_rate", c.demo_sample_rate},
      {"demo", c.demo_path},
      {"replay_cutoff_hz", c.replay_cutoff_hz},
      {"master", detail::robot_to_json(c.master)},
      {"second", detail::robot_to_json(c.second)},
  };
  if (c.center) j["center"] = detail::vec2_to_json(*c.center);
  return j;
}

// ---------------------------------------------------------------------------
// Metrics

struct RobotMetrics {
  double rms_tracking_error = 0.0;  // m, |x - x_d|
  Vec2 max_abs_torque = Vec2::Zero();  // N m per joint
  double torque_variance = 0.0;     // (N m)^2, summed over joints
  double settle_time = 0.0;         // s
};

struct RunMetrics {
  RobotMetrics master;
  RobotMetrics second;
  double rms_second_vs_master = 0.0;  // m, |x_S - (x_M + offset)|
  double max_abs_feedback_force = 0.0;  // N, largest rendered component
  std::size_t frames = 0;              // frames inside the window
};

/// Which robots a frame stream carries.
struct StreamLayout {
  bool master = true;
  bool second = true;
  bool bilateral = true;  // both robots coupled through the link
};

namespace detail {
inline RobotMetrics robot_metrics(const std::vector<TelemetryFrame>& frames, double warmup,
                                  RobotSample TelemetryFrame::*member) {
  RobotMetrics m;
  double sq = 0.0;
  std::size_t n = 0;
  Vec2 sum = Vec2::Zero();
  Vec2 sum2 = Vec2::Zero();
  for (const auto& f : frames) {
    if (f.t < warmup) continue;
    const RobotSample& r = f.*member;
    sq += (r.x - r.x_d).squaredNorm();
    m.max_abs_torque = m.max_abs_torque.cwiseMax(r.tau.cwiseAbs());
    sum += r.tau;
    sum2 += r.tau.cwiseProduct(r.tau);
    ++n;
  }
  m.rms_tracking_error = std::sqrt(sq / static_cast<double>(n));
  const Vec2 mean = sum / static_cast<double>(n);
  m.torque_variance = (sum2 / static_cast<double>(n) - mean.cwiseProduct(mean)).sum();
  // First frame after which the error stays below twice the windowed RMS.
  const double bound = 2.0 * m.rms_tracking_error;
  m.settle_time = frames.front().t;
  for (auto it = frames.rbegin(); it != frames.rend(); ++it) {
    const RobotSample& r = (*it).*member;
    if ((r.x - r.x_d).norm() > bound) {
      m.settle_time = it == frames.rbegin() ? it->t : std::prev(it)->t;
      break;
    }
  }
  return m;
}
}  // namespace detail

inline RunMetrics compute_metrics(const std::vector<TelemetryFrame>& frames, double warmup, const Vec2& offset,
                                  const StreamLayout& layout = {}) {
  RunMetrics m;
  for (const auto& f : frames) m.frames += f.t >= warmup ? 1 : 0;
  if (m.frames == 0) {
    throw Error(ErrorCode::kEmptyWindow, "no telemetry after the " + std::to_string(warmup) + " s warm-up");
  }
  if (layout.master) m.master = detail::robot_metrics(frames, warmup, &TelemetryFrame::master);
  if (layout.second) m.second = detail::robot_metrics(frames, warmup, &TelemetryFrame::second);
  double sq = 0.0;
  for (const auto& f : frames) {
    if (f.t < warmup) continue;
    if (layout.bilateral) sq += (f.second.x - map_master_to_second(offset, f.master.x)).squaredNorm();
    m.max_abs_feedback_force = std::max(m.max_abs_feedback_force, f.f_ff.cwiseAbs().maxCoeff());
  }
  if (layout.bilateral) m.rms_second_vs_master = std::sqrt(sq / static_cast<double>(m.frames));
  return m;
}

inline Json to_json(const RobotMetrics& m) {
  return {{"rms_tracking_error_m", m.rms_tracking_error},
          {"max_abs_torque_Nm", detail::vec2_to_json(m.max_abs_torque)},
          {"torque_variance_Nm2", m.torque_variance},
          {"settle_time_s", m.settle_time}};
}

inline Json to_json(const RunMetrics& m) {
  return {{"master", to_json(m.master)},
          {"second", to_json(m.second)},
          {"rms_second_vs_master_m", m.rms_second_vs_master},
          {"max_abs_feedback_force_N", m.max_abs_feedback_force},
          {"frames", m.frames}};
}

// ---------------------------------------------------------------------------
// Telemetry CSV

inline constexpr std::string_view kTelemetryColumns =
    "tick,t_s,robot,q1,q2,qd1,qd2,x,y,xd,yd,tau1,tau2,tau_ndob1,tau_ndob2,fff_x,fff_y";

inline void write_telemetry_csv(std::ostream& os, const Json& config_echo, std::uint64_t seed,
                                const std::vector<TelemetryFrame>& frames, const StreamLayout& layout) {
  os << "# telerehab " << kVersion << '\n';
  os << "# seed=" << seed << '\n';
  os << "# config=" << config_echo.dump() << '\n';
  os << kTelemetryColumns << '\n';
  char buf[512];
  auto row = [&](const TelemetryFrame& f, const char* name, const RobotSample& r, const Vec2& fff) {
    std::snprintf(buf, sizeof(buf),
                  "%lld,%.9g,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(f.tick), f.t, name, r.state.q[0], r.state.q[1], r.state.qdot[0],
                  r.state.qdot[1], r.x[0], r.x[1], r.x_d[0], r.x_d[1], r.tau[0], r.tau[1], r.tau_ndob[0],
                  r.tau_ndob[1], fff[0], fff[1]);
    os << buf;
  };
  for (const auto& f : frames) {
    if (layout.master) row(f, "master", f.master, f.f_ff);
    if (layout.second) row(f, "second", f.second, Vec2::Zero());
  }
}

// ---------------------------------------------------------------------------
// Runs

struct RunResult {
  RunMetrics metrics;
  std::vector<TelemetryFrame> frames;
  StreamLayout layout;
  std::optional<RecordedDemo> demo;  // exp3 demonstration
  Json config_echo;
  double warmup = 0.0;
};

/// One robot driven alone along a reference, no link.
class SoloRun {
 public:
  SoloRun(Role role, const RobotSetup& setup, TrajectorySpec reference)
      : plant_(setup.plant, setup.initial), ctrl_(role, setup.controller), reference_(std::move(reference)) {
    validate(reference_);
    ctrl_.reset_observer(setup.initial.qdot);
  }

  RobotSample step(std::int64_t tick) {
    const double t = static_cast<double>(tick) * plant_.config().integrator.dt;
    const CartesianState ref = sample(reference_, t);
    const JointState s = plant_.state();
    RobotSample r;
    r.tau = ctrl_.command(s, ref, Vec2::Zero());
    r.tau_ndob = ctrl_.active_estimate();
    r.x_d = ref.x;
    ctrl_.observe(s, r.tau, plant_.config().integrator.dt);
    plant_.advance(r.tau);
    r.state = plant_.state();
    r.x = plant_.ee_position();
    r.xdot = plant_.ee_velocity();
    return r;
  }

  const Plant& plant() const { return plant_; }

 private:
  Plant plant_;
  RobotController ctrl_;
  TrajectorySpec reference_;
};

/// Resting joint state whose end-effector sits at x.
inline JointState rest_at(const RobotModel& m, const Vec2& x) { return {inverse_kinematics(m, x), Vec2::Zero()}; }

/// Patterns are centred on the master's workspace centroid unless placed explicitly.
inline Vec2 default_center(const ExperimentConfig& cfg) {
  return cfg.center.value_or(workspace_centroid(cfg.master.controller.estimate));
}

namespace detail {
inline double ticks_for(double duration, double dt) { return std::floor(duration / dt + 0.5); }

inline void finalize(RunResult& r, const ExperimentConfig& cfg) {
  r.config_echo = to_json(cfg);
  r.metrics = compute_metrics(r.frames, r.warmup, cfg.offset, r.layout);
  if (cfg.output_dir.empty()) return;
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  {
    std::ofstream f(fs::path(cfg.output_dir) / "telemetry.csv", std::ios::binary);
    if (!f) throw Error(ErrorCode::kConfigInvalid, "cannot write to " + cfg.output_dir);
    write_telemetry_csv(f, r.config_echo, cfg.seed, r.frames, r.layout);
  }
  {
    std::ofstream f(fs::path(cfg.output_dir) / "metrics.json", std::ios::binary);
    Json j = {{"version", std::string(kVersion)}, {"seed", cfg.seed}, {"warmup_s", r.warmup},
              {"metrics", to_json(r.metrics)}};
    f << j.dump(2) << '\n';
  }
  if (r.demo) save_demo((fs::path(cfg.output_dir) / "demo.csv").string(), *r.demo);
}

inline RunResult run_solo_pair(const ExperimentConfig& cfg, const Vec2& center) {
  RunResult r;
  r.layout = {true, true, false};
  TrajectorySpec ref_m = cfg.trajectory;
  ref_m.center = center;
  TrajectorySpec ref_s = cfg.trajectory;
  ref_s.center = map_master_to_second(cfg.offset, center);
  RobotSetup m = cfg.master;
  RobotSetup s = cfg.second;
  m.initial = rest_at(m.plant.true_model, sample(ref_m, 0.0).x);
  s.initial = rest_at(s.plant.true_model, sample(ref_s, 0.0).x);
  SoloRun master(Role::kMaster, m, ref_m);
  SoloRun second(Role::kSecond, s, ref_s);
  const double dt = m.plant.integrator.dt;
  const auto n = static_cast<std::int64_t>(ticks_for(cfg.duration, dt));
  r.frames.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    TelemetryFrame f;
    f.tick = k;
    f.t = static_cast<double>(k) * dt;
    try {
      f.master = master.step(k);
    } catch (const Error& e) {
      throw e.attributed("master", k);
    }
    try {
      f.second = second.step(k);
    } catch (const Error& e) {
      throw e.attributed("second", k);
    }
    r.frames.push_back(f);
  }
  r.warmup = cfg.warmup >= 0.0 ? cfg.warmup : std::min(period(ref_m), 0.5 * cfg.duration);
  return r;
}

inline SessionConfig session_config(const ExperimentConfig& cfg, const Vec2& master_start) {
  SessionConfig s;
  s.master = cfg.master;
  s.second = cfg.second;
  s.channel = cfg.channel;
  s.channel.seed = cfg.seed;
  s.feedback = cfg.feedback;
  s.offset = cfg.offset;
  s.reference_cutoff_hz = cfg.reference_cutoff_hz;
  s.hand = cfg.hand;
  s.master.initial = rest_at(s.master.plant.true_model, master_start);
  const Vec2 second_start = map_master_to_second(cfg.offset, master_start);
  s.second.initial = rest_at(s.second.plant.true_model, second_start);
  if (cfg.scenario == Scenario::kWall) {
    Wall w;
    w.normal = {-1.0, 0.0};
    w.offset = second_start.x() + cfg.wall_clearance;  // free side: x < start + clearance
    s.second.plant.wall = w;
  } else if (cfg.scenario == Scenario::kPayload) {
    s.second.plant.payload_mass = 1.13;
  }
  return s;
}
}  // namespace detail

inline RunResult run_experiment(ExperimentConfig cfg) {
  if (!(cfg.duration > 0.0)) throw Error(ErrorCode::kConfigInvalid, "duration must be positive");
  const Vec2 center = default_center(cfg);
  if (cfg.id == ExperimentId::kExp1) {
    RunResult r = detail::run_solo_pair(cfg, center);
    detail::finalize(r, cfg);
    return r;
  }

  RunResult r;
  const bool phri = cfg.master.controller.mode.mode == Mode::kPhri;
  std::shared_ptr<const RecordedDemo> demo;
  if (cfg.trajectory.kind == TrajectoryKind::kReplay) {
    if (!cfg.demo_path.empty()) {
      demo = std::make_shared<const RecordedDemo>(load_demo(cfg.demo_path));
    } else {
      ExperimentConfig rec = preset(ExperimentId::kExp3);
      rec.seed = cfg.seed;
      rec.center = center;
      rec.offset = cfg.offset;
      demo = std::make_shared<const RecordedDemo>(*run_experiment(rec).demo);
    }
    cfg.trajectory = TrajectorySpec::from_replay(std::make_shared<const ReplayStream>(demo, cfg.replay_cutoff_hz));
    cfg.duration = std::min(cfg.duration, cfg.trajectory.replay->duration());
  } else {
    cfg.trajectory.center = center;
  }
  HandPath path = cfg.hand_path;
  path.center = center;
  const Vec2 start = phri ? path.target(0.0) : sample(cfg.trajectory, 0.0).x;

  SessionConfig sc = detail::session_config(cfg, start);
  if (!phri) sc.trajectory = cfg.trajectory;
  Session session(sc);
  if (cfg.id == ExperimentId::kExp3) {
    session.start_recording(cfg.demo_sample_rate, {{"robot", "master-black"}, {"mode", "phri"}});
  }
  const auto n = static_cast<std::int64_t>(detail::ticks_for(cfg.duration, session.dt()));
  r.frames.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    if (phri && path.kind != HandPath::Kind::kNone) session.set_hand_target(path.target(session.time()));
    r.frames.push_back(session.step(k));
  }
  if (session.recording()) {
    r.demo = session.stop_recording();
    r.demo->metadata["seed"] = std::to_string(cfg.seed);
  }
  r.layout = {true, true, true};
  if (cfg.warmup >= 0.0) r.warmup = cfg.warmup;
  else r.warmup = std::min(phri ? path.period : period(cfg.trajectory), 0.5 * cfg.duration);
  detail::finalize(r, cfg);
  return r;
}

}  // namespace telerehab
