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

// Parametric rehabilitation trajectories with analytic derivatives, plus
// recording and replay of operator demonstrations.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "telerehab/common.hpp"

namespace telerehab {

/// Backward-difference velocity and acceleration of a sampled position
/// stream, each smoothed by a first-order low-pass. A cutoff of 0 disables
/// the smoothing.
class ReferenceDifferentiator {
 public:
  ReferenceDifferentiator(double dt, double cutoff_hz) : dt_(dt) {
    alpha_ = cutoff_hz > 0.0 ? dt / (dt + 1.0 / (2.0 * kPi * cutoff_hz)) : 1.0;
  }

  void reset(const Vec2& x) {
    prev_ = x;
    prev2_ = x;
    v_.setZero();
    a_.setZero();
    primed_ = true;
  }

  CartesianState update(const Vec2& x) {
    if (!primed_) reset(x);
    const Vec2 v_raw = (x - prev_) / dt_;
    const Vec2 a_raw = (x - 2.0 * prev_ + prev2_) / (dt_ * dt_);
    v_ += alpha_ * (v_raw - v_);
    a_ += alpha_ * (a_raw - a_);
    prev2_ = prev_;
    prev_ = x;
    return {x, v_, a_};
  }

  bool primed() const { return primed_; }

 private:
  double dt_;
  double alpha_ = 1.0;
  Vec2 prev_ = Vec2::Zero();
  Vec2 prev2_ = Vec2::Zero();
  Vec2 v_ = Vec2::Zero();
  Vec2 a_ = Vec2::Zero();
  bool primed_ = false;
};

/// Time-stamped end-effector samples of an operator demonstration.
struct RecordedDemo {
  double sample_rate = 1000.0;   // Hz
  double control_rate = 1000.0;  // Hz, rate at which append() is offered ticks
  struct Sample {
    std::int64_t tick;
    Vec2 x;
  };
  std::vector<Sample> samples;
  std::map<std::string, std::string> metadata;

  /// Offers one control tick; keeps every (control_rate / sample_rate)-th one.
  /// Returns true when the sample was stored.
  bool append(std::int64_t tick, const Vec2& x) {
    if (last_offered_ && tick <= *last_offered_) {
      throw Error(ErrorCode::kNonMonotonicTick,
                  "tick " + std::to_string(tick) + " after " + std::to_string(*last_offered_));
    }
    last_offered_ = tick;
    if (!first_tick_) first_tick_ = tick;
    const auto stride = static_cast<std::int64_t>(std::llround(control_rate / sample_rate));
    if ((tick - *first_tick_) % std::max<std::int64_t>(stride, 1) != 0) return false;
    samples.push_back({tick, x});
    return true;
  }

  bool empty() const { return samples.empty(); }
  std::int64_t first_tick() const { return samples.front().tick; }
  double duration() const {
    return samples.empty() ? 0.0 : static_cast<double>(samples.back().tick - samples.front().tick) / control_rate;
  }

 private:
  std::optional<std::int64_t> last_offered_;
  std::optional<std::int64_t> first_tick_;
};

inline RecordedDemo record_append(RecordedDemo demo, std::int64_t tick, const Vec2& x) {
  demo.append(tick, x);
  return demo;
}

/// Linear interpolation of the demo at time t (s since its first sample).
inline Vec2 demo_position(const RecordedDemo& demo, double t) {
  if (demo.samples.empty() || t < 0.0 || t > demo.duration() + 1e-12) {
    throw Error(ErrorCode::kOutOfRange, "replay time " + std::to_string(t) + " s outside [0, " +
                                            std::to_string(demo.duration()) + "]");
  }
  double tick = static_cast<double>(demo.first_tick()) + t * demo.control_rate;
  // t = k / rate rarely maps back to an exact integer; sample ticks must hit the stored sample.
  if (std::abs(tick - std::round(tick)) < 1e-6) tick = std::round(tick);
  const auto& s = demo.samples;
  auto it = std::upper_bound(s.begin(), s.end(), tick,
                             [](double v, const RecordedDemo::Sample& smp) { return v < static_cast<double>(smp.tick); });
  if (it == s.begin()) return s.front().x;
  if (it == s.end()) return s.back().x;
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double w = (tick - static_cast<double>(a.tick)) / static_cast<double>(b.tick - a.tick);
  if (w == 0.0) return a.x;
  return a.x + w * (b.x - a.x);
}

/// Demo resampled on the control grid with differentiated derivatives.
class ReplayStream {
 public:
  ReplayStream(std::shared_ptr<const RecordedDemo> demo, double filter_cutoff_hz)
      : demo_(std::move(demo)), cutoff_(filter_cutoff_hz) {
    if (!demo_ || demo_->samples.empty()) throw Error(ErrorCode::kConfigInvalid, "replay needs a non-empty demo");
    dt_ = 1.0 / demo_->control_rate;
    const auto n = static_cast<std::size_t>(std::llround(demo_->duration() * demo_->control_rate)) + 1;
    states_.reserve(n);
    ReferenceDifferentiator diff(dt_, filter_cutoff_hz);
    for (std::size_t k = 0; k < n; ++k) {
      states_.push_back(diff.update(demo_position(*demo_, std::min(k * dt_, demo_->duration()))));
    }
  }

  double duration() const { return demo_->duration(); }
  double filter_cutoff() const { return cutoff_; }
  const RecordedDemo& demo() const { return *demo_; }

  CartesianState sample(double t) const {
    if (t < 0.0 || t > duration() + 1e-12) {
      throw Error(ErrorCode::kOutOfRange,
                  "replay time " + std::to_string(t) + " s outside [0, " + std::to_string(duration()) + "]");
    }
    const auto k = std::min(states_.size() - 1, static_cast<std::size_t>(std::floor(t / dt_ + 1e-9)));
    CartesianState out = states_[k];
    out.x = demo_position(*demo_, std::min(t, duration()));
    return out;
  }

 private:
  std::shared_ptr<const RecordedDemo> demo_;
  double cutoff_;
  double dt_ = 1e-3;
  std::vector<CartesianState> states_;
};

inline CartesianState replay_sample(const RecordedDemo& demo, double t, double filter_cutoff_hz) {
  return ReplayStream(std::make_shared<const RecordedDemo>(demo), filter_cutoff_hz).sample(t);
}

enum class TrajectoryKind { kCircle, kFigure8, kTetragon, kPentagram, kRose, kReplay };

inline std::string_view to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::kCircle: return "circle";
    case TrajectoryKind::kFigure8: return "figure8";
    case TrajectoryKind::kTetragon: return "tetragon";
    case TrajectoryKind::kPentagram: return "pentagram";
    case TrajectoryKind::kRose: return "rose";
    case TrajectoryKind::kReplay: return "replay";
  }
  return "circle";
}

inline TrajectoryKind trajectory_kind_from_string(std::string_view s) {
  for (auto k : {TrajectoryKind::kCircle, TrajectoryKind::kFigure8, TrajectoryKind::kTetragon,
                 TrajectoryKind::kPentagram, TrajectoryKind::kRose, TrajectoryKind::kReplay}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::kConfigInvalid, "unknown trajectory '" + std::string(s) + "'");
}

inline constexpr TrajectoryKind kPatternKinds[] = {TrajectoryKind::kCircle, TrajectoryKind::kFigure8,
                                                   TrajectoryKind::kTetragon, TrajectoryKind::kPentagram,
                                                   TrajectoryKind::kRose};

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kCircle;
  double R = 0.08;   // m
  double t1 = 5.0;   // s, circle and figure-eight period
  double r = 0.048;  // m, pentagram rolling radius
  double d = 0.064;  // m, pentagram pen offset
  double n = 3.0;    // pentagram rate
  double k = 4.0;    // rose petal parameter
  Vec2 center = Vec2::Zero();
  double time_scale = 1.0;
  std::shared_ptr<const ReplayStream> replay;

  /// Pattern with its published parameters, placed at `center`.
  static TrajectorySpec preset(TrajectoryKind kind, const Vec2& center = Vec2::Zero()) {
    TrajectorySpec s;
    s.kind = kind;
    s.center = center;
    switch (kind) {
      case TrajectoryKind::kCircle: s.R = 0.08; s.t1 = 5.0; break;
      case TrajectoryKind::kFigure8: s.R = 0.1; s.t1 = 5.0; break;
      case TrajectoryKind::kTetragon: s.R = 0.1; break;
      case TrajectoryKind::kPentagram: s.R = 0.08; s.r = 0.048; s.d = 0.064; s.n = 3.0; break;
      case TrajectoryKind::kRose: s.R = 0.1; s.k = 4.0; break;
      case TrajectoryKind::kReplay: break;
    }
    return s;
  }

  static TrajectorySpec from_replay(std::shared_ptr<const ReplayStream> stream) {
    TrajectorySpec s;
    s.kind = TrajectoryKind::kReplay;
    s.replay = std::move(stream);
    return s;
  }
};

inline void validate(const TrajectorySpec& s) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kConfigInvalid, "trajectory: " + why); };
  if (s.kind == TrajectoryKind::kReplay) {
    if (!s.replay) fail("replay trajectory without a demo");
    return;
  }
  if (!(s.R > 0.0)) fail("R must be positive");
  if ((s.kind == TrajectoryKind::kCircle || s.kind == TrajectoryKind::kFigure8) && !(s.t1 > 0.0)) fail("t1 must be positive");
  if (s.kind == TrajectoryKind::kPentagram && !(s.r > 0.0)) fail("r must be positive");
  if (!(s.time_scale > 0.0)) fail("time scale must be positive");
}

/// Time for one full cycle of the pattern.
inline double period(const TrajectorySpec& s) {
  switch (s.kind) {
    case TrajectoryKind::kCircle:
    case TrajectoryKind::kFigure8: return s.t1 / s.time_scale;
    case TrajectoryKind::kReplay: return s.replay ? s.replay->duration() : 0.0;
    default: return 2.0 * kPi / s.time_scale;
  }
}

/// Radius about `center` that the pattern never leaves.
inline double radius_bound(const TrajectorySpec& s) {
  switch (s.kind) {
    case TrajectoryKind::kPentagram: return std::abs(s.R - s.r) + std::abs(s.d);
    case TrajectoryKind::kReplay: return std::numeric_limits<double>::infinity();
    default: return s.R;
  }
}

namespace detail {
// Pattern position and its first two derivatives in unscaled time.
inline CartesianState pattern(const TrajectorySpec& s, double t) {
  CartesianState c;
  switch (s.kind) {
    case TrajectoryKind::kCircle: {
      const double w = 2.0 * kPi / s.t1;
      const double sn = std::sin(w * t);
      const double cs = std::cos(w * t);
      c.x = {s.R * sn, s.R * cs};
      c.xdot = {s.R * w * cs, -s.R * w * sn};
      c.xddot = {-s.R * w * w * sn, -s.R * w * w * cs};
      break;
    }
    case TrajectoryKind::kFigure8: {
      const double w = 2.0 * kPi / s.t1;
      const double sn = std::sin(w * t);
      const double cs = std::cos(w * t);
      // R sin(wt) cos(wt) = (R/2) sin(2wt)
      c.x = {s.R * sn * cs, s.R * sn};
      c.xdot = {s.R * w * std::cos(2.0 * w * t), s.R * w * cs};
      c.xddot = {-2.0 * s.R * w * w * std::sin(2.0 * w * t), -s.R * w * w * sn};
      break;
    }
    case TrajectoryKind::kTetragon: {
      const double sn = std::sin(t);
      const double cs = std::cos(t);
      c.x = {s.R * cs * cs * cs, s.R * sn * sn * sn};
      c.xdot = {-3.0 * s.R * cs * cs * sn, 3.0 * s.R * sn * sn * cs};
      c.xddot = {3.0 * s.R * (2.0 * cs * sn * sn - cs * cs * cs), 3.0 * s.R * (2.0 * sn * cs * cs - sn * sn * sn)};
      break;
    }
    case TrajectoryKind::kPentagram: {
      const double a = s.R - s.r;
      const double w1 = s.n;
      const double w2 = a / s.r * s.n;
      c.x = {a * std::cos(w1 * t) + s.d * std::cos(w2 * t), a * std::sin(w1 * t) - s.d * std::sin(w2 * t)};
      c.xdot = {-a * w1 * std::sin(w1 * t) - s.d * w2 * std::sin(w2 * t),
                a * w1 * std::cos(w1 * t) - s.d * w2 * std::cos(w2 * t)};
      c.xddot = {-a * w1 * w1 * std::cos(w1 * t) - s.d * w2 * w2 * std::cos(w2 * t),
                 -a * w1 * w1 * std::sin(w1 * t) + s.d * w2 * w2 * std::sin(w2 * t)};
      break;
    }
    case TrajectoryKind::kRose: {
      const double u = std::cos(s.k * t);
      const double du = -s.k * std::sin(s.k * t);
      const double ddu = -s.k * s.k * u;
      const double sn = std::sin(t);
      const double cs = std::cos(t);
      c.x = {s.R * u * cs, s.R * u * sn};
      c.xdot = {s.R * (du * cs - u * sn), s.R * (du * sn + u * cs)};
      c.xddot = {s.R * (ddu * cs - 2.0 * du * sn - u * cs), s.R * (ddu * sn + 2.0 * du * cs - u * sn)};
      break;
    }
    case TrajectoryKind::kReplay:
      break;
  }
  return c;
}
}  // namespace detail

/// Desired end-effector state at time t >= 0.
inline CartesianState sample(const TrajectorySpec& s, double t) {
  if (s.kind == TrajectoryKind::kReplay) {
    if (!s.replay) throw Error(ErrorCode::kConfigInvalid, "replay trajectory without a demo");
    return s.replay->sample(std::min(t, s.replay->duration()));
  }
  CartesianState c = detail::pattern(s, s.time_scale * t);
  c.x += s.center;
  c.xdot *= s.time_scale;
  c.xddot *= s.time_scale * s.time_scale;
  return c;
}

// ---------------------------------------------------------------------------
// Demo CSV: "#key=value" metadata lines, then "tick,x_m,y_m".

inline void write_demo_csv(std::ostream& os, const RecordedDemo& demo) {
  auto meta = demo.metadata;
  meta["sample_rate"] = std::to_string(static_cast<long>(std::llround(demo.sample_rate)));
  meta["control_rate"] = std::to_string(static_cast<long>(std::llround(demo.control_rate)));
  for (const auto& [k, v] : meta) os << '#' << k << '=' << v << '\n';
  os << "tick,x_m,y_m\n";
  char buf[96];
  for (const auto& s : demo.samples) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g\n", static_cast<long long>(s.tick), s.x.x(), s.x.y());
    os << buf;
  }
}

inline void save_demo(const std::string& path, const RecordedDemo& demo) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kConfigInvalid, "cannot write demo file " + path);
  write_demo_csv(f, demo);
}

inline RecordedDemo read_demo_csv(std::istream& is) {
  RecordedDemo demo;
  std::string line;
  bool header = false;
  std::vector<RecordedDemo::Sample> rows;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::kConfigInvalid, "demo csv line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail("metadata line without '='");
      demo.metadata[line.substr(1, eq - 1)] = line.substr(eq + 1);
      continue;
    }
    if (!header) {
      if (line != "tick,x_m,y_m") fail("expected header 'tick,x_m,y_m'");
      header = true;
      continue;
    }
    std::istringstream ls(line);
    std::string a, b, c;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c)) fail("expected 3 columns");
    try {
      rows.push_back({std::stoll(a), Vec2(std::stod(b), std::stod(c))});
    } catch (const std::exception&) {
      fail("malformed number");
    }
    if (rows.size() > 1 && rows.back().tick <= rows[rows.size() - 2].tick) {
      throw Error(ErrorCode::kNonMonotonicTick, "demo csv line " + std::to_string(lineno) + ": ticks must increase");
    }
  }
  if (!header) fail("missing header");
  auto take = [&](const char* key, double def) {
    auto it = demo.metadata.find(key);
    if (it == demo.metadata.end()) return def;
    const std::string value = it->second;
    demo.metadata.erase(it);
    return std::stod(value);
  };
  demo.sample_rate = take("sample_rate", 1000.0);
  demo.control_rate = take("control_rate", 1000.0);
  demo.samples = std::move(rows);
  return demo;
}

inline RecordedDemo load_demo(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kConfigInvalid, "cannot open demo file " + path);
  return read_demo_csv(f);
}

}  // namespace telerehab
