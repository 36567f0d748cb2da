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

// Operator-facing session service: lifecycle commands, live hand input and
// telemetry subscriptions. Transport-agnostic; see gateway_ws.hpp for the
// WebSocket endpoint.
//
// Threading contract: exactly one driver thread calls tick() and apply().
// Any thread may post() commands or inputs and consume subscriptions;
// posted work is applied by the driver at the next tick boundary.

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "telerehab/common.hpp"
#include "telerehab/harness.hpp"
#include "telerehab/link.hpp"

namespace telerehab {

enum class SessionState { kIdle, kRunning, kRecording, kReplaying, kStopped };

inline std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::kIdle: return "idle";
    case SessionState::kRunning: return "running";
    case SessionState::kRecording: return "recording";
    case SessionState::kReplaying: return "replaying";
    case SessionState::kStopped: return "stopped";
  }
  return "idle";
}

inline constexpr std::string_view kVerbs[] = {"start",      "stop",       "set_mode",     "select_trajectory",
                                              "start_record", "stop_record", "start_replay", "set_gains",
                                              "inject_hand_target", "status"};

/// {"cmd": verb, ...args}
struct SessionCommand {
  std::string verb;
  Json args = Json::object();

  static SessionCommand from_json(const Json& j) {
    SessionCommand c;
    if (!j.is_object() || !j.contains("cmd") || !j.at("cmd").is_string()) {
      throw Error(ErrorCode::kConfigInvalid, "command needs a string 'cmd'");
    }
    c.verb = j.at("cmd").get<std::string>();
    c.args = j;
    c.args.erase("cmd");
    return c;
  }
};

struct Ack {
  std::string cmd;
  bool ok = true;
  std::string reason;                // empty when ok
  std::optional<ErrorCode> error;    // set on rejection
  Json data = Json::object();        // verb-specific result

  Json to_json() const {
    Json a = {{"cmd", cmd}, {"ok", ok}};
    if (!ok) {
      a["reason"] = reason;
      if (error) a["error"] = std::string(to_string(*error));
    }
    if (!data.empty()) a["data"] = data;
    return Json{{"ack", a}};
  }
};

/// Live operator input: drag target and grip.
struct OperatorInput {
  Vec2 target = Vec2::Zero();  // m
  bool grip = false;

  static OperatorInput from_json(const Json& j) {
    try {
      return {{j.at("x").get<double>(), j.at("y").get<double>()}, j.value("grip", true)};
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfigInvalid, std::string("input: ") + e.what());
    }
  }
};

struct TelemetryEnvelope {
  std::uint64_t seq = 0;
  SessionState state = SessionState::kRunning;
  Mode master_mode = Mode::kTracking;
  TelemetryFrame frame;

  Json to_json() const {
    auto v = [](const Vec2& x) { return Json::array({x.x(), x.y()}); };
    auto robot = [&](const RobotSample& r) {
      return Json{{"q", v(r.state.q)}, {"qd", v(r.state.qdot)}, {"x", v(r.x)},          {"x_d", v(r.x_d)},
                  {"tau", v(r.tau)},   {"tau_ndob", v(r.tau_ndob)}, {"f_ext", v(r.f_ext)}};
    };
    return Json{{"telemetry",
                 {{"seq", seq},
                  {"tick", frame.tick},
                  {"t", frame.t},
                  {"state", std::string(to_string(state))},
                  {"mode", std::string(to_string(master_mode))},
                  {"master", robot(frame.master)},
                  {"second", robot(frame.second)},
                  {"f_ff", v(frame.f_ff)},
                  {"hand_force", v(frame.hand_force)}}}};
  }
};

/// Bounded latest-wins buffer of envelopes for one consumer. Publishing never
/// blocks; when full, the oldest envelope is discarded.
class TelemetrySubscription {
 public:
  TelemetrySubscription(int decimation, std::size_t capacity) : decimation_(decimation), capacity_(capacity) {
    if (decimation < 1) throw Error(ErrorCode::kConfigInvalid, "decimation must be >= 1");
    if (capacity < 1) throw Error(ErrorCode::kConfigInvalid, "buffer capacity must be >= 1");
  }

  int decimation() const { return decimation_; }
  std::size_t capacity() const { return capacity_; }

  /// Called by the driver for every frame; keeps every decimation-th one.
  void offer(const TelemetryFrame& f, SessionState state, Mode mode) {
    if (++frames_seen_ % static_cast<std::uint64_t>(decimation_) != 0) return;
    std::lock_guard lock(mu_);
    if (closed_) return;
    if (buffer_.size() == capacity_) {
      buffer_.pop_front();
      ++dropped_;
    }
    buffer_.push_back({++seq_, state, mode, f});
    cv_.notify_one();
  }

  /// Next envelope; waits up to `timeout`. Nullopt on timeout or once the
  /// stream is closed and drained.
  std::optional<TelemetryEnvelope> pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return !buffer_.empty() || closed_; });
    if (buffer_.empty()) return std::nullopt;
    TelemetryEnvelope e = std::move(buffer_.front());
    buffer_.pop_front();
    return e;
  }

  std::optional<TelemetryEnvelope> try_pop() { return pop(std::chrono::milliseconds(0)); }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

  std::uint64_t dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }

 private:
  const int decimation_;
  const std::size_t capacity_;
  std::uint64_t frames_seen_ = 0;  // driver thread only
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<TelemetryEnvelope> buffer_;
  std::uint64_t seq_ = 0;
  std::uint64_t dropped_ = 0;
  bool closed_ = false;
};

/// One operator session around a bilateral Session.
class GatewaySession {
 public:
  using AckCallback = std::function<void(const Ack&)>;
  using StateCallback = std::function<void(SessionState)>;

  explicit GatewaySession(ExperimentConfig base = preset(ExperimentId::kExp2)) : base_(std::move(base)) {
    base_.center = default_center(base_);
    base_.trajectory.center = *base_.center;
  }

  SessionState state() const { return state_; }
  const ExperimentConfig& base_config() const { return base_; }
  bool has_demo() const { return demo_ != nullptr; }
  const RecordedDemo* demo() const { return demo_.get(); }
  const Session* session() const { return session_ ? &*session_ : nullptr; }

  /// Registers a callback run on the driver thread after each state change.
  int add_state_listener(StateCallback cb) {
    std::lock_guard lock(listener_mu_);
    listeners_.emplace(++listener_id_, std::move(cb));
    return listener_id_;
  }

  void remove_state_listener(int id) {
    std::lock_guard lock(listener_mu_);
    listeners_.erase(id);
  }

  // ---- driver-thread API -------------------------------------------------

  /// Applies one command now. Rejections are reported in the Ack, never thrown.
  Ack apply(const SessionCommand& cmd) {
    Ack ack;
    ack.cmd = cmd.verb;
    try {
      ack.data = dispatch(cmd);
    } catch (const Error& e) {
      ack.ok = false;
      ack.error = e.code();
      ack.reason = e.what();
    } catch (const nlohmann::json::exception& e) {
      ack.ok = false;
      ack.error = ErrorCode::kConfigInvalid;
      ack.reason = std::string("bad arguments: ") + e.what();
    }
    return ack;
  }

  /// Sets the virtual-hand target from live input. Targets outside the
  /// master workspace are clamped; the applied target is returned.
  Vec2 inject_operator_input(const OperatorInput& in) {
    require_running("inject_hand_target");
    if (session_->master_controller().mode().mode != Mode::kPhri) {
      throw Error(ErrorCode::kModeGuard, "hand input is only accepted in phri mode");
    }
    const Vec2 target = clamp_to_workspace(session_->master_controller().config().estimate, in.target);
    session_->set_hand_target(in.grip ? std::optional<Vec2>(target) : std::nullopt);
    return target;
  }

  /// Drains posted work, then advances the simulation one tick when running.
  std::optional<TelemetryFrame> tick() {
    drain_mailbox();
    if (!session_ || !active()) return std::nullopt;
    TelemetryFrame f;
    try {
      f = session_->step();
    } catch (const Error&) {
      stop_session();
      throw;
    }
    if (state_ == SessionState::kReplaying && session_->trajectory_time() > replay_duration_) {
      set_state(SessionState::kRunning);
    }
    publish(f);
    return f;
  }

  std::shared_ptr<TelemetrySubscription> subscribe(int decimation = 50, std::size_t capacity = 8) {
    auto sub = std::make_shared<TelemetrySubscription>(decimation, capacity);
    std::lock_guard lock(sub_mu_);
    subscribers_.push_back(sub);
    return sub;
  }

  void unsubscribe(const std::shared_ptr<TelemetrySubscription>& sub) {
    std::lock_guard lock(sub_mu_);
    std::erase(subscribers_, sub);
    sub->close();
  }

  // ---- any-thread API ----------------------------------------------------

  /// Queues a command; `done` runs on the driver thread once applied.
  void post(SessionCommand cmd, AckCallback done = {}) {
    std::lock_guard lock(mail_mu_);
    mailbox_.push_back({std::move(cmd), std::move(done)});
  }

  void post_input(const OperatorInput& in, AckCallback done = {}) {
    SessionCommand c;
    c.verb = "inject_hand_target";
    c.args = {{"x", in.target.x()}, {"y", in.target.y()}, {"grip", in.grip}};
    post(std::move(c), std::move(done));
  }

  Json status() const {
    Json s = {{"state", std::string(to_string(state_))}, {"has_demo", has_demo()}};
    if (session_) {
      auto robot = [](const RobotController& c) {
        return Json{{"mode", std::string(to_string(c.mode().mode))},
                    {"ndob_enabled", c.mode().ndob_enabled},
                    {"feedback_enabled", c.mode().feedback_enabled},
                    {"K", detail::mat2_to_json(c.config().gains.K)},
                    {"D", detail::mat2_to_json(c.config().gains.D)}};
      };
      s["tick"] = session_->next_tick();
      s["master"] = robot(session_->master_controller());
      s["second"] = robot(session_->second_controller());
      if (session_->trajectory()) s["trajectory"] = std::string(to_string(session_->trajectory()->kind));
    }
    return s;
  }

  /// Static description the console needs to draw both robots.
  Json describe() const {
    auto robot = [](const RobotModel& m) {
      return Json{{"name", m.name}, {"L1", m.L1}, {"L2", m.L2}, {"limits_deg", detail::model_to_json(m)["limits_deg"]}};
    };
    return Json{{"hello",
                 {{"version", std::string(kVersion)},
                  {"verbs", std::vector<std::string>(std::begin(kVerbs), std::end(kVerbs))},
                  {"offset", detail::vec2_to_json(base_.offset)},
                  {"center", detail::vec2_to_json(*base_.center)},
                  {"dt", base_.master.plant.integrator.dt},
                  {"master", robot(base_.master.controller.estimate)},
                  {"second", robot(base_.second.controller.estimate)},
                  {"state", std::string(to_string(state_))}}}};
  }

 private:
  struct Mail {
    SessionCommand cmd;
    AckCallback done;
  };

  bool active() const {
    return state_ == SessionState::kRunning || state_ == SessionState::kRecording ||
           state_ == SessionState::kReplaying;
  }

  void require_running(const std::string& verb) const {
    if (!session_ || !active()) {
      throw Error(ErrorCode::kInvalidTransition, verb + " requires a running session (state " +
                                                     std::string(to_string(state_)) + ")");
    }
  }

  void set_state(SessionState s) {
    if (s == state_) return;
    state_ = s;
    std::lock_guard lock(listener_mu_);
    for (auto& [id, cb] : listeners_) cb(s);
  }

  void drain_mailbox() {
    std::deque<Mail> work;
    {
      std::lock_guard lock(mail_mu_);
      work.swap(mailbox_);
    }
    for (auto& m : work) {
      const Ack a = apply(m.cmd);
      if (m.done) m.done(a);
    }
  }

  void publish(const TelemetryFrame& f) {
    std::lock_guard lock(sub_mu_);
    const Mode mode = session_->master_controller().mode().mode;
    for (auto& s : subscribers_) s->offer(f, state_, mode);
  }

  /// Ends the run; open telemetry streams terminate.
  void stop_session() {
    if (state_ == SessionState::kRecording) demo_ = std::make_shared<const RecordedDemo>(session_->stop_recording());
    {
      std::lock_guard lock(sub_mu_);
      for (auto& s : subscribers_) s->close();
      subscribers_.clear();
    }
    set_state(SessionState::kStopped);
  }

  static Role robot_arg(const Json& a) {
    const std::string r = a.value("robot", "master");
    if (r == "master") return Role::kMaster;
    if (r == "second") return Role::kSecond;
    throw Error(ErrorCode::kConfigInvalid, "robot must be 'master' or 'second'");
  }

  Json dispatch(const SessionCommand& cmd) {
    const Json& a = cmd.args;
    const std::string& v = cmd.verb;
    if (v == "status") return status();
    if (v == "start") {
      if (active()) throw Error(ErrorCode::kInvalidTransition, "session already running");
      ExperimentConfig cfg = base_;
      if (a.contains("config")) {
        apply_json(cfg, a.at("config"));
        if (cfg.trajectory.kind == TrajectoryKind::kReplay) throw Error(ErrorCode::kConfigInvalid, "use start_replay");
        cfg.center = default_center(cfg);
        cfg.trajectory.center = *cfg.center;
      }
      const Vec2 start = sample(cfg.trajectory, 0.0).x;
      SessionConfig sc = detail::session_config(cfg, start);
      sc.trajectory = cfg.trajectory;
      session_.emplace(sc);
      set_state(SessionState::kRunning);
      return {};
    }
    if (v == "stop") {
      require_running(v);
      stop_session();
      return {};
    }
    if (v == "set_mode") {
      require_running(v);
      const Role role = robot_arg(a);
      RobotController& c = role == Role::kMaster ? session_->master_controller() : session_->second_controller();
      ControlMode m = c.mode();
      if (a.contains("mode")) m.mode = mode_from_string(a.at("mode").get<std::string>());
      m.ndob_enabled = a.value("ndob", m.ndob_enabled);
      m.feedback_enabled = a.value("feedback", m.feedback_enabled);
      if (role == Role::kMaster) {
        if (state_ == SessionState::kReplaying && m.mode != Mode::kTracking) {
          throw Error(ErrorCode::kInvalidTransition, "replay in progress; the master must stay in tracking");
        }
        const bool leaving_phri = m.mode != Mode::kPhri && c.mode().mode == Mode::kPhri;
        if (leaving_phri) m.ndob_enabled = a.value("ndob", true);
        session_->set_master_mode(m);
        // The reference restarts from its beginning after free motion.
        if (leaving_phri) session_->set_trajectory(session_->trajectory().value_or(base_.trajectory));
      } else {
        if (m.mode == Mode::kPhri) throw Error(ErrorCode::kModeGuard, "the second robot only follows the master");
        session_->set_second_mode(m);
      }
      return robot_status(c);
    }
    if (v == "select_trajectory") {
      require_running(v);
      if (session_->master_controller().mode().mode == Mode::kPhri) {
        throw Error(ErrorCode::kModeGuard, "select_trajectory needs tracking or setpoint mode");
      }
      if (state_ == SessionState::kReplaying) throw Error(ErrorCode::kInvalidTransition, "replay in progress");
      const auto kind = trajectory_kind_from_string(a.at("kind").get<std::string>());
      if (kind == TrajectoryKind::kReplay) throw Error(ErrorCode::kConfigInvalid, "use start_replay for demos");
      TrajectorySpec t = TrajectorySpec::preset(kind, *base_.center);
      t.time_scale = a.value("time_scale", 1.0);
      session_->set_trajectory(t);
      return {{"kind", std::string(to_string(kind))}, {"period_s", period(t)}};
    }
    if (v == "start_record") {
      require_running(v);
      if (state_ == SessionState::kRecording) throw Error(ErrorCode::kInvalidTransition, "already recording");
      if (state_ == SessionState::kReplaying) throw Error(ErrorCode::kInvalidTransition, "cannot record during replay");
      const double rate = a.value("sample_rate", base_.demo_sample_rate);
      if (!(rate > 0.0) || rate > 1.0 / session_->dt()) throw Error(ErrorCode::kConfigInvalid, "bad sample rate");
      session_->start_recording(rate, {{"robot", "master-black"},
                                       {"mode", std::string(to_string(session_->master_controller().mode().mode))}});
      set_state(SessionState::kRecording);
      return {};
    }
    if (v == "stop_record") {
      if (state_ != SessionState::kRecording) throw Error(ErrorCode::kInvalidTransition, "not recording");
      auto demo = std::make_shared<RecordedDemo>(session_->stop_recording());
      set_state(SessionState::kRunning);
      if (demo->samples.size() < 2) throw Error(ErrorCode::kInvalidTransition, "demo too short to replay");
      if (a.contains("path")) save_demo(a.at("path").get<std::string>(), *demo);
      demo_ = demo;
      return {{"samples", demo->samples.size()}, {"duration_s", demo->duration()}};
    }
    if (v == "start_replay") {
      require_running(v);
      if (state_ == SessionState::kRecording) throw Error(ErrorCode::kInvalidTransition, "stop recording first");
      if (a.contains("path")) demo_ = std::make_shared<const RecordedDemo>(load_demo(a.at("path").get<std::string>()));
      if (!demo_) throw Error(ErrorCode::kInvalidTransition, "no stored demo to replay");
      const double cutoff = a.value("cutoff_hz", base_.replay_cutoff_hz);
      auto stream = std::make_shared<const ReplayStream>(demo_, cutoff);
      ControlMode m = session_->master_controller().mode();
      m.mode = Mode::kTracking;
      m.ndob_enabled = true;
      session_->set_master_mode(m);
      session_->set_trajectory(TrajectorySpec::from_replay(stream));
      replay_duration_ = stream->duration();
      set_state(SessionState::kReplaying);
      return {{"duration_s", replay_duration_}};
    }
    if (v == "set_gains") {
      require_running(v);
      const Role role = robot_arg(a);
      RobotController& c = role == Role::kMaster ? session_->master_controller() : session_->second_controller();
      ImpedanceGains g = c.config().gains;
      if (a.contains("K")) g.K = detail::mat2_from_json(a.at("K"));
      if (a.contains("D")) g.D = detail::mat2_from_json(a.at("D"));
      c.set_gains(g);
      return robot_status(c);
    }
    if (v == "inject_hand_target") {
      const Vec2 t = inject_operator_input(OperatorInput::from_json(a));
      return {{"x", t.x()}, {"y", t.y()}, {"grip", a.value("grip", true)}};
    }
    throw Error(ErrorCode::kConfigInvalid, "unknown verb '" + v + "'");
  }

  static Json robot_status(const RobotController& c) {
    return {{"mode", std::string(to_string(c.mode().mode))},
            {"ndob_enabled", c.mode().ndob_enabled},
            {"feedback_enabled", c.mode().feedback_enabled}};
  }

  ExperimentConfig base_;
  std::optional<Session> session_;
  std::atomic<SessionState> state_{SessionState::kIdle};
  std::shared_ptr<const RecordedDemo> demo_;
  double replay_duration_ = 0.0;
  std::mutex listener_mu_;
  std::map<int, StateCallback> listeners_;
  int listener_id_ = 0;

  std::mutex mail_mu_;
  std::deque<Mail> mailbox_;
  std::mutex sub_mu_;
  std::vector<std::shared_ptr<TelemetrySubscription>> subscribers_;
};

/// Registry of named sessions.
class Gateway {
 public:
  GatewaySession& create(const std::string& id, ExperimentConfig base = preset(ExperimentId::kExp2)) {
    std::lock_guard lock(mu_);
    auto [it, inserted] = sessions_.try_emplace(id, std::make_unique<GatewaySession>(std::move(base)));
    if (!inserted) throw Error(ErrorCode::kConfigInvalid, "session '" + id + "' already exists");
    return *it->second;
  }

  GatewaySession& get(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::kUnknownSession, "no session '" + id + "'");
    return *it->second;
  }

  bool contains(const std::string& id) const {
    std::lock_guard lock(mu_);
    return sessions_.count(id) != 0;
  }

  /// Applies a command to the named session on the caller's thread.
  Ack handle_command(const std::string& id, const SessionCommand& cmd) { return get(id).apply(cmd); }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<GatewaySession>> sessions_;
};

}  // namespace telerehab
