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

// Bilateral session: position exchange between the two robots, workspace
// mapping, virtual-spring force feedback and the per-tick schedule.

#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "telerehab/common.hpp"
#include "telerehab/control.hpp"
#include "telerehab/kin2.hpp"
#include "telerehab/plant.hpp"
#include "telerehab/traj.hpp"

namespace telerehab {

// ---------------------------------------------------------------------------
// Packets and wire format

enum class Direction : std::uint8_t { kMasterToSecond = 0, kSecondToMaster = 1 };

struct Packet {
  Direction direction = Direction::kMasterToSecond;
  std::uint64_t seq = 0;
  std::uint64_t send_tick = 0;
  Vec2 x = Vec2::Zero();  // m

  bool operator==(const Packet& o) const {
    return direction == o.direction && seq == o.seq && send_tick == o.send_tick && x == o.x;
  }
};

inline constexpr std::size_t kPacketSize = 38;
inline constexpr std::array<char, 4> kPacketMagic{'T', 'R', 'S', '1'};

using PacketBytes = std::array<std::uint8_t, kPacketSize>;

namespace detail {
inline void put_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
inline void put_f64(std::uint8_t* p, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, sizeof v);
  put_u64(p, v);
}
inline double get_f64(const std::uint8_t* p) {
  const std::uint64_t v = get_u64(p);
  double d;
  std::memcpy(&d, &v, sizeof d);
  return d;
}
}  // namespace detail

/// Little-endian layout: magic(4) dir(1) seq(8) send_tick(8) x(8) y(8).
inline PacketBytes encode(const Packet& p) {
  PacketBytes b{};
  std::memcpy(b.data(), kPacketMagic.data(), 4);
  b[4] = static_cast<std::uint8_t>(p.direction);
  detail::put_u64(&b[5], p.seq);
  detail::put_u64(&b[13], p.send_tick);
  detail::put_f64(&b[21], p.x.x());
  detail::put_f64(&b[29], p.x.y());
  return b;
}

/// Parses one datagram; nullopt for wrong size, magic, direction or a
/// non-finite payload.
inline std::optional<Packet> decode(const std::uint8_t* data, std::size_t size) {
  if (size != kPacketSize || std::memcmp(data, kPacketMagic.data(), 4) != 0 || data[4] > 1) return std::nullopt;
  Packet p;
  p.direction = static_cast<Direction>(data[4]);
  p.seq = detail::get_u64(data + 5);
  p.send_tick = detail::get_u64(data + 13);
  p.x = {detail::get_f64(data + 21), detail::get_f64(data + 29)};
  if (!all_finite(p.x)) return std::nullopt;
  return p;
}

// ---------------------------------------------------------------------------
// Channels

enum class Transport { kInProcess, kUdp };

struct ChannelConfig {
  double rate = 1000.0;  // Hz
  int delay_ticks = 0;
  int jitter_ticks = 0;
  double drop_probability = 0.0;
  std::uint64_t seed = 0;
  Transport transport = Transport::kInProcess;
  std::string host = "127.0.0.1";
  std::uint16_t port = 47000;  // master->second on port, second->master on port + 1
};

inline void validate(const ChannelConfig& c) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kConfigInvalid, "channel: " + why); };
  if (!(c.rate > 0.0)) fail("rate must be positive");
  if (c.delay_ticks < 0 || c.jitter_ticks < 0) fail("delay and jitter must be non-negative");
  if (!(c.drop_probability >= 0.0 && c.drop_probability < 1.0)) fail("drop probability must be in [0, 1)");
}

/// One direction of the position exchange. Consumers only ever see packets
/// newer than everything already delivered.
class PacketChannel {
 public:
  virtual ~PacketChannel() = default;
  virtual void send(const Packet& p, std::int64_t now_tick) = 0;
  /// Packets that arrived by now_tick, oldest first, in strictly increasing seq.
  virtual std::vector<Packet> poll(std::int64_t now_tick) = 0;
};

/// Deterministic in-process channel with delay, jitter and loss.
class SimChannel final : public PacketChannel {
 public:
  explicit SimChannel(ChannelConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) { validate(cfg_); }

  /// Uniform in [0, 1) from the top 53 bits, identical on every platform.
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  void send(const Packet& p, std::int64_t now_tick) override {
    const double u_drop = uniform();
    const double u_jitter = uniform();
    if (u_drop < cfg_.drop_probability) return;
    const auto jitter = static_cast<std::int64_t>(u_jitter * (cfg_.jitter_ticks + 1));
    pending_.push_back({now_tick + cfg_.delay_ticks + jitter, p});
  }

  std::vector<Packet> poll(std::int64_t now_tick) override {
    std::vector<InFlight> due;
    std::vector<InFlight> later;
    for (auto& f : pending_) (f.arrival <= now_tick ? due : later).push_back(f);
    pending_ = std::move(later);
    std::stable_sort(due.begin(), due.end(), [](const InFlight& a, const InFlight& b) {
      return a.arrival != b.arrival ? a.arrival < b.arrival : a.packet.seq < b.packet.seq;
    });
    std::vector<Packet> out;
    for (const auto& f : due) {
      if (newest_ && f.packet.seq <= *newest_) continue;  // stale: overtaken in flight
      newest_ = f.packet.seq;
      out.push_back(f.packet);
    }
    return out;
  }

  std::size_t in_flight() const { return pending_.size(); }

 private:
  struct InFlight {
    std::int64_t arrival;
    Packet packet;
  };
  ChannelConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<InFlight> pending_;
  std::optional<std::uint64_t> newest_;
};

namespace detail {
class Socket {
 public:
  Socket() {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw Error(ErrorCode::kTransportDown, std::string("socket: ") + std::strerror(errno));
    ::fcntl(fd_, F_SETFL, ::fcntl(fd_, F_GETFL, 0) | O_NONBLOCK);
  }
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  int fd() const { return fd_; }

 private:
  int fd_ = -1;
};

inline sockaddr_in make_address(const std::string& host, std::uint16_t port) {
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &a.sin_addr) != 1) {
    throw Error(ErrorCode::kConfigInvalid, "not an IPv4 address: " + host);
  }
  return a;
}
}  // namespace detail

/// Sending end of a real UDP channel. Never blocks.
class UdpSender {
 public:
  UdpSender(const std::string& host, std::uint16_t port) : to_(detail::make_address(host, port)) {}

  void send(const Packet& p) {
    const PacketBytes b = encode(p);
    const auto n = ::sendto(sock_.fd(), b.data(), b.size(), 0, reinterpret_cast<const sockaddr*>(&to_), sizeof to_);
    if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != ECONNREFUSED) {
      throw Error(ErrorCode::kTransportDown, std::string("sendto: ") + std::strerror(errno));
    }
  }

 private:
  detail::Socket sock_;
  sockaddr_in to_;
};

/// Receiving end of a real UDP channel: drains the socket without blocking.
class UdpReceiver {
 public:
  UdpReceiver(const std::string& host, std::uint16_t port, Direction direction) : direction_(direction) {
    const sockaddr_in a = detail::make_address(host, port);
    if (::bind(sock_.fd(), reinterpret_cast<const sockaddr*>(&a), sizeof a) != 0) {
      throw Error(ErrorCode::kTransportDown,
                  "bind " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
    }
  }

  std::vector<Packet> poll() {
    std::vector<Packet> out;
    std::array<std::uint8_t, 64> buf{};
    for (;;) {
      const auto n = ::recv(sock_.fd(), buf.data(), buf.size(), 0);
      if (n < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK || errno == ECONNREFUSED) break;
        if (errno == EINTR) continue;
        throw Error(ErrorCode::kTransportDown, std::string("recv: ") + std::strerror(errno));
      }
      auto p = decode(buf.data(), static_cast<std::size_t>(n));
      if (!p || p->direction != direction_) continue;
      if (newest_ && p->seq <= *newest_) continue;
      newest_ = p->seq;
      out.push_back(*p);
    }
    return out;
  }

 private:
  detail::Socket sock_;
  Direction direction_;
  std::optional<std::uint64_t> newest_;
};

/// Both ends of a UDP channel in one process (loopback deployment).
class UdpChannel final : public PacketChannel {
 public:
  UdpChannel(const std::string& host, std::uint16_t port, Direction direction)
      : receiver_(host, port, direction), sender_(host, port) {}

  void send(const Packet& p, std::int64_t) override { sender_.send(p); }
  std::vector<Packet> poll(std::int64_t) override { return receiver_.poll(); }

 private:
  UdpReceiver receiver_;
  UdpSender sender_;
};

inline std::unique_ptr<PacketChannel> make_channel(const ChannelConfig& cfg, Direction direction) {
  validate(cfg);
  if (cfg.transport == Transport::kUdp) {
    return std::make_unique<UdpChannel>(cfg.host, static_cast<std::uint16_t>(cfg.port + static_cast<int>(direction)),
                                        direction);
  }
  ChannelConfig c = cfg;
  // Independent impairment streams per direction.
  c.seed = cfg.seed ^ (direction == Direction::kMasterToSecond ? 0x9E3779B97F4A7C15ULL : 0xC2B2AE3D27D4EB4FULL);
  return std::make_unique<SimChannel>(c);
}

// ---------------------------------------------------------------------------
// Force feedback and workspace mapping

/// The default stiffness keeps the coupled loop stable: the second robot's
/// inertia feedforward makes x_S lead its reference, which the spring turns
/// into negative damping of about K_ff M_x / D on the master.
struct FeedbackConfig {
  Mat2 K_ff = 150.0 * Mat2::Identity();  // N/m
  double force_clip = 10.0;              // N per component
};

inline void validate(const FeedbackConfig& f) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kConfigInvalid, "feedback: " + why); };
  if (!detail::symmetric(f.K_ff) || detail::min_eigenvalue(f.K_ff) < 0.0) fail("K_ff must be symmetric PSD");
  if (!(f.force_clip > 0.0)) fail("force clip must be positive");
}

struct RenderedFeedback {
  Vec2 spring = Vec2::Zero();  // N, K_ff (x_S - x_M) before clipping
  Vec2 force = Vec2::Zero();   // N, clipped
  Vec2 torque = Vec2::Zero();  // N m, J^T force
};

/// Virtual spring between the two end-effectors, both in master coordinates.
inline RenderedFeedback render_force_feedback(const FeedbackConfig& fb, const Vec2& x_S, const Vec2& x_M,
                                              const Mat2& J_master) {
  RenderedFeedback r;
  r.spring = fb.K_ff * (x_S - x_M);
  r.force = saturate(r.spring, fb.force_clip);
  r.torque = J_master.transpose() * r.force;
  return r;
}

inline Vec2 map_master_to_second(const Vec2& offset, const Vec2& x_M) { return x_M + offset; }
inline Vec2 map_second_to_master(const Vec2& offset, const Vec2& x_S) { return x_S - offset; }

// ---------------------------------------------------------------------------
// Session

/// Virtual hand pulling the end-effector toward a target.
struct HandModel {
  double K_h = 150.0;  // N/m
  double D_h = 10.0;   // N s/m

  Vec2 force(const Vec2& target, const Vec2& x, const Vec2& xdot) const { return K_h * (target - x) - D_h * xdot; }
};

struct RobotSetup {
  PlantConfig plant;
  ControllerConfig controller;
  JointState initial;
};

struct SessionConfig {
  RobotSetup master;
  RobotSetup second;
  ChannelConfig channel;
  FeedbackConfig feedback;
  Vec2 offset{0.1, 0.0};  // m, master -> second workspace shift
  double reference_cutoff_hz = 50.0;
  HandModel hand;
  std::optional<TrajectorySpec> trajectory;  // master reference in tracking/set-point
};

inline void validate(const SessionConfig& c) {
  validate(c.master.plant);
  validate(c.second.plant);
  validate(c.channel);
  validate(c.feedback);
  if (std::abs(c.master.plant.integrator.dt - c.second.plant.integrator.dt) > 0.0) {
    throw Error(ErrorCode::kConfigInvalid, "both plants must share one control period");
  }
  if (c.trajectory) validate(*c.trajectory);
  if (!(c.reference_cutoff_hz >= 0.0)) throw Error(ErrorCode::kConfigInvalid, "reference cutoff must be >= 0");
}

/// Per-robot part of one telemetry frame.
struct RobotSample {
  JointState state;             // after the tick's plant step
  Vec2 x = Vec2::Zero();        // m
  Vec2 xdot = Vec2::Zero();     // m/s
  Vec2 x_d = Vec2::Zero();      // m, reference used this tick
  Vec2 tau = Vec2::Zero();      // N m, command sent to the plant
  Vec2 tau_ndob = Vec2::Zero(); // N m, compensated observer estimate
  Vec2 f_ext = Vec2::Zero();    // N, environment force at the end-effector
};

struct TelemetryFrame {
  std::int64_t tick = 0;
  double t = 0.0;  // s
  RobotSample master;
  RobotSample second;
  Vec2 f_ff = Vec2::Zero();         // N, rendered feedback force (clipped)
  Vec2 f_ff_spring = Vec2::Zero();  // N, before clipping
  Vec2 hand_force = Vec2::Zero();   // N
};

/// Two robots, two channels and the tick schedule. Single driver.
class Session {
 public:
  explicit Session(SessionConfig cfg)
      : cfg_((validate(cfg), std::move(cfg))),
        master_plant_(cfg_.master.plant, cfg_.master.initial),
        second_plant_(cfg_.second.plant, cfg_.second.initial),
        master_ctrl_(Role::kMaster, cfg_.master.controller),
        second_ctrl_(Role::kSecond, cfg_.second.controller),
        to_second_(make_channel(cfg_.channel, Direction::kMasterToSecond)),
        to_master_(make_channel(cfg_.channel, Direction::kSecondToMaster)),
        differentiator_(cfg_.master.plant.integrator.dt, cfg_.reference_cutoff_hz) {
    master_ctrl_.reset_observer(cfg_.master.initial.qdot);
    second_ctrl_.reset_observer(cfg_.second.initial.qdot);
    second_hold_ = second_plant_.ee_position();
  }

  const SessionConfig& config() const { return cfg_; }
  const Plant& master_plant() const { return master_plant_; }
  const Plant& second_plant() const { return second_plant_; }
  Plant& master_plant() { return master_plant_; }
  Plant& second_plant() { return second_plant_; }
  const RobotController& master_controller() const { return master_ctrl_; }
  const RobotController& second_controller() const { return second_ctrl_; }
  RobotController& master_controller() { return master_ctrl_; }
  RobotController& second_controller() { return second_ctrl_; }
  std::int64_t next_tick() const { return next_tick_; }
  double dt() const { return cfg_.master.plant.integrator.dt; }
  double time() const { return static_cast<double>(next_tick_) * dt(); }

  void set_master_mode(const ControlMode& m) {
    master_ctrl_.set_mode(m, master_plant_.state().qdot);
    master_hold_.reset();
    if (master_ctrl_.mode().mode != Mode::kPhri) hand_target_.reset();
  }
  void set_second_mode(const ControlMode& m) { second_ctrl_.set_mode(m, second_plant_.state().qdot); }
  void set_feedback(const FeedbackConfig& f) {
    validate(f);
    cfg_.feedback = f;
  }

  /// Starts a master reference; its local time begins at the next tick.
  void set_trajectory(std::optional<TrajectorySpec> spec) {
    if (spec) validate(*spec);
    cfg_.trajectory = std::move(spec);
    trajectory_t0_ = time();
    master_hold_.reset();
  }
  const std::optional<TrajectorySpec>& trajectory() const { return cfg_.trajectory; }
  double trajectory_time() const { return time() - trajectory_t0_; }

  /// Hand target for pHRI; nullopt releases the grip.
  void set_hand_target(std::optional<Vec2> target) { hand_target_ = std::move(target); }
  const std::optional<Vec2>& hand_target() const { return hand_target_; }

  void start_recording(double sample_rate, std::map<std::string, std::string> metadata) {
    RecordedDemo d;
    d.sample_rate = sample_rate;
    d.control_rate = 1.0 / dt();
    d.metadata = std::move(metadata);
    recording_ = std::move(d);
  }
  bool recording() const { return recording_.has_value(); }
  RecordedDemo stop_recording() {
    RecordedDemo d = std::move(*recording_);
    recording_.reset();
    return d;
  }

  /// Runs tick `tick`, which must be the next one.
  TelemetryFrame step(std::int64_t tick) {
    if (tick != next_tick_) {
      throw Error(ErrorCode::kNonMonotonicTick,
                  "session expected tick " + std::to_string(next_tick_) + ", got " + std::to_string(tick));
    }
    TelemetryFrame f;
    f.tick = tick;
    f.t = static_cast<double>(tick) * dt();
    const bool send_now = tick % send_stride() == 0;
    attributed(Role::kMaster, tick, [&] { step_master(f); });
    if (send_now) {
      to_second_->send({Direction::kMasterToSecond, seq_m_++, static_cast<std::uint64_t>(tick), f.master.x}, tick);
    }
    attributed(Role::kSecond, tick, [&] { step_second(f); });
    if (send_now) {
      to_master_->send({Direction::kSecondToMaster, seq_s_++, static_cast<std::uint64_t>(tick), f.second.x}, tick);
    }
    render_feedback(f);
    if (recording_) recording_->append(tick, f.master.x);
    ++next_tick_;
    return f;
  }

  TelemetryFrame step() { return step(next_tick_); }

  /// Control ticks between two packets in each direction.
  std::int64_t send_stride() const {
    return std::max<std::int64_t>(1, std::llround(1.0 / (dt() * cfg_.channel.rate)));
  }

  /// Latest master position seen by the second robot (in master coordinates).
  const std::optional<Vec2>& received_master() const { return received_master_; }

 private:
  template <class F>
  static void attributed(Role role, std::int64_t tick, F&& body) {
    try {
      body();
    } catch (const Error& e) {
      throw e.attributed(std::string(to_string(role)), tick);
    }
  }

  CartesianState master_reference() const {
    const Mode mode = master_ctrl_.mode().mode;
    if (mode != Mode::kPhri && cfg_.trajectory) return sample(*cfg_.trajectory, trajectory_time());
    CartesianState hold;
    hold.x = master_plant_.ee_position();
    if (mode != Mode::kPhri) hold.x = master_hold_.value_or(hold.x);
    return hold;
  }

  void step_master(TelemetryFrame& f) {
    if (master_ctrl_.mode().mode != Mode::kPhri && !cfg_.trajectory && !master_hold_) {
      master_hold_ = master_plant_.ee_position();
    }
    const CartesianState ref = master_reference();
    const JointState s = master_plant_.state();
    std::optional<Vec2> hand;
    if (hand_target_ && master_ctrl_.mode().mode == Mode::kPhri) {
      hand = cfg_.hand.force(*hand_target_, master_plant_.ee_position(), master_plant_.ee_velocity());
      f.hand_force = *hand;
    }
    const Vec2 tau = master_ctrl_.command(s, ref, tau_ff_);
    f.master.tau = tau;
    f.master.tau_ndob = master_ctrl_.active_estimate();
    f.master.x_d = master_ctrl_.mode().mode == Mode::kPhri ? hand_target_.value_or(master_plant_.ee_position()) : ref.x;
    f.master.f_ext = master_plant_.wrench(hand).force;
    master_ctrl_.observe(s, tau, dt());
    master_plant_.advance(tau, hand);
    fill(f.master, master_plant_);
  }

  void step_second(TelemetryFrame& f) {
    const auto now = f.tick;
    for (const Packet& p : to_second_->poll(now)) received_master_ = p.x;
    CartesianState ref;
    if (received_master_) {
      ref = differentiator_.update(map_master_to_second(cfg_.offset, *received_master_));
    } else {
      ref.x = second_hold_;
    }
    const JointState s = second_plant_.state();
    const Vec2 tau = second_ctrl_.command(s, ref, Vec2::Zero());
    f.second.tau = tau;
    f.second.tau_ndob = second_ctrl_.active_estimate();
    f.second.x_d = ref.x;
    f.second.f_ext = second_plant_.wrench(std::nullopt).force;
    second_ctrl_.observe(s, tau, dt());
    second_plant_.advance(tau, std::nullopt);
    fill(f.second, second_plant_);
  }

  void render_feedback(TelemetryFrame& f) {
    for (const Packet& p : to_master_->poll(f.tick)) received_second_ = p.x;
    if (!received_second_) return;
    const Vec2 x_S = map_second_to_master(cfg_.offset, *received_second_);
    const RenderedFeedback r = render_force_feedback(cfg_.feedback, x_S, f.master.x,
                                                     jacobian(master_ctrl_.config().estimate, master_plant_.state().q));
    f.f_ff = r.force;
    f.f_ff_spring = r.spring;
    tau_ff_ = r.torque;
  }

  static void fill(RobotSample& r, const Plant& p) {
    r.state = p.state();
    r.x = p.ee_position();
    r.xdot = p.ee_velocity();
  }

  SessionConfig cfg_;
  Plant master_plant_;
  Plant second_plant_;
  RobotController master_ctrl_;
  RobotController second_ctrl_;
  std::unique_ptr<PacketChannel> to_second_;
  std::unique_ptr<PacketChannel> to_master_;
  ReferenceDifferentiator differentiator_;
  std::int64_t next_tick_ = 0;
  std::uint64_t seq_m_ = 1;
  std::uint64_t seq_s_ = 1;
  double trajectory_t0_ = 0.0;
  std::optional<Vec2> hand_target_;
  std::optional<Vec2> master_hold_;
  Vec2 second_hold_ = Vec2::Zero();
  std::optional<Vec2> received_master_;
  std::optional<Vec2> received_second_;
  Vec2 tau_ff_ = Vec2::Zero();
  std::optional<RecordedDemo> recording_;
};

inline TelemetryFrame session_step(Session& s, std::int64_t tick) { return s.step(tick); }

}  // namespace telerehab
