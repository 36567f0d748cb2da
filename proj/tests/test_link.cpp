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


#include <gtest/gtest.h>

#include <chrono>
#include <cstring>
#include <random>
#include <thread>

#include "test_support.hpp"

namespace telerehab {
namespace {

using testutil::random_vec;

Packet sample_packet() { return {Direction::kSecondToMaster, 0x0102030405060708ULL, 42, {0.25, -0.125}}; }

// ---------------------------------------------------------------------------
// Wire format

TEST(Wire, LayoutIsLittleEndianWithMagic) {
  const PacketBytes b = encode(sample_packet());
  ASSERT_EQ(b.size(), 38u);
  EXPECT_EQ(std::memcmp(b.data(), "TRS1", 4), 0);
  EXPECT_EQ(b[4], 1);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(b[5 + i], 8 - i);
  EXPECT_EQ(b[13], 42);
  for (int i = 14; i < 21; ++i) EXPECT_EQ(b[i], 0);
  double x = 0.0;
  std::memcpy(&x, &b[21], 8);
  EXPECT_EQ(x, 0.25);
}

TEST(Wire, RoundTripIsExact) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    Packet p;
    p.direction = i % 2 ? Direction::kSecondToMaster : Direction::kMasterToSecond;
    p.seq = rng();
    p.send_tick = rng();
    p.x = random_vec(rng, 1e3);
    const PacketBytes b = encode(p);
    const auto back = decode(b.data(), b.size());
    ASSERT_TRUE(back);
    EXPECT_EQ(*back, p);
  }
}

TEST(Wire, RejectsMalformedDatagrams) {
  const PacketBytes good = encode(sample_packet());
  EXPECT_FALSE(decode(good.data(), 37));
  std::vector<std::uint8_t> longer(good.begin(), good.end());
  longer.push_back(0);
  EXPECT_FALSE(decode(longer.data(), longer.size()));

  PacketBytes bad = good;
  bad[0] = 'X';
  EXPECT_FALSE(decode(bad.data(), bad.size()));
  bad = good;
  bad[4] = 2;
  EXPECT_FALSE(decode(bad.data(), bad.size()));
  bad = good;
  const double nan = std::nan("");
  std::memcpy(&bad[29], &nan, 8);
  EXPECT_FALSE(decode(bad.data(), bad.size()));
  const double inf = std::numeric_limits<double>::infinity();
  std::memcpy(&bad[29], &inf, 8);
  EXPECT_FALSE(decode(bad.data(), bad.size()));
}

// ---------------------------------------------------------------------------
// Simulated channel

Packet numbered(std::uint64_t seq, std::int64_t tick) {
  return {Direction::kMasterToSecond, seq, static_cast<std::uint64_t>(tick), {static_cast<double>(seq), 0.0}};
}

TEST(SimChannel, IdealChannelDeliversSameTick) {
  SimChannel ch({});
  for (std::int64_t k = 0; k < 100; ++k) {
    ch.send(numbered(static_cast<std::uint64_t>(k + 1), k), k);
    const auto got = ch.poll(k);
    ASSERT_EQ(got.size(), 1u);
    EXPECT_EQ(got[0], numbered(static_cast<std::uint64_t>(k + 1), k));
  }
  EXPECT_EQ(ch.in_flight(), 0u);
}

TEST(SimChannel, FixedDelayArrivesExactly) {
  ChannelConfig c;
  c.delay_ticks = 5;
  SimChannel ch(c);
  ch.send(numbered(1, 10), 10);
  for (std::int64_t k = 10; k < 15; ++k) EXPECT_TRUE(ch.poll(k).empty()) << k;
  const auto got = ch.poll(15);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].seq, 1u);
}

// Replays the channel's draw sequence independently: two draws per send.
std::size_t expected_survivors(std::uint64_t seed, double p, int n) {
  std::mt19937_64 rng(seed);
  std::size_t kept = 0;
  for (int i = 0; i < n; ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    rng();
    kept += u < p ? 0 : 1;
  }
  return kept;
}

std::vector<std::uint64_t> delivered_seqs(const ChannelConfig& c, int n) {
  SimChannel ch(c);
  std::vector<std::uint64_t> out;
  for (int k = 0; k < n + c.delay_ticks + c.jitter_ticks + 1; ++k) {
    if (k < n) ch.send(numbered(static_cast<std::uint64_t>(k + 1), k), k);
    for (const Packet& p : ch.poll(k)) out.push_back(p.seq);
  }
  return out;
}

TEST(SimChannel, DropRateMatchesProbabilityAndSeed) {
  ChannelConfig c;
  c.drop_probability = 0.2;
  c.seed = 2024;
  const auto a = delivered_seqs(c, 10000);
  EXPECT_NEAR(static_cast<double>(a.size()), 8000.0, 160.0);
  EXPECT_EQ(a.size(), expected_survivors(c.seed, 0.2, 10000));
  EXPECT_EQ(a, delivered_seqs(c, 10000));
  c.seed = 2025;
  EXPECT_NE(a, delivered_seqs(c, 10000));
}

TEST(SimChannel, JitterNeverDeliversStalePackets) {
  ChannelConfig c;
  c.delay_ticks = 3;
  c.jitter_ticks = 6;
  c.drop_probability = 0.1;
  c.seed = 11;
  SimChannel ch(c);
  std::uint64_t newest = 0;
  std::size_t delivered = 0;
  for (std::int64_t k = 0; k < 5000; ++k) {
    ch.send(numbered(static_cast<std::uint64_t>(k + 1), k), k);
    for (const Packet& p : ch.poll(k)) {
      EXPECT_GT(p.seq, newest);
      const auto age = k - static_cast<std::int64_t>(p.send_tick);
      EXPECT_GE(age, 3);
      EXPECT_LE(age, 9);
      newest = p.seq;
      ++delivered;
    }
  }
  // Reordering discards some packets on top of the drops.
  EXPECT_LT(delivered, 4500u);
  EXPECT_GT(delivered, 1000u);
}

TEST(SimChannel, BurstIsDeliveredOldestFirst) {
  ChannelConfig c;
  c.delay_ticks = 4;
  SimChannel ch(c);
  for (std::int64_t k = 0; k < 4; ++k) ch.send(numbered(static_cast<std::uint64_t>(k + 1), k), k);
  const auto got = ch.poll(100);
  ASSERT_EQ(got.size(), 4u);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].seq, i + 1);
}

TEST(SimChannel, RejectsInvalidConfig) {
  ChannelConfig c;
  c.drop_probability = 1.0;
  EXPECT_THROW(SimChannel{c}, Error);
  c = {};
  c.delay_ticks = -1;
  EXPECT_THROW(SimChannel{c}, Error);
  c = {};
  c.rate = 0.0;
  EXPECT_THROW(SimChannel{c}, Error);
}

TEST(SimChannel, DirectionsDrawIndependentStreams) {
  ChannelConfig c;
  c.drop_probability = 0.5;
  c.seed = 9;
  auto a = make_channel(c, Direction::kMasterToSecond);
  auto b = make_channel(c, Direction::kSecondToMaster);
  std::vector<std::uint64_t> sa;
  std::vector<std::uint64_t> sb;
  for (std::int64_t k = 0; k < 200; ++k) {
    a->send(numbered(static_cast<std::uint64_t>(k + 1), k), k);
    b->send(numbered(static_cast<std::uint64_t>(k + 1), k), k);
    for (const Packet& p : a->poll(k)) sa.push_back(p.seq);
    for (const Packet& p : b->poll(k)) sb.push_back(p.seq);
  }
  EXPECT_NE(sa, sb);
}

// ---------------------------------------------------------------------------
// UDP transport

std::uint16_t free_udp_port() {
  detail::Socket s;
  sockaddr_in a = detail::make_address("127.0.0.1", 0);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&a), sizeof a) != 0) return 0;
  socklen_t len = sizeof a;
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&a), &len);
  return ntohs(a.sin_port);
}

std::vector<Packet> poll_for(PacketChannel& ch, std::size_t want) {
  std::vector<Packet> got;
  for (int i = 0; i < 200 && got.size() < want; ++i) {
    for (const Packet& p : ch.poll(0)) got.push_back(p);
    if (got.size() < want) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return got;
}

TEST(Udp, LoopbackRoundTrip) {
  const std::uint16_t port = free_udp_port();
  ASSERT_NE(port, 0);
  UdpChannel ch("127.0.0.1", port, Direction::kMasterToSecond);
  const Packet p{Direction::kMasterToSecond, 7, 70, {0.3, 0.1}};
  ch.send(p, 0);
  const auto got = poll_for(ch, 1);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0], p);
}

TEST(Udp, ReceiverDropsStaleAndForeignPackets) {
  const std::uint16_t port = free_udp_port();
  ASSERT_NE(port, 0);
  UdpChannel ch("127.0.0.1", port, Direction::kMasterToSecond);
  UdpSender raw("127.0.0.1", port);
  raw.send({Direction::kMasterToSecond, 5, 5, {0.5, 0.0}});
  ASSERT_EQ(poll_for(ch, 1).size(), 1u);
  raw.send({Direction::kMasterToSecond, 4, 4, {0.4, 0.0}});
  raw.send({Direction::kSecondToMaster, 9, 9, {0.9, 0.0}});
  raw.send({Direction::kMasterToSecond, 6, 6, {0.6, 0.0}});
  const auto got = poll_for(ch, 1);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].seq, 6u);
}

TEST(Udp, BindConflictIsTransportDown) {
  const std::uint16_t port = free_udp_port();
  ASSERT_NE(port, 0);
  UdpReceiver first("127.0.0.1", port, Direction::kMasterToSecond);
  try {
    UdpReceiver second("127.0.0.1", port, Direction::kMasterToSecond);
    FAIL() << "expected TransportDown";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTransportDown);
  }
}

TEST(Udp, MakeChannelUsesOnePortPerDirection) {
  const std::uint16_t port = free_udp_port();
  ASSERT_NE(port, 0);
  ChannelConfig c;
  c.transport = Transport::kUdp;
  c.port = port;
  auto a = make_channel(c, Direction::kMasterToSecond);
  UdpSender to_reverse("127.0.0.1", static_cast<std::uint16_t>(port + 1));
  auto b = make_channel(c, Direction::kSecondToMaster);
  to_reverse.send({Direction::kSecondToMaster, 1, 1, {0.1, 0.2}});
  EXPECT_EQ(poll_for(*b, 1).size(), 1u);
  EXPECT_TRUE(a->poll(0).empty());
}

TEST(Udp, BadHostIsConfigInvalid) {
  try {
    UdpSender s("not-an-address", 47000);
    FAIL() << "expected ConfigInvalid";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigInvalid);
  }
}

// ---------------------------------------------------------------------------
// Force feedback and mapping

TEST(Feedback, CoincidentEndEffectorsRenderNothing) {
  const RenderedFeedback r = render_force_feedback({}, {0.3, 0.1}, {0.3, 0.1}, Mat2::Identity());
  EXPECT_EQ(r.force, Vec2::Zero());
  EXPECT_EQ(r.torque, Vec2::Zero());
}

TEST(Feedback, SpringLawAndClip) {
  FeedbackConfig fb;
  fb.K_ff = 100.0 * Mat2::Identity();
  const Vec2 x_M(0.3, 0.1);
  RenderedFeedback r = render_force_feedback(fb, x_M + Vec2(0.01, 0.0), x_M, Mat2::Identity());
  EXPECT_NEAR(r.force.x(), 1.0, 1e-12);
  EXPECT_EQ(r.force.y(), 0.0);
  r = render_force_feedback(fb, x_M + Vec2(0.5, -0.05), x_M, Mat2::Identity());
  EXPECT_NEAR(r.spring.x(), 50.0, 1e-12);
  EXPECT_EQ(r.force.x(), 10.0);
  EXPECT_NEAR(r.force.y(), -5.0, 1e-12);
}

TEST(Feedback, TorqueIsJacobianTransposeForce) {
  std::mt19937_64 rng(5);
  const RobotModel m = master_black();
  for (int i = 0; i < 200; ++i) {
    const Vec2 q = testutil::random_q(m, rng);
    const Mat2 J = jacobian(m, q);
    const Vec2 x_M = forward_kinematics(m, q);
    const RenderedFeedback r = render_force_feedback({}, x_M + random_vec(rng, 0.05), x_M, J);
    EXPECT_LT((r.torque - J.transpose() * r.force).norm(), 1e-15);
    EXPECT_LE(r.force.cwiseAbs().maxCoeff(), 10.0);
  }
}

TEST(Feedback, RejectsIndefiniteStiffness) {
  FeedbackConfig fb;
  fb.K_ff << 100.0, 0.0, 0.0, -1.0;
  EXPECT_THROW(validate(fb), Error);
  fb.K_ff << 100.0, 5.0, 0.0, 100.0;
  EXPECT_THROW(validate(fb), Error);
  fb = {};
  fb.force_clip = 0.0;
  EXPECT_THROW(validate(fb), Error);
}

TEST(Mapping, OffsetExamplesAndRoundTrip) {
  const Vec2 off(0.1, 0.0);
  EXPECT_EQ(map_master_to_second(off, {0.3, 0.2}), Vec2(0.4, 0.2));
  EXPECT_EQ(map_second_to_master(off, {0.4, 0.2}), Vec2(0.30000000000000004, 0.2));
  std::mt19937_64 rng(8);
  for (int i = 0; i < 1000; ++i) {
    const Vec2 o = random_vec(rng, 0.2);
    const Vec2 x = random_vec(rng, 0.6);
    EXPECT_LT((map_second_to_master(o, map_master_to_second(o, x)) - x).norm(), 1e-15);
  }
}

// ---------------------------------------------------------------------------
// Session

SessionConfig bilateral(const ExperimentConfig& cfg) {
  const Vec2 c = default_center(cfg);
  TrajectorySpec t = cfg.trajectory;
  t.center = c;
  SessionConfig s = detail::session_config(cfg, sample(t, 0.0).x);
  s.trajectory = t;
  return s;
}

std::vector<TelemetryFrame> run(Session& s, std::int64_t n) {
  std::vector<TelemetryFrame> out;
  for (std::int64_t k = 0; k < n; ++k) out.push_back(s.step());
  return out;
}

TEST(Session, TicksMustBeConsecutive) {
  Session s(bilateral(preset(ExperimentId::kExp2)));
  s.step(0);
  s.step(1);
  for (std::int64_t bad : {1, 3, 0, -1}) {
    try {
      s.step(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kNonMonotonicTick);
    }
  }
  EXPECT_EQ(s.step(2).tick, 2);
}

TEST(Session, HoldingRobotsStayAtAFixedPoint) {
  SessionConfig c = bilateral(preset(ExperimentId::kExp2));
  c.trajectory.reset();
  Session s(c);
  const auto frames = run(s, 2000);
  // Inverse kinematics places each start to rounding, so rest is exact up to ulps.
  for (const auto& f : frames) {
    ASSERT_LT((f.master.state.q - c.master.initial.q).norm(), 1e-12) << f.tick;
    ASSERT_LT((f.second.state.q - c.second.initial.q).norm(), 1e-12) << f.tick;
    ASSERT_LT(f.master.state.qdot.norm(), 1e-12) << f.tick;
    ASSERT_LT(f.second.state.qdot.norm(), 1e-12) << f.tick;
    ASSERT_LT(f.master.tau.norm() + f.second.tau.norm(), 1e-9) << f.tick;
  }
}

TEST(Session, SecondFollowsNewestDeliveredPacket) {
  ExperimentConfig cfg = preset(ExperimentId::kExp2);
  cfg.channel.delay_ticks = 4;
  cfg.channel.jitter_ticks = 8;
  cfg.channel.drop_probability = 0.3;
  cfg.seed = 77;
  cfg.reference_cutoff_hz = 0.0;  // position passes straight through
  SessionConfig sc = bilateral(cfg);
  Session s(sc);

  // Independent replica of the forward channel.
  ChannelConfig rc = sc.channel;
  rc.seed = sc.channel.seed ^ 0x9E3779B97F4A7C15ULL;
  SimChannel replica(rc);
  std::vector<Vec2> sent;
  std::optional<Vec2> newest;
  std::size_t checked = 0;
  for (std::int64_t k = 0; k < 3000; ++k) {
    const TelemetryFrame f = s.step(k);
    replica.send({Direction::kMasterToSecond, static_cast<std::uint64_t>(k + 1), static_cast<std::uint64_t>(k),
                  f.master.x},
                 k);
    for (const Packet& p : replica.poll(k)) newest = p.x;
    if (!newest) continue;
    ASSERT_EQ(f.second.x_d, map_master_to_second(sc.offset, *newest)) << k;
    ++checked;
  }
  EXPECT_GT(checked, 2900u);
}

TEST(Session, ChannelDelayTimeShiftsTheSecondTrace) {
  ExperimentConfig cfg = preset(ExperimentId::kExp2);
  cfg.trajectory.time_scale = 0.25;
  Session ideal(bilateral(cfg));
  cfg.channel.delay_ticks = 20;
  Session delayed(bilateral(cfg));
  const auto a = run(ideal, 25000);
  const auto b = run(delayed, 25000);
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 5000; k + 20 < a.size(); ++k) {
    ASSERT_EQ(a[k].master.x, b[k].master.x);
    sq += (b[k + 20].second.x - a[k].second.x).squaredNorm();
    ++n;
  }
  EXPECT_LT(std::sqrt(sq / static_cast<double>(n)), 0.5e-3);
}

TEST(Session, FeedbackToggleLeavesTrackingRunsUnchanged) {
  SessionConfig c = bilateral(preset(ExperimentId::kExp2));
  Session off(c);
  c.master.controller.mode.feedback_enabled = true;
  Session on(c);
  for (std::int64_t k = 0; k < 3000; ++k) {
    const TelemetryFrame a = off.step(k);
    const TelemetryFrame b = on.step(k);
    ASSERT_EQ(a.second.state.q, b.second.state.q) << k;
    ASSERT_EQ(a.second.state.qdot, b.second.state.qdot) << k;
    ASSERT_EQ(a.master.state.q, b.master.state.q) << k;
    ASSERT_EQ(a.f_ff, b.f_ff) << k;
  }
}

TEST(Session, RenderingNeverTouchesTheSecondRobot) {
  // With feedback rendered on the master, the second robot's update still only
  // reads received master packets: its trace depends on the master trace alone.
  ExperimentConfig cfg = preset(ExperimentId::kExp4);
  cfg.scenario = Scenario::kNone;
  HandPath path = cfg.hand_path;
  path.center = default_center(cfg);
  const SessionConfig rc = detail::session_config(cfg, path.target(0.0));
  ASSERT_TRUE(rc.master.controller.mode.feedback_enabled);
  Session reference(rc);
  std::vector<TelemetryFrame> frames;
  for (std::int64_t k = 0; k < 2000; ++k) {
    reference.set_hand_target(path.target(reference.time()));
    frames.push_back(reference.step(k));
  }
  RobotSetup second = rc.second;
  Plant plant(second.plant, second.initial);
  RobotController ctrl(Role::kSecond, second.controller);
  ctrl.reset_observer(second.initial.qdot);
  ReferenceDifferentiator diff(plant.config().integrator.dt, rc.reference_cutoff_hz);
  for (const auto& f : frames) {
    const CartesianState ref = diff.update(map_master_to_second(rc.offset, f.master.x));
    const JointState s = plant.state();
    const Vec2 tau = ctrl.command(s, ref, Vec2::Zero());
    ctrl.observe(s, tau, plant.config().integrator.dt);
    plant.advance(tau, std::nullopt);
    ASSERT_EQ(plant.state().q, f.second.state.q) << f.tick;
  }
}

TEST(Session, FreeMotionFeedbackIsBoundedByTrackingError) {
  ExperimentConfig cfg = preset(ExperimentId::kExp2);
  SessionConfig c = bilateral(cfg);
  c.master.controller.mode.feedback_enabled = true;
  Session s(c);
  const auto frames = run(s, 10000);
  double peak_force = 0.0;
  double peak_gap = 0.0;
  double sum_force = 0.0;
  for (std::size_t k = 5000; k < frames.size(); ++k) {
    const auto& f = frames[k];
    peak_force = std::max(peak_force, f.f_ff.norm());
    sum_force += f.f_ff.norm();
    peak_gap = std::max(peak_gap, (map_second_to_master(c.offset, f.second.x) - f.master.x).norm());
  }
  const double k_max = 150.0;
  EXPECT_GT(sum_force, 0.0);
  EXPECT_LE(peak_force, k_max * peak_gap + 1e-12);
  // A 4.6 mm steady gap at most, hence under 1 N in free motion.
  EXPECT_LT(peak_force, 1.0);
}

TEST(Session, ErrorsNameTheFailingRobotAndTick) {
  SessionConfig c = bilateral(preset(ExperimentId::kExp2));
  Session s(c);
  run(s, 10);
  s.second_plant().mutable_config().true_model.alpha[3] = std::numeric_limits<double>::quiet_NaN();
  try {
    s.step();
    FAIL() << "expected a divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.robot(), "second");
    ASSERT_TRUE(e.tick());
    EXPECT_EQ(*e.tick(), 10);
  }
}

TEST(Session, SendStrideFollowsChannelRate) {
  SessionConfig c = bilateral(preset(ExperimentId::kExp2));
  c.channel.rate = 250.0;
  c.reference_cutoff_hz = 0.0;
  Session s(c);
  EXPECT_EQ(s.send_stride(), 4);
  std::vector<TelemetryFrame> frames;
  for (std::int64_t k = 0; k < 40; ++k) {
    frames.push_back(s.step(k));
    // The newest sample the second robot holds is from the last multiple of four.
    const auto sent = static_cast<std::size_t>(k - k % 4);
    EXPECT_EQ(frames.back().second.x_d, map_master_to_second(c.offset, frames[sent].master.x)) << k;
  }
}

TEST(Session, RecordingSamplesTheMasterAtTheRequestedRate) {
  SessionConfig c = bilateral(preset(ExperimentId::kExp2));
  Session s(c);
  s.start_recording(500.0, {{"robot", "master-black"}});
  const auto frames = run(s, 1000);
  ASSERT_TRUE(s.recording());
  const RecordedDemo d = s.stop_recording();
  EXPECT_FALSE(s.recording());
  EXPECT_EQ(d.sample_rate, 500.0);
  EXPECT_EQ(d.control_rate, 1000.0);
  ASSERT_EQ(d.samples.size(), 500u);
  EXPECT_EQ(d.samples[1].x, frames[2].master.x);
  EXPECT_EQ(d.metadata.at("robot"), "master-black");
}

TEST(Session, HandForceFollowsTheHandModel) {
  ExperimentConfig cfg = preset(ExperimentId::kExp3);
  HandPath path = cfg.hand_path;
  path.center = default_center(cfg);
  Session s(detail::session_config(cfg, path.target(0.0)));
  s.set_hand_target(s.master_plant().ee_position());
  EXPECT_EQ(s.step().hand_force, Vec2::Zero());
  const Vec2 target = s.master_plant().ee_position() + Vec2(0.02, 0.0);
  s.set_hand_target(target);
  const Vec2 x = s.master_plant().ee_position();
  const Vec2 v = s.master_plant().ee_velocity();
  const TelemetryFrame f = s.step();
  EXPECT_LT((f.hand_force - (150.0 * (target - x) - 10.0 * v)).norm(), 1e-12);
  s.set_hand_target(std::nullopt);
  EXPECT_EQ(s.step().hand_force, Vec2::Zero());
}

}  // namespace
}  // namespace telerehab
