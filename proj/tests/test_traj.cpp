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

#include <cmath>
#include <random>
#include <sstream>

#include "test_support.hpp"

namespace telerehab {
namespace {

using testutil::random_vec;

TEST(Trajectory, CircleStartsAtTopMovingRight) {
  const CartesianState c = sample(TrajectorySpec::preset(TrajectoryKind::kCircle), 0.0);
  EXPECT_NEAR(c.x.x(), 0.0, 1e-15);
  EXPECT_NEAR(c.x.y(), 0.08, 1e-15);
  EXPECT_NEAR(c.xdot.x(), 0.08 * 2.0 * kPi / 5.0, 1e-15);
  EXPECT_NEAR(c.xdot.y(), 0.0, 1e-15);
}

TEST(Trajectory, FigureEightCrossesCentre) {
  const Vec2 center(0.3, 0.1);
  const CartesianState c = sample(TrajectorySpec::preset(TrajectoryKind::kFigure8, center), 0.0);
  EXPECT_LT((c.x - center).norm(), 1e-15);
}

TEST(Trajectory, PresetParameters) {
  const auto p = TrajectorySpec::preset(TrajectoryKind::kPentagram);
  EXPECT_EQ(p.R, 0.08);
  EXPECT_EQ(p.r, 0.048);
  EXPECT_EQ(p.d, 0.064);
  EXPECT_EQ(p.n, 3.0);
  EXPECT_EQ(TrajectorySpec::preset(TrajectoryKind::kRose).k, 4.0);
  EXPECT_EQ(TrajectorySpec::preset(TrajectoryKind::kFigure8).R, 0.1);
  EXPECT_EQ(TrajectorySpec::preset(TrajectoryKind::kTetragon).R, 0.1);
}

// Derivative errors are normalized by the pattern's own scale so that
// instants of near-zero velocity do not blow up the ratio.
TEST(Trajectory, AnalyticDerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ut(0.0, 30.0);
  const double h = 1e-6;
  for (TrajectoryKind kind : kPatternKinds) {
    for (double scale : {1.0, 0.6}) {
      TrajectorySpec s = TrajectorySpec::preset(kind, {0.3, -0.1});
      s.time_scale = scale;
      double vmax = 0.0, amax = 0.0;
      for (int i = 0; i < 2000; ++i) {
        const CartesianState c = sample(s, 0.01 * i);
        vmax = std::max(vmax, c.xdot.norm());
        amax = std::max(amax, c.xddot.norm());
      }
      for (int i = 0; i < 200; ++i) {
        const double t = ut(rng);
        const CartesianState c = sample(s, t);
        const CartesianState lo = sample(s, t - h);
        const CartesianState hi = sample(s, t + h);
        EXPECT_LT(((hi.x - lo.x) / (2 * h) - c.xdot).norm() / vmax, 1e-6) << to_string(kind);
        EXPECT_LT(((hi.xdot - lo.xdot) / (2 * h) - c.xddot).norm() / amax, 1e-5) << to_string(kind);
      }
    }
  }
}

TEST(Trajectory, Periodicity) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ut(0.0, 20.0);
  for (TrajectoryKind kind : kPatternKinds) {
    const TrajectorySpec s = TrajectorySpec::preset(kind);
    const double T = period(s);
    for (int i = 0; i < 100; ++i) {
      const double t = ut(rng);
      EXPECT_LT((sample(s, t).x - sample(s, t + T).x).norm(), 1e-12) << to_string(kind);
    }
  }
  EXPECT_DOUBLE_EQ(period(TrajectorySpec::preset(TrajectoryKind::kCircle)), 5.0);
  EXPECT_DOUBLE_EQ(period(TrajectorySpec::preset(TrajectoryKind::kRose)), 2.0 * kPi);
}

TEST(Trajectory, StaysInsideItsRadiusBound) {
  const Vec2 center(0.25, 0.05);
  for (TrajectoryKind kind : kPatternKinds) {
    const TrajectorySpec s = TrajectorySpec::preset(kind, center);
    const double bound = std::max(s.R, s.R - s.r + s.d);
    EXPECT_LE(radius_bound(s), bound + 1e-15);
    for (int i = 0; i < 20000; ++i) {
      const Vec2 x = sample(s, 1e-3 * i).x;
      EXPECT_LE((x - center).norm(), radius_bound(s) + 1e-12) << to_string(kind);
      EXPECT_LE(x.norm(), bound + center.norm() + 1e-12);
    }
  }
}

TEST(Trajectory, KindNamesRoundTrip) {
  for (TrajectoryKind kind : {TrajectoryKind::kCircle, TrajectoryKind::kFigure8, TrajectoryKind::kTetragon,
                              TrajectoryKind::kPentagram, TrajectoryKind::kRose, TrajectoryKind::kReplay}) {
    EXPECT_EQ(trajectory_kind_from_string(to_string(kind)), kind);
  }
  EXPECT_THROW(trajectory_kind_from_string("spiral"), Error);
}

TEST(Trajectory, ValidationRejectsBadParameters) {
  TrajectorySpec s = TrajectorySpec::preset(TrajectoryKind::kCircle);
  s.R = 0.0;
  EXPECT_THROW(validate(s), Error);
  s = TrajectorySpec::preset(TrajectoryKind::kFigure8);
  s.t1 = -1.0;
  EXPECT_THROW(validate(s), Error);
  s = TrajectorySpec::preset(TrajectoryKind::kRose);
  s.time_scale = 0.0;
  EXPECT_THROW(validate(s), Error);
  s.kind = TrajectoryKind::kReplay;
  EXPECT_THROW(validate(s), Error);
}

TEST(RecordedDemo, AppendAndDecimate) {
  RecordedDemo d = record_append(RecordedDemo{}, 0, {1.0, 2.0});
  EXPECT_EQ(d.samples.size(), 1u);

  RecordedDemo half;
  half.sample_rate = 500.0;
  half.control_rate = 1000.0;
  for (int k = 10; k < 20; ++k) half.append(k, {0.001 * k, 0.0});
  ASSERT_EQ(half.samples.size(), 5u);
  for (std::size_t i = 0; i < half.samples.size(); ++i) EXPECT_EQ(half.samples[i].tick, 10 + 2 * static_cast<int>(i));
}

TEST(RecordedDemo, NonMonotonicTickIsRejected) {
  RecordedDemo d;
  d.append(5, Vec2::Zero());
  for (std::int64_t bad : {5, 4}) {
    try {
      d.append(bad, Vec2::Zero());
      FAIL() << "expected NonMonotonicTick";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kNonMonotonicTick);
    }
  }
}

RecordedDemo record(const TrajectorySpec& s, double sample_rate, double duration) {
  RecordedDemo d;
  d.sample_rate = sample_rate;
  d.control_rate = 1000.0;
  for (int k = 0; k <= static_cast<int>(duration * 1000.0); ++k) d.append(k, sample(s, k * 1e-3).x);
  return d;
}

TEST(DemoCsv, RoundTripIsExact) {
  RecordedDemo d = record(TrajectorySpec::preset(TrajectoryKind::kRose, {0.3, 0.0}), 500.0, 1.0);
  d.metadata = {{"robot", "master-black"}, {"mode", "phri"}, {"date", "2026-01-01"}};
  std::stringstream ss;
  write_demo_csv(ss, d);
  const std::string text = ss.str();
  EXPECT_NE(text.find("#robot=master-black\n"), std::string::npos);
  EXPECT_NE(text.find("\ntick,x_m,y_m\n"), std::string::npos);
  const RecordedDemo back = read_demo_csv(ss);
  EXPECT_EQ(back.metadata, d.metadata);
  EXPECT_EQ(back.sample_rate, 500.0);
  EXPECT_EQ(back.control_rate, 1000.0);
  ASSERT_EQ(back.samples.size(), d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].tick, d.samples[i].tick);
    EXPECT_EQ(back.samples[i].x, d.samples[i].x);
  }
}

TEST(DemoCsv, MalformedInputIsRejected) {
  std::istringstream no_header("#a=b\n0,1,2\n");
  EXPECT_THROW(read_demo_csv(no_header), Error);
  std::istringstream bad_number("tick,x_m,y_m\n0,abc,2\n");
  EXPECT_THROW(read_demo_csv(bad_number), Error);
  std::istringstream backwards("tick,x_m,y_m\n2,0,0\n1,0,0\n");
  try {
    read_demo_csv(backwards);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonMonotonicTick);
  }
  std::istringstream crlf("#robot=x\r\ntick,x_m,y_m\r\n0,0.5,0.25\r\n");
  const RecordedDemo d = read_demo_csv(crlf);
  ASSERT_EQ(d.samples.size(), 1u);
  EXPECT_EQ(d.samples[0].x, Vec2(0.5, 0.25));
}

TEST(Replay, SampleTicksReturnStoredPositions) {
  const RecordedDemo d = record(TrajectorySpec::preset(TrajectoryKind::kCircle), 500.0, 2.0);
  for (std::size_t i = 0; i < d.samples.size(); i += 37) {
    const double t = static_cast<double>(d.samples[i].tick) * 1e-3;
    EXPECT_EQ(replay_sample(d, t, 50.0).x, d.samples[i].x);
  }
}

TEST(Replay, OutOfRange) {
  const RecordedDemo d = record(TrajectorySpec::preset(TrajectoryKind::kCircle), 1000.0, 1.0);
  EXPECT_THROW(replay_sample(d, -0.01, 0.0), Error);
  try {
    replay_sample(d, 1.5, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOutOfRange);
  }
}

TEST(Replay, CircleRoundTrip) {
  const TrajectorySpec s = TrajectorySpec::preset(TrajectoryKind::kCircle, {0.3, 0.0});
  for (double rate : {1000.0, 500.0}) {
    const auto demo = std::make_shared<const RecordedDemo>(record(s, rate, 5.0));
    const ReplayStream stream(demo, 50.0);
    double sq = 0.0, worst = 0.0;
    int n = 0;
    for (double t = 0.0; t <= 5.0; t += 7e-4, ++n) {
      const double e = (stream.sample(t).x - sample(s, t).x).norm();
      sq += e * e;
      worst = std::max(worst, e);
    }
    EXPECT_LT(std::sqrt(sq / n), 1e-4);
    EXPECT_LT(worst, 1e-6) << rate;  // linear interpolation: R w^2 h^2 / 8
  }
}

TEST(Replay, FilteredVelocityFollowsTheGenerator) {
  const TrajectorySpec s = TrajectorySpec::preset(TrajectoryKind::kCircle, {0.3, 0.0});
  const ReplayStream stream(std::make_shared<const RecordedDemo>(record(s, 1000.0, 5.0)), 50.0);
  for (double t = 0.1; t < 5.0; t += 0.01) {
    // First-order lag of 1/(2 pi 50) s plus half a step of backward differencing.
    EXPECT_LT((stream.sample(t).xdot - sample(s, t).xdot).norm(), 1e-3);
  }
}

TEST(Replay, FilterReducesAccelerationNoise) {
  const TrajectorySpec s = TrajectorySpec::preset(TrajectoryKind::kCircle, {0.3, 0.0});
  std::mt19937_64 rng(3);
  RecordedDemo d;
  d.sample_rate = 500.0;
  for (int k = 0; k <= 5000; ++k) d.append(k, sample(s, k * 1e-3).x + random_vec(rng, 5e-5));
  const auto demo = std::make_shared<const RecordedDemo>(d);
  auto variance = [&](double cutoff) {
    const ReplayStream stream(demo, cutoff);
    Vec2 sum = Vec2::Zero(), sum2 = Vec2::Zero();
    int n = 0;
    for (int k = 100; k <= 5000; ++k, ++n) {
      const Vec2 a = stream.sample(k * 1e-3).xddot;
      sum += a;
      sum2 += a.cwiseProduct(a);
    }
    const Vec2 mean = sum / n;
    return (sum2 / n - mean.cwiseProduct(mean)).sum();
  };
  EXPECT_LT(variance(50.0), variance(0.0));
}

TEST(ReferenceDifferentiator, UnfilteredIsRawBackwardDifference) {
  ReferenceDifferentiator diff(1e-3, 0.0);
  const Vec2 a(0.1, 0.2), b(0.1005, 0.1990), c(0.1012, 0.1985);
  diff.update(a);
  diff.update(b);
  const CartesianState s = diff.update(c);
  EXPECT_LT((s.xdot - (c - b) / 1e-3).norm(), 1e-12);
  EXPECT_LT((s.xddot - (c - 2.0 * b + a) / 1e-6).norm(), 1e-6);
}

TEST(ReferenceDifferentiator, FirstSampleStartsAtRest) {
  ReferenceDifferentiator diff(1e-3, 50.0);
  const CartesianState s = diff.update({0.3, 0.1});
  EXPECT_EQ(s.xdot, Vec2::Zero());
  EXPECT_EQ(s.xddot, Vec2::Zero());
}

TEST(ReferenceDifferentiator, RampVelocityConvergesWithFilterTimeConstant) {
  const double dt = 1e-3, fc = 50.0;
  ReferenceDifferentiator diff(dt, fc);
  const Vec2 v(0.05, -0.02);
  CartesianState s;
  for (int k = 0; k <= 200; ++k) s = diff.update(v * (k * dt));
  EXPECT_LT((s.xdot - v).norm(), 1e-12 + v.norm() * std::pow(1.0 - dt / (dt + 1.0 / (2 * kPi * fc)), 200));
}

}  // namespace
}  // namespace telerehab
