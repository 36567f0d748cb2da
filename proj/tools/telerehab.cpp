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

// Command-line front end.
//
//   telerehab run --exp exp2 --traj rose --duration 30 --out DIR --seed N
//                 [--no-ndob] [--channel-delay-ms D] [--config FILE]
//   telerehab replay --demo FILE [--out DIR]
//   telerehab list-presets
//   telerehab serve [--port 8765] [--config FILE]
//
// Exit codes: 0 success, 2 configuration error, 3 simulation error.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "telerehab/gateway_ws.hpp"
#include "telerehab/telerehab.hpp"

namespace {

using namespace telerehab;

constexpr int kExitConfig = 2;
constexpr int kExitSimulation = 3;

volatile std::sig_atomic_t g_stop = 0;

struct RunOptions {
  std::string exp;
  std::string traj;
  std::string config;
  std::string out;
  std::string scenario;
  std::string demo;
  std::optional<double> duration;
  std::optional<std::uint64_t> seed;
  std::optional<int> delay_ms;
  std::optional<double> replay_cutoff;
  std::optional<double> time_scale;
  bool no_ndob = false;
};

/// Preset, then config file, then command-line flags.
ExperimentConfig build_config(const RunOptions& o) {
  // Precedence: preset < config file < flags. --exp outranks the file's "experiment".
  Json file = o.config.empty() ? Json::object() : read_config_json(o.config);
  ExperimentId id = ExperimentId::kExp2;
  if (!o.exp.empty()) {
    id = experiment_from_string(o.exp);
    file.erase("experiment");
  }
  ExperimentConfig cfg = preset(id);
  apply_json(cfg, file);
  Json overrides = Json::object();
  if (!o.scenario.empty()) overrides["scenario"] = o.scenario;
  if (!o.traj.empty()) overrides["trajectory"] = {{"kind", o.traj}};
  apply_json(cfg, overrides);
  if (o.time_scale) cfg.trajectory.time_scale = *o.time_scale;
  if (o.duration) cfg.duration = *o.duration;
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.demo.empty()) cfg.demo_path = o.demo;
  if (o.replay_cutoff) cfg.replay_cutoff_hz = *o.replay_cutoff;
  if (o.delay_ms) {
    cfg.channel.delay_ticks =
        static_cast<int>(std::lround(*o.delay_ms * 1e-3 / cfg.master.plant.integrator.dt));
  }
  if (o.no_ndob) {
    cfg.master.controller.mode.ndob_enabled = false;
    cfg.second.controller.mode.ndob_enabled = false;
  }
  return cfg;
}

void print_summary(const ExperimentConfig& cfg, const RunResult& r) {
  Json j = {{"experiment", std::string(to_string(cfg.id))},
            {"seed", cfg.seed},
            {"warmup_s", r.warmup},
            {"metrics", to_json(r.metrics)}};
  if (!cfg.output_dir.empty()) j["output"] = cfg.output_dir;
  std::cout << j.dump(2) << '\n';
}

int run(const RunOptions& o) {
  const ExperimentConfig cfg = build_config(o);
  const RunResult r = run_experiment(cfg);
  print_summary(cfg, r);
  return 0;
}

int serve(const std::string& config, const std::string& exp, const ServerOptions& opt, bool autostart) {
  Json file = config.empty() ? Json::object() : read_config_json(config);
  ExperimentId id = ExperimentId::kExp2;
  if (!exp.empty()) {
    id = experiment_from_string(exp);
    file.erase("experiment");
  }
  ExperimentConfig base = preset(id);
  apply_json(base, file);
  Gateway gateway;
  GatewaySession& session = gateway.create(opt.default_session, base);
  if (autostart) {
    const Ack a = session.apply({"start", Json::object()});
    if (!a.ok) throw Error(*a.error, a.reason);
  }
  RealtimeDriver driver(session);
  GatewayServer server(gateway, opt);
  driver.start();
  server.start();
  std::fprintf(stderr, "telerehab %s: listening on http://%s:%u (WebSocket /session, /healthz)\n", kVersion.data(),
               opt.address.c_str(), static_cast<unsigned>(server.port()));
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  driver.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilateral teleoperation simulator for robot-assisted rehabilitation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  RunOptions ro;
  auto* run_cmd = app.add_subcommand("run", "run an experiment preset and write telemetry");
  run_cmd->add_option("--exp", ro.exp, "preset: exp1..exp5 or custom")->check(
      CLI::IsMember({"exp1", "exp2", "exp3", "exp4", "exp5", "custom"}));
  run_cmd->add_option("--traj", ro.traj, "circle | figure8 | tetragon | pentagram | rose");
  run_cmd->add_option("--duration", ro.duration, "simulated seconds");
  run_cmd->add_option("--out", ro.out, "output directory");
  run_cmd->add_option("--seed", ro.seed, "random seed");
  run_cmd->add_flag("--no-ndob", ro.no_ndob, "disable both observers");
  run_cmd->add_option("--channel-delay-ms", ro.delay_ms, "one-way link delay");
  run_cmd->add_option("--config", ro.config, "JSON config file");
  run_cmd->add_option("--scenario", ro.scenario, "exp4 scenario: wall | payload");
  run_cmd->add_option("--demo", ro.demo, "demonstration CSV to replay (exp5)");
  run_cmd->add_option("--replay-cutoff", ro.replay_cutoff, "replay differentiator cutoff in Hz (0 = raw)");
  run_cmd->add_option("--time-scale", ro.time_scale, "trajectory speed factor");

  RunOptions rp;
  rp.exp = "exp5";
  auto* replay_cmd = app.add_subcommand("replay", "replay a recorded demonstration on the master");
  replay_cmd->add_option("--demo", rp.demo, "demonstration CSV")->required();
  replay_cmd->add_option("--out", rp.out, "output directory");
  replay_cmd->add_option("--seed", rp.seed, "random seed");
  replay_cmd->add_option("--replay-cutoff", rp.replay_cutoff, "differentiator cutoff in Hz (0 = raw)");
  replay_cmd->add_option("--config", rp.config, "JSON config file");

  auto* list_cmd = app.add_subcommand("list-presets", "list experiment presets");

  ServerOptions so;
  std::string serve_config;
  std::string serve_exp;
  bool autostart = false;
  auto* serve_cmd = app.add_subcommand("serve", "run the operator gateway (WebSocket /session, /healthz)");
  serve_cmd->add_option("--address", so.address, "listen address");
  serve_cmd->add_option("--port", so.port, "listen port");
  serve_cmd->add_option("--decimation", so.default_decimation, "telemetry decimation")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--config", serve_config, "JSON config file for the session");
  serve_cmd->add_option("--exp", serve_exp, "base preset for the session");
  serve_cmd->add_flag("--autostart", autostart, "start the session immediately");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (run_cmd->parsed()) return run(ro);
    if (replay_cmd->parsed()) return run(rp);
    if (list_cmd->parsed()) {
      for (const auto& p : list_presets()) std::cout << p.name << "  " << p.description << '\n';
      return 0;
    }
    if (serve_cmd->parsed()) return serve(serve_config, serve_exp, so, autostart);
  } catch (const Error& e) {
    std::cerr << "telerehab: " << e.what() << '\n';
    return e.code() == ErrorCode::kConfigInvalid ? kExitConfig : kExitSimulation;
  } catch (const std::exception& e) {
    std::cerr << "telerehab: " << e.what() << '\n';
    return kExitSimulation;
  }
  return 0;
}
