// droidcrew — multi-agent mobile-device automation runtime.
//
// Subcommands: explore, run, eval, mine, replay.
// Exit codes: 0 success, 2 config error, 3 plan failure, 4 device error.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "droidcrew/droidcrew.hpp"
#include "droidcrew/http_transport.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPlan = 3;
constexpr int kExitDevice = 4;

int exit_code_for(const droidcrew::Error& e) {
  switch (e.code()) {
    case droidcrew::Err::ConfigError:
    case droidcrew::Err::ParseError:
      return kExitConfig;
    case droidcrew::Err::CyclicPlan:
    case droidcrew::Err::UnassignedNode:
    case droidcrew::Err::EmptyDecomposition:
    case droidcrew::Err::EmptyRequirement:
      return kExitPlan;
    case droidcrew::Err::DeviceUnreachable:
    case droidcrew::Err::CaptureTimeout:
      return kExitDevice;
    default:
      return kExitError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"droidcrew: multi-agent mobile-device automation runtime"};
  app.require_subcommand(1);

  std::string config_path;
  std::string gateway_override;
  std::string device_override;
  bool deterministic = false;
  int jobs = 0;
  app.add_option("--config", config_path, "config file (json)");
  app.add_option("--gateway", gateway_override, "scripted:<script.json> | live");
  app.add_option("--device", device_override, "sim:<scenario.json> | adb:<serial>");
  app.add_flag("--deterministic", deterministic, "logical clock, fixed ids, jobs=1");
  app.add_option("--jobs", jobs, "device leases to run in parallel");

  std::string requirement, instruction, bundle, trajectory, replay_dir;
  std::string format = "table";

  CLI::App* c_explore = app.add_subcommand("explore", "explore a requirement, mine tools");
  c_explore->add_option("requirement", requirement)->required();

  CLI::App* c_run = app.add_subcommand("run", "run an instruction end to end");
  c_run->add_option("instruction", instruction)->required();

  CLI::App* c_eval = app.add_subcommand("eval", "run a task bundle and report metrics");
  c_eval->add_option("bundle", bundle)->required();
  c_eval->add_option("--format", format, "table | csv");

  CLI::App* c_mine = app.add_subcommand("mine", "mine a recorded trajectory into tools");
  c_mine->add_option("trajectory", trajectory)->required();

  CLI::App* c_replay = app.add_subcommand("replay", "render a run directory timeline");
  c_replay->add_option("run_dir", replay_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_replay->parsed()) {
      for (const auto& line : droidcrew::cmd_replay(replay_dir)) std::cout << line << "\n";
      return kExitOk;
    }

    droidcrew::RunConfig cfg;
    if (!config_path.empty()) cfg = droidcrew::load_config(config_path);
    if (!gateway_override.empty()) cfg.gateway_spec = gateway_override;
    if (!device_override.empty()) cfg.device_spec = device_override;
    if (deterministic) cfg.deterministic = true;
    if (jobs > 0) cfg.jobs = jobs;

    droidcrew::GatewayHandle gateway;
    if (cfg.gateway_spec == "live")
      gateway = std::make_shared<droidcrew::LiveGateway>(droidcrew::LiveGateway::Options{},
                                                         droidcrew::httplib_transport());
    droidcrew::Runtime rt(cfg, gateway);

    if (c_explore->parsed()) {
      auto s = droidcrew::cmd_explore(rt, requirement);
      std::cout << "explored " << s.explorations << " subtasks; mined " << s.tools_mined
                << " tools; " << s.icon_records << " icon records; " << s.insight_records
                << " insights" << (s.budget_exhausted ? " (budget exhausted)" : "") << "\n"
                << "run dir: " << s.run_dir.string() << "\n";
      return kExitOk;
    }
    if (c_run->parsed()) {
      auto s = droidcrew::cmd_run(rt, instruction);
      std::cout << (s.success ? "success" : "failed") << ": " << s.commits << " commits, "
                << s.gateway_calls << " gateway calls, " << s.device_steps << " device steps\n"
                << "run dir: " << s.run_dir.string() << "\n";
      return s.success ? kExitOk : kExitPlan;
    }
    if (c_eval->parsed()) {
      auto s = droidcrew::cmd_eval(rt, bundle, format);
      std::cout << (format == "csv" ? s.report.render_csv() : s.report.render_table());
      std::cout << "tasks run: " << s.tasks_run << ", skipped: " << s.tasks_skipped << "\n";
      return kExitOk;
    }
    if (c_mine->parsed()) {
      for (const auto& p : droidcrew::cmd_mine(rt, trajectory))
        std::cout << "tool written: " << p.string() << "\n";
      return kExitOk;
    }
  } catch (const droidcrew::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
