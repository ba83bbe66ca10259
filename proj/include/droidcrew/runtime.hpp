#pragma once

#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "droidcrew/adb_device.hpp"
#include "droidcrew/evalkit.hpp"
#include "droidcrew/orchestrator.hpp"
#include "droidcrew/sim_device.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string gateway_spec = "scripted:";   // scripted:<path> | live
  std::string device_spec;                  // sim:<scenario path> | adb:<serial>
  std::filesystem::path expert_pool_path;
  std::filesystem::path registry_dir = "registry";
  std::filesystem::path run_dir = "runs";
  Caps caps;
  bool deterministic = false;
  int jobs = 1;
};

// ${VAR} interpolation for secrets inside config values.
inline std::string interpolate_env(const std::string& value) {
  std::string out;
  for (size_t i = 0; i < value.size();) {
    if (value[i] == '$' && i + 1 < value.size() && value[i + 1] == '{') {
      size_t end = value.find('}', i + 2);
      if (end != std::string::npos) {
        std::string name = value.substr(i + 2, end - i - 2);
        if (const char* env = std::getenv(name.c_str())) out += env;
        i = end + 1;
        continue;
      }
    }
    out += value[i++];
  }
  return out;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  json j = parse_json_file(path);
  RunConfig cfg;
  auto str = [&](const char* key, const std::string& dflt) {
    return j.contains(key) ? interpolate_env(j.at(key).get<std::string>()) : dflt;
  };
  cfg.gateway_spec = str("gateway", cfg.gateway_spec);
  cfg.device_spec = str("device", cfg.device_spec);
  cfg.expert_pool_path = str("expert_pool", "");
  cfg.registry_dir = str("registry_dir", cfg.registry_dir.string());
  cfg.run_dir = str("run_dir", cfg.run_dir.string());
  if (j.contains("caps")) {
    const json& c = j["caps"];
    cfg.caps.max_steps_c12 = c.value("max_steps_c12", cfg.caps.max_steps_c12);
    cfg.caps.exploration_cap = c.value("exploration_cap", cfg.caps.exploration_cap);
    cfg.caps.attempts = c.value("attempts", cfg.caps.attempts);
    cfg.caps.retry_limit = c.value("retry_limit", cfg.caps.retry_limit);
    cfg.caps.wm_budget = c.value("wm_budget", cfg.caps.wm_budget);
    cfg.caps.redecide_limit = c.value("redecide_limit", cfg.caps.redecide_limit);
    cfg.caps.c3_step_budget = c.value("c3_step_budget", cfg.caps.c3_step_budget);
    if (cfg.caps.max_steps_c12 <= 0 || cfg.caps.attempts <= 0 || cfg.caps.wm_budget <= 0)
      raise(Err::ConfigError, "caps must be positive");
    if (cfg.caps.exploration_cap < 0) raise(Err::ConfigError, "caps must be positive");
  }
  cfg.deterministic = j.value("deterministic", false);
  cfg.jobs = j.value("jobs", 1);
  // paths in the config are relative to the config file
  auto rebase = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = path.parent_path() / p;
  };
  if (!cfg.device_spec.empty() && cfg.device_spec.rfind("sim:", 0) == 0) {
    std::filesystem::path sp = cfg.device_spec.substr(4);
    if (sp.is_relative()) sp = path.parent_path() / sp;
    cfg.device_spec = "sim:" + sp.string();
  }
  if (cfg.gateway_spec.rfind("scripted:", 0) == 0 && cfg.gateway_spec.size() > 9) {
    std::filesystem::path sp = cfg.gateway_spec.substr(9);
    if (sp.is_relative()) sp = path.parent_path() / sp;
    cfg.gateway_spec = "scripted:" + sp.string();
  }
  rebase(cfg.expert_pool_path);
  rebase(cfg.registry_dir);
  rebase(cfg.run_dir);
  return cfg;
}

// ---------------------------------------------------------------------------
// Runtime: everything a command needs, wired from one config.
// ---------------------------------------------------------------------------

class Runtime {
 public:
  // A pre-built gateway (live mode, test doubles) takes precedence over the
  // config's gateway spec.
  explicit Runtime(RunConfig config, GatewayHandle gateway = nullptr)
      : config_(std::move(config)),
        clock_(config_.deterministic ? Clock::logical() : Clock::wall()) {
    if (config_.deterministic) config_.jobs = 1;

    if (gateway) {
      gateway_ = std::move(gateway);
    } else if (config_.gateway_spec.rfind("scripted:", 0) == 0) {
      std::string path = config_.gateway_spec.substr(9);
      if (path.empty()) raise(Err::ConfigError, "scripted gateway needs a script path");
      gateway_ = ScriptedGateway::load_script(path);
    } else if (config_.gateway_spec == "live") {
      raise(Err::ConfigError, "live gateway needs a transport; pass one to the Runtime");
    } else {
      raise(Err::ConfigError, "unknown gateway spec: " + config_.gateway_spec);
    }

    if (config_.device_spec.rfind("sim:", 0) == 0) {
      scenario_path_ = config_.device_spec.substr(4);
      if (!std::filesystem::exists(scenario_path_))
        raise(Err::ConfigError, "scenario file not found: " + scenario_path_.string());
      scenario_ = load_scenario(scenario_path_);
    } else if (config_.device_spec.rfind("adb:", 0) == 0) {
      adb_serial_ = config_.device_spec.substr(4);
    } else {
      raise(Err::ConfigError, "device spec must be sim:<scenario> or adb:<serial>, got '" +
                                  config_.device_spec + "'");
    }

    if (!config_.expert_pool_path.empty()) pool_ = load_expert_pool(config_.expert_pool_path);
  }

  const RunConfig& config() const { return config_; }
  Clock clock() const { return clock_; }
  GatewayHandle gateway() const { return gateway_; }
  std::vector<ExpertPortrait>& pool() { return pool_; }

  DeviceHandle make_device() const {
    if (!adb_serial_.empty()) return std::make_shared<AdbDevice>(adb_serial_);
    return std::make_shared<SimDevice>(*scenario_);
  }

  std::shared_ptr<SimDevice> make_sim() const {
    if (!scenario_) raise(Err::ConfigError, "no simulator scenario configured");
    return std::make_shared<SimDevice>(*scenario_);
  }

  std::vector<std::string> known_apps() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    if (scenario_)
      for (const auto& [name, screen] : scenario_->screens)
        if (seen.insert(screen.app_id).second) out.push_back(screen.app_id);
    for (const auto& p : pool_)
      for (const auto& a : p.app_affinity)
        if (seen.insert(a).second) out.push_back(a);
    return out;
  }

 private:
  RunConfig config_;
  Clock clock_;
  GatewayHandle gateway_;
  std::vector<ExpertPortrait> pool_;
  std::optional<Scenario> scenario_;
  std::filesystem::path scenario_path_;
  std::string adb_serial_;
};

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct ExploreSummary {
  std::filesystem::path run_dir;
  int explorations = 0;
  int tools_mined = 0;
  int icon_records = 0;
  int insight_records = 0;
  bool budget_exhausted = false;
};

// Assemble a team for the requirement, let every member decompose and explore
// its subtasks, persist tools and memories.
inline ExploreSummary cmd_explore(Runtime& rt, const std::string& requirement) {
  std::filesystem::path run_dir = rt.config().run_dir / "explore";
  std::filesystem::create_directories(run_dir);
  Stores stores(rt.clock(), run_dir);
  stores.caps = rt.config().caps;
  stores.run_id = "explore";
  stores.registry.load(rt.config().registry_dir);

  Team team = assemble_team(rt.pool(), requirement, rt.gateway().get(), rt.known_apps(),
                            rt.config().caps.team_score_threshold);

  ExploreSummary summary;
  summary.run_dir = run_dir;
  ExplorationBudget budget{rt.config().caps.exploration_cap};
  auto device = rt.make_device();

  for (const auto& expert : team.members) {
    std::vector<Subtask> subtasks;
    try {
      subtasks = decompose_requirement(expert, requirement, *rt.gateway(), stores.run_id);
    } catch (const Error& e) {
      if (e.code() == Err::NoScriptMatch) continue;
      throw;
    }
    for (size_t i = 0; i < subtasks.size(); ++i) {
      try {
        ExplorationOutcome out =
            explore(expert, subtasks[i], *device, *rt.gateway(), stores, budget);
        summary.explorations += 1;
        summary.tools_mined += static_cast<int>(out.tools.size());
        save_trajectory(out.trajectory,
                        run_dir / ("traj_" + expert.expert_id + "_" + std::to_string(i) + ".jsonl"));
      } catch (const Error& e) {
        if (e.code() != Err::BudgetExhausted) throw;
        summary.budget_exhausted = true;
        if (summary.explorations == 0) throw;  // nothing achieved: surface it
        break;
      }
    }
  }

  summary.icon_records = static_cast<int>(stores.icons.size());
  summary.insight_records = static_cast<int>(stores.insights.size());
  stores.registry.save(rt.config().registry_dir);

  json manifest{{"requirement", requirement},
                {"explorations", summary.explorations},
                {"tools_mined", summary.tools_mined},
                {"icon_records", summary.icon_records},
                {"insight_records", summary.insight_records},
                {"budget_exhausted", summary.budget_exhausted}};
  write_file(run_dir / "exploration.json", manifest.dump(2) + "\n");
  return summary;
}

struct RunSummary {
  std::filesystem::path run_dir;
  bool success = false;
  int commits = 0;
  int gateway_calls = 0;
  int device_steps = 0;
};

// Full pipeline: assemble -> plan_team -> schedule.
inline RunSummary cmd_run(Runtime& rt, const std::string& instruction,
                          const std::string& run_id = "run") {
  std::filesystem::path run_dir = rt.config().run_dir / run_id;
  std::filesystem::create_directories(run_dir);
  Stores stores(rt.clock(), run_dir);
  stores.caps = rt.config().caps;
  stores.run_id = run_id;
  stores.registry.load(rt.config().registry_dir);
  rt.gateway()->begin_run(run_id);

  Team team = assemble_team(rt.pool(), instruction, rt.gateway().get(), rt.known_apps(),
                            rt.config().caps.team_score_threshold);
  TeamPlan plan = plan_team(team, instruction, *rt.gateway(), run_id);

  std::vector<DeviceHandle> leases;
  int jobs = std::max(1, rt.config().jobs);
  for (int i = 0; i < jobs; ++i) leases.push_back(rt.make_device());

  PlanOutcome outcome = schedule(plan, team, leases, stores, *rt.gateway(), {},
                                 static_cast<size_t>(jobs));

  write_file(run_dir / "plan.json", plan_to_json(outcome.plan).dump(2) + "\n");
  for (const auto& [node_id, node] : outcome.nodes)
    if (!node.trajectory.steps.empty())
      save_trajectory(node.trajectory, run_dir / ("traj_" + node_id + ".jsonl"));

  RunSummary summary;
  summary.run_dir = run_dir;
  summary.success = outcome.success;
  summary.commits = static_cast<int>(stores.pool.size());
  summary.gateway_calls = rt.gateway()->call_count(run_id).total;
  summary.device_steps = outcome.total_device_steps;
  json oj{{"instruction", instruction},
          {"success", summary.success},
          {"commits", summary.commits},
          {"gateway_calls", summary.gateway_calls},
          {"device_steps", summary.device_steps}};
  write_file(run_dir / "outcome.json", oj.dump(2) + "\n");
  return summary;
}

struct EvalSummary {
  std::filesystem::path run_dir;
  MetricsReport report;
  int tasks_run = 0;
  int tasks_skipped = 0;
};

// Expert-Eval protocol over a bundle directory; tasks without a simulator
// scenario are skipped under a sim device config.
inline EvalSummary cmd_eval(Runtime& rt, const std::filesystem::path& bundle_dir,
                            const std::string& format = "table") {
  std::vector<TaskSpec> tasks = load_task_bundle(bundle_dir);
  if (tasks.empty()) raise(Err::EmptyTier, "task bundle is empty: " + bundle_dir.string());

  std::filesystem::path run_dir = rt.config().run_dir / "eval";
  std::filesystem::create_directories(run_dir);
  Journal attempts_journal(run_dir / "attempts.jsonl");

  std::map<std::string, std::vector<RunRecord>> records;
  std::map<std::string, TaskSpec> specs;
  EvalSummary summary;
  summary.run_dir = run_dir;

  for (const auto& spec : tasks) {
    if (spec.sim_scenario.empty()) {
      summary.tasks_skipped += 1;
      continue;
    }
    Scenario scenario = load_scenario(spec.sim_scenario);
    System system;
    system.pool = &rt.pool();
    system.gateway = rt.gateway();
    system.make_device = [scenario] { return std::make_shared<SimDevice>(scenario); };
    system.clock = rt.clock();
    system.run_dir = run_dir;
    system.caps = rt.config().caps;
    system.attempt_journal = &attempts_journal;

    std::vector<RunRecord> all;
    run_task(spec, system, &all);
    records[spec.task_id] = all;
    specs[spec.task_id] = spec;
    summary.tasks_run += 1;
  }

  if (records.empty()) raise(Err::EmptyTier, "no runnable tasks in bundle");
  summary.report = report(records, specs);
  write_file(run_dir / (format == "csv" ? "metrics.csv" : "metrics.txt"),
             format == "csv" ? summary.report.render_csv() : summary.report.render_table());
  return summary;
}

// Mines a recorded trajectory into tool files.
inline std::vector<std::filesystem::path> cmd_mine(Runtime& rt,
                                                   const std::filesystem::path& trajectory_path) {
  ActionTrajectory traj = load_trajectory(trajectory_path);
  StabilityReport stable = detect_stable_elements({traj});
  WorkflowTool tool = mine_workflow(traj, stable, rt.gateway().get());
  auto device = rt.make_device();
  ValidationReport report = validate_tool(tool, *device);
  if (!report.passed)
    raise(Err::ReplayMismatch, "mined tool failed validation at step " +
                                   std::to_string(report.diverged_at_step) + ": " + report.note);
  std::filesystem::create_directories(rt.config().registry_dir);
  std::filesystem::path out = rt.config().registry_dir / (tool.tool_id + ".tool.json");
  write_file(out, tool_to_json(tool).dump(2) + "\n");
  return {out};
}

// Renders a human-readable timeline from a run directory's journals.
inline std::vector<std::string> cmd_replay(const std::filesystem::path& run_dir) {
  if (!std::filesystem::is_directory(run_dir))
    raise(Err::ConfigError, "no run directory at " + run_dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(run_dir)) {
    std::string name = e.path().filename().string();
    if (name.rfind("traj_", 0) == 0 && name.ends_with(".jsonl")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::string> lines;
  for (const auto& f : files) {
    ActionTrajectory traj = load_trajectory(f);
    for (const auto& s : traj.steps) {
      std::string params;
      for (const auto& [k, v] : s.params) params += (params.empty() ? "" : " ") + k + "=" + v;
      lines.push_back("[" + std::to_string(s.index) + "] " + s.op +
                      (params.empty() ? "" : " " + params) + " | " + s.goal + " -> " +
                      s.observed_effect + (s.note.empty() ? "" : " (" + s.note + ")"));
    }
  }
  return lines;
}

}  // namespace droidcrew
