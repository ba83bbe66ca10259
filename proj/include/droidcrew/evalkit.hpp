#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "droidcrew/orchestrator.hpp"
#include "droidcrew/sim_device.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// Task specs
// ---------------------------------------------------------------------------

enum class TaskCategory { social_media, online_service, productivity_tool, cross_app };

inline std::string task_category_name(TaskCategory c) {
  switch (c) {
    case TaskCategory::social_media: return "social_media";
    case TaskCategory::online_service: return "online_service";
    case TaskCategory::productivity_tool: return "productivity_tool";
    case TaskCategory::cross_app: return "cross_app";
  }
  return "?";
}

inline TaskCategory task_category_from_name(std::string_view s) {
  if (s == "social_media") return TaskCategory::social_media;
  if (s == "online_service") return TaskCategory::online_service;
  if (s == "productivity_tool") return TaskCategory::productivity_tool;
  if (s == "cross_app") return TaskCategory::cross_app;
  raise(Err::ParseError, "unknown category: " + std::string(s));
}

enum class Complexity { C1, C2, C3 };

inline std::string complexity_name(Complexity c) {
  switch (c) {
    case Complexity::C1: return "C1";
    case Complexity::C2: return "C2";
    case Complexity::C3: return "C3";
  }
  return "?";
}

inline Complexity complexity_from_name(std::string_view s) {
  if (s == "C1") return Complexity::C1;
  if (s == "C2") return Complexity::C2;
  if (s == "C3") return Complexity::C3;
  raise(Err::ParseError, "unknown complexity: " + std::string(s));
}

// flag / screen predicates run against the simulator; judge predicates defer
// to the model gateway.
struct CheckSpec {
  std::string type;  // flag | screen | judge
  std::string value;
  std::string description;
};

inline CheckSpec check_from_json(const json& j) {
  CheckSpec c;
  c.type = j.at("type").get<std::string>();
  c.value = j.value("value", "");
  c.description = j.value("description", "");
  if (c.type != "flag" && c.type != "screen" && c.type != "judge")
    raise(Err::ParseError, "unknown check type: " + c.type);
  return c;
}

struct TaskSpec {
  std::string task_id;
  TaskCategory category = TaskCategory::social_media;
  std::vector<std::string> app_ids;
  Complexity complexity = Complexity::C1;
  std::string instruction;
  CheckSpec success_check;
  std::vector<CheckSpec> milestones;
  int max_steps = 15;
  std::filesystem::path sim_scenario;  // empty for live-only specs
};

inline TaskSpec task_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  TaskSpec t;
  t.task_id = j.at("task_id").get<std::string>();
  t.category = task_category_from_name(j.at("category").get<std::string>());
  if (j.contains("app_ids")) t.app_ids = j.at("app_ids").get<std::vector<std::string>>();
  t.complexity = complexity_from_name(j.at("complexity").get<std::string>());
  t.instruction = j.at("instruction").get<std::string>();
  if (j.contains("success_check")) t.success_check = check_from_json(j.at("success_check"));
  for (const auto& jm : j.value("milestones", json::array()))
    t.milestones.push_back(check_from_json(jm));
  t.max_steps = j.value("max_steps", 15);
  if (j.contains("sim_scenario")) {
    std::filesystem::path p = j.at("sim_scenario").get<std::string>();
    t.sim_scenario = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }
  if ((t.complexity == Complexity::C1 || t.complexity == Complexity::C2) && t.max_steps != 15)
    raise(Err::ParseError, "C1/C2 tasks are capped at 15 steps: " + t.task_id);
  if ((t.complexity == Complexity::C2 || t.complexity == Complexity::C3) && t.milestones.empty())
    raise(Err::ParseError, "C2/C3 tasks need milestones: " + t.task_id);
  return t;
}

inline std::vector<TaskSpec> load_task_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) raise(Err::ConfigError, "no task bundle at " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().string().ends_with(".task.json")) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<TaskSpec> out;
  for (const auto& f : files) out.push_back(task_from_json(parse_json_file(f), dir));
  return out;
}

// ---------------------------------------------------------------------------
// Run records and metrics
// ---------------------------------------------------------------------------

struct RunRecord {
  std::string task_id;
  int attempt = 1;  // 1..3
  bool success = false;
  int milestones_hit = 0;
  int gateway_calls = 0;
  std::string trajectory_ref;
  int judge_score = 0;  // 0..10
  int device_steps = 0;
  int explorations = 0;
};

inline json record_to_json(const RunRecord& r) {
  return json{{"task_id", r.task_id},       {"attempt", r.attempt},
              {"success", r.success},       {"milestones_hit", r.milestones_hit},
              {"gateway_calls", r.gateway_calls}, {"trajectory_ref", r.trajectory_ref},
              {"judge_score", r.judge_score},     {"device_steps", r.device_steps},
              {"explorations", r.explorations}};
}

// success first, then milestones, then cheaper reasoning; total and
// deterministic for any record multiset.
inline bool better_attempt(const RunRecord& a, const RunRecord& b) {
  if (a.success != b.success) return a.success;
  if (a.milestones_hit != b.milestones_hit) return a.milestones_hit > b.milestones_hit;
  if (a.gateway_calls != b.gateway_calls) return a.gateway_calls < b.gateway_calls;
  return a.attempt < b.attempt;
}

inline RunRecord best_attempt(const std::vector<RunRecord>& attempts) {
  if (attempts.empty()) raise(Err::EmptyTier, "no attempts recorded");
  RunRecord best = attempts.front();
  for (const auto& r : attempts)
    if (better_attempt(r, best)) best = r;
  return best;
}

inline double success_rate(const std::vector<RunRecord>& best_records) {
  if (best_records.empty()) raise(Err::EmptyTier, "no records in tier");
  int ok = 0;
  for (const auto& r : best_records) ok += r.success ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(best_records.size());
}

inline double process_score(const RunRecord& record, const TaskSpec& spec) {
  if (spec.milestones.empty()) raise(Err::NoMilestones, spec.task_id);
  return static_cast<double>(record.milestones_hit) / static_cast<double>(spec.milestones.size());
}

inline int reasoning_steps(const RunRecord& record) { return record.gateway_calls; }

// C1 is pass/fail: full marks on completion. C2/C3 are judged.
inline int complete_performance(const RunRecord& record, const TaskSpec& spec,
                                ModelGateway& gateway, const std::string& run_id = "judge") {
  if (spec.complexity == Complexity::C1) return record.success ? 10 : 0;
  ModelRequest req;
  req.role_tag = RoleTag::judge;
  req.run_id = run_id;
  req.prompt_text = "Score 0..10 how well the run fulfilled: " + spec.instruction;
  req.with("task", spec.task_id);
  ModelResponse resp;
  try {
    resp = gateway.complete(req);
  } catch (const Error& e) {
    if (e.code() == Err::NoScriptMatch || e.code() == Err::EndpointError)
      raise(Err::JudgeUnavailable, std::string("judge call failed: ") + e.what());
    throw;
  }
  if (!resp.parsed || !resp.parsed->contains("score"))
    raise(Err::JudgeUnavailable, "judge returned no score for " + spec.task_id);
  int score = resp.parsed->at("score").get<int>();
  return std::clamp(score, 0, 10);
}

struct TierMetrics {
  int tasks = 0;
  double su = 0.0;
  double ps = 0.0;
  double rs = 0.0;
  double cp = 0.0;
};

struct MetricsReport {
  std::map<std::string, TierMetrics> tiers;  // keyed C1 / C2 / C3

  std::string render_table() const {
    std::ostringstream os;
    os << "tier  tasks  SU      PS      RS       CP\n";
    for (const auto& [tier, m] : tiers) {
      os << std::left << std::setw(6) << tier << std::setw(7) << m.tasks << std::fixed
         << std::setprecision(4) << std::setw(8) << m.su << std::setw(8) << m.ps << std::setw(9)
         << m.rs << std::setprecision(4) << m.cp << "\n";
    }
    return os.str();
  }

  std::string render_csv() const {
    std::ostringstream os;
    os << "tier,tasks,su,ps,rs,cp\n";
    for (const auto& [tier, m] : tiers) {
      os << tier << "," << m.tasks << "," << std::fixed << std::setprecision(4) << m.su << ","
         << m.ps << "," << m.rs << "," << m.cp << "\n";
    }
    return os.str();
  }
};

// Aggregates best attempts per task into Table-3-shaped tiers (SU, PS, RS,
// CP). PS averages over tasks that define milestones.
inline MetricsReport report(const std::map<std::string, std::vector<RunRecord>>& records_by_task,
                            const std::map<std::string, TaskSpec>& specs) {
  std::map<std::string, std::vector<std::pair<RunRecord, const TaskSpec*>>> by_tier;
  for (const auto& [task_id, attempts] : records_by_task) {
    auto it = specs.find(task_id);
    if (it == specs.end()) raise(Err::ConfigError, "record for unknown task " + task_id);
    by_tier[complexity_name(it->second.complexity)].emplace_back(best_attempt(attempts),
                                                                 &it->second);
  }
  MetricsReport rep;
  for (const auto& [tier, entries] : by_tier) {
    TierMetrics m;
    m.tasks = static_cast<int>(entries.size());
    std::vector<RunRecord> best;
    double ps_sum = 0.0;
    int ps_n = 0;
    double rs_sum = 0.0, cp_sum = 0.0;
    for (const auto& [rec, spec] : entries) {
      best.push_back(rec);
      if (!spec->milestones.empty()) {
        ps_sum += process_score(rec, *spec);
        ps_n += 1;
      }
      rs_sum += reasoning_steps(rec);
      cp_sum += rec.judge_score;
    }
    m.su = success_rate(best);
    m.ps = ps_n > 0 ? ps_sum / ps_n : 0.0;
    m.rs = rs_sum / entries.size();
    m.cp = cp_sum / entries.size();
    rep.tiers[tier] = m;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Run protocol
// ---------------------------------------------------------------------------

// What run_task needs from the surrounding runtime: a pool to draw experts
// from, a gateway, and a fresh simulator per attempt.
struct System {
  std::vector<ExpertPortrait>* pool = nullptr;
  GatewayHandle gateway;
  std::function<std::shared_ptr<SimDevice>()> make_device;
  Clock clock = Clock::wall();
  std::filesystem::path run_dir;
  Caps caps;
  bool explore_first = true;
  Journal* attempt_journal = nullptr;
};

namespace detail {

inline bool check_predicate(const CheckSpec& check, const SimDevice& device,
                            const std::set<std::string>& visited) {
  if (check.type == "flag") return device.probe_flag(check.value);
  if (check.type == "screen") return visited.count(check.value) > 0;
  return false;  // judge predicates are scored, not checked
}

}  // namespace detail

// Up to `attempts` runs of the full pipeline (assemble, plan, schedule) on a
// fresh device each time; exploration happens once, before attempt 1, within
// the task's exploration cap. Best attempt wins.
inline RunRecord run_task(const TaskSpec& spec, System& system,
                          std::vector<RunRecord>* all_attempts = nullptr) {
  if (!system.pool || !system.gateway || !system.make_device)
    raise(Err::ConfigError, "system is not fully configured");
  if (spec.sim_scenario.empty())
    raise(Err::ConfigError, "task " + spec.task_id + " has no sim scenario");

  Stores stores(system.clock,
                system.run_dir.empty() ? std::filesystem::path{}
                                       : system.run_dir / spec.task_id);
  stores.caps = system.caps;

  std::vector<std::string> known_apps = spec.app_ids;
  std::vector<RunRecord> attempts;
  int explorations_used = 0;

  for (int attempt = 1; attempt <= system.caps.attempts; ++attempt) {
    auto device = system.make_device();
    stores.run_id = spec.task_id + ":a" + std::to_string(attempt);
    system.gateway->begin_run(stores.run_id);

    Team team = assemble_team(*system.pool, spec.instruction, system.gateway.get(), known_apps,
                              system.caps.team_score_threshold);

    if (system.explore_first && attempt == 1) {
      ExplorationBudget budget{system.caps.exploration_cap};
      for (const auto& expert : team.members) {
        std::vector<Subtask> subtasks;
        try {
          subtasks = decompose_requirement(expert, spec.instruction, *system.gateway,
                                           stores.run_id);
        } catch (const Error& e) {
          if (e.code() == Err::NoScriptMatch || e.code() == Err::EmptyDecomposition) continue;
          throw;
        }
        for (const auto& st : subtasks) {
          try {
            explore(expert, st, *device, *system.gateway, stores, budget);
            explorations_used += 1;
          } catch (const Error& e) {
            if (e.code() == Err::BudgetExhausted) break;
            throw;
          }
        }
      }
      device->reset();
    }

    int max_steps = spec.complexity == Complexity::C3 ? system.caps.c3_step_budget
                                                      : spec.max_steps;
    Caps saved = stores.caps;
    stores.caps.max_steps_c12 = max_steps;

    RunRecord rec;
    rec.task_id = spec.task_id;
    rec.attempt = attempt;
    rec.explorations = explorations_used;
    try {
      TeamPlan plan = plan_team(team, spec.instruction, *system.gateway, stores.run_id);
      PlanOutcome outcome = schedule(plan, team, {device}, stores, *system.gateway);
      std::set<std::string> visited;
      for (const auto& [node_id, node] : outcome.nodes) {
        for (const auto& obs : node.trajectory.observations) {
          visited.insert(obs.logical_name);
          visited.insert(obs.screen_signature);
        }
        rec.trajectory_ref = stores.run_id;
      }
      rec.device_steps = outcome.total_device_steps;
      rec.success = outcome.success &&
                    detail::check_predicate(spec.success_check, *device, visited);
      for (const auto& m : spec.milestones)
        if (detail::check_predicate(m, *device, visited)) rec.milestones_hit += 1;
    } catch (const Error&) {
      rec.success = false;
    }
    stores.caps = saved;
    rec.gateway_calls = system.gateway->call_count(stores.run_id).total;
    rec.judge_score = complete_performance(rec, spec, *system.gateway,
                                           stores.run_id + ":judge");
    if (system.attempt_journal) system.attempt_journal->append(record_to_json(rec));
    attempts.push_back(rec);
  }

  if (all_attempts) *all_attempts = attempts;
  return best_attempt(attempts);
}

}  // namespace droidcrew
