#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "droidcrew/device.hpp"
#include "droidcrew/gateway.hpp"
#include "droidcrew/memory.hpp"
#include "droidcrew/toolsmith.hpp"
#include "droidcrew/trajectory.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// Portraits and tasks
// ---------------------------------------------------------------------------

struct ExpertPortrait {
  std::string expert_id;
  std::string role_name;
  std::string responsibility;
  std::vector<std::string> capability_tags;
  std::vector<std::string> app_affinity;

  std::string profile_text() const {
    std::string out = role_name + " " + responsibility;
    for (const auto& t : capability_tags) out += " " + t;
    for (const auto& a : app_affinity) out += " " + a;
    return out;
  }
};

inline json portrait_to_json(const ExpertPortrait& p) {
  return json{{"expert_id", p.expert_id},
              {"role_name", p.role_name},
              {"responsibility", p.responsibility},
              {"capability_tags", p.capability_tags},
              {"app_affinity", p.app_affinity}};
}

inline ExpertPortrait portrait_from_json(const json& j) {
  ExpertPortrait p;
  p.expert_id = j.at("expert_id").get<std::string>();
  p.role_name = j.at("role_name").get<std::string>();
  p.responsibility = j.value("responsibility", "");
  if (j.contains("capability_tags"))
    p.capability_tags = j.at("capability_tags").get<std::vector<std::string>>();
  if (j.contains("app_affinity"))
    p.app_affinity = j.at("app_affinity").get<std::vector<std::string>>();
  if (p.responsibility.empty()) raise(Err::ParseError, "portrait needs a responsibility");
  return p;
}

inline std::vector<ExpertPortrait> load_expert_pool(const std::filesystem::path& path) {
  json j = parse_json_file(path);
  if (!j.is_array()) raise(Err::ParseError, "expert pool must be a json array");
  std::vector<ExpertPortrait> out;
  for (const auto& jp : j) out.push_back(portrait_from_json(jp));
  return out;
}

enum class TaskStatus { pending, running, done, failed };

inline std::string task_status_name(TaskStatus s) {
  switch (s) {
    case TaskStatus::pending: return "pending";
    case TaskStatus::running: return "running";
    case TaskStatus::done: return "done";
    case TaskStatus::failed: return "failed";
  }
  return "?";
}

struct AtomicTask {
  std::string task_id;
  std::string description;
  std::string parent_node;
  TaskStatus status = TaskStatus::pending;
  int attempt = 1;
  int max_steps = 15;
  std::string done_criterion;  // "flag:<name>" or "screen:<logical name>"; empty = Stop decides
  bool independent = false;    // planner-marked; reorder policy may promote it
};

// ---------------------------------------------------------------------------
// Done criteria ("flag:x" / "screen:name")
// ---------------------------------------------------------------------------

struct DonePredicate {
  std::string kind;   // "flag" | "screen" | ""
  std::string value;

  static DonePredicate parse(const std::string& spec) {
    if (trim(spec).empty()) return {};
    auto colon = spec.find(':');
    if (colon == std::string::npos) raise(Err::ParseError, "bad done criterion: " + spec);
    DonePredicate p{trim(spec.substr(0, colon)), trim(spec.substr(colon + 1))};
    if (p.kind != "flag" && p.kind != "screen")
      raise(Err::ParseError, "bad done criterion kind: " + p.kind);
    return p;
  }

  bool empty() const { return kind.empty(); }

  bool check(const Device& device, const ScreenState& current) const {
    if (kind == "flag") return device.probe_flag(value);
    if (kind == "screen")
      return current.logical_name == value || current.screen_signature == value;
    return false;
  }
};

// ---------------------------------------------------------------------------
// Shared run-scoped stores
// ---------------------------------------------------------------------------

struct Caps {
  int max_steps_c12 = 15;
  int exploration_cap = 10;
  int attempts = 3;
  int retry_limit = 1;          // node retries; <=2 attempts per plan node
  int wm_budget = 2000;
  int redecide_limit = 3;       // consecutive verify failures before fail-fast
  double team_score_threshold = 0.2;
  int c3_step_budget = 200;     // C3 has no 15-step cap; bounded by total work
};

class Stores {
 public:
  explicit Stores(Clock clock = Clock::wall(), std::filesystem::path run_dir = {})
      : clock(clock), run_dir(std::move(run_dir)), icons(clock), pool(clock) {
    if (!this->run_dir.empty()) {
      icons.attach_journal(this->run_dir / "icons.jsonl");
      insights.attach_journal(this->run_dir / "insights.jsonl");
      pool.attach_journal(this->run_dir / "commits.jsonl");
    }
  }

  Stores(const Stores&) = delete;
  Stores& operator=(const Stores&) = delete;

  WorkingMemory& wm(const std::string& expert_id) {
    std::lock_guard<std::mutex> lock(wm_mu_);
    auto it = wms_.find(expert_id);
    if (it == wms_.end()) {
      auto mem = std::make_shared<WorkingMemory>(expert_id, caps.wm_budget, clock);
      if (!run_dir.empty()) mem->attach_journal(run_dir / ("wm_" + expert_id + ".jsonl"));
      it = wms_.emplace(expert_id, std::move(mem)).first;
    }
    return *it->second;
  }

  Clock clock;
  std::string run_id = "run";
  std::filesystem::path run_dir;
  Caps caps;
  IconStore icons;
  InsightStore insights;
  TeamMemoryPool pool;
  ToolRegistry registry;

 private:
  std::mutex wm_mu_;
  std::map<std::string, std::shared_ptr<WorkingMemory>> wms_;
};

// ---------------------------------------------------------------------------
// Transition verification (the Verify of Observe-Verify-Act)
// ---------------------------------------------------------------------------

struct VerifyResult {
  bool consistent = true;
  std::string note;
};

namespace detail {

enum class Expected { change, no_change, none };

inline Expected classify_expectation(const std::string& expectation) {
  auto toks = token_set(expectation);
  static const char* kNoChange[] = {"stay",  "stays",    "unchanged", "nothing",
                                    "focus", "focuses",  "focused",   "type",
                                    "types", "typed",    "enter",     "enters",
                                    "fill",  "fills",    "effect"};  // "no effect"
  static const char* kChange[] = {"open",   "opens",    "navigate", "navigates", "go",
                                  "goes",   "switch",   "switches", "show",      "shows",
                                  "screen", "returns",  "return",   "leads",     "reveals"};
  for (const char* w : kNoChange)
    if (toks.count(w)) return Expected::no_change;
  for (const char* w : kChange)
    if (toks.count(w)) return Expected::change;
  return Expected::none;
}

}  // namespace detail

// Deterministic contract: each operation implies an expected effect class,
// refined by the stated expectation. Live mode delegates the same question to
// the gateway.
inline VerifyResult verify_transition(const ScreenState& prev, const ScreenState& curr,
                                      const Action& last_action, const std::string& expectation,
                                      ModelGateway* gateway = nullptr) {
  if (gateway && !gateway->scripted()) {
    ModelRequest req;
    req.role_tag = RoleTag::verify;
    req.prompt_text = "Did the last action (" + last_action.describe() +
                      ") achieve: " + expectation + "? Answer {\"consistent\":bool,\"note\":...}";
    req.image_refs = {prev.screenshot_ref, curr.screenshot_ref};
    ModelResponse resp = gateway->complete(req);
    if (resp.parsed && resp.parsed->contains("consistent"))
      return {resp.parsed->value("consistent", true), resp.parsed->value("note", "")};
    return {true, "unparseable verify verdict, assumed consistent"};
  }

  ScreenDiff diff = diff_screens(prev, curr);
  bool changed = diff.changed || diff.app_switched;
  detail::Expected want = detail::classify_expectation(expectation);

  switch (last_action.op) {
    case Op::Tap: {
      if (want == detail::Expected::no_change)
        return changed ? VerifyResult{false, "expected no transition but screen changed"}
                       : VerifyResult{true, ""};
      // taps default to navigation intent
      return changed ? VerifyResult{true, ""} : VerifyResult{false, "no transition"};
    }
    case Op::Text: {
      if (changed || !diff.changed_text.empty()) return {true, ""};
      return {false, "text field content unchanged"};
    }
    case Op::Swipe: {
      if (want == detail::Expected::change && !changed) return {false, "no transition"};
      if (want == detail::Expected::no_change && changed)
        return {false, "expected no transition but screen changed"};
      return {true, ""};
    }
    case Op::Back:
    case Op::Home: {
      if (want == detail::Expected::no_change)
        return changed ? VerifyResult{false, "expected no transition but screen changed"}
                       : VerifyResult{true, ""};
      return changed ? VerifyResult{true, ""} : VerifyResult{false, "no transition"};
    }
    case Op::Wait:
    case Op::Read:
    case Op::Think:
    case Op::Stop:
      return {true, ""};
  }
  return {true, ""};
}

// ---------------------------------------------------------------------------
// Requirement decomposition (the exploration subtasks)
// ---------------------------------------------------------------------------

struct Subtask {
  std::string description;
  std::string target_app;
  std::string done_criterion;
};

inline std::vector<Subtask> decompose_requirement(const ExpertPortrait& expert,
                                                  const std::string& requirement,
                                                  ModelGateway& gateway,
                                                  const std::string& run_id = "run") {
  if (trim(requirement).empty()) raise(Err::EmptyRequirement, "empty requirement");
  ModelRequest req;
  req.role_tag = RoleTag::decompose;
  req.run_id = run_id;
  req.prompt_text = "As " + expert.role_name + " (" + expert.responsibility +
                    "), break the requirement into exploration subtasks: " + requirement;
  req.with("role", expert.role_name).with("requirement", requirement);
  ModelResponse resp = gateway.complete(req);
  if (!resp.parsed || !resp.parsed->contains("subtasks") || !(*resp.parsed)["subtasks"].is_array())
    raise(Err::EmptyDecomposition, "model returned no parseable subtasks");
  std::vector<Subtask> out;
  for (const auto& js : (*resp.parsed)["subtasks"]) {
    Subtask s;
    s.description = js.value("description", "");
    s.target_app = js.value("target_app", "");
    s.done_criterion = js.value("done", "");
    if (!s.description.empty()) out.push_back(std::move(s));
  }
  if (out.empty()) raise(Err::EmptyDecomposition, "model returned zero subtasks");
  return out;
}

// ---------------------------------------------------------------------------
// The Observe-Verify-Act engine
// ---------------------------------------------------------------------------

struct ExecCycleState {
  std::optional<ScreenState> previous;
  ScreenState current;
  std::optional<Action> last_action;
  std::string last_expectation;
  int step_count = 0;
};

namespace detail {

struct EngineOptions {
  std::string goal;
  DonePredicate done;
  int max_steps = 15;
  int redecide_limit = 3;
  bool tool_first = false;
  bool extract_icons = false;
  std::map<std::string, std::string> tool_bindings;
};

struct EngineResult {
  bool succeeded = false;
  bool step_cap_hit = false;
  std::string fail_reason;
  ActionTrajectory traj;
  int steps_used = 0;
  int verify_failures = 0;
  int tool_steps = 0;
};

inline std::string screen_key(const ScreenState& s) {
  return s.logical_name.empty() ? s.screen_signature.substr(0, 8) : s.logical_name;
}

inline std::string focus_key(const ScreenState& s) {
  for (const auto& e : s.elements)
    if (e.focused) return e.element_id.rfind("e", 0) == 0 && e.stable_key ? *e.stable_key
                                                                          : e.element_id;
  return "none";
}

inline std::vector<std::string> extract_quoted(const std::string& text) {
  std::vector<std::string> out;
  for (size_t i = 0; i < text.size(); ++i) {
    char q = text[i];
    if (q != '\'' && q != '"') continue;
    size_t end = text.find(q, i + 1);
    if (end == std::string::npos) break;
    out.push_back(text.substr(i + 1, end - i - 1));
    i = end;
  }
  return out;
}

// Runs one bounded Observe-Verify-Act loop against the device. Both the
// exploration phase and atomic-task execution sit on top of this.
inline EngineResult run_cycle(const ExpertPortrait& expert, Device& device, ModelGateway& gateway,
                              Stores& stores, const EngineOptions& opt) {
  EngineResult res;
  WorkingMemory& wm = stores.wm(expert.expert_id);

  ExecCycleState cycle;
  cycle.current = device.capture_screen();
  res.traj.trajectory_id = stores.run_id + "-" + slug(opt.goal) + "-" +
                           hash_hex(opt.goal + cycle.current.screen_signature).substr(0, 6);
  res.traj.app_id = cycle.current.app_id;
  res.traj.observations.push_back(cycle.current);

  int consecutive_verify_failures = 0;
  std::set<std::string> attempted_tools;

  auto record = [&](const Action& action, const ActionResult& result, const std::string& goal,
                    const std::string& target_ref, bool text_from_goal) {
    ActionStep step;
    step.op = std::string(op_name(action.op));
    step.params = action.params;
    step.goal = goal;
    step.result_ok = result.ok;
    step.observed_effect = effect_name(result.observed_effect);
    step.note = result.note;
    step.pre_signature = cycle.current.screen_signature;
    step.post_signature = result.post_state.screen_signature;
    step.target_element_ref = target_ref;
    step.text_from_goal = text_from_goal;
    record_step(res.traj, std::move(step));
  };

  while (true) {
    // Observe: cycle.current is fresh. Done yet?
    if (!opt.done.empty() && opt.done.check(device, cycle.current)) {
      res.succeeded = true;
      break;
    }

    // Verify the previous action against what the screen now shows.
    if (cycle.last_action && cycle.previous) {
      VerifyResult v = verify_transition(*cycle.previous, cycle.current, *cycle.last_action,
                                         cycle.last_expectation, &gateway);
      if (!v.consistent) {
        res.verify_failures += 1;
        consecutive_verify_failures += 1;
        wm.write("verify", "action " + cycle.last_action->describe() + " failed check: " + v.note +
                               " (expected " + cycle.last_expectation + ")");
        if (consecutive_verify_failures >= opt.redecide_limit) {
          res.fail_reason = "verification failed " + std::to_string(consecutive_verify_failures) +
                            " times in a row";
          break;
        }
      } else {
        consecutive_verify_failures = 0;
      }
    }

    if (cycle.step_count >= opt.max_steps) {
      res.step_cap_hit = true;
      res.fail_reason = "step cap " + std::to_string(opt.max_steps) + " reached";
      break;
    }

    // Act, preferring a registered tool when one matches this very screen.
    if (opt.tool_first) {
      auto matches = stores.registry.lookup(cycle.current.app_id, cycle.current.screen_signature,
                                            opt.goal);
      const ToolMatch* pick = nullptr;
      for (const auto& m : matches) {
        if (!m.exact_signature || m.score <= 0.0) continue;
        if (attempted_tools.count(m.tool.tool_id)) continue;
        bool bindable = true;
        for (const auto& p : m.tool.formal_params)
          if (!opt.tool_bindings.count(p.name)) bindable = false;
        if (!bindable) continue;
        pick = &m;
        break;
      }
      if (pick) {
        attempted_tools.insert(pick->tool.tool_id);
        std::map<std::string, std::string> bindings;
        for (const auto& p : pick->tool.formal_params)
          bindings[p.name] = opt.tool_bindings.at(p.name);
        try {
          ActionTrajectory replay = execute_tool(pick->tool, bindings, device);
          for (auto step : replay.steps) {
            step.goal = opt.goal;
            record_step(res.traj, std::move(step));
            res.steps_used += 1;
            res.tool_steps += 1;
            cycle.step_count += 1;
          }
          for (const auto& obs : replay.observations) res.traj.observations.push_back(obs);
          wm.write("tool", "replayed " + pick->tool.tool_id + " (" + pick->tool.summary + ")");
        } catch (const StepFailedError& e) {
          for (auto step : e.prefix().steps) {
            step.goal = opt.goal;
            record_step(res.traj, std::move(step));
            res.steps_used += 1;
            res.tool_steps += 1;
            cycle.step_count += 1;
          }
          wm.write("tool", std::string("tool ") + pick->tool.tool_id + " diverged: " + e.what());
        } catch (const Error& e) {
          wm.write("tool", std::string("tool ") + pick->tool.tool_id + " unusable: " + e.what());
        }
        cycle.previous = cycle.current;
        cycle.current = device.capture_screen();
        res.traj.observations.push_back(cycle.current);
        cycle.last_action.reset();  // replay verified signatures step by step
        continue;
      }
    }

    // Model decides. The dual-state images (previous + current) and the
    // memory context ride in the prompt; the scripted key is the structured
    // quadruple (screen, goal, last op, focus).
    ModelRequest req;
    req.role_tag = RoleTag::decide_action;
    req.run_id = stores.run_id;
    req.prompt_text = "Goal: " + opt.goal + "\nScreen: " + screen_key(cycle.current);
    for (const auto& rec : stores.icons.query(cycle.current.app_id, cycle.current.screen_signature))
      req.prompt_text += "\nicon " + rec.element_ref + " [" + confidence_name(rec.confidence) +
                         "] " + rec.hypothesized_function;
    for (const auto& ins : stores.insights.query(expert.role_name, opt.goal))
      req.prompt_text += "\ninsight(" + insight_category_name(ins.category) + "): " + ins.text;
    for (const auto& e : wm.read(opt.goal)) req.prompt_text += "\nmemory: " + e.text;
    if (cycle.previous) req.image_refs.push_back(cycle.previous->screenshot_ref);
    req.image_refs.push_back(cycle.current.screenshot_ref);
    req.with("screen", screen_key(cycle.current))
        .with("goal", opt.goal)
        .with("last", cycle.last_action ? std::string(op_name(cycle.last_action->op)) : "none")
        .with("focus", focus_key(cycle.current));
    ModelResponse resp = gateway.complete(req);
    if (!resp.parsed || !resp.parsed->contains("op"))
      raise(Err::ParseError, "decide_action returned no parseable op for goal: " + opt.goal);
    const json& payload = *resp.parsed;
    std::string op = payload.at("op").get<std::string>();
    std::string expectation = payload.value("expect", "");
    std::string guess = payload.value("guess", "");  // icon-function hypothesis
    std::string target_ref;
    bool text_from_goal = payload.value("from_goal", false);

    // Proactive icon guesses ride along with the decision.
    if (opt.extract_icons && payload.contains("icon_guesses")) {
      for (const auto& jg : payload["icon_guesses"]) {
        const UiElement* el = cycle.current.find(jg.value("ref", ""));
        if (!el) continue;
        stores.icons.upsert({cycle.current.app_id, cycle.current.screen_signature, element_ref(*el),
                             jg.value("guess", "")});
      }
    }

    Action action;
    if (op == "tap") {
      const UiElement* el = nullptr;
      if (payload.contains("target")) el = cycle.current.find(payload.at("target").get<std::string>());
      if (el) {
        action = Action::tap(el->bounds.center_x(), el->bounds.center_y());
        target_ref = element_ref(*el);
      } else if (payload.contains("x") && payload.contains("y")) {
        action = Action::tap(payload.at("x").get<int>(), payload.at("y").get<int>());
        if (const UiElement* hit = hit_test(cycle.current.elements, payload.at("x").get<int>(),
                                            payload.at("y").get<int>()))
          target_ref = element_ref(*hit);
      } else {
        wm.write("decide", "target not on screen: " + payload.value("target", "?"));
        consecutive_verify_failures += 1;
        if (consecutive_verify_failures >= opt.redecide_limit) {
          res.fail_reason = "target resolution failed repeatedly";
          break;
        }
        continue;
      }
    } else if (op == "text") {
      action = Action::text(payload.value("content", ""));
    } else if (op == "swipe") {
      action = Action::swipe(payload.value("x", device.width() / 2),
                             payload.value("y", device.height() / 2),
                             payload.value("direction", "up"));
    } else if (op == "back") {
      action = Action::back();
    } else if (op == "home") {
      action = Action::home();
    } else if (op == "wait") {
      action = Action::wait();
    } else if (op == "stop") {
      action = Action::stop();
    } else if (op == "think") {
      action = Action::think(payload.value("flow", "write"), payload.value("goal", ""));
    } else if (op == "read") {
      action = Action::read(payload.value("file", ""), payload.value("goal", ""));
    } else {
      raise(Err::ParseError, "decide_action returned unknown op: " + op);
    }

    // Hypothesize before acting; no guess leaves the record Uncharted.
    if (opt.extract_icons && action.op == Op::Tap && !target_ref.empty()) {
      stores.icons.upsert({cycle.current.app_id, cycle.current.screen_signature, target_ref,
                           guess.empty() ? std::optional<std::string>{}
                                         : std::optional<std::string>{guess}});
    }

    ActionResult result;
    if (action.op == Op::Think) {
      auto entries = wm.think(think_flow_from_name(action.str_param("flow")),
                              action.str_param("goal"));
      result.ok = true;
      result.observed_effect = Effect::screen_unchanged;
      result.post_state = device.capture_screen();
      result.note = "think:" + action.str_param("flow") +
                    (entries.empty() ? "" : " recalled " + std::to_string(entries.size()));
    } else {
      result = device.perform(action);
      if (action.op == Op::Read && result.note.rfind("read: ", 0) == 0)
        wm.write("read", result.note.substr(6));
    }

    record(action, result, opt.goal, target_ref, text_from_goal);
    if (device_affecting(action.op)) {
      res.steps_used += 1;
      cycle.step_count += 1;
    }

    // Verify the hypothesis right away while both states are in hand.
    if (opt.extract_icons && action.op == Op::Tap && !target_ref.empty() && !guess.empty()) {
      stores.icons.verify(cycle.current.app_id, cycle.current.screen_signature, target_ref, guess,
                          diff_screens(cycle.current, result.post_state));
    }

    cycle.previous = cycle.current;
    cycle.current = result.post_state;
    res.traj.observations.push_back(cycle.current);
    cycle.last_action = action;
    cycle.last_expectation = expectation;

    if (result.observed_effect == Effect::terminal) {
      res.succeeded = opt.done.empty() ? true : opt.done.check(device, cycle.current);
      if (!res.succeeded) res.fail_reason = "stopped before reaching the goal";
      break;
    }
  }

  res.traj.outcome = res.succeeded ? TrajectoryOutcome::success
                     : res.step_cap_hit ? TrajectoryOutcome::failure
                                        : TrajectoryOutcome::failure;
  return res;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Exploration
// ---------------------------------------------------------------------------

struct ExplorationBudget {
  int remaining = 10;
};

struct ExplorationOutcome {
  bool succeeded = false;
  std::vector<WorkflowTool> tools;
  std::vector<IconRecord> interface_records;
  std::vector<InsightRecord> insights;
  ActionTrajectory trajectory;
};

// One exploration of one subtask. Whatever happens, the trajectory is turned
// into memories: tools on success, icon records for everything interacted or
// guessed, and at least one insight.
inline ExplorationOutcome explore(const ExpertPortrait& expert, const Subtask& subtask,
                                  Device& device, ModelGateway& gateway, Stores& stores,
                                  ExplorationBudget& budget) {
  if (budget.remaining <= 0)
    raise(Err::BudgetExhausted, "exploration budget exhausted before subtask: " +
                                    subtask.description);
  budget.remaining -= 1;

  device.reset();  // tools must replay from a reachable initial state

  detail::EngineOptions opt;
  opt.goal = subtask.description;
  opt.done = DonePredicate::parse(subtask.done_criterion);
  opt.max_steps = stores.caps.max_steps_c12;
  opt.redecide_limit = stores.caps.redecide_limit;
  opt.tool_first = true;  // earlier subtasks' tools are reusable
  opt.extract_icons = true;

  detail::EngineResult run = detail::run_cycle(expert, device, gateway, stores, opt);

  ExplorationOutcome out;
  out.succeeded = run.succeeded;
  out.trajectory = run.traj;

  // Tools (success only; an unminable path is simply not a tool).
  if (run.succeeded && !run.traj.steps.empty()) {
    try {
      StabilityReport stable = detect_stable_elements({run.traj});
      WorkflowTool tool = mine_workflow(run.traj, stable, &gateway);
      ValidationReport report = validate_tool(tool, device);
      if (report.passed) {
        stores.registry.register_tool(tool, report);
        out.tools.push_back(tool);
      }
    } catch (const Error& e) {
      if (e.code() != Err::NotMinable) throw;
      stores.wm(expert.expert_id).write("mining", e.what());
    }
  }

  // Icon records for the screens this exploration touched.
  std::set<std::string> seen;
  for (const auto& obs : run.traj.observations) {
    if (!seen.insert(obs.screen_signature).second) continue;
    for (const auto& rec : stores.icons.query(obs.app_id, obs.screen_signature))
      out.interface_records.push_back(rec);
  }

  // Insights: one per exploration, plus a performance note when corrections
  // were needed.
  InsightRecord insight;
  insight.expert_role = expert.role_name;
  insight.task_context = subtask.description;
  insight.trajectory_ref = run.traj.trajectory_id;
  if (run.succeeded) {
    insight.category = InsightCategory::efficiency;
    std::string path;
    for (const auto& obs : run.traj.observations) {
      std::string name = obs.logical_name.empty() ? obs.screen_signature.substr(0, 8)
                                                  : obs.logical_name;
      if (path.empty() || path.substr(path.rfind('>') + 1) != name)
        path += (path.empty() ? "" : ">") + name;
    }
    insight.text = "completed in " + std::to_string(run.steps_used) + " steps via " + path;
  } else {
    insight.category = InsightCategory::failure_path;
    insight.text = "failed after " + std::to_string(run.steps_used) + " steps: " +
                   run.fail_reason + "; last screen " +
                   (run.traj.observations.empty() ? "?" : detail::screen_key(run.traj.observations.back()));
  }
  stores.insights.add(insight);
  out.insights.push_back(insight);
  if (run.succeeded && run.verify_failures > 0) {
    InsightRecord perf;
    perf.category = InsightCategory::performance;
    perf.expert_role = expert.role_name;
    perf.task_context = subtask.description;
    perf.trajectory_ref = run.traj.trajectory_id;
    perf.text = std::to_string(run.verify_failures) + " corrections were needed; verify before act";
    stores.insights.add(perf);
    out.insights.push_back(perf);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Atomic-task execution
// ---------------------------------------------------------------------------

struct TaskOutcome {
  TaskStatus status = TaskStatus::failed;
  ActionTrajectory trajectory;
  int steps_used = 0;
  int gateway_calls = 0;
  std::string note;
};

inline TaskOutcome execute_atomic(const ExpertPortrait& expert, AtomicTask& task, Device& device,
                                  ModelGateway& gateway, Stores& stores) {
  if (task.status != TaskStatus::pending)
    raise(Err::InvalidParams, "task " + task.task_id + " is not pending");
  task.status = TaskStatus::running;

  gateway.begin_run(stores.run_id);
  int calls_before = gateway.call_count(stores.run_id).total;

  detail::EngineOptions opt;
  opt.goal = task.description;
  opt.done = DonePredicate::parse(task.done_criterion);
  opt.max_steps = task.max_steps;
  opt.redecide_limit = stores.caps.redecide_limit;
  opt.tool_first = true;
  opt.extract_icons = false;
  // Bind tool parameters from quoted fragments of the task description, in
  // declaration order.
  auto quoted = detail::extract_quoted(task.description);
  for (size_t i = 0; i < quoted.size(); ++i) opt.tool_bindings["q" + std::to_string(i)] = quoted[i];

  // Parameter names are tool-specific; map quoted fragments positionally for
  // every candidate tool the registry may produce.
  ScreenState here = device.capture_screen();
  for (const auto& m : stores.registry.lookup(here.app_id, here.screen_signature, task.description)) {
    for (size_t i = 0; i < m.tool.formal_params.size() && i < quoted.size(); ++i)
      opt.tool_bindings[m.tool.formal_params[i].name] = quoted[i];
  }

  detail::EngineResult run = detail::run_cycle(expert, device, gateway, stores, opt);

  TaskOutcome out;
  out.trajectory = run.traj;
  out.steps_used = run.steps_used;
  out.gateway_calls = gateway.call_count(stores.run_id).total - calls_before;
  out.status = run.succeeded ? TaskStatus::done : TaskStatus::failed;
  out.note = run.step_cap_hit ? std::string(err_name(Err::StepCapExceeded)) : run.fail_reason;
  task.status = out.status;
  return out;
}

}  // namespace droidcrew
