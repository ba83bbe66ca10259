#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "droidcrew/device.hpp"
#include "droidcrew/gateway.hpp"
#include "droidcrew/trajectory.hpp"
#include "droidcrew/util.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// Stable-element detection
// ---------------------------------------------------------------------------

struct StableElementInfo {
  std::string screen_signature;
  std::string element_ref;
  std::string role;
  Rect bounds;          // from the latest visit
  bool low_support = false;   // seen on a single visit only
  bool text_variable = false; // label differed across visits
};

class StabilityReport {
 public:
  void add(StableElementInfo info) {
    index_[key(info.screen_signature, info.element_ref)] = static_cast<int>(infos_.size());
    infos_.push_back(std::move(info));
  }

  bool is_stable(const std::string& screen_signature, const std::string& ref) const {
    return index_.count(key(screen_signature, ref)) > 0;
  }

  const StableElementInfo* find(const std::string& screen_signature, const std::string& ref) const {
    auto it = index_.find(key(screen_signature, ref));
    if (it == index_.end()) return nullptr;
    return &infos_[static_cast<size_t>(it->second)];
  }

  const std::vector<StableElementInfo>& all() const { return infos_; }

 private:
  static std::string key(const std::string& sig, const std::string& ref) {
    return sig + "\x1f" + ref;
  }
  std::vector<StableElementInfo> infos_;
  std::map<std::string, int> index_;
};

// An element is stable when every observation of its screen signature shows
// it with identical (stable_key, role, bounds-bucket). One sighting counts as
// stable by default but is flagged low-support.
inline StabilityReport detect_stable_elements(const std::vector<ActionTrajectory>& trajs) {
  struct Sighting {
    std::string role;
    std::string bucket;
    std::string label;
    Rect bounds;
  };
  // (signature, ref) -> sightings per visit; and visits per signature
  std::map<std::string, std::map<std::string, std::vector<Sighting>>> by_screen;
  std::map<std::string, int> visit_counts;

  for (const auto& traj : trajs) {
    for (const auto& obs : traj.observations) {
      visit_counts[obs.screen_signature] += 1;
      for (const auto& e : obs.elements) {
        by_screen[obs.screen_signature][element_ref(e)].push_back(
            {std::string(role_name(e.role)), bounds_bucket(e.bounds), e.label.value_or(""),
             e.bounds});
      }
    }
  }

  StabilityReport report;
  for (const auto& [sig, elements] : by_screen) {
    int visits = visit_counts[sig];
    for (const auto& [ref, sightings] : elements) {
      if (static_cast<int>(sightings.size()) != visits) continue;  // missing on some visit
      bool uniform = true;
      bool label_varies = false;
      for (const auto& s : sightings) {
        if (s.role != sightings.front().role || s.bucket != sightings.front().bucket)
          uniform = false;
        if (s.label != sightings.front().label) label_varies = true;
      }
      if (!uniform) continue;
      StableElementInfo info;
      info.screen_signature = sig;
      info.element_ref = ref;
      info.role = sightings.front().role;
      info.bounds = sightings.back().bounds;
      info.low_support = visits <= 1;
      info.text_variable = label_varies;
      report.add(info);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Workflow tools
// ---------------------------------------------------------------------------

struct Binding {
  bool formal = false;
  std::string value;  // literal value, or the formal parameter name

  static Binding lit(std::string v) { return {false, std::move(v)}; }
  static Binding param(std::string name) { return {true, std::move(name)}; }
};

struct FormalParam {
  std::string name;
  std::string description;
};

struct ProgramStep {
  std::string op;  // tap | text | swipe | back | home | wait
  std::map<std::string, Binding> bindings;
  std::string target_ref;  // taps: stable_key or role@bucket
  int fallback_x = 0;      // recorded center, used when the ref is absent
  int fallback_y = 0;
  std::string pre_signature;
  std::string post_signature;
};

struct WorkflowTool {
  std::string tool_id;
  std::string app_id;
  std::string summary;
  std::string initial_signature;
  std::string final_signature;
  std::vector<FormalParam> formal_params;
  std::vector<ProgramStep> program;
  std::string provenance;  // source trajectory id
};

inline json tool_to_json(const WorkflowTool& t) {
  json params = json::array();
  for (const auto& p : t.formal_params)
    params.push_back({{"name", p.name}, {"description", p.description}});
  json program = json::array();
  for (const auto& s : t.program) {
    json bindings = json::object();
    for (const auto& [k, b] : s.bindings)
      bindings[k] = b.formal ? json{{"formal", b.value}} : json{{"lit", b.value}};
    program.push_back({{"op", s.op},
                       {"bindings", bindings},
                       {"target_ref", s.target_ref},
                       {"fallback_x", s.fallback_x},
                       {"fallback_y", s.fallback_y},
                       {"pre_signature", s.pre_signature},
                       {"post_signature", s.post_signature}});
  }
  return json{{"tool_id", t.tool_id},
              {"app_id", t.app_id},
              {"summary", t.summary},
              {"initial_signature", t.initial_signature},
              {"final_signature", t.final_signature},
              {"formal_params", params},
              {"program", program},
              {"provenance", t.provenance}};
}

inline WorkflowTool tool_from_json(const json& j) {
  WorkflowTool t;
  t.tool_id = j.at("tool_id").get<std::string>();
  t.app_id = j.value("app_id", "");
  t.summary = j.value("summary", "");
  t.initial_signature = j.at("initial_signature").get<std::string>();
  t.final_signature = j.at("final_signature").get<std::string>();
  for (const auto& jp : j.value("formal_params", json::array()))
    t.formal_params.push_back({jp.at("name").get<std::string>(), jp.value("description", "")});
  for (const auto& js : j.value("program", json::array())) {
    ProgramStep s;
    s.op = js.at("op").get<std::string>();
    for (const auto& [k, jb] : js.value("bindings", json::object()).items()) {
      if (jb.contains("formal"))
        s.bindings[k] = Binding::param(jb.at("formal").get<std::string>());
      else
        s.bindings[k] = Binding::lit(jb.at("lit").get<std::string>());
    }
    s.target_ref = js.value("target_ref", "");
    s.fallback_x = js.value("fallback_x", 0);
    s.fallback_y = js.value("fallback_y", 0);
    s.pre_signature = js.value("pre_signature", "");
    s.post_signature = js.value("post_signature", "");
    t.program.push_back(std::move(s));
  }
  t.provenance = j.value("provenance", "");
  return t;
}

// ---------------------------------------------------------------------------
// Mining
// ---------------------------------------------------------------------------

namespace detail {

// Formal parameter names come from the step goal ("enter tweet body" ->
// "body"); collisions get a numeric suffix.
inline std::string param_name_for(const ActionStep& step, const std::set<std::string>& taken) {
  auto toks = tokenize(step.goal);
  std::string base = toks.empty() ? "text" : toks.back();
  std::string name = base;
  int n = 2;
  while (taken.count(name)) name = base + "_" + std::to_string(n++);
  return name;
}

inline const ScreenState* observation_for(const ActionTrajectory& traj, const std::string& sig,
                                          size_t before_index) {
  // latest observation of `sig` no later than the step's own position
  const ScreenState* found = nullptr;
  size_t seen = 0;
  for (const auto& obs : traj.observations) {
    if (obs.screen_signature == sig) found = &obs;
    if (++seen > before_index + 1) break;
  }
  if (!found)
    for (const auto& obs : traj.observations)
      if (obs.screen_signature == sig) return &obs;
  return found;
}

}  // namespace detail

// Turns a successful trajectory into a replayable tool. Device-affecting
// steps survive; Think/Read are cognitive and dropped; Stop is a terminal
// marker. An exploratory tap that changed nothing can be dropped, but a tap
// that navigated (or focused a field for a following Text) is essential and
// must target a stable element.
inline WorkflowTool mine_workflow(const ActionTrajectory& traj, const StabilityReport& stable,
                                  ModelGateway* gateway = nullptr) {
  if (traj.outcome != TrajectoryOutcome::success)
    raise(Err::NotMinable, "only successful trajectories are minable");
  if (traj.steps.empty()) raise(Err::NotMinable, "empty trajectory");

  WorkflowTool tool;
  tool.app_id = traj.app_id;
  tool.provenance = traj.trajectory_id;
  tool.initial_signature = traj.steps.front().pre_signature;
  tool.final_signature = traj.steps.back().post_signature;

  std::set<std::string> taken_names;
  std::vector<std::string> goals;

  for (size_t i = 0; i < traj.steps.size(); ++i) {
    const ActionStep& step = traj.steps[i];
    Op op = op_from_name(step.op);
    if (op == Op::Think || op == Op::Read || op == Op::Stop) continue;

    ProgramStep ps;
    ps.op = step.op;
    ps.pre_signature = step.pre_signature;
    ps.post_signature = step.post_signature;

    if (op == Op::Tap) {
      bool is_stable = stable.is_stable(step.pre_signature, step.target_element_ref);
      bool changed_screen = step.observed_effect != "screen_unchanged";
      bool focused_field = step.note.rfind("focused", 0) == 0;
      bool next_is_text = false;
      for (size_t k = i + 1; k < traj.steps.size(); ++k) {
        Op nop = op_from_name(traj.steps[k].op);
        if (nop == Op::Think || nop == Op::Read) continue;
        next_is_text = nop == Op::Text;
        break;
      }
      bool essential = changed_screen || focused_field || next_is_text;
      if (!is_stable) {
        if (!essential) continue;  // exploratory dead tap, drop it
        raise(Err::NotMinable, "essential tap on unstable element " + step.target_element_ref +
                                   " (screen " + step.pre_signature + ")");
      }
      ps.target_ref = step.target_element_ref;
      const StableElementInfo* info = stable.find(step.pre_signature, step.target_element_ref);
      if (info) {
        ps.fallback_x = info->bounds.center_x();
        ps.fallback_y = info->bounds.center_y();
      }
    } else if (op == Op::Text) {
      const std::string content = step.params.count("content") ? step.params.at("content") : "";
      if (step.text_from_goal) {
        std::string name = detail::param_name_for(step, taken_names);
        taken_names.insert(name);
        tool.formal_params.push_back({name, "text for step " + std::to_string(tool.program.size()) +
                                                (step.goal.empty() ? "" : " (" + step.goal + ")")});
        ps.bindings["content"] = Binding::param(name);
      } else {
        ps.bindings["content"] = Binding::lit(content);
      }
    } else if (op == Op::Swipe) {
      ps.bindings["x"] = Binding::lit(step.params.at("x"));
      ps.bindings["y"] = Binding::lit(step.params.at("y"));
      ps.bindings["direction"] = Binding::lit(step.params.at("direction"));
    }
    // back / home / wait carry no bindings

    if (!step.goal.empty() && (goals.empty() || goals.back() != step.goal))
      goals.push_back(step.goal);
    tool.program.push_back(std::move(ps));
  }

  if (tool.program.empty()) raise(Err::NotMinable, "no device-affecting steps survived");

  if (gateway && !gateway->scripted()) {
    ModelRequest req;
    req.role_tag = RoleTag::write_tool;
    req.prompt_text = "Summarize this workflow in one line.";
    for (const auto& g : goals) req.prompt_text += "\n- " + g;
    tool.summary = gateway->complete(req).text;
  } else {
    std::string s;
    for (const auto& g : goals) {
      if (!s.empty()) s += " then ";
      s += g;
    }
    tool.summary = s.empty() ? "replay " + std::to_string(tool.program.size()) + " steps" : s;
  }

  tool.tool_id = tool.app_id + "-" +
                 hash_hex(tool.app_id + tool.initial_signature + tool.final_signature +
                          std::to_string(tool.program.size()) + tool.summary)
                     .substr(0, 8);
  return tool;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

class StepFailedError : public Error {
 public:
  StepFailedError(std::string what, ActionTrajectory prefix)
      : Error(Err::StepFailed, std::move(what)), prefix_(std::move(prefix)) {}
  const ActionTrajectory& prefix() const { return prefix_; }

 private:
  ActionTrajectory prefix_;
};

// Replays a tool's program on the device. No gateway in sight: the signature
// admits none. Divergence (missing target, signature drift) halts with the
// completed prefix attached.
inline ActionTrajectory execute_tool(const WorkflowTool& tool,
                                     const std::map<std::string, std::string>& bindings,
                                     Device& device) {
  for (const auto& p : tool.formal_params)
    if (!bindings.count(p.name)) raise(Err::MissingBinding, "missing binding for " + p.name);

  ScreenState current = device.capture_screen();
  if (current.screen_signature != tool.initial_signature)
    raise(Err::PreconditionMismatch, "screen " + current.screen_signature +
                                         " does not match tool initial state " +
                                         tool.initial_signature);

  ActionTrajectory out;
  out.trajectory_id = tool.tool_id + "-replay";
  out.app_id = tool.app_id;
  out.observations.push_back(current);

  auto resolve = [&](const Binding& b) -> std::string {
    return b.formal ? bindings.at(b.value) : b.value;
  };

  for (size_t i = 0; i < tool.program.size(); ++i) {
    const ProgramStep& ps = tool.program[i];
    if (current.screen_signature != ps.pre_signature) {
      out.outcome = TrajectoryOutcome::aborted;
      throw StepFailedError("screen drifted before step " + std::to_string(i) +
                                " (completed prefix " + std::to_string(out.steps.size()) + ")",
                            out);
    }
    Action action;
    Op op = op_from_name(ps.op);
    if (op == Op::Tap) {
      const UiElement* target = current.find(ps.target_ref);
      int x = target ? target->bounds.center_x() : ps.fallback_x;
      int y = target ? target->bounds.center_y() : ps.fallback_y;
      action = Action::tap(x, y);
    } else if (op == Op::Text) {
      action = Action::text(resolve(ps.bindings.at("content")));
    } else if (op == Op::Swipe) {
      action = Action::swipe(std::stoi(resolve(ps.bindings.at("x"))),
                             std::stoi(resolve(ps.bindings.at("y"))),
                             resolve(ps.bindings.at("direction")));
    } else if (op == Op::Back) {
      action = Action::back();
    } else if (op == Op::Home) {
      action = Action::home();
    } else if (op == Op::Wait) {
      action = Action::wait();
    } else {
      raise(Err::InvalidParams, "op not allowed in tool program: " + ps.op);
    }

    ActionResult result;
    try {
      result = device.perform(action);
    } catch (const Error& e) {
      out.outcome = TrajectoryOutcome::aborted;
      throw StepFailedError("device rejected step " + std::to_string(i) + ": " + e.what() +
                                " (completed prefix " + std::to_string(out.steps.size()) + ")",
                            out);
    }
    ActionStep step;
    step.op = ps.op;
    step.params = action.params;
    step.goal = "replay " + tool.tool_id;
    step.result_ok = result.ok;
    step.observed_effect = effect_name(result.observed_effect);
    step.note = result.note;
    step.pre_signature = current.screen_signature;
    step.post_signature = result.post_state.screen_signature;
    step.target_element_ref = ps.target_ref;
    record_step(out, std::move(step));
    current = result.post_state;
    out.observations.push_back(current);

    if (current.screen_signature != ps.post_signature) {
      out.outcome = TrajectoryOutcome::aborted;
      throw StepFailedError("divergence at step " + std::to_string(i) + ": expected " +
                                ps.post_signature + ", observed " + current.screen_signature +
                                " (completed prefix " + std::to_string(i) + ")",
                            out);
    }
  }
  out.outcome = TrajectoryOutcome::success;
  return out;
}

struct ValidationReport {
  bool passed = false;
  std::string failure_kind;  // "", "precondition", "replay_mismatch"
  int diverged_at_step = -1;
  std::string note;
};

// Replays the program with sample bindings on a resettable device; passes
// iff the final signature matches the recorded one.
inline ValidationReport validate_tool(const WorkflowTool& tool, Device& device) {
  device.reset();
  std::map<std::string, std::string> sample;
  for (const auto& p : tool.formal_params) sample[p.name] = "sample " + p.name;
  ValidationReport report;
  try {
    ActionTrajectory replay = execute_tool(tool, sample, device);
    if (!replay.steps.empty() &&
        replay.steps.back().post_signature == tool.final_signature) {
      report.passed = true;
    } else {
      report.failure_kind = "replay_mismatch";
      report.note = "final signature mismatch";
    }
  } catch (const StepFailedError& e) {
    report.failure_kind = "replay_mismatch";
    report.diverged_at_step = static_cast<int>(e.prefix().steps.size());
    report.note = e.what();
  } catch (const Error& e) {
    if (e.code() == Err::PreconditionMismatch) {
      report.failure_kind = "precondition";
      report.note = e.what();
    } else {
      report.failure_kind = "replay_mismatch";
      report.note = e.what();
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

struct ToolMatch {
  WorkflowTool tool;
  bool exact_signature = false;  // matches the current screen; no navigation needed
  double score = 0.0;
};

class ToolRegistry {
 public:
  // Registration requires a passing validation report.
  void register_tool(const WorkflowTool& tool, const ValidationReport& report) {
    if (!report.passed)
      raise(Err::InvalidParams, "tool " + tool.tool_id + " failed validation: " + report.note);
    std::unique_lock lock(mu_);
    tools_[tool.tool_id] = tool;
  }

  std::optional<WorkflowTool> get(const std::string& tool_id) const {
    std::shared_lock lock(mu_);
    auto it = tools_.find(tool_id);
    if (it == tools_.end()) return std::nullopt;
    return it->second;
  }

  size_t size() const {
    std::shared_lock lock(mu_);
    return tools_.size();
  }

  // Exact (app, current-screen) matches first, ranked by goal overlap with
  // the summary; then other same-app tools with positive overlap, flagged as
  // needing navigation.
  std::vector<ToolMatch> lookup(const std::string& app_id, const std::string& current_signature,
                                const std::string& goal) const {
    std::shared_lock lock(mu_);
    std::vector<ToolMatch> exact, inexact;
    for (const auto& [id, tool] : tools_) {
      if (tool.app_id != app_id) continue;
      double score = overlap_score(goal, tool.summary);
      if (tool.initial_signature == current_signature) {
        exact.push_back({tool, true, score});
      } else if (score > 0.0) {
        inexact.push_back({tool, false, score});
      }
    }
    auto by_score = [](const ToolMatch& a, const ToolMatch& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.tool.tool_id < b.tool.tool_id;
    };
    std::sort(exact.begin(), exact.end(), by_score);
    std::sort(inexact.begin(), inexact.end(), by_score);
    exact.insert(exact.end(), inexact.begin(), inexact.end());
    return exact;
  }

  std::vector<WorkflowTool> all() const {
    std::shared_lock lock(mu_);
    std::vector<WorkflowTool> out;
    for (const auto& [id, tool] : tools_) out.push_back(tool);
    return out;
  }

  // One JSON file per tool under `dir`.
  void save(const std::filesystem::path& dir) const {
    std::shared_lock lock(mu_);
    std::filesystem::create_directories(dir);
    for (const auto& [id, tool] : tools_)
      write_file(dir / (id + ".tool.json"), tool_to_json(tool).dump(2) + "\n");
  }

  // Loads previously validated tools; files are trusted as validated.
  size_t load(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir)) return 0;
    size_t n = 0;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.path().string().ends_with(".tool.json")) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::unique_lock lock(mu_);
    for (const auto& f : files) {
      WorkflowTool t = tool_from_json(parse_json_file(f));
      tools_[t.tool_id] = std::move(t);
      ++n;
    }
    return n;
  }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, WorkflowTool> tools_;
};

}  // namespace droidcrew
