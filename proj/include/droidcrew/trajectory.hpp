#pragma once

#include <string>
#include <vector>

#include "droidcrew/device.hpp"
#include "droidcrew/util.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// Action trajectories: the raw material tools and memories are mined from.
// ---------------------------------------------------------------------------

struct ActionStep {
  int index = 0;
  std::string op;
  std::map<std::string, std::string> params;
  std::string goal;
  bool result_ok = true;
  std::string observed_effect;
  std::string note;
  std::string pre_signature;
  std::string post_signature;
  std::string target_element_ref;  // taps only
  bool text_from_goal = false;     // Text content derived from the subtask goal
};

enum class TrajectoryOutcome { success, failure, aborted };

inline std::string trajectory_outcome_name(TrajectoryOutcome o) {
  switch (o) {
    case TrajectoryOutcome::success: return "success";
    case TrajectoryOutcome::failure: return "failure";
    case TrajectoryOutcome::aborted: return "aborted";
  }
  return "?";
}

inline TrajectoryOutcome trajectory_outcome_from_name(std::string_view s) {
  if (s == "success") return TrajectoryOutcome::success;
  if (s == "failure") return TrajectoryOutcome::failure;
  if (s == "aborted") return TrajectoryOutcome::aborted;
  raise(Err::ParseError, "unknown outcome: " + std::string(s));
}

struct ActionTrajectory {
  std::string trajectory_id;
  std::string app_id;
  std::vector<ActionStep> steps;
  TrajectoryOutcome outcome = TrajectoryOutcome::aborted;
  // Every screen capture made while the trajectory was recorded, in order.
  // Stability detection compares repeat visits of the same signature.
  std::vector<ScreenState> observations;
};

// Appends a step, holding the chain invariant: each step starts where the
// previous one ended.
inline void record_step(ActionTrajectory& traj, ActionStep step) {
  if (!traj.steps.empty() && traj.steps.back().post_signature != step.pre_signature)
    raise(Err::ChainBreak, "step " + std::to_string(step.index) + " pre_signature " +
                               step.pre_signature + " != previous post_signature " +
                               traj.steps.back().post_signature);
  step.index = static_cast<int>(traj.steps.size());
  traj.steps.push_back(std::move(step));
}

inline json step_to_json(const ActionStep& s) {
  return json{{"index", s.index},
              {"op", s.op},
              {"params", s.params},
              {"goal", s.goal},
              {"result_ok", s.result_ok},
              {"observed_effect", s.observed_effect},
              {"note", s.note},
              {"pre_signature", s.pre_signature},
              {"post_signature", s.post_signature},
              {"target_element_ref", s.target_element_ref},
              {"text_from_goal", s.text_from_goal}};
}

inline ActionStep step_from_json(const json& j) {
  ActionStep s;
  s.index = j.value("index", 0);
  s.op = j.at("op").get<std::string>();
  if (j.contains("params")) s.params = j.at("params").get<std::map<std::string, std::string>>();
  s.goal = j.value("goal", "");
  s.result_ok = j.value("result_ok", true);
  s.observed_effect = j.value("observed_effect", "");
  s.note = j.value("note", "");
  s.pre_signature = j.value("pre_signature", "");
  s.post_signature = j.value("post_signature", "");
  s.target_element_ref = j.value("target_element_ref", "");
  s.text_from_goal = j.value("text_from_goal", false);
  return s;
}

inline json element_to_json(const UiElement& e) {
  json j{{"element_id", e.element_id},
         {"role", role_name(e.role)},
         {"bounds", {e.bounds.left, e.bounds.top, e.bounds.right, e.bounds.bottom}},
         {"is_text_variable", e.is_text_variable},
         {"focused", e.focused},
         {"z", e.z}};
  if (e.label) j["label"] = *e.label;
  if (e.stable_key) j["stable_key"] = *e.stable_key;
  return j;
}

inline UiElement element_from_json(const json& j) {
  UiElement e;
  e.element_id = j.at("element_id").get<std::string>();
  e.role = role_from_name(j.value("role", "other"));
  auto b = j.at("bounds");
  e.bounds = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
  e.is_text_variable = j.value("is_text_variable", false);
  e.focused = j.value("focused", false);
  e.z = j.value("z", 0);
  if (j.contains("label")) e.label = j.at("label").get<std::string>();
  if (j.contains("stable_key")) e.stable_key = j.at("stable_key").get<std::string>();
  return e;
}

inline json state_to_json(const ScreenState& s) {
  json els = json::array();
  for (const auto& e : s.elements) els.push_back(element_to_json(e));
  return json{{"screen_signature", s.screen_signature},
              {"elements", els},
              {"screenshot_ref", s.screenshot_ref},
              {"app_id", s.app_id},
              {"captured_at", s.captured_at},
              {"logical_name", s.logical_name}};
}

inline ScreenState state_from_json(const json& j) {
  ScreenState s;
  s.screen_signature = j.value("screen_signature", "");
  for (const auto& je : j.value("elements", json::array())) s.elements.push_back(element_from_json(je));
  s.screenshot_ref = j.value("screenshot_ref", "");
  s.app_id = j.value("app_id", "");
  s.captured_at = j.value("captured_at", static_cast<std::int64_t>(0));
  s.logical_name = j.value("logical_name", "");
  return s;
}

// Journal layout: a header line, one line per step, one line per observation.
inline void save_trajectory(const ActionTrajectory& traj, const std::filesystem::path& path) {
  Journal journal(path);
  journal.append(json{{"record", "trajectory"},
                      {"trajectory_id", traj.trajectory_id},
                      {"app_id", traj.app_id},
                      {"outcome", trajectory_outcome_name(traj.outcome)}});
  for (const auto& s : traj.steps) {
    json j = step_to_json(s);
    j["record"] = "step";
    journal.append(j);
  }
  for (const auto& o : traj.observations) {
    json j = state_to_json(o);
    j["record"] = "observation";
    journal.append(j);
  }
}

inline ActionTrajectory load_trajectory(const std::filesystem::path& path) {
  ActionTrajectory traj;
  bool have_header = false;
  for (const auto& j : Journal::read_all(path)) {
    const std::string kind = j.value("record", "step");
    if (kind == "trajectory") {
      traj.trajectory_id = j.value("trajectory_id", "");
      traj.app_id = j.value("app_id", "");
      traj.outcome = trajectory_outcome_from_name(j.value("outcome", "aborted"));
      have_header = true;
    } else if (kind == "step") {
      traj.steps.push_back(step_from_json(j));
    } else if (kind == "observation") {
      traj.observations.push_back(state_from_json(j));
    }
  }
  if (!have_header && traj.steps.empty())
    raise(Err::ParseError, "no trajectory records in " + path.string());
  return traj;
}

}  // namespace droidcrew
