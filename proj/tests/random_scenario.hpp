#pragma once

// Random simulator scenarios and recorded walks over them, used by the
// toolsmith property tests and the acceptance suite. The walker records
// trajectories the same way the runtime does, but independently of the
// exploration engine.

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "droidcrew/sim_device.hpp"
#include "droidcrew/trajectory.hpp"

namespace testsupport {

using droidcrew::Action;
using droidcrew::ActionResult;
using droidcrew::ActionStep;
using droidcrew::ActionTrajectory;
using droidcrew::Scenario;
using droidcrew::ScenarioElement;
using droidcrew::ScenarioScreen;
using droidcrew::ScenarioTransition;
using droidcrew::ScreenState;
using droidcrew::SimDevice;

// A connected random scenario: every screen reachable from screen 0 through
// taps on stable buttons; some screens carry a focusable text field and a
// volatile (toggling) list item.
inline Scenario random_scenario(std::mt19937& rng, int max_screens = 10) {
  Scenario sc;
  int n = 3 + static_cast<int>(rng() % static_cast<unsigned>(max_screens - 2));
  sc.scenario_id = "random";
  sc.initial_screen = "s0";
  sc.home_screen = "s0";

  for (int i = 0; i < n; ++i) {
    ScenarioScreen screen;
    screen.name = "s" + std::to_string(i);
    screen.app_id = "randapp";
    int buttons = 2 + static_cast<int>(rng() % 4);
    for (int j = 0; j < buttons; ++j) {
      ScenarioElement e;
      e.id = "s" + std::to_string(i) + "_b" + std::to_string(j);
      e.role = droidcrew::Role::button;
      e.label = "B" + std::to_string(j);
      e.bounds = {j * 150 + 10, 300, j * 150 + 130, 420};
      e.stable_key = "rand:id/" + e.id;
      screen.elements.push_back(e);
    }
    if (rng() % 2 == 0) {
      ScenarioElement f;
      f.id = "s" + std::to_string(i) + "_field";
      f.role = droidcrew::Role::text_field;
      f.bounds = {40, 60, 840, 180};
      f.stable_key = "rand:id/" + f.id;
      f.is_text_variable = true;
      f.focusable = true;
      screen.elements.push_back(f);
    }
    if (rng() % 3 == 0) {
      ScenarioElement v;
      v.id = "s" + std::to_string(i) + "_volatile";
      v.role = droidcrew::Role::list_item;
      v.label = "changing row";
      v.bounds = {0, 500, 1080, 700};
      v.is_text_variable = true;
      v.volatility = "toggle";
      screen.elements.push_back(v);
    }
    sc.screens[screen.name] = screen;
  }

  // spanning tree keeps everything reachable; extra edges add variety
  std::map<std::string, std::set<std::string>> used_buttons;
  auto add_edge = [&](int from, int to) {
    const auto& screen = sc.screens["s" + std::to_string(from)];
    for (const auto& e : screen.elements) {
      if (e.role != droidcrew::Role::button) continue;
      if (used_buttons[screen.name].count(e.id)) continue;
      ScenarioTransition t;
      t.from = screen.name;
      t.op = "tap";
      t.element = e.id;
      t.to = "s" + std::to_string(to);
      sc.transitions.push_back(t);
      used_buttons[screen.name].insert(e.id);
      return true;
    }
    return false;
  };
  for (int i = 1; i < n; ++i) {
    int from = static_cast<int>(rng() % static_cast<unsigned>(i));
    if (!add_edge(from, i)) add_edge(0, i);
  }
  for (int extra = 0; extra < n / 2; ++extra)
    add_edge(static_cast<int>(rng() % static_cast<unsigned>(n)),
             static_cast<int>(rng() % static_cast<unsigned>(n)));

  return sc;
}

// One recorded step through the device, mirroring what exploration records.
inline void record_walk_step(ActionTrajectory& traj, SimDevice& dev, const Action& action,
                             const std::string& goal, const std::string& target_ref,
                             bool text_from_goal) {
  ScreenState pre = dev.capture_screen();
  ActionResult result = dev.perform(action);
  ActionStep step;
  step.op = std::string(droidcrew::op_name(action.op));
  step.params = action.params;
  step.goal = goal;
  step.result_ok = result.ok;
  step.observed_effect = droidcrew::effect_name(result.observed_effect);
  step.note = result.note;
  step.pre_signature = pre.screen_signature;
  step.post_signature = result.post_state.screen_signature;
  step.target_element_ref = target_ref;
  step.text_from_goal = text_from_goal;
  droidcrew::record_step(traj, std::move(step));
  traj.observations.push_back(result.post_state);
}

// Random successful walk: taps along declared transitions, occasional text
// entry, occasional revisit so volatile elements get contradicting sightings.
inline ActionTrajectory random_minable_walk(const Scenario& sc, SimDevice& dev,
                                            std::mt19937& rng) {
  dev.reset();
  ActionTrajectory traj;
  traj.trajectory_id = "walk";
  traj.app_id = "randapp";
  traj.observations.push_back(dev.capture_screen());
  int steps = 2 + static_cast<int>(rng() % 6);
  for (int k = 0; k < steps; ++k) {
    const std::string& here = dev.current_screen();
    ScreenState state = dev.capture_screen();

    // sometimes type into a field first (the content is goal-derived)
    const droidcrew::UiElement* field = nullptr;
    for (const auto& e : state.elements)
      if (e.role == droidcrew::Role::text_field) field = &e;
    if (field && rng() % 3 == 0) {
      record_walk_step(traj, dev,
                       Action::tap(field->bounds.center_x(), field->bounds.center_y()),
                       "fill the field", droidcrew::element_ref(*field), false);
      record_walk_step(traj, dev, Action::text("value " + std::to_string(k)),
                       "enter the field value", "", true);
    }

    std::vector<const droidcrew::ScenarioTransition*> options;
    for (const auto& t : sc.transitions)
      if (t.from == here && t.op == "tap") options.push_back(&t);
    if (options.empty()) break;
    const auto* chosen = options[rng() % options.size()];
    ScreenState fresh = dev.capture_screen();
    const droidcrew::UiElement* target = fresh.find(chosen->element);
    if (!target) break;
    record_walk_step(traj, dev,
                     Action::tap(target->bounds.center_x(), target->bounds.center_y()),
                     "navigate to " + chosen->to, droidcrew::element_ref(*target), false);
  }
  traj.outcome = droidcrew::TrajectoryOutcome::success;
  return traj;
}

// Brute-force stability oracle, independent of the library's detector: an
// element is stable iff it appears in every observation of its screen
// signature with the same (key-or-role, bucket) identity.
inline bool oracle_is_stable(const ActionTrajectory& traj, const std::string& screen_signature,
                             const std::string& ref) {
  int visits = 0;
  int present = 0;
  std::set<std::string> shapes;  // role|bucket identity must be uniform
  for (const auto& obs : traj.observations) {
    if (obs.screen_signature != screen_signature) continue;
    ++visits;
    for (const auto& e : obs.elements)
      if (droidcrew::element_ref(e) == ref) {
        ++present;
        shapes.insert(std::string(droidcrew::role_name(e.role)) + "|" +
                      droidcrew::bounds_bucket(e.bounds));
        break;
      }
  }
  return visits > 0 && present == visits && shapes.size() == 1;
}

}  // namespace testsupport
