#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "droidcrew/device.hpp"
#include "droidcrew/util.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// Scenario: a deterministic finite transition system describing an app (or a
// launcher plus several apps). Screens declare elements; a transition table
// keyed by (screen, element, op) moves between them.
// ---------------------------------------------------------------------------

struct ScenarioElement {
  std::string id;
  Role role = Role::other;
  std::string label;
  Rect bounds;
  std::string stable_key;
  bool is_text_variable = false;
  bool focusable = false;          // text fields that accept focus on tap
  std::string volatility;          // "", "toggle" (presence alternates per visit),
                                   // "shift" (bounds drift per visit)
  int z = 0;
};

struct ScenarioScreen {
  std::string name;
  std::string app_id;
  std::vector<ScenarioElement> elements;
};

struct ScenarioTransition {
  std::string from;
  std::string op;          // tap | swipe | back | home | text | wait
  std::string element;     // tap/text: element id on `from`
  std::string direction;   // swipe only
  std::string to;
  std::string sets_flag;
  std::string requires_nonempty;  // element id that must hold entered text
};

struct Scenario {
  std::string scenario_id;
  std::string initial_screen;
  std::string home_screen;
  int width = 1080;
  int height = 1920;
  std::map<std::string, ScenarioScreen> screens;
  std::vector<ScenarioTransition> transitions;

  const ScenarioScreen& screen(const std::string& name) const {
    auto it = screens.find(name);
    if (it == screens.end()) raise(Err::ConfigError, "scenario has no screen: " + name);
    return it->second;
  }

  const ScenarioTransition* find_transition(const std::string& from, const std::string& op,
                                            const std::string& element,
                                            const std::string& direction = "") const {
    for (const auto& t : transitions) {
      if (t.from != from || t.op != op) continue;
      if (op == "tap" || op == "text") {
        if (t.element == element) return &t;
      } else if (op == "swipe") {
        if (t.direction == direction) return &t;
      } else {
        return &t;  // back / home / wait
      }
    }
    return nullptr;
  }
};

inline Scenario parse_scenario(const json& j) {
  Scenario sc;
  if (!j.is_object() || !j.contains("screens") || !j.contains("initial_screen"))
    raise(Err::ParseError, "scenario needs screens[] and initial_screen");
  sc.scenario_id = j.value("scenario_id", "scenario");
  sc.initial_screen = j.at("initial_screen").get<std::string>();
  sc.home_screen = j.value("home_screen", sc.initial_screen);
  sc.width = j.value("width", 1080);
  sc.height = j.value("height", 1920);
  for (const auto& js : j.at("screens")) {
    ScenarioScreen s;
    s.name = js.at("name").get<std::string>();
    s.app_id = js.value("app_id", "app");
    for (const auto& je : js.value("elements", json::array())) {
      ScenarioElement e;
      e.id = je.at("id").get<std::string>();
      e.role = role_from_name(je.value("role", "other"));
      e.label = je.value("label", "");
      auto b = je.at("bounds");
      e.bounds = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
      if (e.bounds.right <= e.bounds.left || e.bounds.bottom <= e.bounds.top)
        raise(Err::ParseError, "degenerate bounds on element " + e.id);
      e.stable_key = je.value("stable_key", "");
      e.is_text_variable = je.value("is_text_variable", false);
      e.focusable = je.value("focusable", e.role == Role::text_field);
      e.volatility = je.value("volatile", "");
      e.z = je.value("z", 0);
      s.elements.push_back(std::move(e));
    }
    sc.screens[s.name] = std::move(s);
  }
  for (const auto& jt : j.value("transitions", json::array())) {
    ScenarioTransition t;
    t.from = jt.at("from").get<std::string>();
    t.op = jt.at("op").get<std::string>();
    t.element = jt.value("element", "");
    t.direction = jt.value("direction", "");
    t.to = jt.at("to").get<std::string>();
    t.sets_flag = jt.value("sets_flag", "");
    t.requires_nonempty = jt.value("requires_nonempty", "");
    sc.transitions.push_back(std::move(t));
  }
  if (!sc.screens.count(sc.initial_screen))
    raise(Err::ParseError, "initial_screen not declared: " + sc.initial_screen);
  for (const auto& t : sc.transitions)
    if (!sc.screens.count(t.from) || !sc.screens.count(t.to))
      raise(Err::ParseError, "transition references unknown screen: " + t.from + "->" + t.to);
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  return parse_scenario(parse_json_file(path));
}

// ---------------------------------------------------------------------------
// SimDevice
// ---------------------------------------------------------------------------

class SimDevice : public Device {
 public:
  explicit SimDevice(Scenario scenario, int wait_delay_ms = 0)
      : scenario_(std::move(scenario)), wait_delay_ms_(wait_delay_ms) {
    reset();
  }

  static std::shared_ptr<SimDevice> from_file(const std::filesystem::path& path) {
    return std::make_shared<SimDevice>(load_scenario(path));
  }

  void reset() override {
    entry_counts_.clear();
    entered_text_.clear();
    focused_.reset();
    flags_.clear();
    capture_seq_ = 0;
    connected_ = true;
    enter(scenario_.initial_screen);
  }

  int width() const override { return scenario_.width; }
  int height() const override { return scenario_.height; }

  // Test hook: a disconnected simulator reports DeviceUnreachable like a
  // dropped adb session would.
  void set_connected(bool connected) { connected_ = connected; }

  bool probe_flag(const std::string& name) const override { return flags_.count(name) > 0; }
  const std::set<std::string>& flags() const { return flags_; }
  const std::string& current_screen() const { return current_; }
  const Scenario& scenario() const { return scenario_; }

 protected:
  ScreenState capture_impl() override {
    check_connected();
    return snapshot();
  }

  ActionResult perform_impl(const Action& action) override {
    check_connected();
    switch (action.op) {
      case Op::Tap: return do_tap(action);
      case Op::Text: return do_text(action);
      case Op::Swipe: return do_swipe(action);
      case Op::Back: return do_nav("back");
      case Op::Home: return do_home();
      case Op::Wait: return do_wait();
      case Op::Read: {
        std::string text = read_document(action.str_param("file"), action.str_param("goal"));
        return result_unchanged("read: " + text);
      }
      case Op::Think: return result_unchanged("think: no device effect");
      case Op::Stop: {
        ActionResult r;
        r.ok = true;
        r.observed_effect = Effect::terminal;
        r.post_state = snapshot();
        r.note = "stopped";
        return r;
      }
    }
    raise(Err::InvalidParams, "unhandled op");
  }

 private:
  void check_connected() const {
    if (!connected_) raise(Err::DeviceUnreachable, "simulator disconnected");
  }

  void enter(const std::string& screen) {
    current_ = screen;
    entry_counts_[screen] += 1;
    focused_.reset();
  }

  int visits(const std::string& screen) const {
    auto it = entry_counts_.find(screen);
    return it == entry_counts_.end() ? 0 : it->second;
  }

  std::string text_key(const std::string& screen, const std::string& element) const {
    return screen + "/" + element;
  }

  // Materialize the current screen: volatile elements alternate with the
  // entry count, entered text overrides labels.
  std::vector<UiElement> materialize(const std::string& screen_name) const {
    const ScenarioScreen& s = scenario_.screen(screen_name);
    int visit = std::max(1, visits(screen_name));
    std::vector<UiElement> out;
    for (const auto& se : s.elements) {
      Rect bounds = se.bounds;
      if (se.volatility == "toggle" && visit % 2 == 0) continue;  // absent on even visits
      if (se.volatility == "shift") {
        int dy = ((visit - 1) % 2) * (kBoundsBucket + kBoundsBucket / 2);
        bounds.top += dy;
        bounds.bottom += dy;
      }
      UiElement e;
      e.element_id = se.id;
      e.role = se.role;
      e.bounds = bounds;
      if (!se.stable_key.empty()) e.stable_key = se.stable_key;
      e.is_text_variable = se.is_text_variable;
      e.focused = focused_ && *focused_ == se.id;
      e.z = se.z;
      auto it = entered_text_.find(text_key(screen_name, se.id));
      e.label = it != entered_text_.end() ? it->second : se.label;
      out.push_back(std::move(e));
    }
    return out;
  }

  ScreenState snapshot() {
    const ScenarioScreen& s = scenario_.screen(current_);
    ScreenState st;
    st.elements = materialize(current_);
    st.screen_signature = droidcrew::screen_signature(st.elements);
    st.screenshot_ref = "sim://" + scenario_.scenario_id + "/" + current_;
    st.app_id = s.app_id;
    st.captured_at = ++capture_seq_;
    st.logical_name = current_;
    return st;
  }

  ActionResult result_unchanged(std::string note) {
    ActionResult r;
    r.ok = true;
    r.observed_effect = Effect::screen_unchanged;
    r.post_state = snapshot();
    r.note = std::move(note);
    return r;
  }

  ActionResult take_transition(const ScenarioTransition& t) {
    const std::string before_app = scenario_.screen(current_).app_id;
    if (!t.requires_nonempty.empty()) {
      auto it = entered_text_.find(text_key(current_, t.requires_nonempty));
      if (it == entered_text_.end() || it->second.empty())
        return result_unchanged("requires text in " + t.requires_nonempty);
    }
    bool same = t.to == current_;
    enter(t.to);
    if (!t.sets_flag.empty()) flags_.insert(t.sets_flag);
    ActionResult r;
    r.ok = true;
    const std::string after_app = scenario_.screen(current_).app_id;
    r.observed_effect = same                     ? Effect::screen_unchanged
                        : before_app != after_app ? Effect::app_switched
                                                  : Effect::screen_changed;
    r.post_state = snapshot();
    r.note = "-> " + t.to + (t.sets_flag.empty() ? "" : " [flag " + t.sets_flag + "]");
    return r;
  }

  ActionResult do_tap(const Action& a) {
    int x = a.int_param("x");
    int y = a.int_param("y");
    if (x >= width() || y >= height())
      raise(Err::ActionRejected, "tap outside device bounds: " + std::to_string(x) + "," +
                                     std::to_string(y));
    auto elements = materialize(current_);
    const UiElement* hit = hit_test(elements, x, y);
    if (!hit) return result_unchanged("no element at point");
    const std::string id = hit->element_id;
    if (const auto* t = scenario_.find_transition(current_, "tap", id)) return take_transition(*t);
    const ScenarioScreen& s = scenario_.screen(current_);
    for (const auto& se : s.elements) {
      if (se.id == id && se.focusable) {
        focused_ = id;
        return result_unchanged("focused " + id);
      }
    }
    return result_unchanged("no effect on " + id);
  }

  ActionResult do_text(const Action& a) {
    if (!focused_) raise(Err::ActionRejected, "no focused text field");
    const std::string& content = a.str_param("content");
    entered_text_[text_key(current_, *focused_)] = content;
    if (const auto* t = scenario_.find_transition(current_, "text", *focused_))
      return take_transition(*t);
    return result_unchanged("typed into " + *focused_);
  }

  ActionResult do_swipe(const Action& a) {
    int x = a.int_param("x");
    int y = a.int_param("y");
    if (x >= width() || y >= height()) raise(Err::ActionRejected, "swipe outside device bounds");
    if (const auto* t = scenario_.find_transition(current_, "swipe", "", a.str_param("direction")))
      return take_transition(*t);
    return result_unchanged("swipe had no effect");
  }

  ActionResult do_nav(const std::string& op) {
    if (const auto* t = scenario_.find_transition(current_, op, "")) return take_transition(*t);
    return result_unchanged(op + " has no effect here");
  }

  ActionResult do_home() {
    if (current_ == scenario_.home_screen) return result_unchanged("already home");
    ScenarioTransition t;
    t.from = current_;
    t.op = "home";
    t.to = scenario_.home_screen;
    return take_transition(t);
  }

  ActionResult do_wait() {
    if (wait_delay_ms_ > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(wait_delay_ms_));
    if (const auto* t = scenario_.find_transition(current_, "wait", "")) return take_transition(*t);
    return result_unchanged("waited");
  }

  Scenario scenario_;
  int wait_delay_ms_;
  std::string current_;
  std::map<std::string, int> entry_counts_;
  std::map<std::string, std::string> entered_text_;
  std::optional<std::string> focused_;
  std::set<std::string> flags_;
  std::int64_t capture_seq_ = 0;
  bool connected_ = true;
};

}  // namespace droidcrew
