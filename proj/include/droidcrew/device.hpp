#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "droidcrew/util.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// UI observation types
// ---------------------------------------------------------------------------

struct Rect {
  int left = 0;
  int top = 0;
  int right = 0;
  int bottom = 0;

  bool contains(int x, int y) const { return x >= left && x < right && y >= top && y < bottom; }
  long long area() const {
    return static_cast<long long>(right - left) * static_cast<long long>(bottom - top);
  }
  int center_x() const { return (left + right) / 2; }
  int center_y() const { return (top + bottom) / 2; }

  bool operator==(const Rect&) const = default;
};

enum class Role { button, text_field, icon, list_item, image, container, other };

inline std::string role_name(Role r) {
  switch (r) {
    case Role::button: return "button";
    case Role::text_field: return "text_field";
    case Role::icon: return "icon";
    case Role::list_item: return "list_item";
    case Role::image: return "image";
    case Role::container: return "container";
    case Role::other: return "other";
  }
  return "other";
}

inline Role role_from_name(std::string_view s) {
  if (s == "button") return Role::button;
  if (s == "text_field") return Role::text_field;
  if (s == "icon") return Role::icon;
  if (s == "list_item") return Role::list_item;
  if (s == "image") return Role::image;
  if (s == "container") return Role::container;
  return Role::other;
}

struct UiElement {
  std::string element_id;
  Role role = Role::other;
  std::optional<std::string> label;
  Rect bounds;
  std::optional<std::string> stable_key;  // backend identifier, e.g. resource id
  bool is_text_variable = false;          // content changes across visits
  bool focused = false;                   // holds input focus right now
  int z = 0;                              // stacking order for hit-testing
};

// Bounds quantized to a 32-pixel grid; exact pixels jitter across captures on
// real devices, the bucket does not.
constexpr int kBoundsBucket = 32;

inline std::string bounds_bucket(const Rect& r) {
  auto q = [](int v) { return v / kBoundsBucket; };
  return std::to_string(q(r.left)) + "," + std::to_string(q(r.top)) + "," +
         std::to_string(q(r.right)) + "," + std::to_string(q(r.bottom));
}

// Identity of an element for memory records and tool targets: the backend key
// when present, otherwise role plus bounds bucket.
inline std::string element_ref(const UiElement& e) {
  if (e.stable_key && !e.stable_key->empty()) return *e.stable_key;
  return std::string(role_name(e.role)) + "@" + bounds_bucket(e.bounds);
}

// Pure signature over the canonically ordered (stable_key, role, bounds
// bucket) triples of non-variable elements. Reorder-invariant, blind to
// variable text, sensitive to stable add/remove.
inline std::string screen_signature(const std::vector<UiElement>& elements) {
  std::vector<std::string> tokens;
  tokens.reserve(elements.size());
  for (const auto& e : elements) {
    if (e.is_text_variable) continue;
    tokens.push_back((e.stable_key ? *e.stable_key : "") + "|" + std::string(role_name(e.role)) +
                     "|" + bounds_bucket(e.bounds));
  }
  std::sort(tokens.begin(), tokens.end());
  std::string canon;
  for (const auto& t : tokens) {
    canon += t;
    canon += ';';
  }
  return hash_hex(canon);
}

struct ScreenState {
  std::string screen_signature;
  std::vector<UiElement> elements;
  std::string screenshot_ref;
  std::string app_id;
  std::int64_t captured_at = 0;
  std::string logical_name;  // simulator screen name; empty on real devices

  const UiElement* find(std::string_view element_id_or_ref) const {
    for (const auto& e : elements) {
      if (e.element_id == element_id_or_ref) return &e;
      if (e.stable_key && *e.stable_key == element_id_or_ref) return &e;
    }
    for (const auto& e : elements) {
      if (element_ref(e) == element_id_or_ref) return &e;
    }
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

enum class Op { Tap, Text, Swipe, Read, Think, Back, Home, Wait, Stop };

inline std::string op_name(Op op) {
  switch (op) {
    case Op::Tap: return "tap";
    case Op::Text: return "text";
    case Op::Swipe: return "swipe";
    case Op::Read: return "read";
    case Op::Think: return "think";
    case Op::Back: return "back";
    case Op::Home: return "home";
    case Op::Wait: return "wait";
    case Op::Stop: return "stop";
  }
  return "?";
}

inline Op op_from_name(std::string_view s) {
  if (s == "tap") return Op::Tap;
  if (s == "text") return Op::Text;
  if (s == "swipe") return Op::Swipe;
  if (s == "read") return Op::Read;
  if (s == "think") return Op::Think;
  if (s == "back") return Op::Back;
  if (s == "home") return Op::Home;
  if (s == "wait") return Op::Wait;
  if (s == "stop") return Op::Stop;
  raise(Err::InvalidParams, "unknown op: " + std::string(s));
}

struct Action {
  Op op = Op::Stop;
  std::map<std::string, std::string> params;

  static Action tap(int x, int y) {
    return {Op::Tap, {{"x", std::to_string(x)}, {"y", std::to_string(y)}}};
  }
  static Action text(std::string content) { return {Op::Text, {{"content", std::move(content)}}}; }
  static Action swipe(int x, int y, std::string direction) {
    return {Op::Swipe,
            {{"x", std::to_string(x)}, {"y", std::to_string(y)}, {"direction", std::move(direction)}}};
  }
  static Action read(std::string file, std::string goal) {
    return {Op::Read, {{"file", std::move(file)}, {"goal", std::move(goal)}}};
  }
  static Action think(std::string flow, std::string goal) {
    return {Op::Think, {{"flow", std::move(flow)}, {"goal", std::move(goal)}}};
  }
  static Action back() { return {Op::Back, {}}; }
  static Action home() { return {Op::Home, {}}; }
  static Action wait() { return {Op::Wait, {}}; }
  static Action stop() { return {Op::Stop, {}}; }

  int int_param(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end()) raise(Err::InvalidParams, "missing param " + key);
    try {
      size_t pos = 0;
      int v = std::stoi(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      raise(Err::InvalidParams, "param " + key + " is not an integer: " + it->second);
    }
  }

  const std::string& str_param(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end()) raise(Err::InvalidParams, "missing param " + key);
    return it->second;
  }

  std::string describe() const {
    std::string out = std::string(op_name(op));
    if (!params.empty()) {
      out += "(";
      bool first = true;
      for (const auto& [k, v] : params) {
        if (!first) out += ", ";
        out += k + "=" + v;
        first = false;
      }
      out += ")";
    }
    return out;
  }
};

// Exact per-op parameter schema check. Coordinates must be non-negative; the
// backend rejects coordinates that fall outside its own screen.
inline void validate_action(const Action& a) {
  auto expect_keys = [&](std::initializer_list<const char*> keys) {
    if (a.params.size() != keys.size())
      raise(Err::InvalidParams, "op " + std::string(op_name(a.op)) + " expects " +
                                    std::to_string(keys.size()) + " params, got " +
                                    std::to_string(a.params.size()));
    for (const char* k : keys)
      if (!a.params.count(k))
        raise(Err::InvalidParams, "op " + std::string(op_name(a.op)) + " missing param " + k);
  };
  switch (a.op) {
    case Op::Tap: {
      expect_keys({"x", "y"});
      if (a.int_param("x") < 0 || a.int_param("y") < 0)
        raise(Err::InvalidParams, "negative coordinates");
      break;
    }
    case Op::Text:
      expect_keys({"content"});
      break;
    case Op::Swipe: {
      expect_keys({"x", "y", "direction"});
      if (a.int_param("x") < 0 || a.int_param("y") < 0)
        raise(Err::InvalidParams, "negative coordinates");
      const std::string& d = a.str_param("direction");
      if (d != "up" && d != "down" && d != "left" && d != "right")
        raise(Err::InvalidParams, "bad swipe direction: " + d);
      break;
    }
    case Op::Read:
      expect_keys({"file", "goal"});
      break;
    case Op::Think: {
      expect_keys({"flow", "goal"});
      const std::string& f = a.str_param("flow");
      if (f != "read" && f != "write" && f != "compact")
        raise(Err::InvalidParams, "bad think flow: " + f);
      break;
    }
    case Op::Back:
    case Op::Home:
    case Op::Wait:
    case Op::Stop:
      expect_keys({});
      break;
  }
}

inline bool device_affecting(Op op) {
  switch (op) {
    case Op::Tap:
    case Op::Text:
    case Op::Swipe:
    case Op::Back:
    case Op::Home:
    case Op::Wait:
      return true;
    case Op::Read:
    case Op::Think:
    case Op::Stop:
      return false;
  }
  return false;
}

enum class Effect { screen_changed, screen_unchanged, app_switched, terminal };

inline std::string effect_name(Effect e) {
  switch (e) {
    case Effect::screen_changed: return "screen_changed";
    case Effect::screen_unchanged: return "screen_unchanged";
    case Effect::app_switched: return "app_switched";
    case Effect::terminal: return "terminal";
  }
  return "?";
}

struct ActionResult {
  bool ok = false;
  Effect observed_effect = Effect::screen_unchanged;
  ScreenState post_state;
  std::string note;
};

// ---------------------------------------------------------------------------
// Screen diff
// ---------------------------------------------------------------------------

struct TextChange {
  std::string ref;
  std::string before;
  std::string after;
};

struct ScreenDiff {
  bool changed = false;       // signature-level
  bool app_switched = false;
  std::vector<UiElement> added;
  std::vector<UiElement> removed;
  std::vector<TextChange> changed_text;
  std::string after_app_id;
  std::string after_name;

  bool empty() const {
    return !changed && !app_switched && added.empty() && removed.empty() && changed_text.empty();
  }

  // Bag of words the icon verifier matches hypotheses against: where we
  // landed plus what appeared.
  std::string observed_description() const {
    std::string out = after_app_id + " " + after_name;
    for (const auto& e : added) {
      out += " " + element_ref(e);
      if (e.label) out += " " + *e.label;
    }
    return out;
  }
};

inline ScreenDiff diff_screens(const ScreenState& before, const ScreenState& after) {
  ScreenDiff d;
  d.changed = before.screen_signature != after.screen_signature;
  d.app_switched = before.app_id != after.app_id;
  d.after_app_id = after.app_id;
  d.after_name = after.logical_name;

  std::map<std::string, const UiElement*> b, a;
  for (const auto& e : before.elements) b[element_ref(e)] = &e;
  for (const auto& e : after.elements) a[element_ref(e)] = &e;
  for (const auto& [ref, el] : a)
    if (!b.count(ref)) d.added.push_back(*el);
  for (const auto& [ref, el] : b)
    if (!a.count(ref)) d.removed.push_back(*el);
  for (const auto& [ref, el] : a) {
    auto it = b.find(ref);
    if (it == b.end()) continue;
    std::string lb = it->second->label.value_or("");
    std::string la = el->label.value_or("");
    if (lb != la) d.changed_text.push_back({ref, lb, la});
  }
  return d;
}

// Topmost element whose bounds contain the point; ties broken by smallest
// area, then by list position.
inline const UiElement* hit_test(const std::vector<UiElement>& elements, int x, int y) {
  const UiElement* best = nullptr;
  for (const auto& e : elements) {
    if (!e.bounds.contains(x, y)) continue;
    if (!best || e.z > best->z || (e.z == best->z && e.bounds.area() < best->bounds.area()))
      best = &e;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Device
// ---------------------------------------------------------------------------

// Extracts text from a document for the Read operation. The default handles
// plain text; richer formats plug in behind the same signature.
using DocumentReader = std::function<std::string(const std::string& file, const std::string& goal)>;

inline DocumentReader plain_text_reader(std::filesystem::path base_dir = {}) {
  return [base_dir](const std::string& file, const std::string& /*goal*/) {
    std::filesystem::path p = base_dir.empty() ? std::filesystem::path(file) : base_dir / file;
    return read_file(p);
  };
}

// One logical operator per device at a time: the handle is a lease and every
// capture/perform on it is serialized by the internal mutex. Independent
// handles may be driven concurrently.
class Device {
 public:
  virtual ~Device() = default;

  ScreenState capture_screen() {
    std::lock_guard<std::mutex> lock(lease_mu_);
    return capture_impl();
  }

  ActionResult perform(const Action& action) {
    std::lock_guard<std::mutex> lock(lease_mu_);
    validate_action(action);
    return perform_impl(action);
  }

  virtual void reset() {}
  virtual int width() const { return 1080; }
  virtual int height() const { return 1920; }
  virtual bool probe_flag(const std::string& /*name*/) const { return false; }

  void set_document_reader(DocumentReader reader) { document_reader_ = std::move(reader); }

 protected:
  virtual ScreenState capture_impl() = 0;
  virtual ActionResult perform_impl(const Action& action) = 0;

  std::string read_document(const std::string& file, const std::string& goal) {
    if (!document_reader_) document_reader_ = plain_text_reader();
    return document_reader_(file, goal);
  }

 private:
  std::mutex lease_mu_;
  DocumentReader document_reader_;
};

using DeviceHandle = std::shared_ptr<Device>;

}  // namespace droidcrew
