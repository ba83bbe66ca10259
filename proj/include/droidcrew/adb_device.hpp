#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <thread>
#include <vector>

#include "droidcrew/device.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// Shell plumbing. AdbDevice talks through this so tests can substitute a fake
// transcript for a live adb binary.
// ---------------------------------------------------------------------------

struct CommandResult {
  int exit_code = 0;
  std::string output;
};

using CommandRunner = std::function<CommandResult(const std::vector<std::string>& argv)>;

inline CommandRunner system_command_runner() {
  return [](const std::vector<std::string>& argv) -> CommandResult {
    std::string cmd;
    for (const auto& a : argv) {
      if (!cmd.empty()) cmd += ' ';
      bool plain = !a.empty() && a.find_first_of(" \t\"'\\$&|;<>()") == std::string::npos;
      if (plain) {
        cmd += a;
      } else {
        cmd += '\'';
        for (char c : a) cmd += (c == '\'') ? std::string("'\\''") : std::string(1, c);
        cmd += '\'';
      }
    }
    cmd += " 2>/dev/null";
    std::array<char, 4096> buf{};
    CommandResult res;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) {
      res.exit_code = -1;
      return res;
    }
    size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) res.output.append(buf.data(), n);
    res.exit_code = pclose(pipe);
    return res;
  };
}

// Escaping for `input text`: spaces become %s, shell-significant characters
// get a backslash.
inline std::string adb_escape_text(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == ' ') {
      out += "%s";
      continue;
    }
    if (std::string("\\\"'`&|;<>()*~$").find(c) != std::string::npos) out += '\\';
    out += c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// uiautomator dump parsing
// ---------------------------------------------------------------------------

inline Role role_from_android_class(std::string_view cls) {
  auto has = [&](const char* s) { return cls.find(s) != std::string_view::npos; };
  if (has("EditText")) return Role::text_field;
  if (has("ImageButton")) return Role::button;
  if (has("Button")) return Role::button;
  if (has("ImageView")) return Role::image;
  if (has("RecyclerView") || has("ListView") || has("GridView") || has("ScrollView") ||
      has("Layout") || has("ViewGroup"))
    return Role::container;
  return Role::other;
}

// "[l,t][r,b]" -> Rect
inline Rect parse_bounds_attr(const std::string& s) {
  Rect r;
  if (std::sscanf(s.c_str(), "[%d,%d][%d,%d]", &r.left, &r.top, &r.right, &r.bottom) != 4)
    raise(Err::ParseError, "bad bounds attribute: " + s);
  return r;
}

inline std::string xml_unescape(const std::string& s) {
  std::string out;
  for (size_t i = 0; i < s.size();) {
    if (s[i] == '&') {
      auto take = [&](const char* ent, char repl) {
        size_t n = std::strlen(ent);
        if (s.compare(i, n, ent) == 0) {
          out += repl;
          i += n;
          return true;
        }
        return false;
      };
      if (take("&amp;", '&') || take("&lt;", '<') || take("&gt;", '>') || take("&quot;", '"') ||
          take("&apos;", '\''))
        continue;
    }
    out += s[i++];
  }
  return out;
}

// Flattens a uiautomator dump into UiElements: resource-id -> stable_key,
// text -> label, bounds string -> rectangle. Container nodes with children
// are kept (they matter for hit-testing order: children come later and win
// by depth).
inline std::vector<UiElement> parse_uiautomator_dump(const std::string& xml,
                                                     std::string* package_out = nullptr) {
  std::vector<UiElement> out;
  size_t pos = 0;
  int index = 0;
  int depth = 0;
  while (true) {
    size_t open = xml.find("<node", pos);
    if (open == std::string::npos) break;
    size_t end = xml.find('>', open);
    if (end == std::string::npos) raise(Err::ParseError, "truncated uiautomator dump");
    bool self_closing = xml[end - 1] == '/';
    std::string tag = xml.substr(open, end - open);

    auto attr = [&](const std::string& name) -> std::string {
      std::string needle = name + "=\"";
      size_t a = tag.find(needle);
      if (a == std::string::npos) return "";
      a += needle.size();
      size_t b = tag.find('"', a);
      return xml_unescape(tag.substr(a, b - a));
    };

    std::string bounds = attr("bounds");
    if (!bounds.empty()) {
      Rect rect = parse_bounds_attr(bounds);
      if (rect.right > rect.left && rect.bottom > rect.top) {
        UiElement e;
        e.element_id = "e" + std::to_string(index++);
        e.role = role_from_android_class(attr("class"));
        std::string text = attr("text");
        if (!text.empty()) e.label = text;
        e.bounds = rect;
        std::string rid = attr("resource-id");
        if (!rid.empty()) e.stable_key = rid;
        e.focused = attr("focused") == "true";
        e.z = depth;
        out.push_back(std::move(e));
        if (package_out && package_out->empty()) *package_out = attr("package");
      }
    }
    if (!self_closing) ++depth;
    pos = end + 1;
    // closing tags reduce depth
    size_t close = xml.find("</node>", pos);
    size_t next_open = xml.find("<node", pos);
    while (close != std::string::npos && (next_open == std::string::npos || close < next_open)) {
      --depth;
      pos = close + 7;
      close = xml.find("</node>", pos);
      next_open = xml.find("<node", pos);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// AdbDevice — command mapping (documented, bit-exact):
//   tap        -> input tap X Y
//   text       -> input text <escaped>
//   swipe      -> input swipe X1 Y1 X2 Y2 DUR
//   back/home  -> input keyevent KEYCODE_BACK | KEYCODE_HOME
//   screenshot -> exec-out screencap -p
//   tree       -> uiautomator dump (XML pulled via cat)
// ---------------------------------------------------------------------------

class AdbDevice : public Device {
 public:
  struct Options {
    int width = 1080;
    int height = 1920;
    int wait_delay_ms = 2000;
    int swipe_distance = 600;
    int swipe_duration_ms = 300;
    std::filesystem::path screenshot_dir = "screens";
  };

  explicit AdbDevice(std::string serial)
      : serial_(std::move(serial)), runner_(system_command_runner()) {}
  AdbDevice(std::string serial, CommandRunner runner)
      : serial_(std::move(serial)), runner_(std::move(runner)) {}
  AdbDevice(std::string serial, CommandRunner runner, Options options)
      : serial_(std::move(serial)), runner_(std::move(runner)), options_(std::move(options)) {}

  int width() const override { return options_.width; }
  int height() const override { return options_.height; }

  void reset() override { shell({"input", "keyevent", "KEYCODE_HOME"}); }

 protected:
  ScreenState capture_impl() override {
    shell({"uiautomator", "dump", "/sdcard/droidcrew_ui.xml"});
    CommandResult dump = shell({"cat", "/sdcard/droidcrew_ui.xml"});
    ScreenState st;
    std::string package;
    st.elements = parse_uiautomator_dump(dump.output, &package);
    st.screen_signature = droidcrew::screen_signature(st.elements);
    st.app_id = package;
    st.captured_at = ++capture_seq_;
    st.screenshot_ref = save_screenshot();
    return st;
  }

  ActionResult perform_impl(const Action& action) override {
    switch (action.op) {
      case Op::Tap: {
        int x = action.int_param("x"), y = action.int_param("y");
        if (x >= width() || y >= height()) raise(Err::ActionRejected, "tap outside device bounds");
        shell({"input", "tap", std::to_string(x), std::to_string(y)});
        break;
      }
      case Op::Text:
        shell({"input", "text", adb_escape_text(action.str_param("content"))});
        break;
      case Op::Swipe: {
        int x = action.int_param("x"), y = action.int_param("y");
        const std::string& d = action.str_param("direction");
        int x2 = x, y2 = y;
        if (d == "up") y2 = std::max(0, y - options_.swipe_distance);
        if (d == "down") y2 = std::min(height() - 1, y + options_.swipe_distance);
        if (d == "left") x2 = std::max(0, x - options_.swipe_distance);
        if (d == "right") x2 = std::min(width() - 1, x + options_.swipe_distance);
        shell({"input", "swipe", std::to_string(x), std::to_string(y), std::to_string(x2),
               std::to_string(y2), std::to_string(options_.swipe_duration_ms)});
        break;
      }
      case Op::Back:
        shell({"input", "keyevent", "KEYCODE_BACK"});
        break;
      case Op::Home:
        shell({"input", "keyevent", "KEYCODE_HOME"});
        break;
      case Op::Wait:
        if (options_.wait_delay_ms > 0)
          std::this_thread::sleep_for(std::chrono::milliseconds(options_.wait_delay_ms));
        break;
      case Op::Read: {
        ActionResult r;
        r.ok = true;
        r.observed_effect = Effect::screen_unchanged;
        r.note = "read: " + read_document(action.str_param("file"), action.str_param("goal"));
        r.post_state = capture_impl();
        return r;
      }
      case Op::Think: {
        ActionResult r;
        r.ok = true;
        r.observed_effect = Effect::screen_unchanged;
        r.note = "think: no device effect";
        r.post_state = capture_impl();
        return r;
      }
      case Op::Stop: {
        ActionResult r;
        r.ok = true;
        r.observed_effect = Effect::terminal;
        r.note = "stopped";
        r.post_state = capture_impl();
        return r;
      }
    }
    ScreenState before = last_state_;
    ActionResult r;
    r.ok = true;
    r.post_state = capture_impl();
    if (before.screen_signature.empty()) {
      r.observed_effect = Effect::screen_changed;
    } else if (before.app_id != r.post_state.app_id) {
      r.observed_effect = Effect::app_switched;
    } else if (before.screen_signature != r.post_state.screen_signature) {
      r.observed_effect = Effect::screen_changed;
    } else {
      r.observed_effect = Effect::screen_unchanged;
    }
    last_state_ = r.post_state;
    return r;
  }

 private:
  CommandResult shell(std::vector<std::string> args) {
    std::vector<std::string> argv = {"adb", "-s", serial_, "shell"};
    argv.insert(argv.end(), args.begin(), args.end());
    return run_checked(argv);
  }

  CommandResult run_checked(const std::vector<std::string>& argv) {
    CommandResult res = runner_(argv);
    if (res.exit_code != 0)
      raise(Err::DeviceUnreachable, "adb command failed (exit " + std::to_string(res.exit_code) +
                                        ") on device " + serial_);
    return res;
  }

  std::string save_screenshot() {
    CommandResult png = run_checked({"adb", "-s", serial_, "exec-out", "screencap", "-p"});
    std::filesystem::create_directories(options_.screenshot_dir);
    std::filesystem::path p =
        options_.screenshot_dir / ("screen_" + std::to_string(capture_seq_) + ".png");
    write_file(p, png.output);
    return p.string();
  }

  std::string serial_;
  CommandRunner runner_;
  Options options_{};
  std::int64_t capture_seq_ = 0;
  ScreenState last_state_;
};

}  // namespace droidcrew
