#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "droidcrew/util.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// Requests / responses
// ---------------------------------------------------------------------------

enum class RoleTag {
  decide_action,
  decompose,
  plan_team,
  plan_expert,
  verify,
  summarize,
  judge,
  guess_icon,
  write_tool,
};

inline std::string role_tag_name(RoleTag t) {
  switch (t) {
    case RoleTag::decide_action: return "decide_action";
    case RoleTag::decompose: return "decompose";
    case RoleTag::plan_team: return "plan_team";
    case RoleTag::plan_expert: return "plan_expert";
    case RoleTag::verify: return "verify";
    case RoleTag::summarize: return "summarize";
    case RoleTag::judge: return "judge";
    case RoleTag::guess_icon: return "guess_icon";
    case RoleTag::write_tool: return "write_tool";
  }
  return "?";
}

inline RoleTag role_tag_from_name(std::string_view s) {
  if (s == "decide_action") return RoleTag::decide_action;
  if (s == "decompose") return RoleTag::decompose;
  if (s == "plan_team") return RoleTag::plan_team;
  if (s == "plan_expert") return RoleTag::plan_expert;
  if (s == "verify") return RoleTag::verify;
  if (s == "summarize") return RoleTag::summarize;
  if (s == "judge") return RoleTag::judge;
  if (s == "guess_icon") return RoleTag::guess_icon;
  if (s == "write_tool") return RoleTag::write_tool;
  raise(Err::ParseError, "unknown role_tag: " + std::string(s));
}

struct ModelRequest {
  RoleTag role_tag = RoleTag::decide_action;
  std::string prompt_text;
  std::vector<std::string> image_refs;  // at most 2: previous + current screen
  int context_budget = 4096;
  // Structured fields the scripted gateway keys on; kept out of prompt_text so
  // fixtures survive prompt-template edits.
  std::map<std::string, std::string> key_fields;
  std::string run_id;  // accounting scope

  ModelRequest& with(std::string k, std::string v) {
    key_fields[std::move(k)] = std::move(v);
    return *this;
  }
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ModelResponse {
  std::string text;
  std::optional<json> parsed;
  Usage usage;
};

struct CallCounter {
  int total = 0;
  std::map<std::string, int> by_role_tag;
};

// Canonical form of the script key: "k=v" pairs, lowercased, whitespace
// collapsed, sorted by key. "screen=Home, goal=Open compose" and
// {goal: "open compose", screen: "home"} normalize identically.
inline std::string normalize_key(const std::map<std::string, std::string>& fields) {
  std::vector<std::string> parts;
  for (const auto& [k, v] : fields) {
    std::string vk = trim(to_lower(k));
    std::string vv = trim(to_lower(v));
    std::string collapsed;
    bool prev_space = false;
    for (char c : vv) {
      bool sp = std::isspace(static_cast<unsigned char>(c));
      if (sp && prev_space) continue;
      collapsed += sp ? ' ' : c;
      prev_space = sp;
    }
    parts.push_back(vk + "=" + collapsed);
  }
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += ',';
    out += p;
  }
  return out;
}

inline std::string normalize_key(const std::string& spec) {
  std::map<std::string, std::string> fields;
  for (const auto& part : split(spec, ',')) {
    auto eq = part.find('=');
    if (eq == std::string::npos) {
      if (!trim(part).empty()) fields[trim(part)] = "";
      continue;
    }
    fields[trim(part.substr(0, eq))] = trim(part.substr(eq + 1));
  }
  return normalize_key(fields);
}

// ---------------------------------------------------------------------------
// Gateway base: accounting lives here so every backend counts identically.
// A call increments exactly once, failed matches and parse errors included.
// ---------------------------------------------------------------------------

class ModelGateway {
 public:
  virtual ~ModelGateway() = default;

  ModelResponse complete(const ModelRequest& req) {
    count(req);
    return complete_impl(req);
  }

  void begin_run(const std::string& run_id) {
    std::lock_guard<std::mutex> lock(mu_);
    counters_.try_emplace(run_id);
  }

  CallCounter call_count(const std::string& run_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = counters_.find(run_id);
    if (it == counters_.end()) raise(Err::UnknownRun, run_id);
    return it->second;
  }

  // Deterministic backends let callers pick rule-based paths (verification,
  // tool summaries) over model judgment.
  virtual bool scripted() const { return false; }

 protected:
  virtual ModelResponse complete_impl(const ModelRequest& req) = 0;

 private:
  void count(const ModelRequest& req) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& c = counters_[req.run_id];
    c.total += 1;
    c.by_role_tag[std::string(role_tag_name(req.role_tag))] += 1;
  }

  mutable std::mutex mu_;
  std::map<std::string, CallCounter> counters_;
};

using GatewayHandle = std::shared_ptr<ModelGateway>;

// ---------------------------------------------------------------------------
// Scripted gateway: deterministic (role_tag, key) -> response fixtures.
// ---------------------------------------------------------------------------

class ScriptedGateway : public ModelGateway {
 public:
  struct Entry {
    std::string response_text;
    std::optional<json> parsed_payload;
  };

  ScriptedGateway() = default;

  static std::shared_ptr<ScriptedGateway> load_script(const std::filesystem::path& path) {
    json j = parse_json_file(path);
    if (!j.is_array()) raise(Err::ParseError, "script must be a json array: " + path.string());
    auto gw = std::make_shared<ScriptedGateway>();
    for (const auto& je : j) {
      RoleTag tag = role_tag_from_name(je.at("role_tag").get<std::string>());
      std::string key = normalize_key(je.at("key").get<std::string>());
      Entry e;
      e.response_text = je.value("response_text", "");
      if (je.contains("parsed_payload")) e.parsed_payload = je.at("parsed_payload");
      gw->entries_[{std::string(role_tag_name(tag)), key}] = std::move(e);
    }
    return gw;
  }

  void add_entry(RoleTag tag, const std::string& key_spec, Entry entry) {
    entries_[{std::string(role_tag_name(tag)), normalize_key(key_spec)}] = std::move(entry);
  }

  size_t size() const { return entries_.size(); }
  bool scripted() const override { return true; }

 protected:
  ModelResponse complete_impl(const ModelRequest& req) override {
    std::string key = normalize_key(req.key_fields);
    auto it = entries_.find({std::string(role_tag_name(req.role_tag)), key});
    if (it == entries_.end())
      raise(Err::NoScriptMatch,
            "no entry for (" + std::string(role_tag_name(req.role_tag)) + ", \"" + key + "\")");
    ModelResponse resp;
    resp.text = it->second.response_text;
    resp.parsed = it->second.parsed_payload;
    resp.usage.prompt_tokens = estimate_tokens(req.prompt_text);
    resp.usage.completion_tokens = estimate_tokens(resp.text);
    return resp;
  }

 private:
  std::map<std::pair<std::string, std::string>, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Live gateway: OpenAI-compatible chat completions with base64 images.
// The HTTP transport is injectable; production wiring uses cpp-httplib.
// ---------------------------------------------------------------------------

struct HttpReply {
  int status = 0;
  std::string body;
};

using HttpPost = std::function<HttpReply(const std::string& url, const std::string& api_key,
                                         const std::string& body)>;

inline std::string base64_encode(std::string_view data) {
  static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 2 < data.size()) {
    unsigned v = (static_cast<unsigned char>(data[i]) << 16) |
                 (static_cast<unsigned char>(data[i + 1]) << 8) |
                 static_cast<unsigned char>(data[i + 2]);
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += tbl[(v >> 6) & 63];
    out += tbl[v & 63];
    i += 3;
  }
  if (i + 1 == data.size()) {
    unsigned v = static_cast<unsigned char>(data[i]) << 16;
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == data.size()) {
    unsigned v = (static_cast<unsigned char>(data[i]) << 16) |
                 (static_cast<unsigned char>(data[i + 1]) << 8);
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += tbl[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

class LiveGateway : public ModelGateway {
 public:
  struct Options {
    std::string endpoint;  // e.g. https://api.example.com/v1/chat/completions
    std::string api_key;
    std::string model = "gpt-4o";
    int max_retries = 2;
    int backoff_ms = 500;
  };

  explicit LiveGateway(Options options, HttpPost transport = {})
      : options_(std::move(options)), transport_(std::move(transport)) {
    if (options_.endpoint.empty()) {
      if (const char* env = std::getenv("DROIDCREW_ENDPOINT")) options_.endpoint = env;
    }
    if (options_.api_key.empty()) {
      if (const char* env = std::getenv("DROIDCREW_API_KEY")) options_.api_key = env;
    }
  }

  json build_request_body(const ModelRequest& req) const {
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", req.prompt_text}});
    for (const auto& ref : req.image_refs) {
      std::string data;
      if (std::filesystem::exists(ref)) data = read_file(ref);
      content.push_back(
          {{"type", "image_url"},
           {"image_url", {{"url", "data:image/png;base64," + base64_encode(data)}}}});
    }
    return json{{"model", options_.model},
                {"messages", json::array({json{{"role", "user"}, {"content", content}}})},
                {"max_tokens", req.context_budget}};
  }

 protected:
  ModelResponse complete_impl(const ModelRequest& req) override {
    if (options_.endpoint.empty()) raise(Err::EndpointError, "no endpoint configured");
    json body = build_request_body(req);
    HttpReply reply;
    int attempt = 0;
    while (true) {
      reply = post(body.dump());
      if (reply.status == 200) break;
      if (attempt >= options_.max_retries)
        raise(Err::EndpointError, "endpoint returned status " + std::to_string(reply.status) +
                                      " after " + std::to_string(attempt + 1) + " tries");
      std::this_thread::sleep_for(std::chrono::milliseconds(options_.backoff_ms << attempt));
      ++attempt;
    }
    json j = json::parse(reply.body, nullptr, false);
    if (j.is_discarded()) raise(Err::EndpointError, "endpoint returned malformed json");
    ModelResponse resp;
    try {
      resp.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      raise(Err::EndpointError, "endpoint response missing choices[0].message.content");
    }
    if (j.contains("usage")) {
      resp.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
      resp.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
    json parsed = json::parse(resp.text, nullptr, false);
    if (!parsed.is_discarded()) resp.parsed = parsed;
    return resp;
  }

 private:
  HttpReply post(const std::string& body) {
    if (!transport_) raise(Err::EndpointError, "no http transport configured");
    return transport_(options_.endpoint, options_.api_key, body);
  }

  Options options_;
  HttpPost transport_;
};

}  // namespace droidcrew
