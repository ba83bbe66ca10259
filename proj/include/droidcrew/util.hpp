#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidcrew/errors.hpp"

namespace droidcrew {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// hashing
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::string hash_hex(std::string_view s) { return hex64(fnv1a64(s)); }

// ---------------------------------------------------------------------------
// text
// ---------------------------------------------------------------------------

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline bool is_stopword(std::string_view w) {
  static const std::set<std::string, std::less<>> kStop = {
      "a",   "an",  "and", "are", "as",  "at",  "be",  "by",  "for",
      "from", "in", "is",  "it",  "of",  "on",  "or",  "that", "the", "then",
      "this", "to", "with", "my",  "me",  "your", "you", "its"};
  return kStop.count(w) > 0;
}

// Lowercased alphanumeric tokens, stopwords stripped. The shared vocabulary
// for every deterministic relevance score in the runtime.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && !is_stopword(cur)) out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

inline std::set<std::string> token_set(std::string_view text) {
  auto toks = tokenize(text);
  return std::set<std::string>(toks.begin(), toks.end());
}

// Fraction of `query` tokens that appear in `text`. 0 when the query has no
// usable tokens.
inline double overlap_score(std::string_view query, std::string_view text) {
  auto q = token_set(query);
  if (q.empty()) return 0.0;
  auto t = token_set(text);
  size_t hit = 0;
  for (const auto& w : q)
    if (t.count(w)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(q.size());
}

// chars/4, the model-agnostic token estimate used for working-memory budgets.
inline int estimate_tokens(std::string_view text) {
  return static_cast<int>(text.size() / 4);
}

inline std::string slug(std::string_view text, size_t max_words = 4) {
  auto toks = tokenize(text);
  std::string out;
  for (size_t i = 0; i < toks.size() && i < max_words; ++i) {
    if (!out.empty()) out += '_';
    out += toks[i];
  }
  return out.empty() ? "item" : out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------
// clock
// ---------------------------------------------------------------------------

// Wall clock by default; a deterministic run swaps in a logical counter so
// that journals are byte-stable.
class Clock {
 public:
  static Clock wall() { return Clock(false); }
  static Clock logical() { return Clock(true); }

  std::int64_t now_ms() const {
    if (logical_) return counter_->fetch_add(1) ;
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  }

  bool deterministic() const { return logical_; }

 private:
  explicit Clock(bool logical)
      : logical_(logical), counter_(std::make_shared<std::atomic<std::int64_t>>(0)) {}

  bool logical_;
  std::shared_ptr<std::atomic<std::int64_t>> counter_;
};

// ---------------------------------------------------------------------------
// files
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Err::ConfigError, "cannot read file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Err::ConfigError, "cannot write file: " + path.string());
  out << content;
}

inline json parse_json_file(const std::filesystem::path& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) raise(Err::ParseError, "malformed json: " + path.string());
  return j;
}

// Append-only journal, one JSON record per line.
class Journal {
 public:
  Journal() = default;
  explicit Journal(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  }

  bool enabled() const { return !path_.empty(); }
  const std::filesystem::path& path() const { return path_; }

  void append(const json& record) {
    if (!enabled()) return;
    std::lock_guard<std::mutex> lock(mu_);
    std::ofstream out(path_, std::ios::app);
    out << record.dump() << "\n";
  }

  static std::vector<json> read_all(const std::filesystem::path& path) {
    std::vector<json> out;
    std::ifstream in(path);
    if (!in) raise(Err::ConfigError, "cannot read journal: " + path.string());
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) raise(Err::ParseError, "malformed journal line in " + path.string());
      out.push_back(std::move(j));
    }
    return out;
  }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

}  // namespace droidcrew
