#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "droidcrew/device.hpp"
#include "droidcrew/gateway.hpp"
#include "droidcrew/util.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// Interface memory: confidence-labeled icon knowledge.
// ---------------------------------------------------------------------------

enum class Confidence { Uncharted, Hypothesized, Verified };

inline std::string confidence_name(Confidence c) {
  switch (c) {
    case Confidence::Uncharted: return "Uncharted";
    case Confidence::Hypothesized: return "Hypothesized";
    case Confidence::Verified: return "Verified";
  }
  return "?";
}

inline Confidence confidence_from_name(std::string_view s) {
  if (s == "Uncharted") return Confidence::Uncharted;
  if (s == "Hypothesized") return Confidence::Hypothesized;
  if (s == "Verified") return Confidence::Verified;
  raise(Err::ParseError, "unknown confidence: " + std::string(s));
}

struct IconRecord {
  std::string app_id;
  std::string screen_signature;
  std::string element_ref;  // stable_key or role@bounds-bucket
  std::string hypothesized_function;
  Confidence confidence = Confidence::Uncharted;
  int evidence_count = 0;
  std::int64_t last_updated = 0;
};

struct IconObservation {
  std::string app_id;
  std::string screen_signature;
  std::string element_ref;
  std::optional<std::string> guess;
};

// Token-overlap consistency check between a hypothesis and what the tap
// actually did. Threshold 0.5 of the hypothesis' tokens must be observed.
inline bool hypothesis_consistent(const std::string& hypothesis, const ScreenDiff& observed) {
  return overlap_score(hypothesis, observed.observed_description()) >= 0.5;
}

class IconStore {
 public:
  IconStore() : clock_(Clock::wall()) {}
  explicit IconStore(Clock clock) : clock_(clock) {}

  void attach_journal(const std::filesystem::path& path) {
    journal_ = std::make_shared<Journal>(path);
  }

  // New elements arrive Uncharted (no guess) or Hypothesized (guess present).
  // Re-observing never lowers confidence.
  IconRecord upsert(const IconObservation& obs) {
    std::unique_lock lock(mu_);
    auto key = make_key(obs.app_id, obs.screen_signature, obs.element_ref);
    auto it = records_.find(key);
    if (it == records_.end()) {
      IconRecord rec;
      rec.app_id = obs.app_id;
      rec.screen_signature = obs.screen_signature;
      rec.element_ref = obs.element_ref;
      if (obs.guess && !obs.guess->empty()) {
        rec.hypothesized_function = *obs.guess;
        rec.confidence = Confidence::Hypothesized;
      }
      rec.last_updated = clock_.now_ms();
      records_[key] = rec;
      journal_write(rec, "upsert");
      return rec;
    }
    IconRecord& rec = it->second;
    if (rec.confidence == Confidence::Uncharted && obs.guess && !obs.guess->empty()) {
      rec.hypothesized_function = *obs.guess;
      rec.confidence = Confidence::Hypothesized;
      rec.last_updated = clock_.now_ms();
      journal_write(rec, "upsert");
    }
    return rec;
  }

  // Verified when the observed effect supports the hypothesis; a
  // contradiction demotes to Hypothesized with the hypothesis rewritten to
  // what was actually observed. Never any other transition.
  IconRecord verify(const std::string& app_id, const std::string& screen_signature,
                    const std::string& element_ref, const std::string& expected,
                    const ScreenDiff& observed_effect) {
    std::unique_lock lock(mu_);
    auto it = records_.find(make_key(app_id, screen_signature, element_ref));
    if (it == records_.end() || it->second.confidence == Confidence::Uncharted)
      raise(Err::NoHypothesis, "no hypothesis for " + element_ref);
    IconRecord& rec = it->second;
    const std::string& hypothesis = expected.empty() ? rec.hypothesized_function : expected;
    if (hypothesis_consistent(hypothesis, observed_effect)) {
      rec.confidence = Confidence::Verified;
      rec.evidence_count += 1;
      rec.hypothesized_function = hypothesis;
    } else {
      rec.confidence = Confidence::Hypothesized;
      rec.hypothesized_function = trim(observed_effect.observed_description());
      rec.evidence_count = 0;
    }
    rec.last_updated = clock_.now_ms();
    journal_write(rec, "verify");
    return rec;
  }

  // All records for a screen, Verified first, then by evidence.
  std::vector<IconRecord> query(const std::string& app_id,
                                const std::string& screen_signature) const {
    std::shared_lock lock(mu_);
    std::vector<IconRecord> out;
    for (const auto& [key, rec] : records_)
      if (rec.app_id == app_id && rec.screen_signature == screen_signature) out.push_back(rec);
    std::sort(out.begin(), out.end(), [](const IconRecord& a, const IconRecord& b) {
      if (a.confidence != b.confidence)
        return static_cast<int>(a.confidence) > static_cast<int>(b.confidence);
      if (a.evidence_count != b.evidence_count) return a.evidence_count > b.evidence_count;
      return a.element_ref < b.element_ref;
    });
    return out;
  }

  std::optional<IconRecord> get(const std::string& app_id, const std::string& screen_signature,
                                const std::string& element_ref) const {
    std::shared_lock lock(mu_);
    auto it = records_.find(make_key(app_id, screen_signature, element_ref));
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }

  size_t size() const {
    std::shared_lock lock(mu_);
    return records_.size();
  }

 private:
  static std::string make_key(const std::string& app, const std::string& sig,
                              const std::string& ref) {
    return app + "\x1f" + sig + "\x1f" + ref;
  }

  void journal_write(const IconRecord& rec, const std::string& event) {
    if (!journal_) return;
    journal_->append(json{{"event", event},
                          {"app_id", rec.app_id},
                          {"screen_signature", rec.screen_signature},
                          {"element_ref", rec.element_ref},
                          {"hypothesized_function", rec.hypothesized_function},
                          {"confidence", confidence_name(rec.confidence)},
                          {"evidence_count", rec.evidence_count},
                          {"last_updated", rec.last_updated}});
  }

  mutable std::shared_mutex mu_;
  std::map<std::string, IconRecord> records_;
  Clock clock_;
  std::shared_ptr<Journal> journal_;
};

// ---------------------------------------------------------------------------
// Insight memory
// ---------------------------------------------------------------------------

enum class InsightCategory { efficiency, failure_path, performance };

inline std::string insight_category_name(InsightCategory c) {
  switch (c) {
    case InsightCategory::efficiency: return "efficiency";
    case InsightCategory::failure_path: return "failure_path";
    case InsightCategory::performance: return "performance";
  }
  return "?";
}

inline InsightCategory insight_category_from_name(std::string_view s) {
  if (s == "efficiency") return InsightCategory::efficiency;
  if (s == "failure_path") return InsightCategory::failure_path;
  if (s == "performance") return InsightCategory::performance;
  raise(Err::ParseError, "unknown insight category: " + std::string(s));
}

struct InsightRecord {
  InsightCategory category = InsightCategory::efficiency;
  std::string expert_role;  // who learned it; queries filter on this
  std::string task_context;
  std::string text;
  std::string trajectory_ref;
};

class InsightStore {
 public:
  void attach_journal(const std::filesystem::path& path) {
    journal_ = std::make_shared<Journal>(path);
  }

  int add(const InsightRecord& rec) {
    std::unique_lock lock(mu_);
    records_.push_back(rec);
    if (journal_)
      journal_->append(json{{"id", static_cast<int>(records_.size() - 1)},
                            {"category", insight_category_name(rec.category)},
                            {"expert_role", rec.expert_role},
                            {"task_context", rec.task_context},
                            {"text", rec.text},
                            {"trajectory_ref", rec.trajectory_ref}});
    return static_cast<int>(records_.size() - 1);
  }

  // Role filter plus keyword overlap against the task context, top k.
  std::vector<InsightRecord> query(const std::string& expert_role, const std::string& task_context,
                                   size_t k = 5) const {
    std::shared_lock lock(mu_);
    std::vector<std::pair<double, size_t>> scored;
    for (size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (!expert_role.empty() && !r.expert_role.empty() && r.expert_role != expert_role) continue;
      double score = overlap_score(task_context, r.task_context + " " + r.text);
      if (score <= 0.0) continue;
      scored.emplace_back(score, i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<InsightRecord> out;
    for (size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(records_[scored[i].second]);
    return out;
  }

  size_t size() const {
    std::shared_lock lock(mu_);
    return records_.size();
  }

  std::vector<InsightRecord> all() const {
    std::shared_lock lock(mu_);
    return records_;
  }

 private:
  mutable std::shared_mutex mu_;
  std::vector<InsightRecord> records_;
  std::shared_ptr<Journal> journal_;
};

// ---------------------------------------------------------------------------
// Working memory: single-owner, budgeted, proactively compactable.
// ---------------------------------------------------------------------------

struct WorkingMemoryEntry {
  std::string tag;
  std::string text;
  std::int64_t created_at = 0;
};

enum class ThinkFlow { read, write, compact };

inline ThinkFlow think_flow_from_name(std::string_view s) {
  if (s == "read") return ThinkFlow::read;
  if (s == "write") return ThinkFlow::write;
  if (s == "compact") return ThinkFlow::compact;
  raise(Err::InvalidParams, "unknown think flow: " + std::string(s));
}

class WorkingMemory {
 public:
  WorkingMemory() : clock_(Clock::wall()) {}
  WorkingMemory(std::string owner, int budget_tokens, Clock clock = Clock::wall(),
                int pinned_recent = 3)
      : owner_(std::move(owner)),
        budget_(budget_tokens),
        pinned_recent_(pinned_recent),
        clock_(clock) {}

  void attach_journal(const std::filesystem::path& path) {
    journal_ = std::make_shared<Journal>(path);
  }

  const std::string& owner() const { return owner_; }
  int budget() const { return budget_; }
  const std::vector<WorkingMemoryEntry>& entries() const { return entries_; }

  int token_estimate() const {
    int total = 0;
    for (const auto& e : entries_) total += estimate_tokens(e.text);
    return total;
  }

  void write(const std::string& tag, const std::string& text) {
    WorkingMemoryEntry e{tag, text, clock_.now_ms()};
    entries_.push_back(e);
    if (journal_)
      journal_->append(json{{"tag", e.tag}, {"text", e.text}, {"created_at", e.created_at}});
  }

  // Goal-relevant entries, best overlap first; no mutation.
  std::vector<WorkingMemoryEntry> read(const std::string& goal, size_t k = 5) const {
    std::vector<std::pair<double, size_t>> scored;
    for (size_t i = 0; i < entries_.size(); ++i) {
      double s = overlap_score(goal, entries_[i].tag + " " + entries_[i].text);
      if (s > 0.0) scored.emplace_back(s, i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<WorkingMemoryEntry> out;
    for (size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(entries_[scored[i].second]);
    return out;
  }

  // Deterministic compaction: oldest unpinned entries fold into one summary
  // line until the budget holds. The most recent `pinned_recent` entries are
  // never dropped.
  void compact() {
    if (token_estimate() <= budget_) return;
    size_t pinned = std::min(entries_.size(), static_cast<size_t>(pinned_recent_));
    std::vector<std::string> dropped_tags;
    while (token_estimate() + summary_estimate(dropped_tags) > budget_ &&
           entries_.size() > pinned) {
      dropped_tags.push_back(entries_.front().tag);
      entries_.erase(entries_.begin());
    }
    if (!dropped_tags.empty()) {
      WorkingMemoryEntry summary{"summary", summary_text(dropped_tags), clock_.now_ms()};
      entries_.insert(entries_.begin(), summary);
      if (journal_)
        journal_->append(json{{"tag", "summary"},
                              {"text", summary.text},
                              {"created_at", summary.created_at},
                              {"compacted", static_cast<int>(dropped_tags.size())}});
    }
    if (token_estimate() > budget_)
      raise(Err::BudgetUnsatisfiable, "pinned entries exceed the working-memory budget of " +
                                          std::to_string(budget_) + " tokens");
  }

  // The Think basic operation.
  std::vector<WorkingMemoryEntry> think(ThinkFlow flow, const std::string& goal) {
    switch (flow) {
      case ThinkFlow::write:
        write("note", goal);
        return {};
      case ThinkFlow::read:
        return read(goal);
      case ThinkFlow::compact:
        compact();
        return {};
    }
    return {};
  }

 private:
  static std::string summary_text(const std::vector<std::string>& dropped_tags) {
    std::string out = "compacted " + std::to_string(dropped_tags.size()) + " entries:";
    std::set<std::string> seen;
    for (const auto& t : dropped_tags)
      if (seen.insert(t).second) out += " " + t;
    return out;
  }

  static int summary_estimate(const std::vector<std::string>& dropped_tags) {
    return dropped_tags.empty() ? 0 : estimate_tokens(summary_text(dropped_tags));
  }

  std::string owner_;
  int budget_ = 2000;
  int pinned_recent_ = 3;
  Clock clock_;
  std::vector<WorkingMemoryEntry> entries_;
  std::shared_ptr<Journal> journal_;
};

// ---------------------------------------------------------------------------
// Team memory pool: Commit / Fetch over the plan's node ids.
// ---------------------------------------------------------------------------

enum class CommitStatus { done, failed };

inline std::string commit_status_name(CommitStatus s) {
  return s == CommitStatus::done ? "done" : "failed";
}

struct TeamCommit {
  std::string task_node_id;
  std::string expert_id;
  int attempt = 1;
  CommitStatus status = CommitStatus::done;
  std::string summary;
  std::vector<std::string> exported_entries;
  std::int64_t committed_at = 0;
};

struct FetchedEntry {
  std::string task_node_id;
  std::string text;
  double score = 0.0;
};

class TeamMemoryPool {
 public:
  TeamMemoryPool() : clock_(Clock::wall()) {}
  explicit TeamMemoryPool(Clock clock) : clock_(clock) {}

  void attach_journal(const std::filesystem::path& path) {
    journal_ = std::make_shared<Journal>(path);
  }

  void register_plan(const std::vector<std::string>& node_ids) {
    std::lock_guard<std::mutex> lock(mu_);
    known_nodes_.clear();
    for (const auto& id : node_ids) known_nodes_.insert(id);
  }

  // Whole-commit visibility: the record becomes fetchable only once fully
  // stored; a second commit for the same (node, attempt) is rejected and the
  // stored value is untouched.
  void commit(const TeamCommit& tc) {
    TeamCommit stored = tc;
    stored.committed_at = clock_.now_ms();
    std::lock_guard<std::mutex> lock(mu_);
    if (!known_nodes_.empty() && !known_nodes_.count(tc.task_node_id))
      raise(Err::InvalidParams, "commit for unknown plan node " + tc.task_node_id);
    auto key = std::make_pair(tc.task_node_id, tc.attempt);
    if (commits_.count(key))
      raise(Err::DuplicateCommit,
            tc.task_node_id + " attempt " + std::to_string(tc.attempt) + " already committed");
    commits_[key] = stored;
    if (journal_)
      journal_->append(json{{"task_node_id", stored.task_node_id},
                            {"expert_id", stored.expert_id},
                            {"attempt", stored.attempt},
                            {"status", commit_status_name(stored.status)},
                            {"summary", stored.summary},
                            {"exported_entries", stored.exported_entries},
                            {"committed_at", stored.committed_at}});
  }

  // Relevant exported entries from every listed node, best match first. All
  // listed nodes must have committed.
  std::vector<FetchedEntry> fetch(const std::vector<std::string>& task_node_ids,
                                  const std::string& query, size_t k = 10) const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<FetchedEntry> pooled;
    for (const auto& id : task_node_ids) {
      const TeamCommit* latest = nullptr;
      for (const auto& [key, tc] : commits_)
        if (key.first == id && (!latest || tc.attempt > latest->attempt)) latest = &tc;
      if (!latest) raise(Err::MissingDependencyCommit, "node " + id + " has no commit");
      pooled.push_back({id, latest->summary, overlap_score(query, latest->summary)});
      for (const auto& e : latest->exported_entries)
        pooled.push_back({id, e, overlap_score(query, e)});
    }
    if (!trim(query).empty()) {
      std::erase_if(pooled, [](const FetchedEntry& e) { return e.score <= 0.0; });
      std::stable_sort(pooled.begin(), pooled.end(),
                       [](const FetchedEntry& a, const FetchedEntry& b) { return a.score > b.score; });
    }
    if (pooled.size() > k) pooled.resize(k);
    return pooled;
  }

  std::optional<TeamCommit> get(const std::string& node_id, int attempt) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = commits_.find({node_id, attempt});
    if (it == commits_.end()) return std::nullopt;
    return it->second;
  }

  bool committed_done(const std::string& node_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [key, tc] : commits_)
      if (key.first == node_id && tc.status == CommitStatus::done) return true;
    return false;
  }

  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return commits_.size();
  }

  std::vector<TeamCommit> all() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<TeamCommit> out;
    for (const auto& [key, tc] : commits_) out.push_back(tc);
    std::sort(out.begin(), out.end(),
              [](const TeamCommit& a, const TeamCommit& b) { return a.committed_at < b.committed_at; });
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::pair<std::string, int>, TeamCommit> commits_;
  std::set<std::string> known_nodes_;
  Clock clock_;
  std::shared_ptr<Journal> journal_;
};

}  // namespace droidcrew
