#include "droidcrew/memory.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <barrier>
#include <random>
#include <thread>

#include "test_support.hpp"

using namespace droidcrew;
namespace ts = testsupport;

namespace {

ScreenDiff composer_diff() {
  ScreenDiff d;
  d.changed = true;
  d.after_app_id = "twitter";
  d.after_name = "compose_editor";
  UiElement post{"post", Role::button, "Post", {800, 60, 1040, 160}, "id/post_button",
                 false, false, 0};
  d.added = {post};
  return d;
}

ScreenDiff unrelated_diff() {
  ScreenDiff d;
  d.changed = true;
  d.after_app_id = "maps";
  d.after_name = "navigating";
  return d;
}

IconObservation obs(const std::string& ref, std::optional<std::string> guess = std::nullopt) {
  return {"twitter", "sigA", ref, std::move(guess)};
}

}  // namespace

// --- interface memory -------------------------------------------------------

TEST(IconStore, UnseenWithoutGuessIsUncharted) {
  IconStore store;
  IconRecord rec = store.upsert(obs("id/mystery"));
  EXPECT_EQ(rec.confidence, Confidence::Uncharted);
  EXPECT_EQ(rec.evidence_count, 0);
}

TEST(IconStore, UnseenWithGuessIsHypothesized) {
  IconStore store;
  IconRecord rec = store.upsert(obs("id/compose", "opens composer"));
  EXPECT_EQ(rec.confidence, Confidence::Hypothesized);
  EXPECT_EQ(rec.hypothesized_function, "opens composer");
}

TEST(IconStore, UpsertNeverLowersConfidence) {
  IconStore store;
  store.upsert(obs("id/compose", "opens the compose editor"));
  store.verify("twitter", "sigA", "id/compose", "opens the compose editor", composer_diff());
  IconRecord rec = store.upsert(obs("id/compose", "some new wild guess"));
  EXPECT_EQ(rec.confidence, Confidence::Verified);
  EXPECT_EQ(rec.hypothesized_function, "opens the compose editor");
}

TEST(IconStore, ConsistentEffectVerifies) {
  IconStore store;
  store.upsert(obs("id/compose", "opens the compose editor"));
  IconRecord rec =
      store.verify("twitter", "sigA", "id/compose", "opens the compose editor", composer_diff());
  EXPECT_EQ(rec.confidence, Confidence::Verified);
  EXPECT_EQ(rec.evidence_count, 1);
}

TEST(IconStore, ContradictionDemotesAndRewrites) {
  IconStore store;
  store.upsert(obs("id/compose", "opens the settings page"));
  store.verify("twitter", "sigA", "id/compose", "opens the settings page", composer_diff());
  IconRecord rec = *store.get("twitter", "sigA", "id/compose");
  EXPECT_EQ(rec.confidence, Confidence::Hypothesized);
  EXPECT_NE(rec.hypothesized_function, "opens the settings page");
  EXPECT_NE(rec.hypothesized_function.find("compose_editor"), std::string::npos);
  EXPECT_EQ(rec.evidence_count, 0);
}

TEST(IconStore, VerifyWithoutHypothesisRaises) {
  IconStore store;
  store.upsert(obs("id/mystery"));
  EXPECT_ERR(store.verify("twitter", "sigA", "id/mystery", "", composer_diff()),
             Err::NoHypothesis);
  EXPECT_ERR(store.verify("twitter", "sigA", "id/never_seen", "x", composer_diff()),
             Err::NoHypothesis);
}

// Exhaustive 3-state machine: from every reachable state, upsert is monotone
// and verify moves only along the legal edges.
TEST(IconStore, ExhaustiveConfidenceMachine) {
  struct Setup {
    const char* name;
    std::function<void(IconStore&)> build;
    Confidence state;
  };
  std::vector<Setup> setups = {
      {"uncharted", [](IconStore& s) { s.upsert(obs("id/x")); }, Confidence::Uncharted},
      {"hypothesized",
       [](IconStore& s) { s.upsert(obs("id/x", "opens the compose editor")); },
       Confidence::Hypothesized},
      {"verified",
       [](IconStore& s) {
         s.upsert(obs("id/x", "opens the compose editor"));
         s.verify("twitter", "sigA", "id/x", "opens the compose editor", composer_diff());
       },
       Confidence::Verified},
  };
  for (const auto& setup : setups) {
    // upsert without guess: state never moves
    {
      IconStore s;
      setup.build(s);
      EXPECT_EQ(s.upsert(obs("id/x")).confidence, setup.state) << setup.name;
    }
    // upsert with guess: Uncharted promotes, others keep their confidence
    {
      IconStore s;
      setup.build(s);
      Confidence after = s.upsert(obs("id/x", "a guess")).confidence;
      Confidence expected =
          setup.state == Confidence::Uncharted ? Confidence::Hypothesized : setup.state;
      EXPECT_EQ(after, expected) << setup.name;
      EXPECT_GE(static_cast<int>(after), static_cast<int>(setup.state)) << setup.name;
    }
    // verify with a consistent effect: Hypothesized/Verified end Verified
    if (setup.state != Confidence::Uncharted) {
      IconStore s;
      setup.build(s);
      IconRecord rec = s.verify("twitter", "sigA", "id/x", "", composer_diff());
      EXPECT_EQ(rec.confidence, Confidence::Verified) << setup.name;
      EXPECT_GE(rec.evidence_count, 1) << setup.name;
    }
    // verify with a contradictory effect: single legal demotion to Hypothesized
    if (setup.state != Confidence::Uncharted) {
      IconStore s;
      setup.build(s);
      IconRecord rec = s.verify("twitter", "sigA", "id/x", "", unrelated_diff());
      EXPECT_EQ(rec.confidence, Confidence::Hypothesized) << setup.name;
    }
  }
}

TEST(IconStore, QueryOrdersByConfidenceThenEvidence) {
  IconStore store;
  store.upsert(obs("id/u1"));
  store.upsert(obs("id/h1", "opens something"));
  store.upsert(obs("id/h2", "opens another"));
  store.upsert(obs("id/v1", "opens the compose editor"));
  store.verify("twitter", "sigA", "id/v1", "opens the compose editor", composer_diff());
  auto records = store.query("twitter", "sigA");
  ASSERT_EQ(records.size(), 4u);
  EXPECT_EQ(records[0].element_ref, "id/v1");
  EXPECT_EQ(records[0].confidence, Confidence::Verified);
  EXPECT_EQ(records[1].confidence, Confidence::Hypothesized);
  EXPECT_EQ(records[3].confidence, Confidence::Uncharted);
}

TEST(IconStore, QueryFiltersOtherScreens) {
  IconStore store;
  store.upsert(obs("id/a"));
  store.upsert({"twitter", "sigB", "id/b", std::nullopt});
  EXPECT_EQ(store.query("twitter", "sigA").size(), 1u);
  EXPECT_EQ(store.query("twitter", "sigZ").size(), 0u);
}

// --- insight memory ---------------------------------------------------------

TEST(InsightStore, RoundTrip) {
  InsightStore store;
  store.add({InsightCategory::efficiency, "social_media_expert", "post a tweet",
             "composer path takes three steps", "traj-1"});
  auto hits = store.query("social_media_expert", "post a tweet");
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].trajectory_ref, "traj-1");
}

TEST(InsightStore, TopKByOverlapMatchesBruteForce) {
  InsightStore store;
  std::vector<std::string> contexts = {
      "post a tweet with media", "search the feed for topics", "post a reply to a tweet",
      "navigate to settings", "post a tweet thread"};
  for (size_t i = 0; i < contexts.size(); ++i)
    store.add({InsightCategory::efficiency, "r", contexts[i], "note " + std::to_string(i),
               "t" + std::to_string(i)});
  std::string query = "post a new tweet";
  auto hits = store.query("r", query, 2);
  ASSERT_EQ(hits.size(), 2u);
  // brute-force oracle: score every record with the same tokenizer, take top 2
  std::vector<std::pair<double, size_t>> scored;
  for (size_t i = 0; i < contexts.size(); ++i)
    scored.emplace_back(overlap_score(query, contexts[i] + " note " + std::to_string(i)), i);
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  EXPECT_EQ(hits[0].task_context, contexts[scored[0].second]);
  EXPECT_EQ(hits[1].task_context, contexts[scored[1].second]);
}

TEST(InsightStore, EmptyStoreYieldsNothing) {
  InsightStore store;
  EXPECT_TRUE(store.query("anyone", "anything").empty());
}

TEST(InsightStore, RoleFilterApplies) {
  InsightStore store;
  store.add({InsightCategory::failure_path, "navigator", "find route", "dead end", "t"});
  EXPECT_EQ(store.query("navigator", "find route").size(), 1u);
  EXPECT_EQ(store.query("writer", "find route").size(), 0u);
}

// --- working memory ---------------------------------------------------------

TEST(WorkingMemory, WriteAppends) {
  WorkingMemory wm("expert-1", 2000, Clock::logical());
  wm.write("note", "verification code is 4821");
  EXPECT_EQ(wm.entries().size(), 1u);
  EXPECT_EQ(wm.token_estimate(), estimate_tokens("verification code is 4821"));
}

TEST(WorkingMemory, ReadReturnsGoalRelevantEntriesWithoutMutation) {
  WorkingMemory wm("expert-1", 2000, Clock::logical());
  wm.write("note", "verification code is 4821");
  wm.write("note", "weather is sunny");
  auto hits = wm.read("verification code");
  ASSERT_FALSE(hits.empty());
  EXPECT_NE(hits[0].text.find("4821"), std::string::npos);
  EXPECT_EQ(wm.entries().size(), 2u);
}

TEST(WorkingMemory, CompactKeepsRecentAndMeetsBudget) {
  WorkingMemory wm("expert-1", 40, Clock::logical());
  for (int i = 0; i < 12; ++i)
    wm.write("step", "observation number " + std::to_string(i) + " about the current screen");
  std::vector<std::string> last3;
  auto& entries = wm.entries();
  for (size_t i = entries.size() - 3; i < entries.size(); ++i) last3.push_back(entries[i].text);
  wm.compact();
  EXPECT_LE(wm.token_estimate(), 40);
  ASSERT_GE(wm.entries().size(), 3u);
  auto& after = wm.entries();
  for (int i = 0; i < 3; ++i)
    EXPECT_EQ(after[after.size() - 3 + i].text, last3[static_cast<size_t>(i)]);
  EXPECT_EQ(after.front().tag, "summary");
}

TEST(WorkingMemory, UnsatisfiableBudgetRaises) {
  WorkingMemory wm("expert-1", 5, Clock::logical());
  wm.write("a", "first entry with plenty of text beyond the budget");
  wm.write("b", "second entry with plenty of text beyond the budget");
  wm.write("c", "third entry with plenty of text beyond the budget");
  wm.write("d", "fourth entry with plenty of text beyond the budget");
  EXPECT_ERR(wm.compact(), Err::BudgetUnsatisfiable);
}

TEST(WorkingMemory, ThinkFlowsCoverReadWriteCompact) {
  WorkingMemory wm("expert-1", 2000, Clock::logical());
  wm.think(ThinkFlow::write, "remember the door code 9911");
  EXPECT_EQ(wm.entries().size(), 1u);
  auto recalled = wm.think(ThinkFlow::read, "door code");
  ASSERT_EQ(recalled.size(), 1u);
  wm.think(ThinkFlow::compact, "");
  EXPECT_EQ(wm.entries().size(), 1u);  // under budget: compact is a no-op
}

// --- team pool --------------------------------------------------------------

namespace {

TeamCommit commit_for(const std::string& node, int attempt = 1,
                      CommitStatus status = CommitStatus::done) {
  TeamCommit tc;
  tc.task_node_id = node;
  tc.expert_id = "expert-1";
  tc.attempt = attempt;
  tc.status = status;
  tc.summary = "posted tweet id=42 about agents";
  tc.exported_entries = {"note: posting flow works", "note: composer is the pencil button"};
  return tc;
}

}  // namespace

TEST(TeamPool, CommitThenFetchRoundTrip) {
  TeamMemoryPool pool(Clock::logical());
  pool.register_plan({"A", "B"});
  pool.commit(commit_for("A"));
  auto hits = pool.fetch({"A"}, "tweet");
  ASSERT_FALSE(hits.empty());
  EXPECT_NE(hits[0].text.find("tweet"), std::string::npos);
}

TEST(TeamPool, FetchingUncommittedNodeRaises) {
  TeamMemoryPool pool(Clock::logical());
  pool.register_plan({"A", "B"});
  pool.commit(commit_for("A"));
  EXPECT_ERR(pool.fetch({"B"}, "x"), Err::MissingDependencyCommit);
  EXPECT_ERR(pool.fetch({"A", "B"}, "x"), Err::MissingDependencyCommit);
}

TEST(TeamPool, DuplicateCommitRejectedAndValueUntouched) {
  TeamMemoryPool pool(Clock::logical());
  pool.register_plan({"A"});
  pool.commit(commit_for("A"));
  json before = json{{"summary", pool.get("A", 1)->summary},
                     {"entries", pool.get("A", 1)->exported_entries},
                     {"at", pool.get("A", 1)->committed_at}};
  TeamCommit other = commit_for("A");
  other.summary = "a different story";
  EXPECT_ERR(pool.commit(other), Err::DuplicateCommit);
  json after = json{{"summary", pool.get("A", 1)->summary},
                    {"entries", pool.get("A", 1)->exported_entries},
                    {"at", pool.get("A", 1)->committed_at}};
  EXPECT_EQ(before.dump(), after.dump());  // byte-identical
}

TEST(TeamPool, SecondAttemptIsADistinctCommit) {
  TeamMemoryPool pool(Clock::logical());
  pool.register_plan({"A"});
  pool.commit(commit_for("A", 1, CommitStatus::failed));
  pool.commit(commit_for("A", 2, CommitStatus::done));
  EXPECT_EQ(pool.size(), 2u);
  EXPECT_TRUE(pool.committed_done("A"));
}

TEST(TeamPool, CommitForUnknownNodeRejected) {
  TeamMemoryPool pool(Clock::logical());
  pool.register_plan({"A"});
  EXPECT_ERR(pool.commit(commit_for("Z")), Err::InvalidParams);
}

TEST(TeamPool, ConcurrentFetchesSeeIdenticalData) {
  TeamMemoryPool pool(Clock::logical());
  pool.register_plan({"A"});
  pool.commit(commit_for("A"));
  constexpr int kReaders = 8;
  std::barrier sync(kReaders);
  std::vector<std::string> results(kReaders);
  std::vector<std::thread> threads;
  for (int i = 0; i < kReaders; ++i)
    threads.emplace_back([&, i] {
      sync.arrive_and_wait();
      auto hits = pool.fetch({"A"}, "tweet");
      std::string flat;
      for (const auto& h : hits) flat += h.text + "|";
      results[static_cast<size_t>(i)] = flat;
    });
  for (auto& t : threads) t.join();
  for (int i = 1; i < kReaders; ++i) EXPECT_EQ(results[0], results[static_cast<size_t>(i)]);
}

// Randomized interleavings: a fetch that starts after a commit completed must
// see that commit; no fetch ever sees a partial commit.
TEST(TeamPool, LinearizableCommitVisibilityUnderInterleaving) {
  for (int seed = 0; seed < 100; ++seed) {
    TeamMemoryPool pool(Clock::logical());
    std::vector<std::string> nodes;
    for (int i = 0; i < 4; ++i) nodes.push_back("n" + std::to_string(i));
    pool.register_plan(nodes);
    std::array<std::atomic<bool>, 4> committed{};
    std::mt19937 rng(static_cast<unsigned>(seed));
    std::vector<std::thread> workers;
    for (int i = 0; i < 4; ++i)
      workers.emplace_back([&, i] {
        TeamCommit tc = commit_for(nodes[static_cast<size_t>(i)]);
        tc.summary = "summary for " + nodes[static_cast<size_t>(i)];
        pool.commit(tc);
        committed[static_cast<size_t>(i)].store(true);
      });
    std::atomic<bool> failed{false};
    std::thread reader([&] {
      for (int round = 0; round < 50; ++round) {
        std::vector<std::string> expect_visible;
        for (int i = 0; i < 4; ++i)
          if (committed[static_cast<size_t>(i)].load()) expect_visible.push_back(nodes[static_cast<size_t>(i)]);
        for (const auto& node : expect_visible) {
          auto hits = pool.fetch({node}, "");
          bool complete = false;
          for (const auto& h : hits)
            if (h.text == "summary for " + node) complete = true;
          if (!complete || hits.size() != 3u) failed.store(true);  // summary + 2 entries
        }
      }
    });
    for (auto& w : workers) w.join();
    reader.join();
    EXPECT_FALSE(failed.load()) << "seed " << seed;
    EXPECT_EQ(pool.size(), 4u);
  }
}

// --- journals ---------------------------------------------------------------

TEST(Journals, StoresAppendOneRecordPerLine) {
  auto dir = ts::temp_dir("journals");
  IconStore icons(Clock::logical());
  icons.attach_journal(dir / "icons.jsonl");
  icons.upsert(obs("id/compose", "opens the compose editor"));
  icons.verify("twitter", "sigA", "id/compose", "opens the compose editor", composer_diff());

  InsightStore insights;
  insights.attach_journal(dir / "insights.jsonl");
  insights.add({InsightCategory::efficiency, "r", "ctx", "text", "t1"});

  auto icon_lines = Journal::read_all(dir / "icons.jsonl");
  ASSERT_EQ(icon_lines.size(), 2u);
  EXPECT_EQ(icon_lines[0]["event"], "upsert");
  EXPECT_EQ(icon_lines[1]["event"], "verify");
  EXPECT_EQ(icon_lines[1]["confidence"], "Verified");
  auto insight_lines = Journal::read_all(dir / "insights.jsonl");
  ASSERT_EQ(insight_lines.size(), 1u);
  EXPECT_EQ(insight_lines[0]["category"], "efficiency");
}
