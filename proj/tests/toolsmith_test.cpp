#include "droidcrew/toolsmith.hpp"

#include <gtest/gtest.h>

#include <random>

#include "droidcrew/sim_device.hpp"
#include "random_scenario.hpp"
#include "test_support.hpp"

using namespace droidcrew;
namespace ts = testsupport;

namespace {

Scenario twitter_scenario() { return load_scenario(ts::scenario_path("twitter.json")); }

ActionStep step(int index, const std::string& op, const std::string& pre, const std::string& post,
                const std::string& target = "", const std::string& goal = "") {
  ActionStep s;
  s.index = index;
  s.op = op;
  s.goal = goal;
  s.pre_signature = pre;
  s.post_signature = post;
  s.target_element_ref = target;
  s.observed_effect = pre == post ? "screen_unchanged" : "screen_changed";
  return s;
}

// The compose-and-post walk on the twitter scenario, recorded by hand through
// the simulator: the reference trajectory for mining tests.
ActionTrajectory compose_walk(SimDevice& dev, const std::string& body = "drafting thoughts") {
  dev.reset();
  ActionTrajectory traj;
  traj.trajectory_id = "traj-compose";
  traj.app_id = "twitter";
  traj.observations.push_back(dev.capture_screen());
  ts::record_walk_step(traj, dev, Action::tap(930, 1590), "open the composer",
                       "com.twitter:id/compose_fab", false);
  ts::record_walk_step(traj, dev, Action::tap(540, 500), "focus the body",
                       "com.twitter:id/tweet_body", false);
  ts::record_walk_step(traj, dev, Action::text(body), "enter the tweet body", "", true);
  ts::record_walk_step(traj, dev, Action::tap(920, 110), "post the tweet",
                       "com.twitter:id/post_button", false);
  traj.outcome = TrajectoryOutcome::success;
  return traj;
}

}  // namespace

// --- record_step ------------------------------------------------------------

TEST(RecordStep, AppendsWhenChainHolds) {
  ActionTrajectory traj;
  traj.trajectory_id = "t";
  record_step(traj, step(0, "tap", "sig1", "sig2"));
  record_step(traj, step(1, "tap", "sig2", "sig3"));
  EXPECT_EQ(traj.steps.size(), 2u);
  EXPECT_EQ(traj.steps[1].index, 1);
}

TEST(RecordStep, ChainBreakOnMismatchedSignature) {
  ActionTrajectory traj;
  record_step(traj, step(0, "tap", "sig1", "sig2"));
  EXPECT_ERR(record_step(traj, step(1, "tap", "sigX", "sig3")), Err::ChainBreak);
}

TEST(RecordStep, StopFinalizesWithoutBreakingChain) {
  ActionTrajectory traj;
  record_step(traj, step(0, "tap", "sig1", "sig2"));
  record_step(traj, step(1, "stop", "sig2", "sig2"));
  traj.outcome = TrajectoryOutcome::success;
  EXPECT_EQ(traj.steps.back().op, "stop");
}

// --- stability detection ----------------------------------------------------

TEST(DetectStable, RepeatVisitsKeepIdenticalElementsStable) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);  // home observed twice (start + after post)
  StabilityReport report = detect_stable_elements({traj});
  std::string home_sig = traj.observations.front().screen_signature;
  const StableElementInfo* fab = report.find(home_sig, "com.twitter:id/compose_fab");
  ASSERT_NE(fab, nullptr);
  EXPECT_FALSE(fab->low_support);  // two sightings
  EXPECT_FALSE(fab->text_variable);
}

TEST(DetectStable, LabelVariationStaysStableButFlagged) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  StabilityReport report = detect_stable_elements({traj});
  // the body field's label changed between sightings (typed text)
  std::string editor_sig;
  for (const auto& obs : traj.observations)
    if (obs.logical_name == "compose_editor") editor_sig = obs.screen_signature;
  const StableElementInfo* body = report.find(editor_sig, "com.twitter:id/tweet_body");
  ASSERT_NE(body, nullptr);
  EXPECT_TRUE(body->text_variable);
}

TEST(DetectStable, ElementMissingOnAVisitIsUnstable) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  StabilityReport report = detect_stable_elements({traj});
  std::string home_sig = traj.observations.front().screen_signature;
  // feed_item_1 toggles away on the second home visit
  std::string feed_ref;
  for (const auto& e : traj.observations.front().elements)
    if (e.element_id == "feed_item_1") feed_ref = element_ref(e);
  ASSERT_FALSE(feed_ref.empty());
  EXPECT_FALSE(report.is_stable(home_sig, feed_ref));
  EXPECT_FALSE(ts::oracle_is_stable(traj, home_sig, feed_ref));
}

TEST(DetectStable, MultipleEditorSightingsAreNotLowSupport) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  StabilityReport report = detect_stable_elements({traj});
  std::string editor_sig;
  for (const auto& obs : traj.observations)
    if (obs.logical_name == "compose_editor") editor_sig = obs.screen_signature;
  const StableElementInfo* post = report.find(editor_sig, "com.twitter:id/post_button");
  ASSERT_NE(post, nullptr);
  // observed after open, after focus and after text: three sightings
  EXPECT_FALSE(post->low_support);
}

TEST(DetectStable, SingleSightingIsStableButLowSupport) {
  SimDevice dev(twitter_scenario());
  dev.reset();
  ActionTrajectory traj;
  traj.trajectory_id = "one-hop";
  traj.app_id = "twitter";
  traj.observations.push_back(dev.capture_screen());
  ts::record_walk_step(traj, dev, Action::tap(675, 1845), "open messages",
                       "com.twitter:id/nav_messages", false);
  traj.outcome = TrajectoryOutcome::success;
  StabilityReport report = detect_stable_elements({traj});
  std::string messages_sig = traj.observations.back().screen_signature;
  const StableElementInfo* row = report.find(messages_sig, "com.twitter:id/msg_row_1");
  ASSERT_NE(row, nullptr);
  EXPECT_TRUE(row->low_support);
}

TEST(DetectStable, AgreesWithBruteForceOracleOnRandomWalks) {
  std::mt19937 rng(99);
  for (int round = 0; round < 20; ++round) {
    Scenario sc = ts::random_scenario(rng);
    SimDevice dev((Scenario(sc)));
    ActionTrajectory traj = ts::random_minable_walk(sc, dev, rng);
    StabilityReport report = detect_stable_elements({traj});
    for (const auto& obs : traj.observations)
      for (const auto& e : obs.elements) {
        std::string ref = element_ref(e);
        EXPECT_EQ(report.is_stable(obs.screen_signature, ref),
                  ts::oracle_is_stable(traj, obs.screen_signature, ref))
            << "round " << round << " ref " << ref;
      }
  }
}

// --- mining -----------------------------------------------------------------

TEST(MineWorkflow, ComposeWalkYieldsParameterizedTool) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  ASSERT_EQ(tool.program.size(), 4u);
  EXPECT_EQ(tool.program[0].op, "tap");
  EXPECT_EQ(tool.program[0].target_ref, "com.twitter:id/compose_fab");
  EXPECT_EQ(tool.program[1].target_ref, "com.twitter:id/tweet_body");
  EXPECT_EQ(tool.program[2].op, "text");
  ASSERT_EQ(tool.formal_params.size(), 1u);
  EXPECT_EQ(tool.formal_params[0].name, "body");  // lifted from "enter the tweet body"
  EXPECT_TRUE(tool.program[2].bindings.at("content").formal);
  EXPECT_EQ(tool.program[3].target_ref, "com.twitter:id/post_button");
  EXPECT_EQ(tool.initial_signature, traj.steps.front().pre_signature);
  EXPECT_EQ(tool.final_signature, traj.steps.back().post_signature);
  EXPECT_EQ(tool.provenance, "traj-compose");
  EXPECT_NE(tool.summary.find("post the tweet"), std::string::npos);
}

TEST(MineWorkflow, EssentialTapOnUnstableElementIsNotMinable) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  // retarget the essential composer tap onto the toggling feed row
  std::string feed_ref;
  for (const auto& e : traj.observations.front().elements)
    if (e.element_id == "feed_item_1") feed_ref = element_ref(e);
  traj.steps[0].target_element_ref = feed_ref;
  EXPECT_ERR(mine_workflow(traj, detect_stable_elements({traj})), Err::NotMinable);
}

TEST(MineWorkflow, NonEssentialDeadTapIsDropped) {
  SimDevice dev(twitter_scenario());
  dev.reset();
  ActionTrajectory traj;
  traj.trajectory_id = "with-dead-tap";
  traj.app_id = "twitter";
  traj.observations.push_back(dev.capture_screen());
  // poke the toggling feed row first: no transition, no focus, exploratory
  ts::record_walk_step(traj, dev, Action::tap(540, 380), "poke the feed",
                       element_ref(*dev.capture_screen().find("feed_item_1")), false);
  ts::record_walk_step(traj, dev, Action::tap(930, 1590), "open the composer",
                       "com.twitter:id/compose_fab", false);
  ts::record_walk_step(traj, dev, Action::tap(540, 500), "focus the body",
                       "com.twitter:id/tweet_body", false);
  ts::record_walk_step(traj, dev, Action::text("hi"), "enter the tweet body", "", true);
  ts::record_walk_step(traj, dev, Action::tap(920, 110), "post the tweet",
                       "com.twitter:id/post_button", false);
  traj.outcome = TrajectoryOutcome::success;
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  EXPECT_EQ(tool.program.size(), 4u);  // dead tap dropped
  EXPECT_EQ(tool.program[0].target_ref, "com.twitter:id/compose_fab");
}

TEST(MineWorkflow, FailedTrajectoryIsNotMinable) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  traj.outcome = TrajectoryOutcome::failure;
  EXPECT_ERR(mine_workflow(traj, detect_stable_elements({traj})), Err::NotMinable);
}

TEST(MineWorkflow, NoTextStepsMeansNoParams) {
  SimDevice dev(twitter_scenario());
  dev.reset();
  ActionTrajectory traj;
  traj.trajectory_id = "nav-only";
  traj.app_id = "twitter";
  traj.observations.push_back(dev.capture_screen());
  ts::record_walk_step(traj, dev, Action::tap(675, 1845), "open messages",
                       "com.twitter:id/nav_messages", false);
  traj.outcome = TrajectoryOutcome::success;
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  EXPECT_TRUE(tool.formal_params.empty());
  EXPECT_EQ(tool.program.size(), 1u);
}

TEST(MineWorkflow, ThinkAndReadAreDroppedWaitSurvives) {
  ActionTrajectory traj;
  traj.trajectory_id = "cognitive";
  traj.app_id = "app";
  record_step(traj, step(0, "think", "sig1", "sig1"));
  record_step(traj, step(1, "wait", "sig1", "sig1"));
  record_step(traj, step(2, "read", "sig1", "sig1"));
  record_step(traj, step(3, "stop", "sig1", "sig1"));
  traj.outcome = TrajectoryOutcome::success;
  ScreenState s;
  s.screen_signature = "sig1";
  traj.observations.push_back(s);
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  ASSERT_EQ(tool.program.size(), 1u);
  EXPECT_EQ(tool.program[0].op, "wait");
}

// Param-lifting completeness: no literal binding equals a goal-derived input.
TEST(MineWorkflow, LiftedInputsNeverSurviveAsLiterals) {
  std::mt19937 rng(5);
  for (int round = 0; round < 15; ++round) {
    Scenario sc = ts::random_scenario(rng);
    SimDevice dev((Scenario(sc)));
    ActionTrajectory traj = ts::random_minable_walk(sc, dev, rng);
    std::set<std::string> goal_inputs;
    for (const auto& s : traj.steps)
      if (s.text_from_goal && s.params.count("content")) goal_inputs.insert(s.params.at("content"));
    WorkflowTool tool;
    try {
      tool = mine_workflow(traj, detect_stable_elements({traj}));
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), Err::NotMinable);
      continue;
    }
    for (const auto& ps : tool.program)
      for (const auto& [key, binding] : ps.bindings)
        if (!binding.formal) EXPECT_EQ(goal_inputs.count(binding.value), 0u);
  }
}

// --- validation and execution -----------------------------------------------

TEST(ValidateTool, MinedToolReplaysCleanly) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  ValidationReport report = validate_tool(tool, dev);
  EXPECT_TRUE(report.passed) << report.note;
}

TEST(ValidateTool, WrongInitialScreenReportsPrecondition) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  tool.initial_signature = "not-a-real-signature";
  ValidationReport report = validate_tool(tool, dev);
  EXPECT_FALSE(report.passed);
  EXPECT_EQ(report.failure_kind, "precondition");
}

TEST(ValidateTool, EditedScenarioReportsReplayMismatch) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  // remove the post button from the editor: replay diverges at the last step
  Scenario mutated = twitter_scenario();
  auto& elements = mutated.screens["compose_editor"].elements;
  std::erase_if(elements, [](const ScenarioElement& e) { return e.id == "post_button"; });
  SimDevice broken((Scenario(mutated)));
  ValidationReport report = validate_tool(tool, broken);
  EXPECT_FALSE(report.passed);
  EXPECT_EQ(report.failure_kind, "replay_mismatch");
  EXPECT_GE(report.diverged_at_step, 0);
}

TEST(ExecuteTool, ReplaysWithBindingsAndSetsFlag) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  dev.reset();
  ActionTrajectory replay = execute_tool(tool, {{"body", "hello world"}}, dev);
  EXPECT_EQ(replay.outcome, TrajectoryOutcome::success);
  EXPECT_EQ(replay.steps.size(), 4u);
  EXPECT_TRUE(dev.probe_flag("tweet_posted"));
  EXPECT_EQ(replay.steps.back().post_signature, tool.final_signature);
  EXPECT_EQ(replay.steps[2].params.at("content"), "hello world");
}

TEST(ExecuteTool, MissingBindingRaises) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  dev.reset();
  EXPECT_ERR(execute_tool(tool, {}, dev), Err::MissingBinding);
}

TEST(ExecuteTool, WrongStartScreenRaisesPreconditionMismatch) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  dev.reset();
  dev.perform(Action::tap(675, 1845));  // wander off to messages
  EXPECT_ERR(execute_tool(tool, {{"body", "x"}}, dev), Err::PreconditionMismatch);
}

TEST(ExecuteTool, MidProgramDriftHaltsWithPrefix) {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  WorkflowTool tool = mine_workflow(traj, detect_stable_elements({traj}));
  // editor without the body field: step 0 lands fine, step 1 cannot resolve
  Scenario mutated = twitter_scenario();
  auto& elements = mutated.screens["compose_editor"].elements;
  std::erase_if(elements, [](const ScenarioElement& e) { return e.id == "body_field"; });
  SimDevice broken((Scenario(mutated)));
  try {
    execute_tool(tool, {{"body", "x"}}, broken);
    FAIL() << "expected StepFailed";
  } catch (const StepFailedError& e) {
    EXPECT_LE(e.prefix().steps.size(), 1u);
  }
}

// --- registry ---------------------------------------------------------------

namespace {

WorkflowTool mined_twitter_tool() {
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  return mine_workflow(traj, detect_stable_elements({traj}));
}

}  // namespace

TEST(ToolRegistry, LookupPrefersExactSignature) {
  ToolRegistry registry;
  WorkflowTool tool = mined_twitter_tool();
  SimDevice dev(twitter_scenario());
  registry.register_tool(tool, validate_tool(tool, dev));
  dev.reset();
  std::string home_sig = dev.capture_screen().screen_signature;
  auto matches = registry.lookup("twitter", home_sig, "post the tweet body");
  ASSERT_EQ(matches.size(), 1u);
  EXPECT_TRUE(matches[0].exact_signature);
  EXPECT_GT(matches[0].score, 0.0);
}

TEST(ToolRegistry, GoalMatchFromWrongScreenIsFlagged) {
  ToolRegistry registry;
  WorkflowTool tool = mined_twitter_tool();
  SimDevice dev(twitter_scenario());
  registry.register_tool(tool, validate_tool(tool, dev));
  auto matches = registry.lookup("twitter", "some-other-signature", "post the tweet");
  ASSERT_EQ(matches.size(), 1u);
  EXPECT_FALSE(matches[0].exact_signature);  // needs navigation first
}

TEST(ToolRegistry, EmptyRegistryFindsNothing) {
  ToolRegistry registry;
  EXPECT_TRUE(registry.lookup("twitter", "sig", "post").empty());
}

TEST(ToolRegistry, RejectsUnvalidatedTools) {
  ToolRegistry registry;
  WorkflowTool tool = mined_twitter_tool();
  ValidationReport failed;
  failed.passed = false;
  EXPECT_ERR(registry.register_tool(tool, failed), Err::InvalidParams);
}

TEST(ToolRegistry, SaveAndLoadRoundTrip) {
  auto dir = ts::temp_dir("registry");
  ToolRegistry registry;
  WorkflowTool tool = mined_twitter_tool();
  SimDevice dev(twitter_scenario());
  registry.register_tool(tool, validate_tool(tool, dev));
  registry.save(dir);

  ToolRegistry loaded;
  EXPECT_EQ(loaded.load(dir), 1u);
  auto back = loaded.get(tool.tool_id);
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(tool_to_json(*back).dump(), tool_to_json(tool).dump());
}

// --- replay soundness property (small n; the acceptance suite runs 100) ------

TEST(ReplaySoundness, RandomMinableWalksReplayToSameFinalSignature) {
  std::mt19937 rng(2024);
  int mined = 0;
  for (int round = 0; round < 25; ++round) {
    Scenario sc = ts::random_scenario(rng);
    SimDevice dev((Scenario(sc)));
    ActionTrajectory traj = ts::random_minable_walk(sc, dev, rng);
    if (traj.steps.empty()) continue;
    WorkflowTool tool;
    try {
      tool = mine_workflow(traj, detect_stable_elements({traj}));
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), Err::NotMinable);
      continue;
    }
    std::map<std::string, std::string> bindings;
    for (const auto& p : tool.formal_params) bindings[p.name] = "replay " + p.name;
    SimDevice fresh((Scenario(sc)));
    ActionTrajectory replay = execute_tool(tool, bindings, fresh);
    EXPECT_EQ(replay.steps.back().post_signature, traj.steps.back().post_signature);
    ++mined;
  }
  EXPECT_GT(mined, 10);
}

// --- serialization ----------------------------------------------------------

TEST(TrajectoryJournal, SaveLoadRoundTrip) {
  auto dir = ts::temp_dir("traj");
  SimDevice dev(twitter_scenario());
  ActionTrajectory traj = compose_walk(dev);
  save_trajectory(traj, dir / "walk.jsonl");
  ActionTrajectory back = load_trajectory(dir / "walk.jsonl");
  EXPECT_EQ(back.trajectory_id, traj.trajectory_id);
  EXPECT_EQ(back.steps.size(), traj.steps.size());
  EXPECT_EQ(back.observations.size(), traj.observations.size());
  EXPECT_EQ(back.outcome, TrajectoryOutcome::success);
  for (size_t i = 0; i < traj.steps.size(); ++i) {
    EXPECT_EQ(step_to_json(back.steps[i]).dump(), step_to_json(traj.steps[i]).dump());
  }
}
