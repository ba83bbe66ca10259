#pragma once

#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "droidcrew/expert.hpp"

namespace droidcrew {

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

enum class NodeStatus { blocked, ready, running, done, failed };

inline std::string node_status_name(NodeStatus s) {
  switch (s) {
    case NodeStatus::blocked: return "blocked";
    case NodeStatus::ready: return "ready";
    case NodeStatus::running: return "running";
    case NodeStatus::done: return "done";
    case NodeStatus::failed: return "failed";
  }
  return "?";
}

struct PlanNode {
  std::string node_id;
  std::string description;
  std::string assigned_expert;  // role_name
  std::vector<std::string> deps;
  NodeStatus status = NodeStatus::blocked;
};

struct TeamPlan {
  std::string plan_id;
  std::string requirement;
  std::vector<PlanNode> nodes;

  PlanNode* find(const std::string& id) {
    for (auto& n : nodes)
      if (n.node_id == id) return &n;
    return nullptr;
  }
  const PlanNode* find(const std::string& id) const {
    for (const auto& n : nodes)
      if (n.node_id == id) return &n;
    return nullptr;
  }
};

struct Team {
  std::string team_id;
  std::vector<ExpertPortrait> members;
  std::string requirement;

  const ExpertPortrait* member(const std::string& role_name) const {
    for (const auto& m : members)
      if (m.role_name == role_name) return &m;
    return nullptr;
  }
};

inline json plan_to_json(const TeamPlan& plan) {
  json nodes = json::array();
  for (const auto& n : plan.nodes)
    nodes.push_back({{"node_id", n.node_id},
                     {"description", n.description},
                     {"assigned_expert", n.assigned_expert},
                     {"deps", n.deps},
                     {"status", node_status_name(n.status)}});
  return json{{"plan_id", plan.plan_id}, {"requirement", plan.requirement}, {"nodes", nodes}};
}

// Kahn's algorithm; throws CyclicPlan when some node can never be scheduled.
inline void check_acyclic(const TeamPlan& plan) {
  std::map<std::string, int> indegree;
  std::map<std::string, std::vector<std::string>> dependents;
  for (const auto& n : plan.nodes) indegree[n.node_id] = static_cast<int>(n.deps.size());
  for (const auto& n : plan.nodes)
    for (const auto& d : n.deps) dependents[d].push_back(n.node_id);
  std::vector<std::string> queue;
  for (const auto& [id, deg] : indegree)
    if (deg == 0) queue.push_back(id);
  size_t resolved = 0;
  while (!queue.empty()) {
    std::string id = queue.back();
    queue.pop_back();
    ++resolved;
    for (const auto& dep : dependents[id])
      if (--indegree[dep] == 0) queue.push_back(dep);
  }
  if (resolved != plan.nodes.size())
    raise(Err::CyclicPlan, "dependency cycle among " +
                               std::to_string(plan.nodes.size() - resolved) + " nodes");
}

inline void validate_plan(const TeamPlan& plan, const Team& team) {
  if (plan.nodes.empty()) raise(Err::ParseError, "plan has no nodes");
  std::set<std::string> ids;
  for (const auto& n : plan.nodes)
    if (!ids.insert(n.node_id).second) raise(Err::ParseError, "duplicate node id: " + n.node_id);
  for (const auto& n : plan.nodes) {
    for (const auto& d : n.deps)
      if (!ids.count(d)) raise(Err::ParseError, "node " + n.node_id + " depends on unknown " + d);
    if (n.assigned_expert.empty() || !team.member(n.assigned_expert))
      raise(Err::UnassignedNode, "node " + n.node_id + " assigned to missing expert '" +
                                     n.assigned_expert + "'");
  }
  check_acyclic(plan);
}

// ---------------------------------------------------------------------------
// Team assembly
// ---------------------------------------------------------------------------

inline double portrait_score(const ExpertPortrait& p, const std::string& requirement) {
  return overlap_score(requirement, p.profile_text());
}

// Templated new-expert creation: the uncovered capability tokens of the
// requirement become the portrait.
inline ExpertPortrait synthesize_expert(const std::vector<ExpertPortrait>& pool,
                                        const std::string& requirement,
                                        const std::vector<std::string>& known_apps,
                                        const std::set<std::string>& covered_tokens) {
  std::vector<std::string> uncovered;
  for (const auto& tok : tokenize(requirement))
    if (!covered_tokens.count(tok) &&
        std::find(uncovered.begin(), uncovered.end(), tok) == uncovered.end())
      uncovered.push_back(tok);
  if (uncovered.empty()) uncovered = tokenize(requirement);

  ExpertPortrait p;
  std::string base;
  for (size_t i = 0; i < uncovered.size() && i < 2; ++i) base += (base.empty() ? "" : "_") + uncovered[i];
  if (base.empty()) base = "generalist";
  p.role_name = base + "_expert";
  int n = 2;
  auto taken = [&](const std::string& name) {
    for (const auto& e : pool)
      if (e.role_name == name) return true;
    return false;
  };
  while (taken(p.role_name)) p.role_name = base + "_expert_" + std::to_string(n++);
  p.expert_id = p.role_name;
  p.responsibility = "Handle: " + requirement;
  for (size_t i = 0; i < uncovered.size() && i < 6; ++i) p.capability_tags.push_back(uncovered[i]);
  for (const auto& app : known_apps)
    if (token_set(requirement).count(to_lower(app))) p.app_affinity.push_back(app);
  return p;
}

// Scores every portrait against the requirement and selects those above the
// threshold; when no expert covers a needed app (or none qualifies at all) a
// new portrait is synthesized and added to the pool.
inline Team assemble_team(std::vector<ExpertPortrait>& pool, const std::string& requirement,
                          ModelGateway* /*gateway*/ = nullptr,
                          const std::vector<std::string>& known_apps = {},
                          double threshold = 0.2) {
  if (trim(requirement).empty()) raise(Err::EmptyRequirement, "empty requirement");

  Team team;
  team.team_id = "team-" + hash_hex(requirement).substr(0, 8);
  team.requirement = requirement;

  std::vector<std::pair<double, const ExpertPortrait*>> scored;
  for (const auto& p : pool) scored.emplace_back(portrait_score(p, requirement), &p);
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->role_name < b.second->role_name;
  });
  for (const auto& [score, p] : scored)
    if (score >= threshold) team.members.push_back(*p);

  // apps named by the requirement that nobody on the team covers
  std::set<std::string> wanted_apps;
  auto req_tokens = token_set(requirement);
  for (const auto& app : known_apps)
    if (req_tokens.count(to_lower(app))) wanted_apps.insert(app);
  for (const auto& m : team.members)
    for (const auto& a : m.app_affinity) wanted_apps.erase(a);

  if (team.members.empty() || !wanted_apps.empty()) {
    std::set<std::string> covered;
    for (const auto& m : team.members)
      for (const auto& tok : tokenize(m.profile_text())) covered.insert(tok);
    ExpertPortrait fresh = synthesize_expert(pool, requirement, known_apps, covered);
    pool.push_back(fresh);
    team.members.push_back(fresh);
  }
  return team;
}

// ---------------------------------------------------------------------------
// Double-layer planning
// ---------------------------------------------------------------------------

namespace detail {

inline TeamPlan parse_plan_payload(const json& payload, const std::string& requirement) {
  TeamPlan plan;
  plan.plan_id = "plan-" + hash_hex(requirement).substr(0, 8);
  plan.requirement = requirement;
  if (!payload.contains("nodes") || !payload["nodes"].is_array())
    raise(Err::ParseError, "planner payload has no nodes[]");
  for (const auto& jn : payload["nodes"]) {
    PlanNode n;
    n.node_id = jn.value("id", "");
    n.description = jn.value("description", "");
    n.assigned_expert = jn.value("expert", "");
    if (jn.contains("deps")) n.deps = jn.at("deps").get<std::vector<std::string>>();
    if (n.node_id.empty()) raise(Err::ParseError, "plan node without id");
    plan.nodes.push_back(std::move(n));
  }
  return plan;
}

inline TeamPlan trivial_plan(const Team& team, const std::string& requirement) {
  TeamPlan plan;
  plan.plan_id = "plan-" + hash_hex(requirement).substr(0, 8);
  plan.requirement = requirement;
  const ExpertPortrait* best = nullptr;
  double best_score = -1.0;
  for (const auto& m : team.members) {
    double s = portrait_score(m, requirement);
    if (s > best_score || (s == best_score && best && m.role_name < best->role_name)) {
      best = &m;
      best_score = s;
    }
  }
  PlanNode n;
  n.node_id = "n1";
  n.description = requirement;
  n.assigned_expert = best ? best->role_name : "";
  plan.nodes.push_back(std::move(n));
  return plan;
}

}  // namespace detail

// Team-level DAG. A cyclic plan gets one re-ask (keyed with retry=1), then
// hard-fails. Scripted gateways with no planner entry fall back to the
// single-node trivial plan.
inline TeamPlan plan_team(const Team& team, const std::string& requirement, ModelGateway& gateway,
                          const std::string& run_id = "run") {
  if (team.members.empty()) raise(Err::EmptyRequirement, "team has no members");

  // '+'-joined: key-field values must stay comma-free
  std::string roles;
  for (const auto& m : team.members) roles += (roles.empty() ? "" : "+") + m.role_name;

  auto ask = [&](bool retry) -> std::optional<TeamPlan> {
    ModelRequest req;
    req.role_tag = RoleTag::plan_team;
    req.run_id = run_id;
    req.prompt_text = "Decompose into a DAG for team [" + roles + "]: " + requirement;
    req.with("requirement", requirement).with("team", roles);
    if (retry) req.with("retry", "1");
    ModelResponse resp;
    try {
      resp = gateway.complete(req);
    } catch (const Error& e) {
      if (e.code() == Err::NoScriptMatch) return std::nullopt;
      throw;
    }
    if (!resp.parsed) raise(Err::ParseError, "planner returned no payload");
    return detail::parse_plan_payload(*resp.parsed, requirement);
  };

  std::optional<TeamPlan> plan = ask(false);
  if (!plan) {
    TeamPlan trivial = detail::trivial_plan(team, requirement);
    validate_plan(trivial, team);
    return trivial;
  }
  try {
    validate_plan(*plan, team);
    return *plan;
  } catch (const Error& e) {
    if (e.code() != Err::CyclicPlan) throw;
  }
  std::optional<TeamPlan> second = ask(true);
  if (!second) raise(Err::CyclicPlan, "planner emitted a cycle and offered no correction");
  validate_plan(*second, team);
  return *second;
}

// Expert-level decomposition of one plan node into ordered atomic tasks.
inline std::vector<AtomicTask> plan_expert(const ExpertPortrait& expert,
                                           const std::string& node_description,
                                           ModelGateway& gateway, int max_steps,
                                           const std::string& run_id = "run") {
  ModelRequest req;
  req.role_tag = RoleTag::plan_expert;
  req.run_id = run_id;
  req.prompt_text = "As " + expert.role_name + ", decompose into atomic tasks: " + node_description;
  req.with("role", expert.role_name).with("node", node_description);

  json payload;
  try {
    ModelResponse resp = gateway.complete(req);
    if (!resp.parsed || !resp.parsed->contains("tasks"))
      raise(Err::EmptyDecomposition, "planner returned no tasks for: " + node_description);
    payload = *resp.parsed;
  } catch (const Error& e) {
    if (e.code() != Err::NoScriptMatch) throw;
    payload = json{{"tasks", json::array({json{{"description", node_description}}})}};
  }

  std::vector<AtomicTask> out;
  int i = 1;
  for (const auto& jt : payload["tasks"]) {
    AtomicTask t;
    t.description = jt.value("description", "");
    if (t.description.empty()) continue;
    t.task_id = "t" + std::to_string(i++);
    t.max_steps = max_steps;
    t.done_criterion = jt.value("done", "");
    t.independent = jt.value("independent", false);
    out.push_back(std::move(t));
  }
  if (out.empty()) raise(Err::EmptyDecomposition, "zero atomic tasks for: " + node_description);
  return out;
}

// ---------------------------------------------------------------------------
// Sequence adjustment
// ---------------------------------------------------------------------------

enum class AdjustPolicy { repeat, reorder };

// repeat: the failed task is re-enqueued with attempt+1. reorder: one
// independent pending task is promoted ahead of the retry.
inline std::vector<AtomicTask> adjust_sequence(const std::vector<AtomicTask>& pending,
                                               const AtomicTask& failed, AdjustPolicy policy,
                                               int retry_limit) {
  if (failed.status != TaskStatus::failed)
    raise(Err::InvalidParams, "adjust_sequence expects a failed task");
  if (failed.attempt > retry_limit)
    raise(Err::RetryExhausted, "task " + failed.task_id + " failed " +
                                   std::to_string(failed.attempt) + " times (limit " +
                                   std::to_string(retry_limit) + ")");
  AtomicTask retry = failed;
  retry.attempt += 1;
  retry.status = TaskStatus::pending;

  std::vector<AtomicTask> out;
  if (policy == AdjustPolicy::reorder) {
    size_t promoted = pending.size();
    for (size_t i = 0; i < pending.size(); ++i) {
      if (pending[i].independent) {
        promoted = i;
        break;
      }
    }
    if (promoted < pending.size()) out.push_back(pending[promoted]);
    out.push_back(retry);
    for (size_t i = 0; i < pending.size(); ++i)
      if (i != promoted) out.push_back(pending[i]);
    return out;
  }
  out.push_back(retry);
  out.insert(out.end(), pending.begin(), pending.end());
  return out;
}

// ---------------------------------------------------------------------------
// Scheduling
// ---------------------------------------------------------------------------

struct SchedulerEvent {
  int seq = 0;
  std::string kind;  // fetch | start | device | commit
  std::string node_id;
};

class EventLog {
 public:
  void add(const std::string& kind, const std::string& node_id) {
    std::lock_guard<std::mutex> lock(mu_);
    events_.push_back({static_cast<int>(events_.size()), kind, node_id});
  }
  std::vector<SchedulerEvent> snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return events_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<SchedulerEvent> events_;
};

struct NodeResult {
  bool done = false;
  std::string summary;
  std::vector<std::string> exported_entries;
  int steps_used = 0;
  ActionTrajectory trajectory;
};

struct NodeContext {
  const PlanNode& node;
  const ExpertPortrait& expert;
  Device& device;
  Stores& stores;
  ModelGateway& gateway;
  std::vector<FetchedEntry> fetched;
  std::function<void()> on_device_action;  // instrumentation hook
};

using NodeRunner = std::function<NodeResult(NodeContext&)>;

// Production node execution: expert-level planning, atomic tasks in order,
// repeat-adjustment on failure.
inline NodeRunner default_node_runner(int atomic_retry_limit = 1) {
  return [atomic_retry_limit](NodeContext& ctx) -> NodeResult {
    NodeResult out;
    WorkingMemory& wm = ctx.stores.wm(ctx.expert.expert_id);
    for (const auto& f : ctx.fetched) wm.write("fetched", f.task_node_id + ": " + f.text);

    int max_steps = ctx.stores.caps.max_steps_c12;
    std::vector<AtomicTask> queue =
        plan_expert(ctx.expert, ctx.node.description, ctx.gateway, max_steps, ctx.stores.run_id);
    for (auto& t : queue) t.parent_node = ctx.node.node_id;

    std::vector<std::string> done_notes;
    while (!queue.empty()) {
      AtomicTask task = queue.front();
      queue.erase(queue.begin());
      TaskOutcome outcome = execute_atomic(ctx.expert, task, ctx.device, ctx.gateway, ctx.stores);
      out.steps_used += outcome.steps_used;
      if (ctx.on_device_action)
        for (const auto& s : outcome.trajectory.steps)
          if (device_affecting(op_from_name(s.op))) ctx.on_device_action();
      for (auto& step : outcome.trajectory.steps) out.trajectory.steps.push_back(step);
      for (auto& obs : outcome.trajectory.observations)
        out.trajectory.observations.push_back(obs);
      if (outcome.status == TaskStatus::done) {
        done_notes.push_back(task.description);
        continue;
      }
      try {
        queue = adjust_sequence(queue, task, AdjustPolicy::repeat, atomic_retry_limit);
      } catch (const Error& e) {
        if (e.code() != Err::RetryExhausted) throw;
        out.done = false;
        out.summary = "failed at '" + task.description + "': " + outcome.note;
        return out;
      }
    }
    out.done = true;
    out.summary = ctx.node.description + " — completed";
    for (const auto& n : done_notes) out.summary += "; " + n;
    out.trajectory.trajectory_id = ctx.stores.run_id + "-" + ctx.node.node_id;
    out.trajectory.app_id = out.trajectory.observations.empty()
                                ? ""
                                : out.trajectory.observations.front().app_id;
    out.trajectory.outcome = TrajectoryOutcome::success;
    // recent working-memory entries travel with the commit
    auto entries = wm.entries();
    size_t take = std::min<size_t>(entries.size(), 3);
    for (size_t i = entries.size() - take; i < entries.size(); ++i)
      out.exported_entries.push_back(entries[i].tag + ": " + entries[i].text);
    return out;
  };
}

struct NodeOutcome {
  NodeStatus status = NodeStatus::failed;
  int attempts = 0;
  std::string summary;
  ActionTrajectory trajectory;
};

struct PlanOutcome {
  TeamPlan plan;
  bool success = false;
  std::map<std::string, NodeOutcome> nodes;
  std::shared_ptr<EventLog> events = std::make_shared<EventLog>();
  int total_device_steps = 0;
};

// Executes the plan respecting dependencies. Nodes on distinct device leases
// run concurrently; the scheduler thread is the only writer of node statuses.
// Before a node starts its expert fetches from every dependency commit; when
// it finishes (either way) the expert commits.
inline PlanOutcome schedule(TeamPlan plan, const Team& team,
                            std::vector<DeviceHandle> device_leases, Stores& stores,
                            ModelGateway& gateway, NodeRunner runner = {},
                            size_t parallelism = 0) {
  validate_plan(plan, team);
  if (device_leases.empty()) raise(Err::ConfigError, "no device lease");
  if (!runner) runner = default_node_runner(stores.caps.retry_limit);
  if (parallelism == 0) parallelism = device_leases.size();
  parallelism = std::min(parallelism, device_leases.size());

  PlanOutcome out;
  std::vector<std::string> node_ids;
  for (const auto& n : plan.nodes) node_ids.push_back(n.node_id);
  stores.pool.register_plan(node_ids);

  std::mutex mu;
  std::condition_variable cv;
  struct Completion {
    std::string node_id;
    bool done;
    std::string summary;
    ActionTrajectory trajectory;
    size_t lease;
  };
  std::vector<Completion> completions;
  std::vector<bool> lease_busy(device_leases.size(), false);
  std::map<std::string, int> attempts;
  std::vector<std::thread> threads;
  size_t running = 0;

  auto deps_done = [&](const PlanNode& n) {
    for (const auto& d : n.deps) {
      const PlanNode* dep = plan.find(d);
      if (!dep || dep->status != NodeStatus::done) return false;
    }
    return true;
  };
  auto deps_failed = [&](const PlanNode& n) {
    for (const auto& d : n.deps) {
      const PlanNode* dep = plan.find(d);
      if (dep && dep->status == NodeStatus::failed) return true;
    }
    return false;
  };

  for (auto& n : plan.nodes) n.status = n.deps.empty() ? NodeStatus::ready : NodeStatus::blocked;

  auto worker = [&](PlanNode node, const ExpertPortrait expert, size_t lease, int attempt) {
    Completion c;
    c.node_id = node.node_id;
    c.lease = lease;
    c.done = false;
    try {
      std::vector<FetchedEntry> fetched;
      if (!node.deps.empty()) {
        out.events->add("fetch", node.node_id);
        fetched = stores.pool.fetch(node.deps, node.description);
      }
      out.events->add("start", node.node_id);
      NodeContext ctx{node, expert, *device_leases[lease], stores, gateway, std::move(fetched),
                      [&out, id = node.node_id] { out.events->add("device", id); }};
      NodeResult result = runner(ctx);
      TeamCommit tc;
      tc.task_node_id = node.node_id;
      tc.expert_id = expert.expert_id;
      tc.attempt = attempt;
      tc.status = result.done ? CommitStatus::done : CommitStatus::failed;
      tc.summary = result.summary;
      tc.exported_entries = result.exported_entries;
      stores.pool.commit(tc);
      out.events->add("commit", node.node_id);
      c.done = result.done;
      c.summary = result.summary;
      c.trajectory = std::move(result.trajectory);
    } catch (const Error& e) {
      c.done = false;
      c.summary = e.what();
      TeamCommit tc;
      tc.task_node_id = node.node_id;
      tc.expert_id = expert.expert_id;
      tc.attempt = attempt;
      tc.status = CommitStatus::failed;
      tc.summary = e.what();
      try {
        stores.pool.commit(tc);
        out.events->add("commit", node.node_id);
      } catch (const Error&) {
      }
    }
    {
      std::lock_guard<std::mutex> lock(mu);
      completions.push_back(std::move(c));
    }
    cv.notify_all();
  };

  std::unique_lock<std::mutex> lock(mu);
  while (true) {
    // apply completions (scheduler is the sole status writer)
    for (auto& c : completions) {
      PlanNode* n = plan.find(c.node_id);
      n->status = c.done ? NodeStatus::done : NodeStatus::failed;
      lease_busy[c.lease] = false;
      running -= 1;
      auto& rec = out.nodes[c.node_id];
      rec.attempts = attempts[c.node_id];
      rec.summary = c.summary;
      rec.trajectory = std::move(c.trajectory);
      rec.status = n->status;
      for (const auto& s : rec.trajectory.steps)
        if (device_affecting(op_from_name(s.op))) out.total_device_steps += 1;
      if (!c.done && attempts[c.node_id] <= stores.caps.retry_limit) {
        n->status = NodeStatus::ready;  // retry
      }
    }
    completions.clear();

    // promote blocked nodes
    for (auto& n : plan.nodes) {
      if (n.status == NodeStatus::blocked && deps_done(n)) n.status = NodeStatus::ready;
      if (n.status == NodeStatus::blocked && deps_failed(n)) {
        n.status = NodeStatus::failed;  // blocked-failed: dependencies cannot complete
        auto& rec = out.nodes[n.node_id];
        rec.status = NodeStatus::failed;
        rec.summary = "blocked: dependency failed";
      }
    }

    // dispatch ready nodes onto free leases, deterministic order
    bool dispatched = true;
    while (dispatched && running < parallelism) {
      dispatched = false;
      for (auto& n : plan.nodes) {
        if (n.status != NodeStatus::ready) continue;
        size_t lease = lease_busy.size();
        for (size_t i = 0; i < lease_busy.size(); ++i)
          if (!lease_busy[i]) {
            lease = i;
            break;
          }
        if (lease == lease_busy.size() || running >= parallelism) break;
        lease_busy[lease] = true;
        n.status = NodeStatus::running;
        attempts[n.node_id] += 1;
        running += 1;
        const ExpertPortrait* expert = team.member(n.assigned_expert);
        threads.emplace_back(worker, n, *expert, lease, attempts[n.node_id]);
        dispatched = true;
        break;
      }
    }

    bool any_pending = false;
    for (const auto& n : plan.nodes)
      if (n.status == NodeStatus::ready || n.status == NodeStatus::blocked ||
          n.status == NodeStatus::running)
        any_pending = true;
    if (!any_pending && completions.empty()) break;
    // ready/blocked nodes were all promoted and dispatched above, so pending
    // work with nothing running is impossible on a validated DAG
    if (running == 0 && completions.empty())
      raise(Err::DeadlockDetected, "no runnable node yet plan is unfinished");
    cv.wait(lock, [&] { return !completions.empty(); });
  }
  lock.unlock();

  for (auto& t : threads) t.join();

  out.success = true;
  for (const auto& n : plan.nodes)
    if (n.status != NodeStatus::done) out.success = false;
  out.plan = std::move(plan);
  return out;
}

}  // namespace droidcrew
