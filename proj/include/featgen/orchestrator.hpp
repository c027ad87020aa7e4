#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "featgen/agents.hpp"
#include "featgen/clustering.hpp"
#include "featgen/common.hpp"
#include "featgen/dataset.hpp"
#include "featgen/evaluator.hpp"
#include "featgen/explain.hpp"
#include "featgen/selection.hpp"
#include "featgen/transform.hpp"

namespace featgen {

using json = nlohmann::json;

struct RunConfig {
  std::size_t episodes = 5;
  std::size_t steps = 10;
  std::size_t clusters = kDefaultClusters;
  std::size_t feature_cap = kDefaultFeatureCap;
  std::size_t candidate_cap = kDefaultCandidateCap;
  SelectorKind selector = SelectorKind::KBestMI;
  AgentConfig agent;  // shared hyperparameters; each agent gets its own seed
  double eta = 1.0;
  double delta = 0.01;
  std::size_t top_k = kDefaultTopK;
  std::uint64_t seed = 0;
  std::string out_dir;  // empty: keep everything in memory
  EndpointConfig explain;
  std::string dataset_description = "tabular dataset";
  std::size_t rows_dropped = 0;  // reported by ingestion, echoed in the log header

  void validate() const {
    if (episodes < 1) throw Error(ErrorCode::ConfigError, "episodes must be >= 1");
    if (clusters < 1 || feature_cap < 1 || candidate_cap < 1 || top_k < 1)
      throw Error(ErrorCode::ConfigError, "cluster count, caps and top-k must be positive");
    if (!(delta >= 0.0)) throw Error(ErrorCode::ConfigError, "breakthrough threshold must be >= 0");
    if (!(eta >= 0.0 && eta <= 1.0)) throw Error(ErrorCode::ConfigError, "eta must lie in [0, 1]");
    agent.validate();
  }

  json to_json() const {
    return {{"episodes", episodes},
            {"steps", steps},
            {"clusters", clusters},
            {"cap", feature_cap},
            {"candidate_cap", candidate_cap},
            {"selector", to_string(selector)},
            {"agent", to_string(agent.variant)},
            {"gamma", agent.gamma},
            {"learning_rate", agent.learning_rate},
            {"batch_size", agent.batch_size},
            {"buffer_capacity", agent.buffer_capacity},
            {"target_sync", agent.target_sync},
            {"eta", eta},
            {"delta", delta},
            {"topk", top_k},
            {"seed", seed},
            {"explain", to_string(explain.mode)}};
  }
};

struct BreakthroughEvent {
  std::size_t episode = 0;  // 1-based
  std::size_t step = 0;     // 1-based within the episode
  std::vector<std::string> new_features;
  std::vector<double> importances;
  double p_old = 0.0;
  double p_new = 0.0;
  double reward = 0.0;
  std::optional<ExplanationVerdict> verdict;
  std::vector<std::pair<std::string, std::string>> removed;

  std::string label() const { return "E" + std::to_string(episode) + ",S" + std::to_string(step); }
};

struct RunState {
  DataTable current;
  DataTable best_table;
  double best_metric = -std::numeric_limits<double>::infinity();
  EvalReport baseline;
  EvalReport best_report;
  EvalReport last_report;
  double p_old = 0.0;
  std::size_t global_step = 0;
  std::size_t candidate_evaluations = 0;
  std::vector<json> log;  // header record followed by one record per step
};

// True when the jump clears the threshold and beats the best seen so far.
inline bool detect_breakthrough(double p_old, double p_new, double delta,
                                double best_so_far = -std::numeric_limits<double>::infinity()) {
  return p_new - p_old >= delta && p_new > best_so_far;
}

inline json report_to_json(const EvalReport& r) {
  json j = {{"per_fold", r.per_fold}, {"primary_metric", r.primary_metric}};
  if (r.mae) j["mae"] = *r.mae;
  if (r.rmse) j["rmse"] = *r.rmse;
  return j;
}

// Drives the episode/step loop: three agents choose a cluster, an operator
// and (for binary operators) a second cluster; the resulting candidates are
// appended, pruned, evaluated and rewarded.
class Orchestrator {
 public:
  Orchestrator(RunConfig config, DataTable base)
      : config_(std::move(config)),
        base_(std::move(base)),
        c1_(Role::C1, config_.clusters, agent_config(1)),
        op_(Role::Op, kOperatorCount, agent_config(2)),
        c2_(Role::C2, config_.clusters, agent_config(3)) {
    config_.validate();
    base_.validate();
    base_names_ = std::set<std::string>(base_.feature_names.begin(), base_.feature_names.end());
    if (config_.feature_cap < base_names_.size())
      throw Error(ErrorCode::ConfigError, "feature cap is smaller than the number of original features");

    state_.current = base_;
    state_.baseline = evaluate(base_, eval_seed());
    state_.last_report = state_.baseline;
    state_.best_report = state_.baseline;
    state_.best_metric = state_.baseline.primary_metric;
    state_.best_table = base_;
    state_.p_old = state_.baseline.primary_metric;
    state_.candidate_evaluations = base_.features();

    state_.log.push_back({{"record", "header"},
                          {"task", to_string(base_.task)},
                          {"rows", base_.rows()},
                          {"rows_dropped", config_.rows_dropped},
                          {"target", base_.target_name},
                          {"target_scaling", "none"},
                          {"base_features", base_.feature_names},
                          {"config", config_.to_json()},
                          {"baseline", report_to_json(state_.baseline)}});
  }

  const RunConfig& config() const { return config_; }
  const RunState& state() const { return state_; }
  RunState& state() { return state_; }
  const DataTable& base_table() const { return base_; }
  const std::set<std::string>& base_names() const { return base_names_; }
  const std::vector<BreakthroughEvent>& breakthroughs() const { return events_; }
  Agent& agent(Role r) { return r == Role::C1 ? c1_ : r == Role::Op ? op_ : c2_; }
  const Agent& agent(Role r) const { return r == Role::C1 ? c1_ : r == Role::Op ? op_ : c2_; }
  const std::map<std::string, FeatureVerdict>& verdicts() const { return verdicts_; }

  // The current table returns to the base features; the best snapshot,
  // agent parameters and replay buffers persist.
  void episode_reset() {
    state_.current = base_;
    state_.last_report = state_.baseline;
    state_.p_old = state_.baseline.primary_metric;
  }

  struct StepResult {
    double reward = 0.0;
    std::vector<std::string> new_features;
    std::size_t transitions = 0;
    bool breakthrough = false;
  };

  StepResult step_once(std::size_t episode, std::size_t step) {
    const std::size_t t = state_.global_step;
    const std::uint64_t seed = config_.seed;
    DataTable& table = state_.current;
    StepResult result;
    const std::vector<std::string> names_before = table.feature_names;

    const ClusterAssignment clusters = cluster_features(table, config_.clusters, mix_seed(seed, 1000 + t));
    std::vector<bool> cluster_mask(config_.clusters, false);
    for (std::size_t c = 0; c < clusters.k; ++c) cluster_mask[c] = true;
    const std::vector<bool> op_mask(kOperatorCount, true);

    const StateVector s1 = encode_state(table, Role::C1);
    const std::size_t a1 = c1_.act(s1, cluster_mask, t);
    const auto& cluster1 = clusters.members[a1];

    const StateVector s_op = encode_state(table, Role::Op, std::span<const std::size_t>(cluster1));
    const std::size_t a_op = op_.act(s_op, op_mask, t);
    const OpId op = op_from_index(a_op);

    std::optional<StateVector> s2;
    std::optional<std::size_t> a2;
    if (is_binary(op)) {
      const auto onehot = operator_onehot(op);
      s2 = encode_state(table, Role::C2, std::span<const std::size_t>(cluster1), std::span<const double>(onehot));
      a2 = c2_.act(*s2, cluster_mask, t);
    }

    std::optional<std::span<const std::size_t>> cluster2;
    if (a2) cluster2 = std::span<const std::size_t>(clusters.members[*a2]);
    auto candidates = generate_features(table, op, cluster1, cluster2, config_.candidate_cap);
    const std::size_t n_candidates = candidates.size();
    std::set<std::string> generated_now;
    for (auto& c : candidates) {
      generated_now.insert(c.name);
      table.add_feature(std::move(c.name), std::move(c.values), static_cast<int>(t + 1));
    }

    PruneResult pruned = prune(table, config_.selector, config_.feature_cap, base_names_, mix_seed(seed, 2000 + t));
    table = std::move(pruned.table);

    EvalReport report = state_.last_report;
    if (n_candidates > 0) {
      report = evaluate(table, eval_seed());
      state_.candidate_evaluations += table.features();
    }
    const double p_old = state_.p_old;
    const double p_new = report.primary_metric;
    const RewardSignal r = reward(p_new, p_old, config_.eta);
    result.reward = r.value;

    for (const auto& name : table.feature_names)
      if (generated_now.contains(name)) result.new_features.push_back(name);

    // Agents learn from the shared reward with their own state/action pairs.
    const bool terminal = step + 1 == config_.steps;
    const auto next_desc = describe_table(table);
    auto with_descriptor = [&](StateVector s) {
      std::copy(next_desc.begin(), next_desc.end(), s.values.begin());
      return s;
    };
    c1_.remember({s1, a1, r.value, with_descriptor(s1), terminal});
    op_.remember({s_op, a_op, r.value, with_descriptor(s_op), terminal});
    result.transitions = 2;
    if (s2) {
      c2_.remember({*s2, *a2, r.value, with_descriptor(*s2), terminal});
      result.transitions = 3;
    }
    c1_.learn();
    op_.learn();
    if (s2) c2_.learn();

    const ImportanceVector importance = rank_features(table, config_.selector, mix_seed(seed, 3000 + t), config_.feature_cap);
    const auto top = top_k_names(table, importance, config_.top_k);
    const Utilization util = utilization(top, base_names_, r.value);

    const double best_before = state_.best_metric;
    result.breakthrough = detect_breakthrough(p_old, p_new, config_.delta, best_before);
    if (p_new > state_.best_metric) {
      state_.best_metric = p_new;
      state_.best_table = table;
      state_.best_report = report;
    }

    std::string action = "c1=" + std::to_string(a1) + " op=" + std::string(info(op).name);
    if (a2) action += " c2=" + std::to_string(*a2);
    history_.push_back({"features=" + std::to_string(table.features()) + " metric=" + detail::fixed(p_new), action,
                        r.value});

    json record = {{"record", "step"},
                   {"episode", episode + 1},
                   {"step", step + 1},
                   {"global_step", t + 1},
                   {"chosen_cluster_1", a1},
                   {"operator", info(op).name},
                   {"n_candidates", n_candidates},
                   {"n_kept", result.new_features.size()},
                   {"n_features", table.features()},
                   {"per_fold_metrics", report.per_fold},
                   {"primary_metric", p_new},
                   {"p_old", p_old},
                   {"best_metric", state_.best_metric},
                   {"reward", r.value},
                   {"proportion", util.proportion},
                   {"weighted_proportion", util.weighted},
                   {"candidate_evaluations", state_.candidate_evaluations},
                   {"new_features", result.new_features}};
    if (a2) record["chosen_cluster_2"] = *a2;
    if (report.mae) record["mae"] = *report.mae;
    if (report.rmse) record["rmse"] = *report.rmse;
    json cluster_snapshot = json::array();
    for (const auto& members : clusters.members) {
      json names = json::array();
      for (std::size_t j : members) names.push_back(names_before[j]);
      cluster_snapshot.push_back(names);
    }
    record["clusters"] = cluster_snapshot;
    record["selection"] = {{"kind", to_string(config_.selector)},
                           {"pruned", pruned.active},
                           {"kept", table.feature_names},
                           {"dropped", pruned.dropped},
                           {"importance", importance},
                           {"top_k", top}};

    if (result.breakthrough) {
      BreakthroughEvent ev;
      ev.episode = episode + 1;
      ev.step = step + 1;
      ev.new_features = result.new_features;
      for (const auto& name : ev.new_features)
        ev.importances.push_back(importance[static_cast<std::size_t>(table.index_of(name))]);
      ev.p_old = p_old;
      ev.p_new = p_new;
      ev.reward = r.value;
      if (config_.explain.mode != ExplainMode::Off && !ev.new_features.empty()) explain_event(ev);
      json bt = {{"label", ev.label()},
                 {"new_features", ev.new_features},
                 {"importances", ev.importances},
                 {"p_old", ev.p_old},
                 {"p_new", ev.p_new},
                 {"reward", ev.reward}};
      if (ev.verdict) {
        json vs = json::array();
        for (const auto& v : ev.verdict->features)
          vs.push_back({{"name", v.name}, {"interpretable", v.interpretable}, {"confidence", v.confidence}});
        bt["verdicts"] = vs;
      }
      record["breakthrough"] = bt;
      events_.push_back(std::move(ev));
    }

    state_.log.push_back(std::move(record));
    state_.last_report = report;
    state_.p_old = p_new;
    ++state_.global_step;
    return result;
  }

  void run() {
    for (std::size_t e = 0; e < config_.episodes; ++e) {
      if (e > 0) episode_reset();
      for (std::size_t s = 0; s < config_.steps; ++s) step_once(e, s);
    }
    if (!config_.out_dir.empty()) write_artifacts();
  }

  // Best table with every generated feature the explainer rejected removed.
  DataTable interpretable_best_table() const {
    ExplanationVerdict all;
    for (const auto& [name, v] : verdicts_) all.features.push_back(v);
    return filter_features(state_.best_table, all, base_names_).table;
  }

  std::string log_text() const {
    std::string out;
    for (const auto& rec : state_.log) out += rec.dump() + "\n";
    return out;
  }

  void write_artifacts() const {
    namespace fs = std::filesystem;
    const fs::path dir(config_.out_dir);
    fs::create_directories(dir);
    {
      std::ofstream log(dir / "run_log.jsonl", std::ios::binary);
      log << log_text();
    }
    write_csv(state_.best_table, (dir / "best_table.csv").string());
    if (config_.explain.mode != ExplainMode::Off)
      write_csv(interpretable_best_table(), (dir / "best_table_interpretable.csv").string());
    json events = json::array();
    for (const auto& ev : events_) {
      json j = {{"episode", ev.episode},
                {"step", ev.step},
                {"label", ev.label()},
                {"new_features", ev.new_features},
                {"importances", ev.importances},
                {"p_old", ev.p_old},
                {"p_new", ev.p_new},
                {"reward", ev.reward}};
      if (!ev.removed.empty()) {
        json rem = json::array();
        for (const auto& [name, why] : ev.removed) rem.push_back({{"name", name}, {"rationale", why}});
        j["removed"] = rem;
      }
      events.push_back(j);
    }
    std::ofstream(dir / "breakthroughs.json", std::ios::binary) << events.dump(2) << '\n';
    for (const auto& rep : reports_) {
      std::ofstream(dir / ("breakthrough_" + rep.at("file_label").get<std::string>() + ".json"), std::ios::binary)
          << rep.dump(2) << '\n';
    }
    json cfg = config_.to_json();
    cfg["baseline_metric"] = state_.baseline.primary_metric;
    cfg["best_metric"] = state_.best_metric;
    std::ofstream(dir / "config.json", std::ios::binary) << cfg.dump(2) << '\n';
    save_checkpoint(c1_.network(), config_.agent.variant, (dir / "agent_c1").string());
    save_checkpoint(op_.network(), config_.agent.variant, (dir / "agent_op").string());
    save_checkpoint(c2_.network(), config_.agent.variant, (dir / "agent_c2").string());
  }

 private:
  AgentConfig agent_config(std::uint64_t role_tag) const {
    AgentConfig a = config_.agent;
    a.seed = mix_seed(config_.seed, 500 + role_tag);
    const double total = static_cast<double>(config_.episodes * config_.steps);
    a.eps_decay_steps = static_cast<std::size_t>(std::ceil(0.6 * total));
    return a;
  }

  std::uint64_t eval_seed() const { return mix_seed(config_.seed, 7); }

  void explain_event(BreakthroughEvent& ev) {
    ExplanationRequest req;
    req.dataset_description = config_.dataset_description;
    req.task_description = std::string(to_string(base_.task)) + " on target '" + base_.target_name + "'";
    const std::size_t start = history_.size() > kDefaultHistoryWindow ? history_.size() - kDefaultHistoryWindow : 0;
    req.history.assign(history_.begin() + static_cast<std::ptrdiff_t>(start), history_.end());
    for (std::size_t i = 0; i < ev.new_features.size(); ++i) req.features.push_back({ev.new_features[i], ev.importances[i]});
    req.reward = ev.reward;
    req.p_old = ev.p_old;
    req.p_new = ev.p_new;
    const std::string prompt = build_prompt(req);
    const std::string raw = query_endpoint(prompt, config_.explain);
    ExplanationVerdict verdict = parse_verdict(raw, ev.new_features);
    for (const auto& v : verdict.features) verdicts_[v.name] = v;
    ev.removed = filter_features(state_.best_table, verdict, base_names_).removed;
    ev.verdict = verdict;

    json verdicts = json::array();
    for (const auto& v : verdict.features)
      verdicts.push_back({{"name", v.name},
                          {"interpretable", v.interpretable},
                          {"rationale", v.rationale},
                          {"confidence", v.confidence}});
    json removed = json::array();
    for (const auto& [name, why] : ev.removed) removed.push_back({{"name", name}, {"rationale", why}});
    reports_.push_back({{"file_label", "E" + std::to_string(ev.episode) + "_S" + std::to_string(ev.step)},
                        {"label", ev.label()},
                        {"prompt", prompt},
                        {"raw_response", raw},
                        {"verdicts", verdicts},
                        {"removals", removed}});
  }

  RunConfig config_;
  DataTable base_;
  std::set<std::string> base_names_;
  Agent c1_, op_, c2_;
  RunState state_;
  std::vector<BreakthroughEvent> events_;
  std::vector<HistoryEntry> history_;
  std::map<std::string, FeatureVerdict> verdicts_;
  std::vector<json> reports_;
};

struct RunResult {
  RunState state;
  std::vector<BreakthroughEvent> breakthroughs;
};

inline RunResult run(const RunConfig& config, const DataTable& table) {
  Orchestrator orch(config, table);
  orch.run();
  return {orch.state(), orch.breakthroughs()};
}

}  // namespace featgen
