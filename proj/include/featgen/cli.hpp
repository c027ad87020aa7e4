#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "featgen/featgen.hpp"

namespace featgen::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kEndpointError = 4 };

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::SyntaxError:
    case ErrorCode::UnknownBase:
    case ErrorCode::MissingContext:
    case ErrorCode::NoValidAction:
    case ErrorCode::InsufficientSamples:
      return kConfigError;
    case ErrorCode::EndpointUnreachable:
    case ErrorCode::AuthFailure:
      return kEndpointError;
    default:
      return kDataError;
  }
}

// Signed change relative to the old value, one decimal place ("+18.5%").
inline std::string format_change(double old_value, double new_value) {
  if (old_value == 0.0) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.1f%%", (new_value - old_value) / std::abs(old_value) * 100.0);
  return buf;
}

inline const char* metric_name(TaskKind t) {
  switch (t) {
    case TaskKind::Regression: return "1-RAE";
    case TaskKind::Classification: return "weighted-F1";
    case TaskKind::AnomalyDetection: return "ROC-AUC";
  }
  return "metric";
}

inline std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Every flag except --config. Unset optionals fall back to the config file,
// then to the environment (explain only), then to defaults.
struct Flags {
  std::optional<std::string> data, target, task, agent, selector, out, explain;
  std::optional<std::size_t> episodes, steps, clusters, cap, topk;
  std::optional<double> eta, delta;
  std::optional<std::uint64_t> seed;
  std::string config_path;
  bool parallel = false;
};

struct Settings {
  std::string data, target, task = "regression", agent = "dqn", selector = "kbest", out = "featgen_out";
  std::string explain = "off";
  std::size_t episodes = 5, steps = 10, clusters = kDefaultClusters, cap = kDefaultFeatureCap, topk = kDefaultTopK;
  double eta = 1.0, delta = 0.01;
  std::uint64_t seed = 0;
  bool parallel = false;
};

template <typename T>
void resolve(T& dst, const std::optional<T>& flag, const json& file, const char* key) {
  if (flag) {
    dst = *flag;
  } else if (file.contains(key)) {
    try {
      dst = file.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, std::string("config key '") + key + "': " + e.what());
    }
  }
}

inline Settings resolve_settings(const Flags& f) {
  json file = json::object();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read config '" + f.config_path + "'");
    file = json::parse(in, nullptr, false);
    if (!file.is_object()) throw Error(ErrorCode::ConfigError, "config file must hold a flat JSON object");
  }
  Settings s;
  if (const char* env = std::getenv("EXPLAIN_MODE")) s.explain = env;
  resolve(s.data, f.data, file, "data");
  resolve(s.target, f.target, file, "target");
  resolve(s.task, f.task, file, "task");
  resolve(s.agent, f.agent, file, "agent");
  resolve(s.selector, f.selector, file, "selector");
  resolve(s.out, f.out, file, "out");
  resolve(s.explain, f.explain, file, "explain");
  resolve(s.episodes, f.episodes, file, "episodes");
  resolve(s.steps, f.steps, file, "steps");
  resolve(s.clusters, f.clusters, file, "clusters");
  resolve(s.cap, f.cap, file, "cap");
  resolve(s.topk, f.topk, file, "topk");
  resolve(s.eta, f.eta, file, "eta");
  resolve(s.delta, f.delta, file, "delta");
  resolve(s.seed, f.seed, file, "seed");
  s.parallel = f.parallel;
  return s;
}

inline void add_pipeline_flags(CLI::App& app, Flags& f) {
  app.add_option("--data", f.data, "input CSV");
  app.add_option("--target", f.target, "target column name");
  app.add_option("--task", f.task, "regression | classification | anomaly");
  app.add_option("--episodes", f.episodes, "episodes (default 5)");
  app.add_option("--steps", f.steps, "steps per episode (default 10)");
  app.add_option("--agent", f.agent, "dqn | ddqn | dueling | duelingddqn");
  app.add_option("--selector", f.selector, "kbest | extratrees | lasso | rf | rfe | none");
  app.add_option("--clusters", f.clusters, "feature clusters per step (default 5)");
  app.add_option("--cap", f.cap, "feature-count cap enforced by the selector (default 30)");
  app.add_option("--eta", f.eta, "reward scale in [0,1] (default 1)");
  app.add_option("--delta", f.delta, "breakthrough threshold (default 0.01)");
  app.add_option("--topk", f.topk, "top-k used for utilization (default 10)");
  app.add_option("--seed", f.seed, "random seed (default 0)");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--explain", f.explain, "off | stub | live");
  app.add_option("--config", f.config_path, "flat JSON file with the same keys");
}

struct PreparedData {
  DataTable table;
  std::size_t rows_dropped = 0;
  std::string description;
};

inline PreparedData prepare_data(const Settings& s) {
  const TaskKind task = parse_task(s.task);
  auto loaded = load_csv(s.data, s.target, task);
  PreparedData p;
  p.rows_dropped = loaded.rows_dropped;
  p.table = normalize(loaded.table, -1.0, 1.0).first;
  p.description = "CSV '" + fs::path(s.data).filename().string() + "' with " + std::to_string(p.table.rows()) +
                  " rows and " + std::to_string(p.table.features()) + " features";
  return p;
}

inline RunConfig make_run_config(const Settings& s, const PreparedData& data) {
  RunConfig c;
  c.episodes = s.episodes;
  c.steps = s.steps;
  c.clusters = s.clusters;
  c.feature_cap = s.cap;
  c.selector = parse_selector(s.selector);
  c.agent.variant = parse_variant(s.agent);
  c.eta = s.eta;
  c.delta = s.delta;
  c.top_k = s.topk;
  c.seed = s.seed;
  c.out_dir = s.out;
  c.explain = EndpointConfig::from_environment();
  c.explain.mode = parse_explain_mode(s.explain);
  c.dataset_description = data.description;
  c.rows_dropped = data.rows_dropped;
  return c;
}

inline void require_data_flags(const Settings& s) {
  if (s.data.empty()) throw Error(ErrorCode::ConfigError, "--data is required");
  if (s.target.empty()) throw Error(ErrorCode::ConfigError, "--target is required");
}

// ---------------------------------------------------------------------------

inline int cmd_run(const Settings& s, std::ostream& out) {
  require_data_flags(s);
  const auto data = prepare_data(s);
  const RunConfig cfg = make_run_config(s, data);
  Orchestrator orch(cfg, data.table);
  orch.run();
  const auto& st = orch.state();
  const char* name = metric_name(data.table.task);
  out << "rows dropped during cleaning: " << data.rows_dropped << '\n';
  out << "baseline " << name << ": " << fmt(st.baseline.primary_metric) << '\n';
  out << "best " << name << ": " << fmt(st.best_metric) << '\n';
  out << "change: " << format_change(st.baseline.primary_metric, st.best_metric) << '\n';
  if (st.baseline.mae && st.best_report.mae) {
    out << "MAE: " << fmt(*st.baseline.mae) << " -> " << fmt(*st.best_report.mae) << " ("
        << format_change(*st.baseline.mae, *st.best_report.mae) << ")\n";
    out << "RMSE: " << fmt(*st.baseline.rmse) << " -> " << fmt(*st.best_report.rmse) << " ("
        << format_change(*st.baseline.rmse, *st.best_report.rmse) << ")\n";
  }
  out << "breakthroughs: " << orch.breakthroughs().size() << '\n';
  for (const auto& ev : orch.breakthroughs()) {
    out << "  [" << ev.label() << "] " << fmt(ev.p_old) << " -> " << fmt(ev.p_new);
    for (const auto& f : ev.new_features) out << "  " << f;
    out << '\n';
  }
  out << "artifacts: " << cfg.out_dir << '\n';
  return kOk;
}

inline int cmd_baseline(const Settings& s, std::ostream& out) {
  require_data_flags(s);
  const auto data = prepare_data(s);
  const auto report = evaluate(data.table, mix_seed(s.seed, 7));
  out << "rows dropped during cleaning: " << data.rows_dropped << '\n';
  out << metric_name(data.table.task) << ": " << fmt(report.primary_metric) << '\n';
  out << "per fold:";
  for (double v : report.per_fold) out << ' ' << fmt(v);
  out << '\n';
  if (report.mae) out << "MAE: " << fmt(*report.mae) << "\nRMSE: " << fmt(*report.rmse) << '\n';
  return kOk;
}

struct ArmOutcome {
  std::string name;
  double baseline = 0.0;
  double best = 0.0;
  double seconds = 0.0;
  double mean_proportion = 0.0;
  double mean_weighted = 0.0;
  std::size_t candidate_evaluations = 0;
  std::vector<std::pair<std::size_t, double>> series;  // global step, primary metric
};

inline ArmOutcome run_arm(const std::string& name, RunConfig cfg, const DataTable& table) {
  const auto start = std::chrono::steady_clock::now();
  Orchestrator orch(std::move(cfg), table);
  orch.run();
  ArmOutcome o;
  o.name = name;
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& st = orch.state();
  o.baseline = st.baseline.primary_metric;
  o.best = st.best_metric;
  o.candidate_evaluations = st.candidate_evaluations;
  std::size_t n = 0;
  for (const auto& rec : st.log) {
    if (rec.at("record") != "step") continue;
    o.mean_proportion += rec.at("proportion").get<double>();
    o.mean_weighted += rec.at("weighted_proportion").get<double>();
    o.series.emplace_back(rec.at("global_step").get<std::size_t>(), rec.at("primary_metric").get<double>());
    ++n;
  }
  if (n) {
    o.mean_proportion /= static_cast<double>(n);
    o.mean_weighted /= static_cast<double>(n);
  }
  return o;
}

template <typename Names, typename MakeConfig>
std::vector<ArmOutcome> run_arms(const Names& names, MakeConfig make, const DataTable& table, bool parallel) {
  std::vector<ArmOutcome> out;
  if (parallel) {
    std::vector<std::future<ArmOutcome>> futures;
    for (const auto& n : names) futures.push_back(std::async(std::launch::async, run_arm, std::string(n), make(n), std::cref(table)));
    for (auto& f : futures) out.push_back(f.get());
  } else {
    for (const auto& n : names) out.push_back(run_arm(std::string(n), make(n), table));
  }
  return out;
}

inline int cmd_compare_agents(const Settings& s, std::ostream& out) {
  require_data_flags(s);
  const auto data = prepare_data(s);
  const std::vector<std::string> variants{"dqn", "ddqn", "dueling", "duelingddqn"};
  const auto outcomes = run_arms(
      variants,
      [&](const std::string& v) {
        Settings arm = s;
        arm.agent = v;
        arm.out = (fs::path(s.out) / v).string();
        return make_run_config(arm, data);
      },
      data.table, s.parallel);
  fs::create_directories(s.out);
  std::ofstream csv(fs::path(s.out) / "compare_agents.csv", std::ios::binary);
  csv << "variant,baseline,best,delta\n";
  std::ofstream lng(fs::path(s.out) / "compare_agents_long.csv", std::ios::binary);
  lng << "variant,global_step,primary_metric\n";
  out << "variant        baseline   best       delta\n";
  for (const auto& o : outcomes) {
    csv << o.name << ',' << detail::format_real(o.baseline) << ',' << detail::format_real(o.best) << ','
        << detail::format_real(o.best - o.baseline) << '\n';
    for (const auto& [step, m] : o.series) lng << o.name << ',' << step << ',' << detail::format_real(m) << '\n';
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %-10.6f %-10.6f %+.6f\n", o.name.c_str(), o.baseline, o.best,
                  o.best - o.baseline);
    out << line;
  }
  return kOk;
}

inline int cmd_compare_selectors(const Settings& s, std::ostream& out) {
  require_data_flags(s);
  const auto data = prepare_data(s);
  std::vector<std::string> arms;
  for (auto k : kAllSelectors) arms.emplace_back(to_string(k));
  const auto outcomes = run_arms(
      arms,
      [&](const std::string& a) {
        Settings arm = s;
        arm.selector = a;
        arm.out = (fs::path(s.out) / a).string();
        return make_run_config(arm, data);
      },
      data.table, s.parallel);
  fs::create_directories(s.out);
  std::ofstream csv(fs::path(s.out) / "compare_selectors.csv", std::ios::binary);
  csv << "arm,best,seconds,mean_proportion,mean_weighted_proportion,candidate_evaluations\n";
  out << "arm         best       seconds   proportion  weighted    evaluations\n";
  for (const auto& o : outcomes) {
    csv << o.name << ',' << detail::format_real(o.best) << ',' << fmt(o.seconds, 3) << ','
        << detail::format_real(o.mean_proportion) << ',' << detail::format_real(o.mean_weighted) << ','
        << o.candidate_evaluations << '\n';
    char line[200];
    std::snprintf(line, sizeof line, "%-11s %-10.6f %-9.3f %-11.6f %-11.6f %zu\n", o.name.c_str(), o.best, o.seconds,
                  o.mean_proportion, o.mean_weighted, o.candidate_evaluations);
    out << line;
  }
  return kOk;
}

struct SynthOptions {
  std::string kind = "product";
  std::size_t n = 500;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

// Eight standard-normal features x1..x8 and a target built from them.
inline DataTable synthesize(const SynthOptions& o) {
  if (o.kind != "product" && o.kind != "ratio" && o.kind != "quadratic")
    throw Error(ErrorCode::ConfigError, "--kind must be product, ratio or quadratic");
  if (o.n < 2) throw Error(ErrorCode::ConfigError, "--n must be at least 2");
  if (!(o.noise >= 0.0)) throw Error(ErrorCode::ConfigError, "--noise must be non-negative");
  Rng rng(o.seed);
  DataTable t;
  for (int j = 1; j <= 8; ++j) t.add_feature("x" + std::to_string(j), Column(o.n), 0);
  t.target.resize(o.n);
  for (std::size_t i = 0; i < o.n; ++i) {
    for (auto& c : t.columns) c[i] = rng.normal();
    const double x1 = t.columns[0][i], x2 = t.columns[1][i], x3 = t.columns[2][i];
    double y = 0.0;
    if (o.kind == "product")
      y = x1 * x2;
    else if (o.kind == "ratio")
      y = x1 / (std::abs(x2) + 1.0);
    else
      y = x1 * x1 - x3;
    t.target[i] = y + o.noise * rng.normal();
  }
  return t;
}

inline int cmd_synth(const SynthOptions& o, const std::string& path, std::ostream& out) {
  const DataTable t = synthesize(o);
  write_csv(t, path);
  out << "wrote " << t.rows() << " rows x " << t.features() + 1 << " columns to " << path << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Report

struct ReportFiles {
  std::size_t steps = 0;
  std::size_t breakthroughs = 0;
};

inline ReportFiles build_report(const std::string& log_path, const std::string& out_dir, std::ostream& out) {
  std::ifstream in(log_path);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open log '" + log_path + "'");
  std::optional<json> header;
  std::vector<json> steps;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("record"))
      throw Error(ErrorCode::MalformedLog, "log line " + std::to_string(lineno) + " is not a run record");
    if (rec["record"] == "header")
      header = rec;
    else
      steps.push_back(rec);
  }
  if (!header) throw Error(ErrorCode::MalformedLog, "log has no header record");

  fs::create_directories(out_dir);
  ReportFiles files;
  try {
    const auto& base = header->at("baseline");
    std::ofstream series(fs::path(out_dir) / "series.csv", std::ios::binary);
    series << "global_step,episode,step,primary_metric,best_metric,reward\n";
    std::ofstream bt(fs::path(out_dir) / "breakthroughs.csv", std::ios::binary);
    bt << "expression,episode_step,importance,p_old,p_new\n";
    const json* best_rec = nullptr;
    double best = base.at("primary_metric").get<double>();
    for (const auto& rec : steps) {
      series << rec.at("global_step").get<std::size_t>() << ',' << rec.at("episode").get<std::size_t>() << ','
             << rec.at("step").get<std::size_t>() << ',' << detail::format_real(rec.at("primary_metric").get<double>())
             << ',' << detail::format_real(rec.at("best_metric").get<double>()) << ','
             << detail::format_real(rec.at("reward").get<double>()) << '\n';
      ++files.steps;
      if (rec.at("primary_metric").get<double>() > best) {
        best = rec.at("primary_metric").get<double>();
        best_rec = &rec;
      }
      if (rec.contains("breakthrough")) {
        const auto& b = rec["breakthrough"];
        const auto& names = b.at("new_features");
        const auto& imps = b.at("importances");
        for (std::size_t i = 0; i < names.size(); ++i)
          bt << names[i].get<std::string>() << ",\"" << b.at("label").get<std::string>() << "\","
             << detail::format_real(imps.at(i).get<double>()) << ',' << detail::format_real(b.at("p_old").get<double>())
             << ',' << detail::format_real(b.at("p_new").get<double>()) << '\n';
        ++files.breakthroughs;
      }
    }

    const std::string task = header->at("task").get<std::string>();
    std::ofstream summary(fs::path(out_dir) / "summary.csv", std::ios::binary);
    summary << "metric,original,generated,change\n";
    auto row = [&](const std::string& metric, double a, double b) {
      summary << metric << ',' << detail::format_real(a) << ',' << detail::format_real(b) << ',' << format_change(a, b)
              << '\n';
      char l[160];
      std::snprintf(l, sizeof l, "%-12s %-14.6f %-14.6f %s\n", metric.c_str(), a, b, format_change(a, b).c_str());
      out << l;
    };
    out << "metric       original       generated      change\n";
    row(metric_name(parse_task(task)), base.at("primary_metric").get<double>(), best);
    if (base.contains("mae")) {
      const json& src = best_rec ? *best_rec : base;
      row("MAE", base.at("mae").get<double>(), src.at("mae").get<double>());
      row("RMSE", base.at("rmse").get<double>(), src.at("rmse").get<double>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedLog, std::string("log record is missing a field: ") + e.what());
  }
  out << "steps: " << files.steps << ", breakthroughs: " << files.breakthroughs << '\n';
  return files;
}

// ---------------------------------------------------------------------------

inline int main(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"featgen: reinforcement-learning feature generation for tabular data"};
  app.require_subcommand(1, 1);

  Flags run_flags, baseline_flags, agents_flags, selectors_flags;
  auto* run = app.add_subcommand("run", "generate features and report the best table");
  add_pipeline_flags(*run, run_flags);
  auto* baseline = app.add_subcommand("baseline", "evaluate the normalized input table only");
  add_pipeline_flags(*baseline, baseline_flags);
  auto* agents = app.add_subcommand("compare-agents", "run the four Q-learning variants on one configuration");
  add_pipeline_flags(*agents, agents_flags);
  agents->add_flag("--parallel", agents_flags.parallel, "run arms concurrently");
  auto* selectors = app.add_subcommand("compare-selectors", "run all six selector arms on one configuration");
  add_pipeline_flags(*selectors, selectors_flags);
  selectors->add_flag("--parallel", selectors_flags.parallel, "run arms concurrently");

  SynthOptions synth_opts;
  std::string synth_out = "synth.csv";
  auto* synth = app.add_subcommand("synth", "write a synthetic benchmark CSV");
  synth->add_option("--kind", synth_opts.kind, "product | ratio | quadratic")->required();
  synth->add_option("--n", synth_opts.n, "rows")->required();
  synth->add_option("--noise", synth_opts.noise, "noise standard deviation")->required();
  synth->add_option("--seed", synth_opts.seed, "random seed")->required();
  synth->add_option("--out", synth_out, "output CSV path");

  std::string log_path, report_out;
  auto* report = app.add_subcommand("report", "turn a run log into plot-ready CSVs and a summary");
  report->add_option("--log", log_path, "run_log.jsonl")->required();
  report->add_option("--out", report_out, "output directory (default: next to the log)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kConfigError;
  }

  auto usage_for = [&](CLI::App* sub) { return sub->help(); };
  CLI::App* active = app.get_subcommands().front();
  try {
    if (active == run) return cmd_run(resolve_settings(run_flags), out);
    if (active == baseline) return cmd_baseline(resolve_settings(baseline_flags), out);
    if (active == agents) return cmd_compare_agents(resolve_settings(agents_flags), out);
    if (active == selectors) return cmd_compare_selectors(resolve_settings(selectors_flags), out);
    if (active == synth) return cmd_synth(synth_opts, synth_out, out);
    if (active == report) {
      const std::string dir = report_out.empty() ? fs::path(log_path).parent_path().string() : report_out;
      build_report(log_path, dir.empty() ? "." : dir, out);
      return kOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    const int code = exit_code_for(e.code());
    if (code == kConfigError) err << '\n' << usage_for(active);
    return code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kConfigError;
}

}  // namespace featgen::cli
