#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "featgen/common.hpp"
#include "featgen/dataset.hpp"
#include "featgen/transform.hpp"

namespace featgen {

inline constexpr std::size_t kDefaultHistoryWindow = 5;
inline constexpr std::string_view kVerdictBegin = "BEGIN_VERDICTS";
inline constexpr std::string_view kVerdictEnd = "END_VERDICTS";
inline constexpr std::string_view kFeaturesHeader = "Generated features:";

struct HistoryEntry {
  std::string state_summary;
  std::string action;
  double reward = 0.0;
};

struct FeatureNote {
  std::string expression;
  double importance = 0.0;
};

struct ExplanationRequest {
  std::string dataset_description;
  std::string task_description;
  std::vector<HistoryEntry> history;  // oldest first
  std::vector<FeatureNote> features;
  double reward = 0.0;
  double p_old = 0.0;
  double p_new = 0.0;
  std::size_t window = kDefaultHistoryWindow;
};

struct FeatureVerdict {
  std::string name;
  bool interpretable = false;
  std::string rationale;
  double confidence = 0.0;
};

struct ExplanationVerdict {
  std::vector<FeatureVerdict> features;

  const FeatureVerdict* find(std::string_view name) const {
    for (const auto& v : features)
      if (v.name == name) return &v;
    return nullptr;
  }
};

namespace detail {

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.*f", digits, v);
  return buf;
}

inline std::string trim_copy(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return lines;
}

}  // namespace detail

inline std::string build_prompt(const ExplanationRequest& req) {
  std::ostringstream p;
  p << "You are reviewing features that an automated search generated for a scientific tabular dataset.\n";
  p << "Dataset: " << req.dataset_description << '\n';
  p << "Task: " << req.task_description << '\n';
  p << "Performance moved from " << detail::fixed(req.p_old) << " to " << detail::fixed(req.p_new)
    << " (reward " << detail::fixed(req.reward) << ").\n";
  if (!req.history.empty()) {
    p << "Recent history (oldest first):\n";
    const std::size_t start = req.history.size() > req.window ? req.history.size() - req.window : 0;
    for (std::size_t i = start; i < req.history.size(); ++i) {
      const auto& h = req.history[i];
      p << "  * state: " << h.state_summary << " | action: " << h.action << " | reward: " << detail::fixed(h.reward)
        << '\n';
    }
  }
  p << kFeaturesHeader << '\n';
  for (const auto& f : req.features) p << "- " << f.expression << " | importance=" << detail::fixed(f.importance) << '\n';
  p << '\n';
  p << "For each feature judge whether it has a plausible scientific interpretation.\n";
  p << "Reject features that are overly complex or that you cannot explain.\n";
  p << "Reply with one line per feature between the markers, formatted as\n";
  p << "name | yes/no | rationale | confidence in [0,1]\n";
  p << kVerdictBegin << '\n';
  for (const auto& f : req.features) p << f.expression << " | <yes/no> | <rationale> | <confidence>\n";
  p << kVerdictEnd << '\n';
  return p.str();
}

// Offline verdict: interpretable iff depth <= 3 and at most two distinct base
// features; confidence 1 - depth / 10.
inline FeatureVerdict stub_verdict(const std::string& expression) {
  FeatureVerdict v;
  v.name = expression;
  try {
    const auto e = parse_name_lenient(expression);
    const int depth = e->depth();
    const std::size_t bases = e->bases().size();
    v.interpretable = depth <= 3 && bases <= 2;
    v.confidence = std::clamp(1.0 - depth / 10.0, 0.0, 1.0);
    v.rationale = "depth " + std::to_string(depth) + " over " + std::to_string(bases) + " base feature(s)";
  } catch (const Error&) {
    v.rationale = "expression does not parse";
  }
  return v;
}

// Reads the feature block out of a prompt produced by build_prompt and answers
// it with stub_verdict.
inline std::string stub_response(const std::string& prompt) {
  std::ostringstream out;
  out << kVerdictBegin << '\n';
  bool in_features = false;
  for (const auto& line : detail::split_lines(prompt)) {
    if (line == kFeaturesHeader) {
      in_features = true;
      continue;
    }
    if (!in_features) continue;
    if (line.rfind("- ", 0) != 0) break;
    const std::string expr = detail::trim_copy(line.substr(2, line.find(" | ") - 2));
    const auto v = stub_verdict(expr);
    char conf[32];
    std::snprintf(conf, sizeof conf, "%.2f", v.confidence);
    out << v.name << " | " << (v.interpretable ? "yes" : "no") << " | " << v.rationale << " | " << conf << '\n';
  }
  out << kVerdictEnd << '\n';
  return out.str();
}

// Lenient: lines are "name | yes/no | rationale | confidence"; unknown names
// are ignored and expected names without an answer become non-interpretable.
inline ExplanationVerdict parse_verdict(const std::string& raw, const std::vector<std::string>& expected) {
  std::vector<std::optional<FeatureVerdict>> found(expected.size());
  for (const auto& line : detail::split_lines(raw)) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t bar = line.find('|', start);
      fields.push_back(detail::trim_copy(std::string_view(line).substr(start, bar - start)));
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
    if (fields.size() < 4) continue;
    const auto it = std::find(expected.begin(), expected.end(), fields.front());
    if (it == expected.end()) continue;
    auto& slot = found[static_cast<std::size_t>(std::distance(expected.begin(), it))];
    if (slot) continue;
    std::string answer = fields[1];
    std::transform(answer.begin(), answer.end(), answer.begin(), [](unsigned char c) { return std::tolower(c); });
    FeatureVerdict v;
    v.name = fields.front();
    v.interpretable = answer == "yes" || answer == "y" || answer == "true";
    std::string rationale;
    for (std::size_t i = 2; i + 1 < fields.size(); ++i) rationale += (i > 2 ? " | " : "") + fields[i];
    v.rationale = rationale;
    char* end = nullptr;
    const double c = std::strtod(fields.back().c_str(), &end);
    v.confidence = end != fields.back().c_str() && std::isfinite(c) ? std::clamp(c, 0.0, 1.0) : 0.0;
    slot = v;
  }
  ExplanationVerdict out;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (found[i]) {
      out.features.push_back(*found[i]);
    } else {
      out.features.push_back({expected[i], false, "no verdict", 0.0});
    }
  }
  return out;
}

struct FilterResult {
  DataTable table;
  std::vector<std::pair<std::string, std::string>> removed;  // name, rationale
};

// Drops generated features the verdict marks non-interpretable. Protected
// (base) features and features without a verdict stay.
inline FilterResult filter_features(const DataTable& table, const ExplanationVerdict& verdict,
                                    const std::set<std::string>& protected_names) {
  FilterResult out;
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < table.features(); ++j) {
    const auto& name = table.feature_names[j];
    const auto* v = verdict.find(name);
    if (v && !v->interpretable && !protected_names.contains(name)) {
      out.removed.emplace_back(name, v->rationale);
      continue;
    }
    keep.push_back(j);
  }
  out.table = table.select(keep);
  return out;
}

// ---------------------------------------------------------------------------
// Transport

enum class ExplainMode { Off, Stub, Live };

inline const char* to_string(ExplainMode m) {
  switch (m) {
    case ExplainMode::Off: return "off";
    case ExplainMode::Stub: return "stub";
    case ExplainMode::Live: return "live";
  }
  return "?";
}

inline ExplainMode parse_explain_mode(const std::string& s) {
  if (s == "off") return ExplainMode::Off;
  if (s == "stub") return ExplainMode::Stub;
  if (s == "live") return ExplainMode::Live;
  throw Error(ErrorCode::ConfigError, "unknown explain mode '" + s + "'");
}

struct EndpointConfig {
  ExplainMode mode = ExplainMode::Off;
  std::string url;
  std::string model;
  std::string token_env = "EXPLAIN_TOKEN";
  double timeout_seconds = 30.0;
  int max_attempts = 3;
  int backoff_ms = 500;  // doubled after each failed attempt

  // EXPLAIN_URL, EXPLAIN_MODEL and EXPLAIN_MODE fill unset fields.
  static EndpointConfig from_environment() {
    EndpointConfig c;
    if (const char* v = std::getenv("EXPLAIN_URL")) c.url = v;
    if (const char* v = std::getenv("EXPLAIN_MODEL")) c.model = v;
    if (const char* v = std::getenv("EXPLAIN_MODE")) c.mode = parse_explain_mode(v);
    return c;
  }
};

namespace detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl split_url(const std::string& url) {
  const std::size_t scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::ConfigError, "endpoint URL needs a scheme: '" + url + "'");
  if (url.compare(0, scheme, "http") != 0)
    throw Error(ErrorCode::ConfigError, "only http:// endpoints are supported: '" + url + "'");
  const std::size_t slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace detail

// Sends {"model", "prompt"} as JSON and returns the "text" field of a JSON
// reply, or the raw body when the reply is not such an object.
inline std::string query_endpoint(const std::string& prompt, const EndpointConfig& cfg) {
  if (cfg.mode == ExplainMode::Stub) return stub_response(prompt);
  if (cfg.mode == ExplainMode::Off) throw Error(ErrorCode::ConfigError, "explain endpoint is disabled");
  if (cfg.url.empty()) throw Error(ErrorCode::ConfigError, "EXPLAIN_URL is not set");

  const auto url = detail::split_url(cfg.url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(cfg.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  httplib::Headers headers;
  if (const char* token = std::getenv(cfg.token_env.c_str()); token && *token)
    headers.emplace("Authorization", std::string("Bearer ") + token);
  const std::string body = nlohmann::json{{"model", cfg.model}, {"prompt", prompt}}.dump();

  std::string last_error;
  int delay = cfg.backoff_ms;
  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    auto res = client.Post(url.path, headers, body, "application/json");
    if (res) {
      if (res->status == 401 || res->status == 403)
        throw Error(ErrorCode::AuthFailure, "endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
      if (res->status >= 200 && res->status < 300) {
        const auto parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_object() && parsed.contains("text") && parsed["text"].is_string())
          return parsed["text"].get<std::string>();
        return res->body;
      }
      last_error = "HTTP " + std::to_string(res->status);
      if (res->status < 500) break;
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt < cfg.max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      delay *= 2;
    }
  }
  throw Error(ErrorCode::EndpointUnreachable, "explain endpoint failed: " + last_error);
}

}  // namespace featgen
