#pragma once

/**
 * Answer extraction, normalization, exact match, Rouge-L and aggregate
 * reporting with repeated-run averaging.
 *
 * Extraction is deterministic and total: a missing or malformed marker
 * yields "absent", never an exception. Exact match compares normalized
 * strings with no numeric or symbolic re-interpretation ("4.0" != "4").
 * Rouge-L is the sentence-level LCS F1 over whitespace tokens.
 */

#include "synthkit/core.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace synthkit::eval {

class EvalError : public Error {
 public:
  using Error::Error;
};

// ============================================================================
// Extraction
// ============================================================================

/// Per-kind extraction rule. TaggedShort reads the content of `tag`
/// (default <answer>...</answer>); the other kinds ignore it.
struct ExtractionRule {
  TaskKind kind = TaskKind::MathBoxed;
  std::string tag = "answer";
};

inline ExtractionRule rule_for(TaskKind kind, std::string tag = "answer") {
  return ExtractionRule{kind, std::move(tag)};
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Content of the last \boxed{...}, found by brace balancing. A nested
// \boxed{\boxed{x}} resolves to the innermost content because the last
// occurrence of the marker is scanned. Unbalanced braces yield absent.
inline std::optional<std::string> extract_boxed(const std::string& text) {
  static const std::string marker = "\\boxed{";
  auto start = text.rfind(marker);
  if (start == std::string::npos) return std::nullopt;
  std::size_t pos = start + marker.size();
  int depth = 1;
  std::string content;
  while (pos < text.size()) {
    char c = text[pos];
    if (c == '{') {
      ++depth;
    } else if (c == '}') {
      --depth;
      if (depth == 0) return content;
    }
    content += c;
    ++pos;
  }
  return std::nullopt;  // ran out of text before the brace closed
}

inline std::optional<std::string> extract_hash(const std::string& text) {
  static const std::string marker = "#### ";
  auto start = text.rfind(marker);
  if (start == std::string::npos) return std::nullopt;
  std::size_t begin = start + marker.size();
  auto end = text.find('\n', begin);
  std::string answer = text.substr(begin, end == std::string::npos ? std::string::npos
                                                                   : end - begin);
  answer = trim(answer);
  if (answer.empty()) return std::nullopt;
  return answer;
}

inline std::optional<std::string> extract_tagged(const std::string& text,
                                                 const std::string& tag) {
  const std::string open = "<" + tag + ">";
  const std::string close = "</" + tag + ">";
  auto start = text.rfind(open);
  if (start == std::string::npos) return std::nullopt;
  auto end = text.find(close, start + open.size());
  if (end == std::string::npos) return std::nullopt;
  return trim(text.substr(start + open.size(), end - start - open.size()));
}

}  // namespace detail

/// Applies the kind's rule; absent when the marker is missing or unbalanced.
inline std::optional<std::string> extract_answer(const std::string& text,
                                                 const ExtractionRule& rule) {
  switch (rule.kind) {
    case TaskKind::MathBoxed: return detail::extract_boxed(text);
    case TaskKind::GsmHash: return detail::extract_hash(text);
    case TaskKind::TaggedShort: return detail::extract_tagged(text, rule.tag);
    case TaskKind::FreeTextLong: return text;
  }
  return std::nullopt;
}

std::string normalize(const std::string& answer);

/// Extraction followed by normalization, the form stored on candidates and
/// synthesis outputs.
inline std::optional<std::string> extract_normalized(const std::string& text, TaskKind kind) {
  auto raw = extract_answer(text, rule_for(kind));
  if (!raw) return std::nullopt;
  return normalize(*raw);
}

// ============================================================================
// Normalization and exact match
// ============================================================================

/// Trim, collapse internal whitespace, case-fold, strip one trailing period,
/// strip a surrounding $...$ pair. No numeric re-interpretation.
inline std::string normalize(const std::string& answer) {
  std::string s;
  s.reserve(answer.size());
  bool in_space = false;
  for (char raw : answer) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      in_space = true;
      continue;
    }
    if (in_space && !s.empty()) s += ' ';
    in_space = false;
    s += static_cast<char>(std::tolower(c));
  }
  if (!s.empty() && s.back() == '.') s.pop_back();
  while (s.size() >= 2 && s.front() == '$' && s.back() == '$') {
    s = s.substr(1, s.size() - 2);
  }
  return s;
}

inline int exact_match(const std::optional<std::string>& pred, const std::string& gold) {
  if (!pred) return 0;
  return normalize(*pred) == normalize(gold) ? 1 : 0;
}

// ============================================================================
// Rouge-L
// ============================================================================

/// Case-folded whitespace tokens with punctuation stripped from token edges.
inline std::vector<std::string> rouge_tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    std::size_t b = 0, e = current.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(current[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(current[e - 1]))) --e;
    if (e > b) tokens.push_back(current.substr(b, e - b));
    current.clear();
  };
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else {
      current += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return tokens;
}

/// Longest common subsequence length via the classic DP recurrence.
inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1, 0), curr(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (a[i - 1] == b[j - 1]) {
        curr[j] = prev[j - 1] + 1;
      } else {
        curr[j] = std::max(prev[j], curr[j - 1]);
      }
    }
    std::swap(prev, curr);
  }
  return prev[m];
}

/// Sentence-level Rouge-L F1: P = LCS/|pred|, R = LCS/|gold|, F = 2PR/(P+R),
/// and 0 when the LCS is empty (including both-empty inputs).
inline double rouge_l(const std::string& pred, const std::string& gold) {
  auto p = rouge_tokenize(pred);
  auto g = rouge_tokenize(gold);
  int l = lcs_length(p, g);
  if (l == 0) return 0.0;
  double precision = static_cast<double>(l) / static_cast<double>(p.size());
  double recall = static_cast<double>(l) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

// ============================================================================
// Reports
// ============================================================================

enum class Metric { ExactMatch, RougeL };

/// The metric family each task kind binds: exact match for extractable
/// answers, Rouge-L for long free text.
inline Metric metric_for(TaskKind kind) {
  return kind == TaskKind::FreeTextLong ? Metric::RougeL : Metric::ExactMatch;
}

inline std::string to_string(Metric m) {
  return m == Metric::ExactMatch ? "em" : "rougel";
}

inline Metric metric_from_string(const std::string& s) {
  if (s == "em") return Metric::ExactMatch;
  if (s == "rougel") return Metric::RougeL;
  throw Error("unknown metric: " + s + " (expected em or rougel)");
}

struct EvalReport {
  struct Entry {
    std::string query_id;
    std::optional<std::string> prediction;
    std::string gold;
    double score = 0.0;
    int run = 0;
    bool missing = false;  // no output line existed for this query

    bool operator==(const Entry&) const = default;
  };

  std::vector<Entry> per_query;           // all runs, in benchmark order
  Metric metric = Metric::ExactMatch;
  double aggregate = 0.0;                 // mean of per_run_aggregates
  int runs = 0;
  std::vector<double> per_run_aggregates; // each = mean of that run's scores

  bool operator==(const EvalReport&) const = default;
};

inline void to_json(json& j, const EvalReport::Entry& e) {
  j = json{{"query_id", e.query_id},
           {"gold", e.gold},
           {"score", e.score},
           {"run", e.run},
           {"missing", e.missing}};
  synthkit::detail::put_opt(j, "prediction", e.prediction);
}

inline void from_json(const json& j, EvalReport::Entry& e) {
  j.at("query_id").get_to(e.query_id);
  j.at("gold").get_to(e.gold);
  j.at("score").get_to(e.score);
  j.at("run").get_to(e.run);
  j.at("missing").get_to(e.missing);
  synthkit::detail::get_opt(j, "prediction", e.prediction);
}

inline void to_json(json& j, const EvalReport& r) {
  j = json{{"metric", to_string(r.metric)},
           {"aggregate", r.aggregate},
           {"runs", r.runs},
           {"per_run_aggregates", r.per_run_aggregates},
           {"per_query", r.per_query}};
}

inline void from_json(const json& j, EvalReport& r) {
  r.metric = metric_from_string(j.at("metric").get<std::string>());
  j.at("aggregate").get_to(r.aggregate);
  j.at("runs").get_to(r.runs);
  j.at("per_run_aggregates").get_to(r.per_run_aggregates);
  j.at("per_query").get_to(r.per_query);
}

namespace detail {

inline double score_output(const SynthesisOutput& out, const QueryRecord& query,
                           Metric metric) {
  if (metric == Metric::ExactMatch)
    return exact_match(out.final_answer, query.gold_answer.value_or(""));
  return rouge_l(out.final_text, query.gold_answer.value_or(""));
}

}  // namespace detail

/// Scores one run against the benchmark. Queries with no output score 0 and
/// are flagged; an output whose query_id is not in the benchmark is an error.
inline EvalReport evaluate_run(const std::vector<SynthesisOutput>& outputs,
                               const std::vector<QueryRecord>& benchmark,
                               Metric metric) {
  std::map<std::string, const QueryRecord*> by_id;
  for (const auto& q : benchmark) by_id[q.id] = &q;

  std::map<std::string, const SynthesisOutput*> out_by_id;
  for (const auto& o : outputs) {
    if (!by_id.count(o.query_id))
      throw EvalError("output query_id '" + o.query_id + "' is not in the benchmark");
    out_by_id[o.query_id] = &o;
  }

  EvalReport report;
  report.metric = metric;
  report.runs = 1;
  double sum = 0.0;
  for (const auto& q : benchmark) {
    EvalReport::Entry entry;
    entry.query_id = q.id;
    entry.gold = q.gold_answer.value_or("");
    auto it = out_by_id.find(q.id);
    if (it == out_by_id.end()) {
      entry.missing = true;
      entry.score = 0.0;
    } else {
      const auto& o = *it->second;
      entry.prediction = metric == Metric::ExactMatch ? o.final_answer
                                                      : std::optional<std::string>(o.final_text);
      entry.score = detail::score_output(o, q, metric);
    }
    sum += entry.score;
    report.per_query.push_back(std::move(entry));
  }
  double agg = benchmark.empty() ? 0.0 : sum / static_cast<double>(benchmark.size());
  report.per_run_aggregates = {agg};
  report.aggregate = agg;
  return report;
}

/// Multi-run evaluation: one output list per repeated run; the headline
/// aggregate is the mean of per-run aggregates.
inline EvalReport evaluate_runs(const std::vector<std::vector<SynthesisOutput>>& runs,
                                const std::vector<QueryRecord>& benchmark,
                                Metric metric) {
  if (runs.empty()) throw EvalError("no runs to evaluate");
  EvalReport report;
  report.metric = metric;
  report.runs = static_cast<int>(runs.size());
  double sum = 0.0;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    EvalReport one = evaluate_run(runs[r], benchmark, metric);
    for (auto& entry : one.per_query) {
      entry.run = static_cast<int>(r);
      report.per_query.push_back(std::move(entry));
    }
    report.per_run_aggregates.push_back(one.aggregate);
    sum += one.aggregate;
  }
  report.aggregate = sum / static_cast<double>(runs.size());
  return report;
}

}  // namespace synthkit::eval
