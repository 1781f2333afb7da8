#pragma once

/**
 * The four answer-production strategies, all with the common contract
 * run(x, R) -> SynthesisOutput:
 *
 *  - cot_synthesize: one synthesizer call that analyzes every candidate and
 *    writes a new final response (the answer may differ from every
 *    candidate; it is never post-filtered to the candidate pool).
 *  - self_consistency: majority vote over normalized extracted answers;
 *    zero model calls.
 *  - universal_self_consistency: one selector call that names the most
 *    consistent candidate by number.
 *  - best_of_n: argmax over external or judge-assigned per-candidate scores.
 *
 * Selection strategies return a candidate's text byte-for-byte and credit it
 * in source_indices; cot_synthesize leaves source_indices empty.
 */

#include "synthkit/backend.hpp"
#include "synthkit/core.hpp"
#include "synthkit/eval.hpp"
#include "synthkit/templates.hpp"

#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace synthkit::strategies {

class StrategyError : public Error {
 public:
  using Error::Error;
};

// ============================================================================
// Reply parsing
// ============================================================================

struct NumberScan {
  std::optional<double> in_range;  // first number within [lo, hi]
  bool any = false;                // whether any number appeared at all
};

/// Scans left to right for unsigned decimal numbers ("3", "8.5") and returns
/// the first one inside [lo, hi]. Robust to surrounding prose ("Response 3.",
/// "7/10"). With integers_only, fractional tokens are seen but never
/// eligible, so "pick 2.5 of 3" still resolves to 3.
inline NumberScan scan_first_number_in_range(const std::string& text, double lo, double hi,
                                             bool integers_only = false) {
  NumberScan result;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    bool fractional = false;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
    if (i + 1 < text.size() && text[i] == '.' &&
        std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      fractional = true;
      ++i;
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
    }
    const std::string token = text.substr(start, i - start);
    double value = std::strtod(token.c_str(), nullptr);
    result.any = true;
    if (integers_only && fractional) continue;
    if (value >= lo && value <= hi && !result.in_range) {
      result.in_range = value;
      return result;
    }
  }
  return result;
}

// ============================================================================
// Scorer specification
// ============================================================================

enum class ScorerKind { BackendJudge, ExternalScores };

inline std::string to_string(ScorerKind k) {
  return k == ScorerKind::BackendJudge ? "backend_judge" : "external_scores";
}

inline ScorerKind scorer_kind_from_string(const std::string& s) {
  if (s == "backend_judge") return ScorerKind::BackendJudge;
  if (s == "external_scores") return ScorerKind::ExternalScores;
  throw Error("unknown scorer kind: " + s);
}

struct ScorerSpec {
  ScorerKind kind = ScorerKind::ExternalScores;
  std::optional<std::string> judge_backend;  // BackendJudge
  std::optional<std::string> scores_file;    // ExternalScores

  bool operator==(const ScorerSpec&) const = default;

  void validate() const {
    if (kind == ScorerKind::BackendJudge && (!judge_backend || scores_file))
      throw ConfigError("scorer: backend_judge requires judge_backend and no scores_file");
    if (kind == ScorerKind::ExternalScores && (!scores_file || judge_backend))
      throw ConfigError("scorer: external_scores requires scores_file and no judge_backend");
  }
};

inline void to_json(json& j, const ScorerSpec& s) {
  j = json{{"kind", to_string(s.kind)}};
  synthkit::detail::put_opt(j, "judge_backend", s.judge_backend);
  synthkit::detail::put_opt(j, "scores_file", s.scores_file);
}

inline void from_json(const json& j, ScorerSpec& s) {
  s.kind = scorer_kind_from_string(j.at("kind").get<std::string>());
  synthkit::detail::get_opt(j, "judge_backend", s.judge_backend);
  synthkit::detail::get_opt(j, "scores_file", s.scores_file);
}

// ============================================================================
// Prompt construction
// ============================================================================

namespace detail {

inline std::string context_block(const QueryRecord& x) {
  if (x.context && !x.context->empty()) return *x.context + "\n\n";
  return "";
}

inline std::map<std::string, std::string> synthesis_values(const QueryRecord& x,
                                                           const std::vector<CandidateResponse>& responses) {
  return {{"query", x.prompt},
          {"context", context_block(x)},
          {"candidates", render_candidates_block(responses)},
          {"candidate_count", std::to_string(responses.size())},
          {"format_instruction", format_instruction(x.task_kind)}};
}

}  // namespace detail

/// Renders the two-phase synthesis request: per-candidate analysis, then one
/// final answer in the task's answer format. Candidates appear as a numbered
/// list in sample_index order.
inline CompletionRequest build_synthesis_prompt(const QueryRecord& x,
                                                const CandidateSet& R,
                                                const PromptTemplate& tpl,
                                                DecodingParams decoding = {},
                                                const std::string& backend_id = "") {
  if (!has_placeholder(tpl, "query"))
    throw TemplateError("template '" + tpl.template_id + "' lacks {query}");
  if (!has_placeholder(tpl, "candidates"))
    throw TemplateError("template '" + tpl.template_id + "' lacks {candidates}");
  auto values = detail::synthesis_values(x, R.responses);
  CompletionRequest req;
  req.backend_id = backend_id;
  req.decoding = decoding;
  if (!tpl.system_text.empty())
    req.messages.push_back({Role::System, tpl.system_text});
  req.messages.push_back({Role::User, render_text(tpl.user_text, values)});
  return req;
}

// ============================================================================
// CoT synthesis
// ============================================================================

using eval::extract_normalized;

/// One synthesizer call over the full candidate set. Extraction failure is
/// not fatal: the output carries no final_answer plus a diagnostic, and EM
/// scores it wrong downstream.
inline SynthesisOutput cot_synthesize(const QueryRecord& x, const CandidateSet& R,
                                      Backend& synthesizer, const PromptTemplate& tpl,
                                      DecodingParams decoding = {}) {
  if (R.responses.empty())
    throw StrategyError("cot-synth: candidate set for '" + x.id + "' is empty");
  CompletionRequest req =
      build_synthesis_prompt(x, R, tpl, decoding, synthesizer.spec().id);
  std::string text = synthesizer.complete(req).text;

  SynthesisOutput out;
  out.query_id = x.id;
  out.strategy = Strategy::CotSynth;
  out.reasoning = text;
  out.final_text = text;
  out.final_answer = extract_normalized(text, x.task_kind);
  if (!out.final_answer)
    out.diagnostics["extraction"] =
        "no answer marker found for task kind " + to_string(x.task_kind);
  return out;
}

// ============================================================================
// Self-consistency
// ============================================================================

/// Majority vote over normalized extracted answers. Candidates whose
/// extraction fails are excluded from the vote; ties break to the answer
/// whose first occurrence is earliest; the winning candidate is the
/// earliest-generated one carrying the winning answer. Zero model calls.
inline SynthesisOutput self_consistency(const QueryRecord& x, const CandidateSet& R) {
  if (x.task_kind == TaskKind::FreeTextLong)
    throw StrategyError("sc: task kind free_text_long has no extractable answer to vote on");

  struct Vote {
    int count = 0;
    int first_index = -1;
  };
  std::map<std::string, Vote> votes;
  std::vector<std::optional<std::string>> extracted(R.responses.size());
  for (std::size_t i = 0; i < R.responses.size(); ++i) {
    const auto& cand = R.responses[i];
    extracted[i] = cand.extracted_answer ? cand.extracted_answer
                                         : extract_normalized(cand.text, x.task_kind);
    if (!extracted[i]) continue;
    auto& v = votes[*extracted[i]];
    ++v.count;
    if (v.first_index < 0) v.first_index = static_cast<int>(i);
  }
  if (votes.empty())
    throw StrategyError("sc: no votable candidates for '" + x.id + "'");

  const std::string* winner = nullptr;
  for (const auto& [answer, vote] : votes) {
    if (!winner) {
      winner = &answer;
      continue;
    }
    const Vote& best = votes.at(*winner);
    if (vote.count > best.count ||
        (vote.count == best.count && vote.first_index < best.first_index)) {
      winner = &answer;
    }
  }

  int index = votes.at(*winner).first_index;
  SynthesisOutput out;
  out.query_id = x.id;
  out.strategy = Strategy::SelfConsistency;
  out.final_text = R.responses[static_cast<std::size_t>(index)].text;
  out.final_answer = *winner;
  out.source_indices = {index};
  json tally = json::object();
  for (const auto& [answer, vote] : votes) tally[answer] = vote.count;
  out.diagnostics["votes"] = tally;
  return out;
}

// ============================================================================
// Universal self-consistency
// ============================================================================

/// One selector call; the reply is scanned for the first integer in
/// 1..|R| (robust to phrasing like "Response 3 is the most consistent").
inline SynthesisOutput universal_self_consistency(const QueryRecord& x,
                                                  const CandidateSet& R,
                                                  Backend& selector,
                                                  const PromptTemplate& tpl,
                                                  DecodingParams decoding = {}) {
  if (R.responses.empty())
    throw StrategyError("usc: candidate set for '" + x.id + "' is empty");
  CompletionRequest req = build_synthesis_prompt(x, R, tpl, decoding, selector.spec().id);
  std::string reply = selector.complete(req).text;

  const double n = static_cast<double>(R.responses.size());
  NumberScan scan = scan_first_number_in_range(reply, 1.0, n, /*integers_only=*/true);
  if (!scan.in_range) {
    if (scan.any)
      throw StrategyError("usc: selector index out of range 1.." +
                          std::to_string(R.responses.size()) + " in reply: " + reply);
    throw StrategyError("usc: no parseable selection in reply: " + reply);
  }

  int selected = static_cast<int>(*scan.in_range) - 1;
  SynthesisOutput out;
  out.query_id = x.id;
  out.strategy = Strategy::UniversalSC;
  out.reasoning = reply;
  out.final_text = R.responses[static_cast<std::size_t>(selected)].text;
  out.final_answer = extract_normalized(out.final_text, x.task_kind);
  out.source_indices = {selected};
  return out;
}

// ============================================================================
// Best-of-N
// ============================================================================

/// Argmax over per-candidate scores; ties break to the lowest sample_index.
/// Scores are recorded in the output's diagnostics.
inline SynthesisOutput best_of_n(const QueryRecord& x, const CandidateSet& R,
                                 const std::vector<double>& scores) {
  if (scores.size() != R.responses.size())
    throw StrategyError("bon: got " + std::to_string(scores.size()) + " scores for " +
                        std::to_string(R.responses.size()) + " candidates (query '" +
                        x.id + "')");
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!std::isfinite(scores[i]))
      throw StrategyError("bon: non-finite score at index " + std::to_string(i) +
                          " (query '" + x.id + "')");

  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;

  SynthesisOutput out;
  out.query_id = x.id;
  out.strategy = Strategy::BestOfN;
  out.final_text = R.responses[best].text;
  out.final_answer = extract_normalized(out.final_text, x.task_kind);
  out.source_indices = {static_cast<int>(best)};
  out.diagnostics["scores"] = scores;
  return out;
}

// ============================================================================
// Scorers
// ============================================================================

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<double> score(const QueryRecord& x, const CandidateSet& R) = 0;
};

/// Scores read from a JSONL file of {"query_id": ..., "scores": [...]}.
class ExternalScoresScorer : public Scorer {
 public:
  explicit ExternalScoresScorer(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scores file " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        json j = json::parse(line);
        scores_[j.at("query_id").get<std::string>()] =
            j.at("scores").get<std::vector<double>>();
      } catch (const std::exception& e) {
        throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  std::vector<double> score(const QueryRecord& x, const CandidateSet& R) override {
    auto it = scores_.find(x.id);
    if (it == scores_.end())
      throw StrategyError("bon: scores file has no entry for query '" + x.id + "'");
    if (it->second.size() != R.responses.size())
      throw StrategyError("bon: scores file has " + std::to_string(it->second.size()) +
                          " scores for query '" + x.id + "' but the set has " +
                          std::to_string(R.responses.size()) + " candidates");
    return it->second;
  }

 private:
  std::map<std::string, std::vector<double>> scores_;
};

/// One judge call per candidate; the reply's first number in [1, 10] is the
/// candidate's score.
class JudgeScorer : public Scorer {
 public:
  JudgeScorer(Backend& judge, PromptTemplate tpl, DecodingParams decoding = {})
      : judge_(judge), tpl_(std::move(tpl)), decoding_(std::move(decoding)) {}

  std::vector<double> score(const QueryRecord& x, const CandidateSet& R) override {
    std::vector<double> scores;
    scores.reserve(R.responses.size());
    for (const auto& cand : R.responses) {
      CompletionRequest req;
      req.backend_id = judge_.spec().id;
      req.decoding = decoding_;
      if (!tpl_.system_text.empty())
        req.messages.push_back({Role::System, tpl_.system_text});
      req.messages.push_back(
          {Role::User, render_text(tpl_.user_text,
                                   {{"query", x.prompt},
                                    {"context", detail::context_block(x)},
                                    {"response", cand.text}})});
      std::string reply = judge_.complete(req).text;
      NumberScan scan = scan_first_number_in_range(reply, 1.0, 10.0);
      if (!scan.in_range)
        throw StrategyError("bon: judge reply has no parseable score in [1,10]: " + reply);
      scores.push_back(*scan.in_range);
    }
    return scores;
  }

 private:
  Backend& judge_;
  PromptTemplate tpl_;
  DecodingParams decoding_;
};

inline SynthesisOutput best_of_n(const QueryRecord& x, const CandidateSet& R,
                                 Scorer& scorer) {
  return best_of_n(x, R, scorer.score(x, R));
}

}  // namespace synthkit::strategies
