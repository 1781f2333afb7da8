#pragma once

/**
 * Two-stage training-data generation.
 *
 * Per query: sample candidates with the sampling LLM, then ask the response
 * LLM to synthesize an answer, repeating up to n_initial times and keeping
 * the syntheses that pass verification. Queries whose initial stage never
 * verifies get a repair round of up to n_repair attempts whose prompt
 * declares every candidate incorrect; repair outputs pass through the same
 * verifier. Queries with no verified output are dropped (with their attempt
 * history preserved for audit).
 *
 * Presets mirror the shipped recipes: "math" = (50, 20) with gold exact
 * match, "tableqa" = (20, 10) with a 1-10 judge at threshold 8.
 */

#include "synthkit/backend.hpp"
#include "synthkit/core.hpp"
#include "synthkit/eval.hpp"
#include "synthkit/sampling.hpp"
#include "synthkit/strategies.hpp"
#include "synthkit/templates.hpp"

#include <atomic>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace synthkit::datagen {

class DatagenError : public Error {
 public:
  using Error::Error;
};

// ============================================================================
// Configuration
// ============================================================================

enum class Verifier { GoldExactMatch, JudgeScore };

inline std::string to_string(Verifier v) {
  return v == Verifier::GoldExactMatch ? "gold_exact_match" : "judge_score";
}

inline Verifier verifier_from_string(const std::string& s) {
  if (s == "gold_exact_match") return Verifier::GoldExactMatch;
  if (s == "judge_score") return Verifier::JudgeScore;
  throw Error("unknown verifier: " + s);
}

struct DatagenConfig {
  sampling::SamplingConfig sampling;    // sampling LLM for candidates
  std::string response_backend;         // response LLM for synthesis
  int n_initial = 1;
  int n_repair = 0;
  Verifier verifier = Verifier::GoldExactMatch;
  double judge_threshold = 8.0;
  bool emit_all_correct = true;         // keep every verified synthesis
  std::optional<std::string> judge_backend;
  DecodingParams response_decoding;
  std::string synthesis_template_id = "synthesis-default";
  std::string repair_template_id = "repair-default";
  std::string judge_template_id = "judge-default";

  bool operator==(const DatagenConfig&) const = default;

  void validate() const {
    sampling.validate();
    if (n_initial < 1) throw ConfigError("datagen: n_initial must be >= 1");
    if (n_repair < 0) throw ConfigError("datagen: n_repair must be >= 0");
    if (verifier == Verifier::JudgeScore) {
      if (judge_threshold < 1.0 || judge_threshold > 10.0)
        throw ConfigError("datagen: judge_threshold must be in [1, 10]");
      if (!judge_backend)
        throw ConfigError("datagen: judge_score verifier requires judge_backend");
    }
    response_decoding.validate();
  }

  static DatagenConfig math_preset() {
    DatagenConfig c;
    c.n_initial = 50;
    c.n_repair = 20;
    c.verifier = Verifier::GoldExactMatch;
    return c;
  }

  static DatagenConfig tableqa_preset() {
    DatagenConfig c;
    c.n_initial = 20;
    c.n_repair = 10;
    c.verifier = Verifier::JudgeScore;
    c.judge_threshold = 8.0;
    return c;
  }
};

inline void to_json(json& j, const DatagenConfig& c) {
  j = json{{"sampling", c.sampling},
           {"response_backend", c.response_backend},
           {"n_initial", c.n_initial},
           {"n_repair", c.n_repair},
           {"verifier", to_string(c.verifier)},
           {"judge_threshold", c.judge_threshold},
           {"emit_all_correct", c.emit_all_correct},
           {"response_decoding", c.response_decoding},
           {"synthesis_template_id", c.synthesis_template_id},
           {"repair_template_id", c.repair_template_id},
           {"judge_template_id", c.judge_template_id}};
  synthkit::detail::put_opt(j, "judge_backend", c.judge_backend);
}

inline void from_json(const json& j, DatagenConfig& c) {
  if (auto it = j.find("sampling"); it != j.end()) it->get_to(c.sampling);
  c.response_backend = j.value("response_backend", "");
  c.n_initial = j.value("n_initial", 1);
  c.n_repair = j.value("n_repair", 0);
  c.verifier = verifier_from_string(j.value("verifier", "gold_exact_match"));
  c.judge_threshold = j.value("judge_threshold", 8.0);
  c.emit_all_correct = j.value("emit_all_correct", true);
  if (auto it = j.find("response_decoding"); it != j.end()) it->get_to(c.response_decoding);
  c.synthesis_template_id = j.value("synthesis_template_id", "synthesis-default");
  c.repair_template_id = j.value("repair_template_id", "repair-default");
  c.judge_template_id = j.value("judge_template_id", "judge-default");
  synthkit::detail::get_opt(j, "judge_backend", c.judge_backend);
}

// ============================================================================
// SFT training-config manifest
// ============================================================================

/// Training regime emitted alongside the dataset. The toolkit never trains;
/// this records the recipe a trainer should use.
struct SftConfigManifest {
  double learning_rate = 2e-6;
  double weight_decay = 1e-2;
  int effective_batch_size = 128;
  int epochs = 2;
  int max_sequence_length = 4096;
  std::string precision_label = "bf16";

  bool operator==(const SftConfigManifest&) const = default;
};

inline void to_json(json& j, const SftConfigManifest& m) {
  j = json{{"learning_rate", m.learning_rate},
           {"weight_decay", m.weight_decay},
           {"effective_batch_size", m.effective_batch_size},
           {"epochs", m.epochs},
           {"max_sequence_length", m.max_sequence_length},
           {"precision_label", m.precision_label}};
}

inline void from_json(const json& j, SftConfigManifest& m) {
  j.at("learning_rate").get_to(m.learning_rate);
  j.at("weight_decay").get_to(m.weight_decay);
  j.at("effective_batch_size").get_to(m.effective_batch_size);
  j.at("epochs").get_to(m.epochs);
  j.at("max_sequence_length").get_to(m.max_sequence_length);
  j.at("precision_label").get_to(m.precision_label);
}

inline SftConfigManifest emit_sft_manifest(const std::string& out_path) {
  SftConfigManifest manifest;
  write_json_file(out_path, json(manifest));
  return manifest;
}

// ============================================================================
// Verification
// ============================================================================

struct VerifyResult {
  bool passed = false;
  std::optional<double> judge_score;
};

struct JudgeHandle {
  Backend* backend = nullptr;
  const PromptTemplate* tpl = nullptr;
  DecodingParams decoding;
};

namespace detail {

inline VerifyResult judge_verify(const std::string& candidate_y, const QueryRecord& query,
                                 double threshold, const JudgeHandle& judge) {
  if (!judge.backend || !judge.tpl)
    throw DatagenError("judge_score verifier has no judge backend configured");
  CompletionRequest req;
  req.backend_id = judge.backend->spec().id;
  req.decoding = judge.decoding;
  if (!judge.tpl->system_text.empty())
    req.messages.push_back({Role::System, judge.tpl->system_text});
  std::string context =
      query.context && !query.context->empty() ? *query.context + "\n\n" : "";
  req.messages.push_back(
      {Role::User, render_text(judge.tpl->user_text,
                               {{"query", query.prompt},
                                {"context", context},
                                {"response", candidate_y},
                                {"reference", query.gold_answer.value_or("")}})});
  std::string reply = judge.backend->complete(req).text;
  auto scan = strategies::scan_first_number_in_range(reply, 1.0, 10.0);
  if (!scan.in_range)
    throw DatagenError("judge reply has no parseable score in [1,10]: " + reply);
  return VerifyResult{*scan.in_range >= threshold, scan.in_range};
}

}  // namespace detail

/// GoldExactMatch extracts the answer per task kind and compares it to the
/// gold answer under normalized exact match. JudgeScore makes one judge call
/// and passes iff the reply's first number in [1,10] reaches the threshold.
inline VerifyResult verify(const std::string& candidate_y, const QueryRecord& query,
                           Verifier verifier, double judge_threshold = 8.0,
                           const JudgeHandle& judge = {}) {
  if (verifier == Verifier::GoldExactMatch) {
    if (!query.gold_answer || query.gold_answer->empty())
      throw DatagenError("query '" + query.id + "' has no gold answer to verify against");
    auto extracted = eval::extract_answer(candidate_y, eval::rule_for(query.task_kind));
    return VerifyResult{eval::exact_match(extracted, *query.gold_answer) == 1, std::nullopt};
  }
  return detail::judge_verify(candidate_y, query, judge_threshold, judge);
}

// ============================================================================
// Repair prompt
// ============================================================================

/// Mirrors the synthesis prompt plus the explicit declaration that every
/// candidate is incorrect, with the instruction to reflect on the errors.
inline CompletionRequest build_repair_prompt(const QueryRecord& x, const CandidateSet& R,
                                             const PromptTemplate& tpl,
                                             DecodingParams decoding = {},
                                             const std::string& backend_id = "") {
  if (!has_placeholder(tpl, "all_incorrect_notice"))
    throw DatagenError("repair template '" + tpl.template_id +
                       "' lacks {all_incorrect_notice}");
  if (!has_placeholder(tpl, "query"))
    throw DatagenError("repair template '" + tpl.template_id + "' lacks {query}");
  if (!has_placeholder(tpl, "candidates"))
    throw DatagenError("repair template '" + tpl.template_id + "' lacks {candidates}");

  auto values = strategies::detail::synthesis_values(x, R.responses);
  values["all_incorrect_notice"] = kAllIncorrectNotice;
  CompletionRequest req;
  req.backend_id = backend_id;
  req.decoding = decoding;
  if (!tpl.system_text.empty()) req.messages.push_back({Role::System, tpl.system_text});
  req.messages.push_back({Role::User, render_text(tpl.user_text, values)});
  return req;
}

// ============================================================================
// Multi-sampled synthesis with verification
// ============================================================================

struct VerifiedSynthesis {
  std::string y;
  int attempt = 1;  // 1-based attempt that produced it
  std::optional<double> judge_score;
};

struct SynthRound {
  std::vector<VerifiedSynthesis> verified;
  int attempts_made = 0;
  int response_calls = 0;
  json attempt_log = json::array();
};

/// Up to `budget` independent synthesis calls against the response backend.
/// Collects every verified synthesis (or stops at the first when
/// emit_all_correct is false). Backend and judge failures consume the
/// attempt and are logged, never fatal. Seeded runs vary the seed per
/// attempt so each call is independently scriptable.
inline SynthRound synth_until_verified(const QueryRecord& x, const CandidateSet& R,
                                       int budget, Backend& response_backend,
                                       const PromptTemplate& tpl, bool repair_stage,
                                       Verifier verifier, double judge_threshold,
                                       const JudgeHandle& judge,
                                       const DecodingParams& base_decoding,
                                       bool emit_all_correct) {
  SynthRound round;
  for (int attempt = 1; attempt <= budget; ++attempt) {
    ++round.attempts_made;
    ++round.response_calls;
    DecodingParams d = base_decoding;
    if (d.seed) d.seed = *d.seed + (attempt - 1);

    json entry = {{"stage", repair_stage ? "repair" : "initial"}, {"attempt", attempt}};
    try {
      CompletionRequest req =
          repair_stage
              ? build_repair_prompt(x, R, tpl, d, response_backend.spec().id)
              : strategies::build_synthesis_prompt(x, R, tpl, d, response_backend.spec().id);
      std::string y = response_backend.complete(req).text;
      VerifyResult v = verify(y, x, verifier, judge_threshold, judge);
      entry["verified"] = v.passed;
      if (v.judge_score) entry["judge_score"] = *v.judge_score;
      if (v.passed) {
        round.verified.push_back({y, attempt, v.judge_score});
        round.attempt_log.push_back(entry);
        if (!emit_all_correct) break;
        continue;
      }
    } catch (const std::exception& e) {
      entry["error"] = e.what();
    }
    round.attempt_log.push_back(entry);
  }
  return round;
}

// ============================================================================
// Pipeline
// ============================================================================

struct RetentionReport {
  std::int64_t total = 0;
  std::int64_t retained_initial = 0;
  std::int64_t retained_repair = 0;
  std::int64_t dropped = 0;
  std::int64_t total_response_calls = 0;

  bool operator==(const RetentionReport&) const = default;
};

inline void to_json(json& j, const RetentionReport& r) {
  j = json{{"total", r.total},
           {"retained_initial", r.retained_initial},
           {"retained_repair", r.retained_repair},
           {"dropped", r.dropped},
           {"total_response_calls", r.total_response_calls}};
}

inline void from_json(const json& j, RetentionReport& r) {
  j.at("total").get_to(r.total);
  j.at("retained_initial").get_to(r.retained_initial);
  j.at("retained_repair").get_to(r.retained_repair);
  j.at("dropped").get_to(r.dropped);
  j.at("total_response_calls").get_to(r.total_response_calls);
}

struct PipelineResult {
  RetentionReport report;
  std::vector<TrainingExample> examples;  // emission order = benchmark order
  json dropped_log = json::array();       // full attempt history per dropped query
  std::int64_t sampling_calls = 0;
  std::int64_t judge_calls = 0;
};

/// Runs the two-stage pipeline over a validated benchmark and writes the
/// training JSONL to out_path (empty = no file). Queries are processed by a
/// bounded worker pool; records are emitted in benchmark order by a single
/// writer. A query that fails hard at any stage is dropped, never fatal.
inline PipelineResult run_pipeline(const std::vector<QueryRecord>& records,
                                   const DatagenConfig& config, BackendSet& backends,
                                   const TemplateRegistry& registry,
                                   const std::string& out_path = "", int workers = 4) {
  config.validate();
  {
    bool require_gold = config.verifier == Verifier::GoldExactMatch;
    auto errors = validate_benchmark(records, require_gold);
    if (!errors.empty())
      throw DatagenError("benchmark invalid: " + errors.front().message +
                         (errors.size() > 1
                              ? " (+" + std::to_string(errors.size() - 1) + " more)"
                              : ""));
  }

  Backend& response = backends.get(config.response_backend);
  const PromptTemplate& synth_tpl = registry.get(config.synthesis_template_id);
  const PromptTemplate& repair_tpl = registry.get(config.repair_template_id);

  JudgeHandle judge;
  if (config.verifier == Verifier::JudgeScore) {
    judge.backend = &backends.get(*config.judge_backend);
    judge.tpl = &registry.get(config.judge_template_id);
    judge.decoding.temperature = 0.0;  // judging should not be stochastic
    judge.decoding.seed = std::nullopt;
  }

  struct QueryOutcome {
    std::vector<TrainingExample> examples;
    std::optional<json> dropped;
    std::int64_t response_calls = 0;
    std::int64_t sampling_calls = 0;
    std::int64_t judge_calls = 0;
    bool retained_initial = false;
    bool retained_repair = false;
  };

  Backend& sampler_backend = backends.get(config.sampling.policy_backend);
  std::int64_t judge_calls_before =
      judge.backend ? judge.backend->total_calls() : 0;

  std::vector<QueryOutcome> outcomes(records.size());
  std::atomic<std::size_t> next{0};
  auto process = [&](std::size_t i) {
    const QueryRecord& x = records[i];
    QueryOutcome& outcome = outcomes[i];

    CandidateSet R;
    try {
      R = sampling::generate_candidates(x, config.sampling, backends, registry);
    } catch (const std::exception& e) {
      outcome.dropped = json{{"query_id", x.id},
                             {"stage", "sampling"},
                             {"error", e.what()}};
      return;
    }

    SynthRound initial = synth_until_verified(
        x, R, config.n_initial, response, synth_tpl, /*repair_stage=*/false,
        config.verifier, config.judge_threshold, judge, config.response_decoding,
        config.emit_all_correct);
    outcome.response_calls += initial.response_calls;

    std::vector<std::string> texts;
    for (const auto& c : R.responses) texts.push_back(c.text);

    auto emit = [&](const SynthRound& round, TrainingStage stage) {
      for (const auto& v : round.verified) {
        TrainingExample ex;
        ex.query_id = x.id;
        ex.x = x.prompt;
        ex.R = texts;
        ex.y = v.y;
        ex.stage = stage;
        ex.attempts_used = v.attempt;
        ex.judge_score = v.judge_score;
        outcome.examples.push_back(std::move(ex));
      }
    };

    if (!initial.verified.empty()) {
      outcome.retained_initial = true;
      emit(initial, TrainingStage::Initial);
      return;
    }

    json history = json::array();
    for (const auto& e : initial.attempt_log) history.push_back(e);

    if (config.n_repair > 0) {
      SynthRound repair = synth_until_verified(
          x, R, config.n_repair, response, repair_tpl, /*repair_stage=*/true,
          config.verifier, config.judge_threshold, judge, config.response_decoding,
          config.emit_all_correct);
      outcome.response_calls += repair.response_calls;
      for (const auto& e : repair.attempt_log) history.push_back(e);
      if (!repair.verified.empty()) {
        outcome.retained_repair = true;
        emit(repair, TrainingStage::Repair);
        return;
      }
    }

    outcome.dropped = json{{"query_id", x.id}, {"attempts", history}};
  };

  const std::int64_t sampling_calls_before = sampler_backend.total_calls();
  int pool_size = static_cast<int>(
      std::min<std::size_t>(records.size(), static_cast<std::size_t>(std::max(1, workers))));
  std::vector<std::thread> pool;
  for (int w = 0; w < pool_size; ++w)
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= records.size()) return;
        process(i);
      }
    });
  for (auto& t : pool) t.join();

  PipelineResult result;
  result.report.total = static_cast<std::int64_t>(records.size());
  result.sampling_calls = sampler_backend.total_calls() - sampling_calls_before;
  result.judge_calls =
      judge.backend ? judge.backend->total_calls() - judge_calls_before : 0;

  std::ofstream out;
  if (!out_path.empty()) {
    out.open(out_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + out_path);
  }
  for (auto& outcome : outcomes) {
    result.report.total_response_calls += outcome.response_calls;
    if (outcome.retained_initial) ++result.report.retained_initial;
    else if (outcome.retained_repair) ++result.report.retained_repair;
    else {
      ++result.report.dropped;
      if (outcome.dropped) result.dropped_log.push_back(*outcome.dropped);
    }
    for (auto& ex : outcome.examples) {
      if (out.is_open()) out << json(ex).dump() << '\n';
      result.examples.push_back(std::move(ex));
    }
  }
  return result;
}

}  // namespace synthkit::datagen
