#pragma once

/**
 * Core data model: queries, candidate sets, synthesis outputs, training
 * examples and run manifests. Everything here is an immutable value after
 * construction and safe to copy across worker threads.
 *
 * On-disk format is line-delimited JSON (one object per line) with
 * snake_case field names; absent optional fields are omitted, not null.
 */

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace synthkit {

using json = nlohmann::json;

// ============================================================================
// Errors
// ============================================================================

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or CLI usage; maps to process exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// ============================================================================
// Decoding parameters
// ============================================================================

/// Sampling knobs sent with every model call. The defaults are the knobs
/// used for candidate response generation: T=0.9, top-p=0.9, 1024 tokens.
struct DecodingParams {
  double temperature = 0.9;
  double top_p = 0.9;
  int max_tokens = 1024;
  double frequency_penalty = 0.0;
  double presence_penalty = 0.0;
  std::optional<std::int64_t> seed;  // replay control; omitted = server picks

  bool operator==(const DecodingParams&) const = default;

  void validate() const {
    if (temperature < 0.0) throw ConfigError("decoding: temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("decoding: top_p must be in (0, 1]");
    if (max_tokens < 1) throw ConfigError("decoding: max_tokens must be >= 1");
  }
};

// ============================================================================
// Task kinds and answer formats
// ============================================================================

/// Each kind binds one answer-extraction rule and one metric family:
/// exact match for the first three, Rouge-L for FreeTextLong.
enum class TaskKind {
  MathBoxed,     // final answer inside \boxed{...}
  GsmHash,       // final answer after a trailing "#### "
  TaggedShort,   // final answer inside a configured tag, e.g. <answer>...</answer>
  FreeTextLong,  // whole text is the answer
};

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::MathBoxed: return "math_boxed";
    case TaskKind::GsmHash: return "gsm_hash";
    case TaskKind::TaggedShort: return "tagged_short";
    case TaskKind::FreeTextLong: return "free_text_long";
  }
  throw Error("unknown TaskKind");
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "math_boxed") return TaskKind::MathBoxed;
  if (s == "gsm_hash") return TaskKind::GsmHash;
  if (s == "tagged_short") return TaskKind::TaggedShort;
  if (s == "free_text_long") return TaskKind::FreeTextLong;
  throw Error("unknown task_kind: " + s);
}

// ============================================================================
// Benchmark records
// ============================================================================

struct QueryRecord {
  std::string id;                         // caller-supplied; unique per benchmark file
  std::string prompt;                     // the user query x
  std::optional<std::string> gold_answer; // y_g; required for datagen and EM eval
  TaskKind task_kind = TaskKind::MathBoxed;
  std::optional<std::string> context;     // e.g. a serialized table; templates decide placement

  bool operator==(const QueryRecord&) const = default;
};

struct ValidationError {
  std::string record_id;
  std::string rule;     // machine-readable rule name
  std::string message;

  bool operator==(const ValidationError&) const = default;
};

/// Checks benchmark invariants: unique non-empty ids, non-empty prompts,
/// and (optionally) gold answers present. Returns all violations; empty
/// result means the benchmark is usable.
inline std::vector<ValidationError> validate_benchmark(
    const std::vector<QueryRecord>& records, bool require_gold = false) {
  std::vector<ValidationError> errors;
  std::map<std::string, int> seen;
  for (const auto& r : records) {
    if (r.id.empty()) {
      errors.push_back({r.id, "empty-id", "record has an empty id"});
    } else if (++seen[r.id] == 2) {
      errors.push_back({r.id, "duplicate-id", "id '" + r.id + "' appears more than once"});
    }
    if (r.prompt.empty()) {
      errors.push_back({r.id, "empty-prompt", "record '" + r.id + "' has an empty prompt"});
    }
    if (require_gold && (!r.gold_answer || r.gold_answer->empty())) {
      errors.push_back({r.id, "missing-gold", "record '" + r.id + "' has no gold answer"});
    }
  }
  return errors;
}

// ============================================================================
// Candidate sets
// ============================================================================

struct CandidateResponse {
  std::string text;                               // full model output
  std::optional<std::string> extracted_answer;    // normalized; filled lazily
  std::string backend_id;
  int sample_index = 0;                           // 0..k-1, no gaps, generation order

  bool operator==(const CandidateResponse&) const = default;
};

/// A query plus its ordered list of candidate responses (x, R).
struct CandidateSet {
  std::string query_id;
  std::vector<CandidateResponse> responses;  // generation order, length >= 1
  DecodingParams decoding;

  bool operator==(const CandidateSet&) const = default;
};

// ============================================================================
// Synthesis outputs
// ============================================================================

enum class Strategy { CotSynth, SelfConsistency, UniversalSC, BestOfN };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::CotSynth: return "cot-synth";
    case Strategy::SelfConsistency: return "sc";
    case Strategy::UniversalSC: return "usc";
    case Strategy::BestOfN: return "bon";
  }
  throw Error("unknown Strategy");
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "cot-synth") return Strategy::CotSynth;
  if (s == "sc") return Strategy::SelfConsistency;
  if (s == "usc") return Strategy::UniversalSC;
  if (s == "bon") return Strategy::BestOfN;
  throw Error("unknown strategy: " + s);
}

/// Result of one strategy invocation for one query.
///
/// For SelfConsistency, UniversalSC and BestOfN, final_text is byte-equal to
/// the text of exactly one candidate and source_indices names it. For
/// CotSynth the text is newly generated and source_indices is empty.
struct SynthesisOutput {
  std::string query_id;
  Strategy strategy = Strategy::CotSynth;
  std::string reasoning;                       // empty for non-generative strategies
  std::string final_text;
  std::optional<std::string> final_answer;     // normalized; absent = extraction failed
  std::vector<int> source_indices;
  json diagnostics = json::object();           // scores, vote counts, extraction notes

  bool operator==(const SynthesisOutput&) const = default;
};

// ============================================================================
// Training examples
// ============================================================================

enum class TrainingStage { Initial, Repair };

inline std::string to_string(TrainingStage s) {
  return s == TrainingStage::Initial ? "initial" : "repair";
}

inline TrainingStage training_stage_from_string(const std::string& s) {
  if (s == "initial") return TrainingStage::Initial;
  if (s == "repair") return TrainingStage::Repair;
  throw Error("unknown training stage: " + s);
}

/// One filtered datagen record (x, R, y). A Repair-stage record exists only
/// for queries whose initial-stage attempts all failed verification.
struct TrainingExample {
  std::string query_id;
  std::string x;               // the query prompt
  std::vector<std::string> R;  // candidate texts in generation order
  std::string y;               // verified synthesized answer
  TrainingStage stage = TrainingStage::Initial;
  int attempts_used = 1;       // 1-based attempt count within its stage
  std::optional<double> judge_score;  // present when judge-filtered (1..10)

  bool operator==(const TrainingExample&) const = default;
};

// ============================================================================
// Run manifests
// ============================================================================

struct StageCounts {
  std::int64_t queries = 0;
  std::int64_t calls = 0;
  std::int64_t retained = 0;
  std::int64_t dropped = 0;

  bool operator==(const StageCounts&) const = default;
};

/// Audit record written next to every command's outputs. Manifests alone
/// suffice to recompute total backend calls for a run.
struct RunManifest {
  std::string run_id;
  std::string config_digest;
  std::vector<std::string> backend_ids;
  std::map<std::string, StageCounts> stages;
  double wall_seconds = 0.0;
  std::optional<std::int64_t> seed;
  json details = json::object();  // failures, per-round call counts, config echo

  bool operator==(const RunManifest&) const = default;
};

// ============================================================================
// JSON serialization (snake_case, optionals omitted when absent)
// ============================================================================

namespace detail {

template <class T>
void put_opt(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <class T>
void get_opt(const json& j, const char* key, std::optional<T>& v) {
  auto it = j.find(key);
  if (it != j.end() && !it->is_null()) {
    v = it->get<T>();
  } else {
    v.reset();
  }
}

}  // namespace detail

inline void to_json(json& j, const DecodingParams& p) {
  j = json{{"temperature", p.temperature},
           {"top_p", p.top_p},
           {"max_tokens", p.max_tokens},
           {"frequency_penalty", p.frequency_penalty},
           {"presence_penalty", p.presence_penalty}};
  detail::put_opt(j, "seed", p.seed);
}

inline void from_json(const json& j, DecodingParams& p) {
  j.at("temperature").get_to(p.temperature);
  j.at("top_p").get_to(p.top_p);
  j.at("max_tokens").get_to(p.max_tokens);
  j.at("frequency_penalty").get_to(p.frequency_penalty);
  j.at("presence_penalty").get_to(p.presence_penalty);
  detail::get_opt(j, "seed", p.seed);
}

inline void to_json(json& j, const QueryRecord& r) {
  j = json{{"id", r.id}, {"prompt", r.prompt}, {"task_kind", to_string(r.task_kind)}};
  detail::put_opt(j, "gold_answer", r.gold_answer);
  detail::put_opt(j, "context", r.context);
}

inline void from_json(const json& j, QueryRecord& r) {
  j.at("id").get_to(r.id);
  j.at("prompt").get_to(r.prompt);
  r.task_kind = task_kind_from_string(j.at("task_kind").get<std::string>());
  detail::get_opt(j, "gold_answer", r.gold_answer);
  detail::get_opt(j, "context", r.context);
}

inline void to_json(json& j, const CandidateResponse& c) {
  j = json{{"text", c.text},
           {"backend_id", c.backend_id},
           {"sample_index", c.sample_index}};
  detail::put_opt(j, "extracted_answer", c.extracted_answer);
}

inline void from_json(const json& j, CandidateResponse& c) {
  j.at("text").get_to(c.text);
  j.at("backend_id").get_to(c.backend_id);
  j.at("sample_index").get_to(c.sample_index);
  detail::get_opt(j, "extracted_answer", c.extracted_answer);
}

inline void to_json(json& j, const CandidateSet& s) {
  j = json{{"query_id", s.query_id},
           {"responses", s.responses},
           {"decoding", s.decoding}};
}

inline void from_json(const json& j, CandidateSet& s) {
  j.at("query_id").get_to(s.query_id);
  j.at("responses").get_to(s.responses);
  j.at("decoding").get_to(s.decoding);
}

inline void to_json(json& j, const SynthesisOutput& o) {
  j = json{{"query_id", o.query_id},
           {"strategy", to_string(o.strategy)},
           {"reasoning", o.reasoning},
           {"final_text", o.final_text},
           {"source_indices", o.source_indices},
           {"diagnostics", o.diagnostics}};
  detail::put_opt(j, "final_answer", o.final_answer);
}

inline void from_json(const json& j, SynthesisOutput& o) {
  j.at("query_id").get_to(o.query_id);
  o.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  j.at("reasoning").get_to(o.reasoning);
  j.at("final_text").get_to(o.final_text);
  j.at("source_indices").get_to(o.source_indices);
  o.diagnostics = j.value("diagnostics", json::object());
  detail::get_opt(j, "final_answer", o.final_answer);
}

inline void to_json(json& j, const TrainingExample& t) {
  j = json{{"query_id", t.query_id},
           {"x", t.x},
           {"R", t.R},
           {"y", t.y},
           {"stage", to_string(t.stage)},
           {"attempts_used", t.attempts_used}};
  detail::put_opt(j, "judge_score", t.judge_score);
}

inline void from_json(const json& j, TrainingExample& t) {
  j.at("query_id").get_to(t.query_id);
  j.at("x").get_to(t.x);
  j.at("R").get_to(t.R);
  j.at("y").get_to(t.y);
  t.stage = training_stage_from_string(j.at("stage").get<std::string>());
  j.at("attempts_used").get_to(t.attempts_used);
  detail::get_opt(j, "judge_score", t.judge_score);
}

inline void to_json(json& j, const StageCounts& c) {
  j = json{{"queries", c.queries},
           {"calls", c.calls},
           {"retained", c.retained},
           {"dropped", c.dropped}};
}

inline void from_json(const json& j, StageCounts& c) {
  j.at("queries").get_to(c.queries);
  j.at("calls").get_to(c.calls);
  j.at("retained").get_to(c.retained);
  j.at("dropped").get_to(c.dropped);
}

inline void to_json(json& j, const RunManifest& m) {
  j = json{{"run_id", m.run_id},
           {"config_digest", m.config_digest},
           {"backend_ids", m.backend_ids},
           {"stages", m.stages},
           {"wall_seconds", m.wall_seconds},
           {"details", m.details}};
  detail::put_opt(j, "seed", m.seed);
}

inline void from_json(const json& j, RunManifest& m) {
  j.at("run_id").get_to(m.run_id);
  j.at("config_digest").get_to(m.config_digest);
  j.at("backend_ids").get_to(m.backend_ids);
  j.at("stages").get_to(m.stages);
  j.at("wall_seconds").get_to(m.wall_seconds);
  m.details = j.value("details", json::object());
  detail::get_opt(j, "seed", m.seed);
}

// ============================================================================
// JSONL files
// ============================================================================

template <class T>
std::vector<T> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).template get<T>());
    } catch (const std::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <class T>
void write_jsonl(const std::string& path, const std::vector<T>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : records) out << json(r).dump() << '\n';
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace synthkit
