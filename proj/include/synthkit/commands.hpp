#pragma once

/**
 * Command layer behind the CLI: sample, synthesize, eval, compare, datagen.
 *
 * Commands chain through files under out_dir (candidates.jsonl ->
 * outputs.jsonl -> eval_report.json) so each expensive stage is
 * independently re-runnable and resumable. Every command writes a manifest;
 * the manifests alone suffice to recompute total backend calls.
 *
 * Exit codes: 0 success, 1 partial per-query failures, 2 configuration
 * error (the latter raised as ConfigError and mapped by the CLI).
 */

#include "synthkit/backend.hpp"
#include "synthkit/config.hpp"
#include "synthkit/core.hpp"
#include "synthkit/datagen.hpp"
#include "synthkit/eval.hpp"
#include "synthkit/grouping.hpp"
#include "synthkit/http.hpp"
#include "synthkit/sampling.hpp"
#include "synthkit/strategies.hpp"
#include "synthkit/templates.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace synthkit::commands {

// ============================================================================
// Shared plumbing
// ============================================================================

/// Flows the global seed into every decoding block that has none of its own,
/// so one --seed makes a whole mock run replayable.
inline RunConfig with_applied_seed(RunConfig config) {
  if (!config.seed) return config;
  auto apply = [&](DecodingParams& d) {
    if (!d.seed) d.seed = *config.seed;
  };
  apply(config.sampling.decoding);
  apply(config.synthesis_decoding);
  if (config.datagen) {
    apply(config.datagen->sampling.decoding);
    apply(config.datagen->response_decoding);
  }
  return config;
}

struct RunContext {
  RunConfig config;  // effective (seed applied)
  BackendSet backends;
  TemplateRegistry templates;
};

inline RunContext make_context(RunConfig config) {
  for (auto& [id, spec] : config.backends) spec.id = id;
  config.validate();
  RunContext ctx;
  ctx.config = with_applied_seed(std::move(config));
  ctx.backends = make_backend_set(ctx.config.backends);
  if (ctx.config.templates_dir) ctx.templates.load_dir(*ctx.config.templates_dir);
  return ctx;
}

namespace detail {

inline std::string make_run_id(const std::string& prefix) {
  auto now = std::chrono::system_clock::now().time_since_epoch();
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  static std::atomic<int> counter{0};
  return prefix + "-" + std::to_string(ms) + "-" + std::to_string(counter.fetch_add(1));
}

inline std::string out_file(const RunConfig& config, const std::string& name) {
  std::filesystem::create_directories(config.out_dir);
  return (std::filesystem::path(config.out_dir) / name).string();
}

class ManifestScope {
 public:
  ManifestScope(const std::string& command, const RunContext& ctx)
      : ctx_(ctx), start_(std::chrono::steady_clock::now()) {
    manifest_.run_id = make_run_id(command);
    manifest_.config_digest = config_digest(ctx.config);
    manifest_.backend_ids = ctx.backends.ids();
    manifest_.seed = ctx.config.seed;
    manifest_.details["command"] = command;
    manifest_.details["effective_config"] = json(ctx.config);
    path_ = out_file(ctx.config, command + "_manifest.json");
  }

  RunManifest& manifest() { return manifest_; }

  void write() {
    auto elapsed = std::chrono::steady_clock::now() - start_;
    manifest_.wall_seconds =
        std::chrono::duration_cast<std::chrono::duration<double>>(elapsed).count();
    json calls = json::object(), attempts = json::object();
    for (const auto& [id, c] : ctx_.backends.counters()) {
      calls[id] = c.calls;
      attempts[id] = c.attempts;  // > calls when retries happened
    }
    manifest_.details["backend_calls"] = calls;
    manifest_.details["backend_attempts"] = attempts;
    write_json_file(path_, json(manifest_));
  }

 private:
  const RunContext& ctx_;
  RunManifest manifest_;
  std::string path_;
  std::chrono::steady_clock::time_point start_;
};

inline std::vector<QueryRecord> load_benchmark(const RunConfig& config,
                                               bool require_gold = false) {
  if (config.benchmark_path.empty())
    throw ConfigError("no benchmark path configured");
  auto records = read_jsonl<QueryRecord>(config.benchmark_path);
  auto errors = validate_benchmark(records, require_gold);
  if (!errors.empty()) {
    std::string msg = "benchmark " + config.benchmark_path + " invalid: ";
    msg += errors.front().rule + " (" + errors.front().message + ")";
    if (errors.size() > 1) msg += " and " + std::to_string(errors.size() - 1) + " more";
    throw ConfigError(msg);
  }
  return records;
}

}  // namespace detail

// ============================================================================
// sample
// ============================================================================

inline int cmd_sample(RunContext& ctx, bool allow_partial = false, bool resume = true) {
  detail::ManifestScope scope("sample", ctx);
  auto records = detail::load_benchmark(ctx.config);

  const std::string out_path = detail::out_file(ctx.config, "candidates.jsonl");
  auto report = sampling::sample_benchmark(records, ctx.config.sampling, ctx.backends,
                                           ctx.templates, out_path, resume, allow_partial);

  StageCounts stage;
  stage.queries = report.total;
  stage.calls = report.calls;
  stage.retained = report.sampled + report.resumed;
  stage.dropped = report.failed;
  scope.manifest().stages["sample"] = stage;
  scope.manifest().details["resumed"] = report.resumed;
  scope.manifest().details["partial_sets"] = report.partial;
  scope.manifest().details["failures"] = report.failures;
  if (report.partial > 0)
    scope.manifest().details["warning"] =
        "emitted " + std::to_string(report.partial) + " partial candidate set(s)";
  scope.write();
  return report.failed == 0 ? 0 : 1;
}

// ============================================================================
// synthesize (shared with compare)
// ============================================================================

struct StrategyRunResult {
  std::vector<SynthesisOutput> outputs;  // benchmark order
  json failures = json::array();
  json calls_per_query = json::object();
  json rounds_per_query = json::object();  // cot-synth only
  std::int64_t backend_calls = 0;
};

/// Runs one strategy over every candidate set, queries fanned out to the
/// configured worker pool with outputs merged back in input order. CotSynth
/// routes through grouped iterative synthesis whenever |R| exceeds the group
/// size. Wiring problems (missing backend/scorer) throw ConfigError;
/// per-query strategy errors are recorded and the run continues.
inline StrategyRunResult run_strategy(Strategy strategy, RunContext& ctx,
                                      const std::vector<QueryRecord>& benchmark,
                                      const std::vector<CandidateSet>& sets) {
  const RunConfig& cfg = ctx.config;
  std::map<std::string, const QueryRecord*> by_id;
  for (const auto& q : benchmark) by_id[q.id] = &q;

  std::unique_ptr<strategies::Scorer> scorer;
  Backend* synthesizer = nullptr;
  Backend* selector = nullptr;
  switch (strategy) {
    case Strategy::CotSynth:
      if (cfg.synthesizer_backend.empty())
        throw ConfigError("strategy cot-synth requires synthesizer_backend");
      synthesizer = &ctx.backends.get(cfg.synthesizer_backend);
      break;
    case Strategy::UniversalSC:
      if (cfg.selector_backend.empty())
        throw ConfigError("strategy usc requires selector_backend");
      selector = &ctx.backends.get(cfg.selector_backend);
      break;
    case Strategy::BestOfN: {
      if (!cfg.scorer) throw ConfigError("strategy bon requires a scorer");
      cfg.scorer->validate();
      if (cfg.scorer->kind == strategies::ScorerKind::ExternalScores) {
        scorer = std::make_unique<strategies::ExternalScoresScorer>(*cfg.scorer->scores_file);
      } else {
        scorer = std::make_unique<strategies::JudgeScorer>(
            ctx.backends.get(*cfg.scorer->judge_backend),
            ctx.templates.get(cfg.scorer_template_id));
      }
      break;
    }
    case Strategy::SelfConsistency:
      break;  // zero model calls
  }

  struct Slot {
    std::optional<SynthesisOutput> output;
    std::optional<json> failure;
    int calls = 0;
    std::vector<int> rounds;
  };
  std::vector<Slot> slots(sets.size());

  auto process = [&](std::size_t i) {
    const CandidateSet& set = sets[i];
    Slot& slot = slots[i];
    auto it = by_id.find(set.query_id);
    if (it == by_id.end()) {
      slot.failure = json{{"query_id", set.query_id},
                          {"error", "query_id not in benchmark"}};
      return;
    }
    const QueryRecord& x = *it->second;
    try {
      switch (strategy) {
        case Strategy::CotSynth: {
          slot.output = grouping::iterative_synthesize(
              x, set, cfg.grouping, *synthesizer,
              ctx.templates.get(cfg.synthesis_template_id), cfg.synthesis_decoding,
              &slot.rounds);
          slot.calls = std::accumulate(slot.rounds.begin(), slot.rounds.end(), 0);
          break;
        }
        case Strategy::SelfConsistency:
          slot.output = strategies::self_consistency(x, set);
          break;
        case Strategy::UniversalSC:
          slot.output = strategies::universal_self_consistency(
              x, set, *selector, ctx.templates.get(cfg.usc_template_id),
              cfg.synthesis_decoding);
          slot.calls = 1;
          break;
        case Strategy::BestOfN:
          slot.output = strategies::best_of_n(x, set, *scorer);
          if (cfg.scorer->kind == strategies::ScorerKind::BackendJudge)
            slot.calls = static_cast<int>(set.responses.size());
          break;
      }
    } catch (const std::exception& e) {
      slot.failure = json{{"query_id", set.query_id}, {"error", e.what()}};
    }
  };

  const std::int64_t calls_before = ctx.backends.total_calls();
  const int pool_size = static_cast<int>(std::min<std::size_t>(
      sets.size(), static_cast<std::size_t>(std::max(1, cfg.workers))));
  if (pool_size <= 1) {
    for (std::size_t i = 0; i < sets.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next_index{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < pool_size; ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i = next_index.fetch_add(1);
          if (i >= sets.size()) return;
          process(i);
        }
      });
    for (auto& t : pool) t.join();
  }

  StrategyRunResult result;
  result.backend_calls = ctx.backends.total_calls() - calls_before;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    Slot& slot = slots[i];
    if (slot.failure) {
      result.failures.push_back(std::move(*slot.failure));
      continue;
    }
    result.calls_per_query[sets[i].query_id] = slot.calls;
    if (strategy == Strategy::CotSynth)
      result.rounds_per_query[sets[i].query_id] = slot.rounds;
    result.outputs.push_back(std::move(*slot.output));
  }
  return result;
}

inline int cmd_synthesize(RunContext& ctx, std::optional<Strategy> strategy_override = {}) {
  const Strategy strategy = strategy_override.value_or(ctx.config.strategy);
  detail::ManifestScope scope("synthesize", ctx);
  scope.manifest().details["strategy"] = to_string(strategy);

  auto benchmark = detail::load_benchmark(ctx.config);
  const std::string candidates_path = detail::out_file(ctx.config, "candidates.jsonl");
  if (!std::filesystem::exists(candidates_path))
    throw ConfigError("candidates file not found: " + candidates_path +
                      " (run `sample` first)");
  auto sets = read_jsonl<CandidateSet>(candidates_path);

  StrategyRunResult run = run_strategy(strategy, ctx, benchmark, sets);
  write_jsonl(detail::out_file(ctx.config, "outputs.jsonl"), run.outputs);

  StageCounts stage;
  stage.queries = static_cast<std::int64_t>(sets.size());
  stage.calls = run.backend_calls;
  stage.retained = static_cast<std::int64_t>(run.outputs.size());
  stage.dropped = static_cast<std::int64_t>(run.failures.size());
  scope.manifest().stages["synthesize"] = stage;
  scope.manifest().details["calls_per_query"] = run.calls_per_query;
  if (strategy == Strategy::CotSynth)
    scope.manifest().details["rounds_per_query"] = run.rounds_per_query;
  scope.manifest().details["failures"] = run.failures;
  scope.write();
  return run.failures.empty() ? 0 : 1;
}

// ============================================================================
// eval
// ============================================================================

inline std::string render_eval_table(const eval::EvalReport& report) {
  std::ostringstream os;
  os << "metric      " << to_string(report.metric) << "\n";
  os << "runs        " << report.runs << "\n";
  char buf[64];
  for (std::size_t r = 0; r < report.per_run_aggregates.size(); ++r) {
    std::snprintf(buf, sizeof(buf), "run %-7zu %.4f", r, report.per_run_aggregates[r]);
    os << buf << "\n";
  }
  std::snprintf(buf, sizeof(buf), "aggregate   %.4f", report.aggregate);
  os << buf << "\n";
  return os.str();
}

/// Evaluates one or more prediction files (one per repeated run) against the
/// gold benchmark. expected_runs, when positive, must match the file count.
inline int cmd_eval(RunContext& ctx, const std::vector<std::string>& pred_paths,
                    eval::Metric metric, int expected_runs = 0,
                    std::ostream& out = std::cout) {
  if (pred_paths.empty()) throw ConfigError("eval: no prediction files given");
  if (expected_runs > 0 && expected_runs != static_cast<int>(pred_paths.size()))
    throw ConfigError("eval: --runs " + std::to_string(expected_runs) + " but " +
                      std::to_string(pred_paths.size()) + " prediction file(s) given");

  detail::ManifestScope scope("eval", ctx);
  auto benchmark = detail::load_benchmark(ctx.config);

  std::vector<std::vector<SynthesisOutput>> runs;
  for (const auto& path : pred_paths) runs.push_back(read_jsonl<SynthesisOutput>(path));

  eval::EvalReport report = eval::evaluate_runs(runs, benchmark, metric);
  write_json_file(detail::out_file(ctx.config, "eval_report.json"), json(report));
  const std::string table = render_eval_table(report);
  std::ofstream txt(detail::out_file(ctx.config, "eval_report.txt"));
  txt << table;
  out << table;

  StageCounts stage;
  stage.queries = static_cast<std::int64_t>(benchmark.size()) * report.runs;
  stage.calls = 0;
  for (const auto& entry : report.per_query)
    entry.missing ? ++stage.dropped : ++stage.retained;
  scope.manifest().stages["eval"] = stage;
  scope.write();
  return 0;
}

// ============================================================================
// compare
// ============================================================================

struct CompareRow {
  Strategy strategy = Strategy::SelfConsistency;
  bool failed = false;
  std::string error;
  double aggregate = 0.0;
  std::int64_t calls = 0;
  double wall_ms = 0.0;
  std::int64_t query_failures = 0;
};

inline void to_json(json& j, const CompareRow& r) {
  j = json{{"strategy", to_string(r.strategy)},
           {"failed", r.failed},
           {"aggregate", r.aggregate},
           {"calls", r.calls},
           {"wall_ms", r.wall_ms},
           {"query_failures", r.query_failures}};
  if (r.failed) j["error"] = r.error;
}

inline std::string render_compare_table(const std::vector<CompareRow>& rows,
                                        eval::Metric metric) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-10s  %8s  %6s  %9s  %s", "strategy",
                to_string(metric).c_str(), "calls", "wall_ms", "status");
  os << buf << "\n";
  for (const auto& r : rows) {
    if (r.failed) {
      std::snprintf(buf, sizeof(buf), "%-10s  %8s  %6s  %9s  failed: %s",
                    to_string(r.strategy).c_str(), "-", "-", "-", r.error.c_str());
    } else {
      std::snprintf(buf, sizeof(buf), "%-10s  %8.4f  %6lld  %9.1f  ok",
                    to_string(r.strategy).c_str(), r.aggregate,
                    static_cast<long long>(r.calls), r.wall_ms);
    }
    os << buf << "\n";
  }
  return os.str();
}

/// Runs each strategy over the same candidate sets and evaluates them
/// against gold. A failing strategy marks its own row and the rest proceed.
inline int cmd_compare(RunContext& ctx, const std::vector<Strategy>& strategies_to_run,
                       std::ostream& out = std::cout) {
  if (strategies_to_run.empty()) throw ConfigError("compare: no strategies given");
  detail::ManifestScope scope("compare", ctx);

  auto benchmark = detail::load_benchmark(ctx.config, /*require_gold=*/true);
  const std::string candidates_path = detail::out_file(ctx.config, "candidates.jsonl");
  if (!std::filesystem::exists(candidates_path))
    throw ConfigError("candidates file not found: " + candidates_path +
                      " (run `sample` first)");
  auto sets = read_jsonl<CandidateSet>(candidates_path);

  std::vector<CompareRow> rows;
  for (Strategy s : strategies_to_run) {
    CompareRow row;
    row.strategy = s;
    auto t0 = std::chrono::steady_clock::now();
    try {
      StrategyRunResult run = run_strategy(s, ctx, benchmark, sets);
      eval::EvalReport report =
          eval::evaluate_run(run.outputs, benchmark, ctx.config.metric);
      row.aggregate = report.aggregate;
      row.calls = run.backend_calls;
      row.query_failures = static_cast<std::int64_t>(run.failures.size());
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    row.wall_ms = std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    rows.push_back(std::move(row));

    StageCounts stage;
    stage.queries = static_cast<std::int64_t>(sets.size());
    stage.calls = rows.back().calls;
    stage.retained = rows.back().failed
                         ? 0
                         : static_cast<std::int64_t>(sets.size()) - rows.back().query_failures;
    stage.dropped = static_cast<std::int64_t>(sets.size()) - stage.retained;
    scope.manifest().stages[to_string(s)] = stage;
  }

  json comparison = {{"metric", to_string(ctx.config.metric)}, {"rows", rows}};
  write_json_file(detail::out_file(ctx.config, "comparison.json"), comparison);
  const std::string table = render_compare_table(rows, ctx.config.metric);
  std::ofstream txt(detail::out_file(ctx.config, "comparison.txt"));
  txt << table;
  out << table;
  scope.write();

  for (const auto& r : rows)
    if (r.failed || r.query_failures > 0) return 1;
  return 0;
}

// ============================================================================
// datagen
// ============================================================================

inline int cmd_datagen(RunContext& ctx) {
  if (!ctx.config.datagen)
    throw ConfigError("datagen: no datagen section in config");
  detail::ManifestScope scope("datagen", ctx);

  auto records = detail::load_benchmark(
      ctx.config, ctx.config.datagen->verifier == datagen::Verifier::GoldExactMatch);

  auto result = datagen::run_pipeline(records, *ctx.config.datagen, ctx.backends,
                                      ctx.templates,
                                      detail::out_file(ctx.config, "training.jsonl"),
                                      ctx.config.workers);
  datagen::emit_sft_manifest(detail::out_file(ctx.config, "sft_config.json"));
  write_json_file(detail::out_file(ctx.config, "retention_report.json"),
                  json(result.report));

  StageCounts stage;
  stage.queries = result.report.total;
  stage.calls = result.report.total_response_calls + result.sampling_calls +
                result.judge_calls;
  stage.retained = result.report.retained_initial + result.report.retained_repair;
  stage.dropped = result.report.dropped;
  scope.manifest().stages["datagen"] = stage;
  scope.manifest().details["retention"] = json(result.report);
  scope.manifest().details["response_calls"] = result.report.total_response_calls;
  scope.manifest().details["sampling_calls"] = result.sampling_calls;
  scope.manifest().details["judge_calls"] = result.judge_calls;
  scope.manifest().details["dropped"] = result.dropped_log;
  scope.write();

  // Verification-filtered drops are a normal outcome; hard per-query
  // failures (sampling stage) are not.
  for (const auto& entry : result.dropped_log)
    if (entry.contains("stage") && entry["stage"] == "sampling") return 1;
  return 0;
}

}  // namespace synthkit::commands
