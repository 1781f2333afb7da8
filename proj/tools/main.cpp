// synthkit command-line entry point.
//
// Subcommands: sample, synthesize, eval, compare, datagen. Pipelines chain
// via files in --out-dir so every stage can be re-run or resumed on its own.
// Exit codes: 0 success, 1 partial per-query failures, 2 configuration error.

#include <synthkit/synthkit.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace synthkit;

struct GlobalArgs {
  std::string config_path;
  std::optional<std::int64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> backend;
};

RunConfig load_config(const GlobalArgs& g, bool required = true) {
  RunConfig config;
  if (!g.config_path.empty()) {
    config = load_run_config(g.config_path);
  } else if (required) {
    throw ConfigError("this command requires --config");
  }
  if (g.seed) config.seed = g.seed;
  if (g.out_dir) config.out_dir = *g.out_dir;
  return config;
}

std::vector<Strategy> parse_strategies(const std::string& csv) {
  std::vector<Strategy> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    auto comma = csv.find(',', pos);
    std::string token = csv.substr(pos, comma == std::string::npos ? std::string::npos
                                                                   : comma - pos);
    if (!token.empty()) out.push_back(strategy_from_string(token));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw ConfigError("no strategies given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inference-scaling toolkit: candidate sampling, answer "
               "synthesis/selection, training-data generation, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs global;
  std::int64_t seed_arg = 0;
  std::string out_dir_arg, backend_arg;
  app.add_option("--config", global.config_path, "run configuration file (JSON)");
  auto* seed_opt = app.add_option("--seed", seed_arg, "global seed for replayable runs");
  auto* out_opt = app.add_option("--out-dir", out_dir_arg, "output directory");
  auto* backend_opt =
      app.add_option("--backend", backend_arg, "backend id override for model calls");

  // sample
  auto* sample = app.add_subcommand("sample", "generate k candidate responses per query");
  int k_arg = 0;
  double temperature_arg = -1.0, top_p_arg = -1.0;
  int max_tokens_arg = 0;
  bool allow_partial = false, no_resume = false;
  sample->add_option("--k", k_arg, "candidates per query");
  sample->add_option("--temperature", temperature_arg, "sampling temperature");
  sample->add_option("--top-p", top_p_arg, "nucleus sampling mass");
  sample->add_option("--max-tokens", max_tokens_arg, "max tokens per completion");
  sample->add_flag("--allow-partial", allow_partial,
                   "emit sets with >= 1 responses when some samples fail");
  sample->add_flag("--no-resume", no_resume, "resample everything, ignoring prior output");

  // synthesize
  auto* synthesize = app.add_subcommand("synthesize", "run a strategy over sampled candidates");
  std::string strategy_arg;
  int group_size_arg = 0, max_rounds_arg = 0;
  std::string scorer_file_arg;
  synthesize->add_option("--strategy", strategy_arg, "cot-synth | sc | usc | bon");
  synthesize->add_option("--group-size", group_size_arg, "candidates per synthesis group");
  synthesize->add_option("--max-rounds", max_rounds_arg, "grouped synthesis round bound");
  synthesize->add_option("--scorer-file", scorer_file_arg,
                         "external scores JSONL for best-of-n");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score prediction files against gold");
  std::string metric_arg = "em", gold_arg;
  int runs_arg = 0;
  std::vector<std::string> pred_args;
  eval_cmd->add_option("--metric", metric_arg, "em | rougel");
  eval_cmd->add_option("--runs", runs_arg, "expected number of prediction files");
  eval_cmd->add_option("--gold", gold_arg, "gold benchmark JSONL");
  eval_cmd->add_option("--pred", pred_args, "prediction JSONL (repeat per run)");

  // compare
  auto* compare = app.add_subcommand("compare", "run several strategies over one candidate file");
  std::string strategies_arg;
  compare->add_option("--strategies", strategies_arg,
                      "comma-separated strategies, e.g. sc,cot-synth");

  // datagen
  auto* datagen_cmd = app.add_subcommand("datagen", "two-stage training-data generation");
  std::string preset_arg;
  int n_initial_arg = 0, n_repair_arg = -1;
  std::string verifier_arg;
  double judge_threshold_arg = -1.0;
  std::string emit_all_arg;
  datagen_cmd->add_option("--preset", preset_arg, "math | tableqa");
  datagen_cmd->add_option("--n-initial", n_initial_arg, "initial-stage attempt budget");
  datagen_cmd->add_option("--n-repair", n_repair_arg, "repair-stage attempt budget");
  datagen_cmd->add_option("--verifier", verifier_arg, "gold_exact_match | judge_score");
  datagen_cmd->add_option("--judge-threshold", judge_threshold_arg, "pass score in [1,10]");
  datagen_cmd->add_option("--emit-all-correct", emit_all_arg,
                          "true = keep every verified synthesis, false = first only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*seed_opt) global.seed = seed_arg;
  if (*out_opt) global.out_dir = out_dir_arg;
  if (*backend_opt) global.backend = backend_arg;

  try {
    if (*sample) {
      RunConfig config = load_config(global);
      if (k_arg > 0) config.sampling.k = k_arg;
      if (temperature_arg >= 0.0) config.sampling.decoding.temperature = temperature_arg;
      if (top_p_arg > 0.0) config.sampling.decoding.top_p = top_p_arg;
      if (max_tokens_arg > 0) config.sampling.decoding.max_tokens = max_tokens_arg;
      if (global.backend) config.sampling.policy_backend = *global.backend;
      auto ctx = commands::make_context(std::move(config));
      return commands::cmd_sample(ctx, allow_partial, !no_resume);
    }
    if (*synthesize) {
      RunConfig config = load_config(global);
      if (group_size_arg > 0) config.grouping.group_size = group_size_arg;
      if (max_rounds_arg > 0) config.grouping.max_rounds = max_rounds_arg;
      if (!scorer_file_arg.empty())
        config.scorer = strategies::ScorerSpec{strategies::ScorerKind::ExternalScores,
                                               std::nullopt, scorer_file_arg};
      if (global.backend) {
        config.synthesizer_backend = *global.backend;
        config.selector_backend = *global.backend;
      }
      std::optional<Strategy> strategy;
      if (!strategy_arg.empty()) strategy = strategy_from_string(strategy_arg);
      auto ctx = commands::make_context(std::move(config));
      return commands::cmd_synthesize(ctx, strategy);
    }
    if (*eval_cmd) {
      RunConfig config = load_config(global, /*required=*/false);
      if (!gold_arg.empty()) config.benchmark_path = gold_arg;
      auto ctx = commands::make_context(std::move(config));
      return commands::cmd_eval(ctx, pred_args, eval::metric_from_string(metric_arg),
                                runs_arg);
    }
    if (*compare) {
      RunConfig config = load_config(global);
      if (global.backend) {
        config.synthesizer_backend = *global.backend;
        config.selector_backend = *global.backend;
      }
      auto strategies_list = strategies_arg.empty()
                                 ? std::vector<Strategy>{config.strategy}
                                 : parse_strategies(strategies_arg);
      auto ctx = commands::make_context(std::move(config));
      return commands::cmd_compare(ctx, strategies_list);
    }
    if (*datagen_cmd) {
      RunConfig config = load_config(global);
      if (!preset_arg.empty()) {
        datagen::DatagenConfig preset;
        if (preset_arg == "math") {
          preset = datagen::DatagenConfig::math_preset();
        } else if (preset_arg == "tableqa") {
          preset = datagen::DatagenConfig::tableqa_preset();
        } else {
          throw ConfigError("unknown preset: " + preset_arg + " (math | tableqa)");
        }
        if (config.datagen) {
          // Preset pins budgets and verifier; wiring comes from the config.
          preset.sampling = config.datagen->sampling;
          preset.response_backend = config.datagen->response_backend;
          preset.judge_backend = config.datagen->judge_backend;
          preset.response_decoding = config.datagen->response_decoding;
        }
        config.datagen = preset;
      }
      if (!config.datagen) throw ConfigError("datagen: no datagen section and no --preset");
      if (n_initial_arg > 0) config.datagen->n_initial = n_initial_arg;
      if (n_repair_arg >= 0) config.datagen->n_repair = n_repair_arg;
      if (!verifier_arg.empty())
        config.datagen->verifier = datagen::verifier_from_string(verifier_arg);
      if (judge_threshold_arg >= 0.0) config.datagen->judge_threshold = judge_threshold_arg;
      if (!emit_all_arg.empty()) {
        if (emit_all_arg != "true" && emit_all_arg != "false")
          throw ConfigError("--emit-all-correct expects true or false");
        config.datagen->emit_all_correct = emit_all_arg == "true";
      }
      if (global.backend) config.datagen->response_backend = *global.backend;
      auto ctx = commands::make_context(std::move(config));
      return commands::cmd_datagen(ctx);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
