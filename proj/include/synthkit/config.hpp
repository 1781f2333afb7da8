#pragma once

/**
 * Run configuration: one JSON file wiring backends, sampling, grouping,
 * strategy options and (optionally) datagen. String values may reference
 * environment variables as ${NAME}; interpolation happens at load so
 * secrets never live in the file. The effective config echoed into run
 * manifests reparses to an equal RunConfig.
 */

#include "synthkit/backend.hpp"
#include "synthkit/core.hpp"
#include "synthkit/datagen.hpp"
#include "synthkit/eval.hpp"
#include "synthkit/grouping.hpp"
#include "synthkit/sampling.hpp"
#include "synthkit/strategies.hpp"

#include <cstdlib>
#include <map>
#include <optional>
#include <string>

namespace synthkit {

struct RunConfig {
  std::map<std::string, BackendSpec> backends;
  sampling::SamplingConfig sampling;
  grouping::GroupingConfig grouping;

  Strategy strategy = Strategy::CotSynth;
  std::string synthesizer_backend;              // cot-synth
  std::string selector_backend;                 // usc
  std::optional<strategies::ScorerSpec> scorer; // bon
  std::string synthesis_template_id = "synthesis-default";
  std::string usc_template_id = "usc-default";
  std::string scorer_template_id = "scorer-default";
  DecodingParams synthesis_decoding;
  eval::Metric metric = eval::Metric::ExactMatch;

  std::optional<datagen::DatagenConfig> datagen;

  std::string benchmark_path;
  std::string out_dir = "out";
  std::optional<std::string> templates_dir;
  std::optional<std::int64_t> seed;
  int workers = 4;  // bounded pool for per-query work

  bool operator==(const RunConfig&) const = default;

  /// Backend wiring sanity: every referenced id must resolve.
  void validate() const {
    for (const auto& [id, spec] : backends) {
      BackendSpec s = spec;
      s.id = id;
      s.validate();
    }
    auto check = [this](const std::string& id, const std::string& role) {
      if (!id.empty() && !backends.count(id))
        throw ConfigError(role + " names unknown backend id: '" + id + "'");
    };
    check(sampling.policy_backend, "sampling.policy_backend");
    check(synthesizer_backend, "synthesizer_backend");
    check(selector_backend, "selector_backend");
    if (scorer) {
      scorer->validate();
      if (scorer->judge_backend) check(*scorer->judge_backend, "scorer.judge_backend");
    }
    if (datagen) {
      check(datagen->response_backend, "datagen.response_backend");
      check(datagen->sampling.policy_backend, "datagen.sampling.policy_backend");
      if (datagen->judge_backend) check(*datagen->judge_backend, "datagen.judge_backend");
    }
    grouping.validate();
    sampling.validate();
    if (workers < 1) throw ConfigError("workers must be >= 1");
  }
};

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"backends", c.backends},
           {"sampling", c.sampling},
           {"grouping", c.grouping},
           {"strategy", to_string(c.strategy)},
           {"synthesizer_backend", c.synthesizer_backend},
           {"selector_backend", c.selector_backend},
           {"synthesis_template_id", c.synthesis_template_id},
           {"usc_template_id", c.usc_template_id},
           {"scorer_template_id", c.scorer_template_id},
           {"synthesis_decoding", c.synthesis_decoding},
           {"metric", to_string(c.metric)},
           {"benchmark", c.benchmark_path},
           {"out_dir", c.out_dir},
           {"workers", c.workers}};
  detail::put_opt(j, "scorer", c.scorer);
  detail::put_opt(j, "datagen", c.datagen);
  detail::put_opt(j, "templates_dir", c.templates_dir);
  detail::put_opt(j, "seed", c.seed);
}

inline void from_json(const json& j, RunConfig& c) {
  if (auto it = j.find("backends"); it != j.end()) {
    c.backends = it->get<std::map<std::string, BackendSpec>>();
    for (auto& [id, spec] : c.backends) spec.id = id;  // the map key is the id
  }
  if (auto it = j.find("sampling"); it != j.end()) it->get_to(c.sampling);
  if (auto it = j.find("grouping"); it != j.end()) it->get_to(c.grouping);
  c.strategy = strategy_from_string(j.value("strategy", "cot-synth"));
  c.synthesizer_backend = j.value("synthesizer_backend", "");
  c.selector_backend = j.value("selector_backend", "");
  c.synthesis_template_id = j.value("synthesis_template_id", "synthesis-default");
  c.usc_template_id = j.value("usc_template_id", "usc-default");
  c.scorer_template_id = j.value("scorer_template_id", "scorer-default");
  if (auto it = j.find("synthesis_decoding"); it != j.end()) it->get_to(c.synthesis_decoding);
  c.metric = eval::metric_from_string(j.value("metric", "em"));
  c.benchmark_path = j.value("benchmark", "");
  c.out_dir = j.value("out_dir", "out");
  c.workers = j.value("workers", 4);
  detail::get_opt(j, "scorer", c.scorer);
  detail::get_opt(j, "datagen", c.datagen);
  detail::get_opt(j, "templates_dir", c.templates_dir);
  detail::get_opt(j, "seed", c.seed);
}

// ============================================================================
// Loading
// ============================================================================

namespace detail {

/// Replaces every ${NAME} in a string with the value of that environment
/// variable; an unset variable is a configuration error.
inline std::string interpolate_env(const std::string& value) {
  std::string out;
  std::size_t pos = 0;
  while (pos < value.size()) {
    auto open = value.find("${", pos);
    if (open == std::string::npos) {
      out.append(value, pos, std::string::npos);
      break;
    }
    auto close = value.find('}', open + 2);
    if (close == std::string::npos) {
      out.append(value, pos, std::string::npos);
      break;
    }
    out.append(value, pos, open - pos);
    std::string name = value.substr(open + 2, close - open - 2);
    const char* v = std::getenv(name.c_str());
    if (!v)
      throw ConfigError("config references unset environment variable ${" + name + "}");
    out += v;
    pos = close + 1;
  }
  return out;
}

inline void interpolate_env_tree(json& j) {
  if (j.is_string()) {
    j = interpolate_env(j.get<std::string>());
  } else if (j.is_object() || j.is_array()) {
    for (auto& child : j) interpolate_env_tree(child);
  }
}

}  // namespace detail

inline RunConfig load_run_config(const std::string& path) {
  json j = read_json_file(path);
  detail::interpolate_env_tree(j);
  RunConfig config;
  try {
    config = j.get<RunConfig>();
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  config.validate();
  return config;
}

/// Stable digest of the effective configuration (sorted-key JSON dump).
inline std::string config_digest(const RunConfig& config) {
  const std::string dump = json(config).dump();
  std::uint64_t h = 14695981039346656037ULL;
  detail::fnv_update(h, dump);
  return detail::fnv_hex(h);
}

}  // namespace synthkit
