#pragma once

/**
 * Diverse candidate response generation: k independent completions per query
 * with identical prompts, diversity coming from sampling alone.
 *
 * Benchmark sampling persists one CandidateSet per line as soon as it is
 * complete, so an interrupted run resumes by skipping query_ids already on
 * disk (a torn trailing line from a hard kill is truncated away first).
 */

#include "synthkit/backend.hpp"
#include "synthkit/core.hpp"
#include "synthkit/eval.hpp"
#include "synthkit/templates.hpp"

#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace synthkit::sampling {

class SamplingError : public Error {
 public:
  using Error::Error;
};

struct SamplingConfig {
  int k = 5;                        // candidates per query
  DecodingParams decoding;          // defaults are the candidate-generation knobs
  std::string policy_backend;
  std::string prompt_template_id;   // empty = per-kind default "policy-<kind>"

  bool operator==(const SamplingConfig&) const = default;

  void validate() const {
    if (k < 1) throw ConfigError("sampling: k must be >= 1");
    decoding.validate();
  }
};

inline void to_json(json& j, const SamplingConfig& c) {
  j = json{{"k", c.k},
           {"decoding", c.decoding},
           {"policy_backend", c.policy_backend},
           {"prompt_template_id", c.prompt_template_id}};
}

inline void from_json(const json& j, SamplingConfig& c) {
  c.k = j.value("k", 5);
  if (auto it = j.find("decoding"); it != j.end()) it->get_to(c.decoding);
  c.policy_backend = j.value("policy_backend", "");
  c.prompt_template_id = j.value("prompt_template_id", "");
}

inline const PromptTemplate& resolve_policy_template(const TemplateRegistry& registry,
                                                     const SamplingConfig& config,
                                                     TaskKind kind) {
  const std::string id = config.prompt_template_id.empty()
                             ? "policy-" + to_string(kind)
                             : config.prompt_template_id;
  if (!registry.has(id))
    throw SamplingError("no prompt template '" + id + "' for task kind " + to_string(kind));
  return registry.get(id);
}

inline CompletionRequest build_policy_request(const QueryRecord& x,
                                              const PromptTemplate& tpl,
                                              DecodingParams decoding,
                                              const std::string& backend_id) {
  std::string context = x.context && !x.context->empty() ? *x.context + "\n\n" : "";
  CompletionRequest req;
  req.backend_id = backend_id;
  req.decoding = decoding;
  if (!tpl.system_text.empty()) req.messages.push_back({Role::System, tpl.system_text});
  req.messages.push_back(
      {Role::User, render_text(tpl.user_text, {{"query", x.prompt}, {"context", context}})});
  return req;
}

/// Exactly k completion calls with byte-identical message lists; responses
/// come back in sample_index order and are never deduplicated. When a seed
/// is set, sample i uses seed + i so scripted mocks can address each sample.
/// Without allow_partial any failed sample fails the whole set (naming the
/// index); with it, any non-empty subset survives, reindexed from 0.
inline CandidateSet generate_candidates(const QueryRecord& query,
                                        const SamplingConfig& config,
                                        BackendSet& backends,
                                        const TemplateRegistry& registry,
                                        bool allow_partial = false) {
  config.validate();
  Backend& backend = backends.get(config.policy_backend);
  const PromptTemplate& tpl = resolve_policy_template(registry, config, query.task_kind);

  std::vector<CompletionRequest> requests;
  requests.reserve(static_cast<std::size_t>(config.k));
  for (int i = 0; i < config.k; ++i) {
    DecodingParams d = config.decoding;
    if (d.seed) d.seed = *d.seed + i;
    requests.push_back(build_policy_request(query, tpl, d, config.policy_backend));
  }

  auto batch = complete_many(backend, requests);

  CandidateSet set;
  set.query_id = query.id;
  set.decoding = config.decoding;
  for (const auto& item : batch) {
    if (!item.ok()) {
      if (!allow_partial)
        throw SamplingError("query '" + query.id + "' sample " +
                            std::to_string(item.index) + ": " + item.error);
      continue;
    }
    CandidateResponse cand;
    cand.text = item.result->text;
    // Run answer extraction up front; voting strategies consume it directly.
    // FreeTextLong has no marker, so extraction would just copy the text.
    if (query.task_kind != TaskKind::FreeTextLong)
      cand.extracted_answer = eval::extract_normalized(cand.text, query.task_kind);
    cand.backend_id = config.policy_backend;
    cand.sample_index = static_cast<int>(set.responses.size());
    set.responses.push_back(std::move(cand));
  }
  if (set.responses.empty())
    throw SamplingError("query '" + query.id + "': every sample failed");
  return set;
}

// ============================================================================
// Benchmark sampling with resume
// ============================================================================

struct SampleReport {
  std::int64_t total = 0;     // benchmark records seen
  std::int64_t sampled = 0;   // sets generated this run
  std::int64_t resumed = 0;   // records already on disk, skipped
  std::int64_t failed = 0;    // records that failed this run
  std::int64_t calls = 0;     // completion calls made this run
  std::int64_t partial = 0;   // sets emitted with fewer than k responses
  json failures = json::array();
};

/// Scans an existing candidates file, returning the ids of complete lines and
/// the byte offset just past the last complete line. A torn or corrupt tail
/// (mid-write kill) ends the scan early so the caller can truncate it.
inline std::pair<std::set<std::string>, std::uintmax_t> scan_resumable(const std::string& path) {
  std::set<std::string> ids;
  std::uintmax_t good_end = 0;
  std::ifstream in(path, std::ios::binary);
  if (!in) return {ids, good_end};
  std::string line;
  while (std::getline(in, line)) {
    bool complete = !in.eof();  // a line without trailing '\n' is torn
    if (line.empty()) {
      if (complete) good_end += 1;
      continue;
    }
    try {
      CandidateSet set = json::parse(line).get<CandidateSet>();
      if (!complete) break;
      ids.insert(set.query_id);
      good_end += line.size() + 1;
    } catch (const std::exception&) {
      break;
    }
  }
  return {ids, good_end};
}

/// One CandidateSet per record, appended and flushed as soon as it is
/// generated. Per-query failures are recorded and processing continues;
/// rerunning skips everything already on disk.
inline SampleReport sample_benchmark(const std::vector<QueryRecord>& records,
                                     const SamplingConfig& config,
                                     BackendSet& backends,
                                     const TemplateRegistry& registry,
                                     const std::string& out_path,
                                     bool resume = true,
                                     bool allow_partial = false) {
  SampleReport report;
  report.total = static_cast<std::int64_t>(records.size());

  std::set<std::string> done;
  if (resume && std::filesystem::exists(out_path)) {
    auto [ids, good_end] = scan_resumable(out_path);
    done = std::move(ids);
    if (good_end < std::filesystem::file_size(out_path))
      std::filesystem::resize_file(out_path, good_end);
  }

  std::ofstream out(out_path, std::ios::app);
  if (!out) throw IoError("cannot open " + out_path + " for append");

  Backend& backend = backends.get(config.policy_backend);
  for (const auto& record : records) {
    if (done.count(record.id)) {
      ++report.resumed;
      continue;
    }
    const std::int64_t calls_before = backend.total_calls();
    try {
      CandidateSet set = generate_candidates(record, config, backends, registry, allow_partial);
      if (static_cast<int>(set.responses.size()) < config.k) ++report.partial;
      out << json(set).dump() << '\n' << std::flush;
      ++report.sampled;
    } catch (const std::exception& e) {
      ++report.failed;
      report.failures.push_back({{"query_id", record.id}, {"error", e.what()}});
    }
    report.calls += backend.total_calls() - calls_before;
  }
  return report;
}

}  // namespace synthkit::sampling
