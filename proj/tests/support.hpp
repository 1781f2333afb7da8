#pragma once

// Shared test fixtures: temp dirs, mock builders, random data generators.

#include <synthkit/backend.hpp>
#include <synthkit/core.hpp>
#include <synthkit/templates.hpp>

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace testsup {

using namespace synthkit;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "synthkit") {
    auto base = std::filesystem::temp_directory_path();
    static std::atomic<int> counter{0};
    path_ = base / (tag + "-" + std::to_string(::getpid()) + "-" +
                    std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline BackendSpec mock_spec(const std::string& id, int max_concurrency = 4) {
  BackendSpec spec;
  spec.id = id;
  spec.kind = BackendKind::Mock;
  spec.model_name = "mock-model";
  spec.max_concurrency = max_concurrency;
  return spec;
}

inline std::shared_ptr<MockBackend> make_mock(const std::string& id,
                                              int max_concurrency = 4) {
  return std::make_shared<MockBackend>(mock_spec(id, max_concurrency));
}

inline QueryRecord query(const std::string& id, const std::string& prompt,
                         const std::string& gold = "",
                         TaskKind kind = TaskKind::MathBoxed) {
  QueryRecord q;
  q.id = id;
  q.prompt = prompt;
  if (!gold.empty()) q.gold_answer = gold;
  q.task_kind = kind;
  return q;
}

inline CandidateSet candidate_set(const std::string& query_id,
                                  const std::vector<std::string>& texts,
                                  DecodingParams decoding = {},
                                  const std::string& backend_id = "policy") {
  CandidateSet set;
  set.query_id = query_id;
  set.decoding = decoding;
  for (std::size_t i = 0; i < texts.size(); ++i)
    set.responses.push_back({texts[i], std::nullopt, backend_id, static_cast<int>(i)});
  return set;
}

// ----------------------------------------------------------------------------
// Random generators for round-trip property tests
// ----------------------------------------------------------------------------

inline std::string random_string(std::mt19937& rng, std::size_t max_len = 24) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 "
      "{}$\\#._-+/\n\"";
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s;
  std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) s += alphabet[pick(rng)];
  return s;
}

inline DecodingParams random_decoding(std::mt19937& rng) {
  DecodingParams d;
  std::uniform_real_distribution<double> temp(0.0, 2.0);
  std::uniform_real_distribution<double> topp(0.01, 1.0);
  std::uniform_int_distribution<int> toks(1, 4096);
  std::uniform_real_distribution<double> pen(-2.0, 2.0);
  d.temperature = temp(rng);
  d.top_p = topp(rng);
  d.max_tokens = toks(rng);
  d.frequency_penalty = pen(rng);
  d.presence_penalty = pen(rng);
  if (rng() % 2) d.seed = static_cast<std::int64_t>(rng());
  return d;
}

inline QueryRecord random_query(std::mt19937& rng) {
  QueryRecord q;
  q.id = "q" + std::to_string(rng() % 100000);
  q.prompt = random_string(rng, 60);
  if (q.prompt.empty()) q.prompt = "p";
  if (rng() % 2) q.gold_answer = random_string(rng, 12);
  q.task_kind = static_cast<TaskKind>(rng() % 4);
  if (rng() % 3 == 0) q.context = random_string(rng, 40);
  return q;
}

inline CandidateSet random_candidate_set(std::mt19937& rng, int max_candidates = 8) {
  CandidateSet set;
  set.query_id = "q" + std::to_string(rng() % 100000);
  set.decoding = random_decoding(rng);
  std::uniform_int_distribution<int> count(1, max_candidates);
  int n = count(rng);
  for (int i = 0; i < n; ++i) {
    CandidateResponse c;
    c.text = random_string(rng, 80);
    if (rng() % 2) c.extracted_answer = random_string(rng, 10);
    c.backend_id = "b" + std::to_string(rng() % 4);
    c.sample_index = i;
    set.responses.push_back(std::move(c));
  }
  return set;
}

inline SynthesisOutput random_output(std::mt19937& rng) {
  SynthesisOutput o;
  o.query_id = "q" + std::to_string(rng() % 100000);
  o.strategy = static_cast<Strategy>(rng() % 4);
  o.reasoning = random_string(rng, 60);
  o.final_text = random_string(rng, 60);
  if (rng() % 2) o.final_answer = random_string(rng, 12);
  int n = static_cast<int>(rng() % 3);
  for (int i = 0; i < n; ++i) o.source_indices.push_back(static_cast<int>(rng() % 8));
  if (rng() % 2) o.diagnostics["note"] = random_string(rng, 16);
  return o;
}

inline TrainingExample random_example(std::mt19937& rng) {
  TrainingExample t;
  t.query_id = "q" + std::to_string(rng() % 100000);
  t.x = random_string(rng, 40);
  int n = 1 + static_cast<int>(rng() % 5);
  for (int i = 0; i < n; ++i) t.R.push_back(random_string(rng, 40));
  t.y = random_string(rng, 40);
  t.stage = rng() % 2 ? TrainingStage::Repair : TrainingStage::Initial;
  t.attempts_used = 1 + static_cast<int>(rng() % 50);
  if (rng() % 2) t.judge_score = 1.0 + static_cast<double>(rng() % 19) / 2.0;
  return t;
}

}  // namespace testsup
