#include <synthkit/strategies.hpp>

#include <catch_amalgamated.hpp>

#include "support.hpp"

#include <algorithm>
#include <random>

using namespace synthkit;
using namespace synthkit::strategies;

namespace {

const TemplateRegistry& registry() {
  static TemplateRegistry reg;
  return reg;
}

std::string boxed(const std::string& v) { return "reasoning...\n\\boxed{" + v + "}"; }

}  // namespace

// ----------------------------------------------------------------------------
// Prompt construction
// ----------------------------------------------------------------------------

TEST_CASE("synthesis prompt renders candidates as a numbered list in order") {
  auto q = testsup::query("q1", "What is 2+2?");
  auto set = testsup::candidate_set("q1", {"c one", "c two", "c three", "c four", "c five"});
  auto req = build_synthesis_prompt(q, set, registry().get("synthesis-default"));
  REQUIRE(req.messages.size() == 2);
  const std::string& user = req.messages.back().content;
  for (int i = 1; i <= 5; ++i) {
    auto pos = user.find("Response " + std::to_string(i) + ":");
    INFO("Response " << i);
    CHECK(pos != std::string::npos);
    if (i > 1) {
      CHECK(pos > user.find("Response " + std::to_string(i - 1) + ":"));
    }
  }
  CHECK(user.find("What is 2+2?") != std::string::npos);
  CHECK(user.find("{candidates}") == std::string::npos);
}

TEST_CASE("a single candidate still renders Response 1 and requests synthesis") {
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {"lonely"});
  auto req = build_synthesis_prompt(q, set, registry().get("synthesis-default"));
  const std::string& user = req.messages.back().content;
  CHECK(user.find("Response 1:\nlonely") != std::string::npos);
  CHECK(user.find("synthesize") != std::string::npos);
}

TEST_CASE("template lacking {candidates} is rejected by name") {
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {"a"});
  PromptTemplate bad{"broken-template", "s", "just {query}"};
  try {
    build_synthesis_prompt(q, set, bad);
    FAIL("expected TemplateError");
  } catch (const TemplateError& e) {
    CHECK(std::string(e.what()).find("broken-template") != std::string::npos);
  }
}

TEST_CASE("context is rendered ahead of the query when present") {
  auto q = testsup::query("q1", "count rows", "", TaskKind::TaggedShort);
  q.context = "| a | b |";
  auto set = testsup::candidate_set("q1", {"x"});
  auto req = build_synthesis_prompt(q, set, registry().get("synthesis-default"));
  const std::string& user = req.messages.back().content;
  auto ctx_pos = user.find("| a | b |");
  REQUIRE(ctx_pos != std::string::npos);
  CHECK(ctx_pos < user.find("count rows"));
}

// ----------------------------------------------------------------------------
// CoT synthesis
// ----------------------------------------------------------------------------

TEST_CASE("cot synthesis can produce an answer no candidate contains") {
  auto mock = testsup::make_mock("synth");
  auto q = testsup::query("q1", "hard problem", "7");
  auto set = testsup::candidate_set(
      "q1", {boxed("5"), boxed("5"), boxed("5"), boxed("5"), boxed("5")});
  auto req = build_synthesis_prompt(q, set, registry().get("synthesis-default"), {}, "synth");
  mock->script(req, {std::string("after analysis the true answer is \\boxed{7}")});

  auto out = cot_synthesize(q, set, *mock, registry().get("synthesis-default"));
  CHECK(out.strategy == Strategy::CotSynth);
  REQUIRE(out.final_answer.has_value());
  CHECK(*out.final_answer == "7");
  CHECK(out.source_indices.empty());
  CHECK(out.reasoning == out.final_text);
  CHECK(mock->total_calls() == 1);  // exactly one completion per invocation
}

TEST_CASE("cot synthesis echoing a correct candidate keeps its answer") {
  auto mock = testsup::make_mock("synth");
  auto q = testsup::query("q1", "easy", "4");
  auto set = testsup::candidate_set("q1", {boxed("4"), boxed("4")});
  auto req = build_synthesis_prompt(q, set, registry().get("synthesis-default"), {}, "synth");
  mock->script(req, {set.responses[0].text});
  auto out = cot_synthesize(q, set, *mock, registry().get("synthesis-default"));
  REQUIRE(out.final_answer.has_value());
  CHECK(*out.final_answer == "4");
}

TEST_CASE("missing answer marker yields no final_answer plus a diagnostic") {
  auto mock = testsup::make_mock("synth");
  auto q = testsup::query("q1", "p", "4");
  auto set = testsup::candidate_set("q1", {boxed("4")});
  auto req = build_synthesis_prompt(q, set, registry().get("synthesis-default"), {}, "synth");
  mock->script(req, {std::string("I am sure the answer is four.")});
  auto out = cot_synthesize(q, set, *mock, registry().get("synthesis-default"));
  CHECK_FALSE(out.final_answer.has_value());
  CHECK(out.diagnostics.contains("extraction"));
}

// ----------------------------------------------------------------------------
// Self-consistency
// ----------------------------------------------------------------------------

TEST_CASE("sc majority vote picks the most frequent answer") {
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set(
      "q1", {boxed("4"), boxed("4"), boxed("5"), boxed("4"), boxed("6")});
  auto out = self_consistency(q, set);
  CHECK(out.strategy == Strategy::SelfConsistency);
  REQUIRE(out.final_answer.has_value());
  CHECK(*out.final_answer == "4");
  REQUIRE(out.source_indices == std::vector<int>{0});
  CHECK(out.final_text == set.responses[0].text);
}

TEST_CASE("sc ties break to the earliest first occurrence") {
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {boxed("4"), boxed("5")});
  auto out = self_consistency(q, set);
  CHECK(*out.final_answer == "4");
  CHECK(out.source_indices == std::vector<int>{0});
}

TEST_CASE("sc excludes failed extractions from the vote") {
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {"no marker", "still none", boxed("9")});
  auto out = self_consistency(q, set);
  CHECK(*out.final_answer == "9");
  CHECK(out.source_indices == std::vector<int>{2});
}

TEST_CASE("sc with no votable candidates is an error") {
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {"nothing", "to", "vote on"});
  CHECK_THROWS_AS(self_consistency(q, set), StrategyError);
}

TEST_CASE("sc rejects free-text tasks") {
  auto q = testsup::query("q1", "p", "", TaskKind::FreeTextLong);
  auto set = testsup::candidate_set("q1", {"a"});
  CHECK_THROWS_AS(self_consistency(q, set), StrategyError);
}

TEST_CASE("sc equals a counting oracle, tie rule included") {
  std::mt19937 rng(123);
  std::uniform_int_distribution<int> n_dist(1, 9);
  std::uniform_int_distribution<int> v_dist(0, 4);
  for (int iter = 0; iter < 300; ++iter) {
    int n = n_dist(rng);
    std::vector<std::string> answers;
    std::vector<std::string> texts;
    for (int i = 0; i < n; ++i) {
      if (v_dist(rng) == 0) {
        texts.push_back("no vote");  // excluded
      } else {
        std::string a = std::to_string(v_dist(rng));
        answers.push_back(a);
        texts.push_back(boxed(a));
      }
    }
    auto q = testsup::query("q", "p");
    auto set = testsup::candidate_set("q", texts);
    if (answers.empty()) {
      CHECK_THROWS_AS(self_consistency(q, set), StrategyError);
      continue;
    }

    // Oracle: count by first-seen order; max count wins, ties to the answer
    // seen first; winning candidate = first carrying that answer.
    std::vector<std::pair<std::string, int>> tally;
    std::vector<std::string> per_index(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto extracted = eval::extract_answer(texts[i], eval::rule_for(TaskKind::MathBoxed));
      if (!extracted) continue;
      per_index[i] = eval::normalize(*extracted);
      auto it = std::find_if(tally.begin(), tally.end(),
                             [&](const auto& p) { return p.first == per_index[i]; });
      if (it == tally.end()) {
        tally.push_back({per_index[i], 1});
      } else {
        ++it->second;
      }
    }
    std::string expect_answer;
    int best = -1;
    for (const auto& [a, c] : tally)
      if (c > best) {
        best = c;
        expect_answer = a;
      }
    int expect_index = -1;
    for (std::size_t i = 0; i < per_index.size(); ++i)
      if (per_index[i] == expect_answer) {
        expect_index = static_cast<int>(i);
        break;
      }

    auto out = self_consistency(q, set);
    REQUIRE(out.final_answer.has_value());
    CHECK(*out.final_answer == expect_answer);
    CHECK(out.source_indices == std::vector<int>{expect_index});
  }
}

TEST_CASE("permuting candidates never changes an untied winning answer") {
  std::mt19937 rng(77);
  std::uniform_int_distribution<int> v_dist(0, 3);
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<std::string> texts;
    std::map<std::string, int> counts;
    for (int i = 0; i < 7; ++i) {
      std::string a = std::to_string(v_dist(rng));
      ++counts[a];
      texts.push_back(boxed(a));
    }
    int best = 0, with_best = 0;
    for (const auto& [a, c] : counts) {
      if (c > best) {
        best = c;
        with_best = 1;
      } else if (c == best) {
        ++with_best;
      }
    }
    if (with_best != 1) continue;  // tied vote: tie-break is order-sensitive by design

    auto q = testsup::query("q", "p");
    auto baseline = self_consistency(q, testsup::candidate_set("q", texts));
    std::shuffle(texts.begin(), texts.end(), rng);
    auto permuted = self_consistency(q, testsup::candidate_set("q", texts));
    CHECK(*permuted.final_answer == *baseline.final_answer);
  }
}

// ----------------------------------------------------------------------------
// Universal self-consistency
// ----------------------------------------------------------------------------

namespace {

SynthesisOutput run_usc(const std::string& reply, int n = 5) {
  auto mock = testsup::make_mock("selector");
  auto q = testsup::query("q1", "p");
  std::vector<std::string> texts;
  for (int i = 0; i < n; ++i) texts.push_back(boxed(std::to_string(i)));
  auto set = testsup::candidate_set("q1", texts);
  auto req = build_synthesis_prompt(q, set, registry().get("usc-default"), {}, "selector");
  mock->script(req, {reply});
  auto out = universal_self_consistency(q, set, *mock, registry().get("usc-default"));
  CHECK(mock->total_calls() == 1);
  return out;
}

}  // namespace

TEST_CASE("usc parses the response number out of prose") {
  auto out = run_usc("The most consistent response is Response 3.");
  CHECK(out.source_indices == std::vector<int>{2});
  CHECK(out.strategy == Strategy::UniversalSC);
  CHECK(out.final_text == boxed("2"));  // candidate texts are boxed(0..4)
}

TEST_CASE("usc accepts a bare number") {
  auto out = run_usc("2");
  CHECK(out.source_indices == std::vector<int>{1});
}

TEST_CASE("usc skips out-of-range numbers in favor of the first in-range one") {
  auto out = run_usc("Of the 9 styles considered, Response 3 is most consistent.");
  CHECK(out.source_indices == std::vector<int>{2});
}

TEST_CASE("usc ignores fractional numbers when choosing a response") {
  auto out = run_usc("confidence 2.5 out of 10; pick Response 4");
  CHECK(out.source_indices == std::vector<int>{3});
}

TEST_CASE("usc with no parseable selection reports the raw reply") {
  auto mock = testsup::make_mock("selector");
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {"a", "b"});
  auto req = build_synthesis_prompt(q, set, registry().get("usc-default"), {}, "selector");
  mock->script(req, {std::string("none of them")});
  try {
    universal_self_consistency(q, set, *mock, registry().get("usc-default"));
    FAIL("expected StrategyError");
  } catch (const StrategyError& e) {
    CHECK(std::string(e.what()).find("none of them") != std::string::npos);
  }
}

TEST_CASE("usc with only out-of-range numbers is an out-of-range error") {
  auto mock = testsup::make_mock("selector");
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {"a", "b"});
  auto req = build_synthesis_prompt(q, set, registry().get("usc-default"), {}, "selector");
  mock->script(req, {std::string("Response 7 looks right")});
  try {
    universal_self_consistency(q, set, *mock, registry().get("usc-default"));
    FAIL("expected StrategyError");
  } catch (const StrategyError& e) {
    CHECK(std::string(e.what()).find("out of range") != std::string::npos);
  }
}

// ----------------------------------------------------------------------------
// Best-of-N
// ----------------------------------------------------------------------------

TEST_CASE("bon picks the max score, ties to the lowest index") {
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {boxed("0"), boxed("1"), boxed("2"),
                                           boxed("3"), boxed("4")});
  auto out = best_of_n(q, set, std::vector<double>{0.1, 0.9, 0.4, 0.9, 0.2});
  CHECK(out.strategy == Strategy::BestOfN);
  CHECK(out.source_indices == std::vector<int>{1});
  CHECK(out.final_text == set.responses[1].text);
  REQUIRE(out.diagnostics.contains("scores"));
  CHECK(out.diagnostics["scores"].size() == 5);
}

TEST_CASE("bon with a single candidate returns it regardless of score") {
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {boxed("0")});
  auto out = best_of_n(q, set, std::vector<double>{-100.0});
  CHECK(out.source_indices == std::vector<int>{0});
}

TEST_CASE("bon rejects score-count mismatches and non-finite scores") {
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {"a", "b", "c"});
  CHECK_THROWS_AS(best_of_n(q, set, std::vector<double>{0.1, 0.2}), StrategyError);
  CHECK_THROWS_AS(
      best_of_n(q, set, std::vector<double>{0.1, std::nan(""), 0.2}), StrategyError);
}

TEST_CASE("bon selection is invariant under strictly increasing transforms") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> score_dist(-2.0, 2.0);
  std::uniform_real_distribution<double> a_dist(0.1, 4.0);
  std::uniform_real_distribution<double> b_dist(-3.0, 3.0);
  auto q = testsup::query("q1", "p");
  for (int iter = 0; iter < 50; ++iter) {
    int n = 2 + static_cast<int>(rng() % 7);
    std::vector<std::string> texts;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      texts.push_back("cand " + std::to_string(i));
      scores.push_back(score_dist(rng));
    }
    auto set = testsup::candidate_set("q1", texts);
    auto base = best_of_n(q, set, scores);
    double a = a_dist(rng), b = b_dist(rng);
    std::vector<double> affine, cubed, expd;
    for (double s : scores) {
      affine.push_back(a * s + b);
      cubed.push_back(s * s * s);
      expd.push_back(std::exp(s));
    }
    CHECK(best_of_n(q, set, affine).source_indices == base.source_indices);
    CHECK(best_of_n(q, set, cubed).source_indices == base.source_indices);
    CHECK(best_of_n(q, set, expd).source_indices == base.source_indices);
  }
}

TEST_CASE("external scores file drives bon and reports gaps by query") {
  testsup::TempDir tmp;
  {
    std::ofstream out(tmp.file("scores.jsonl"));
    out << json{{"query_id", "q1"}, {"scores", {0.3, 0.8}}}.dump() << "\n";
    out << json{{"query_id", "short"}, {"scores", {0.5}}}.dump() << "\n";
  }
  ExternalScoresScorer scorer(tmp.file("scores.jsonl"));

  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {"a", "b"});
  auto out = best_of_n(q, set, scorer);
  CHECK(out.source_indices == std::vector<int>{1});

  auto missing = testsup::query("q2", "p");
  auto set2 = testsup::candidate_set("q2", {"a"});
  CHECK_THROWS_AS(best_of_n(missing, set2, scorer), StrategyError);

  auto shortq = testsup::query("short", "p");
  auto set3 = testsup::candidate_set("short", {"a", "b"});
  try {
    best_of_n(shortq, set3, scorer);
    FAIL("expected StrategyError");
  } catch (const StrategyError& e) {
    CHECK(std::string(e.what()).find("short") != std::string::npos);
  }
}

TEST_CASE("judge scorer asks once per candidate and parses x/10 replies") {
  auto mock = testsup::make_mock("judge");
  mock->set_fallback([](const CompletionRequest& req, const std::string&) {
    // Higher scores for candidates mentioning "good".
    return req.messages.back().content.find("good") != std::string::npos
               ? std::string("9/10, solid reasoning")
               : std::string("Score: 3. Weak.");
  });
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", {"bad answer", "good answer", "meh"});
  JudgeScorer scorer(*mock, registry().get("scorer-default"));
  auto out = best_of_n(q, set, scorer);
  CHECK(out.source_indices == std::vector<int>{1});
  CHECK(mock->total_calls() == 3);
  CHECK(out.diagnostics["scores"] == json({3.0, 9.0, 3.0}));
}

TEST_CASE("selection strategies return a candidate byte-for-byte") {
  std::mt19937 rng(31);
  for (int iter = 0; iter < 100; ++iter) {
    CandidateSet set = testsup::random_candidate_set(rng, 6);
    for (auto& c : set.responses) {
      c.text += "\n\\boxed{" + std::to_string(rng() % 5) + "}";
      c.extracted_answer.reset();
    }
    auto q = testsup::query(set.query_id, "p");

    auto sc = self_consistency(q, set);
    REQUIRE(sc.source_indices.size() == 1);
    CHECK(sc.final_text ==
          set.responses[static_cast<std::size_t>(sc.source_indices[0])].text);

    std::vector<double> scores;
    for (std::size_t i = 0; i < set.responses.size(); ++i)
      scores.push_back(static_cast<double>(rng() % 100));
    auto bon = best_of_n(q, set, scores);
    REQUIRE(bon.source_indices.size() == 1);
    CHECK(bon.final_text ==
          set.responses[static_cast<std::size_t>(bon.source_indices[0])].text);
  }
}

TEST_CASE("scorer spec validation enforces exactly one source") {
  ScorerSpec spec;
  spec.kind = ScorerKind::BackendJudge;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.judge_backend = "judge";
  CHECK_NOTHROW(spec.validate());
  spec.scores_file = "both.jsonl";
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  ScorerSpec ext;
  ext.kind = ScorerKind::ExternalScores;
  CHECK_THROWS_AS(ext.validate(), ConfigError);
  ext.scores_file = "s.jsonl";
  CHECK_NOTHROW(ext.validate());
}
