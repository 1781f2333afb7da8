#include <synthkit/grouping.hpp>

#include <catch_amalgamated.hpp>

#include "support.hpp"

#include <numeric>
#include <random>

using namespace synthkit;
using namespace synthkit::grouping;

namespace {

const TemplateRegistry& registry() {
  static TemplateRegistry reg;
  return reg;
}

// Recurrence oracle: total calls = sum of ceil(n_r / g) with
// n_{r+1} = ceil(n_r / g), terminating at 1.
long long recurrence_calls(long long n, long long g) {
  long long total = 0;
  for (;;) {
    long long calls = (n + g - 1) / g;
    total += calls;
    n = calls;
    if (n == 1) return total;
  }
}

std::shared_ptr<MockBackend> echo_mock(const std::string& id = "synth") {
  auto mock = testsup::make_mock(id, /*max_concurrency=*/8);
  mock->set_fallback(
      [](const CompletionRequest&, const std::string& digest) { return "synth:" + digest; });
  return mock;
}

std::vector<std::string> numbered_texts(int n) {
  std::vector<std::string> texts;
  for (int i = 0; i < n; ++i) texts.push_back("candidate " + std::to_string(i));
  return texts;
}

}  // namespace

TEST_CASE("partition produces fixed-size groups with the remainder last") {
  auto groups = partition(numbered_texts(12), 5);
  REQUIRE(groups.size() == 3);
  CHECK(groups[0].size() == 5);
  CHECK(groups[1].size() == 5);
  CHECK(groups[2].size() == 2);

  CHECK(partition(numbered_texts(5), 5).size() == 1);

  auto even = partition(numbered_texts(25), 5);
  REQUIRE(even.size() == 5);
  for (const auto& g : even) CHECK(g.size() == 5);
}

TEST_CASE("concatenating the groups reproduces the input in order") {
  std::mt19937 rng(9);
  for (int iter = 0; iter < 100; ++iter) {
    int n = 1 + static_cast<int>(rng() % 40);
    int g = 1 + static_cast<int>(rng() % 9);
    auto items = numbered_texts(n);
    auto groups = partition(items, g);
    std::vector<std::string> flat;
    for (const auto& grp : groups) flat.insert(flat.end(), grp.begin(), grp.end());
    REQUIRE(flat == items);
    for (std::size_t i = 0; i + 1 < groups.size(); ++i)
      CHECK(groups[i].size() == static_cast<std::size_t>(g));
    CHECK(groups.back().size() >= 1);
    CHECK(groups.back().size() <= static_cast<std::size_t>(g));
  }
}

TEST_CASE("grouping config rejects degenerate group sizes") {
  GroupingConfig c;
  c.group_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.group_size = 2;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("25 candidates in groups of 5 cost exactly 6 synthesis calls") {
  auto mock = echo_mock();
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", numbered_texts(25));
  std::vector<int> rounds;
  auto out = iterative_synthesize(q, set, {5, 8}, *mock,
                                  registry().get("synthesis-default"), {}, &rounds);
  CHECK(mock->total_calls() == 6);
  CHECK(rounds == std::vector<int>{5, 1});
  CHECK(out.strategy == Strategy::CotSynth);
  CHECK(out.diagnostics["rounds"] == json({5, 1}));
}

TEST_CASE("7 candidates in groups of 5 cost 3 calls (groups 5,2 then 1)") {
  auto mock = echo_mock();
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", numbered_texts(7));
  std::vector<int> rounds;
  iterative_synthesize(q, set, {5, 8}, *mock, registry().get("synthesis-default"), {},
                       &rounds);
  CHECK(mock->total_calls() == 3);
  CHECK(rounds == std::vector<int>{2, 1});
}

TEST_CASE("at most group_size candidates cost a single call") {
  auto mock = echo_mock();
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", numbered_texts(5));
  std::vector<int> rounds;
  iterative_synthesize(q, set, {5, 8}, *mock, registry().get("synthesis-default"), {},
                       &rounds);
  CHECK(mock->total_calls() == 1);
  CHECK(rounds == std::vector<int>{1});
}

TEST_CASE("call counts match the recurrence over randomized (n, g)") {
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> n_dist(1, 200);
  std::uniform_int_distribution<int> g_dist(2, 10);
  for (int iter = 0; iter < 60; ++iter) {
    int n = n_dist(rng);
    int g = g_dist(rng);
    auto mock = echo_mock();
    auto q = testsup::query("q", "p");
    auto set = testsup::candidate_set("q", numbered_texts(n));
    iterative_synthesize(q, set, {g, 64}, *mock, registry().get("synthesis-default"));
    INFO("n=" << n << " g=" << g);
    CHECK(mock->total_calls() == recurrence_calls(n, g));
  }
}

TEST_CASE("n <= g reduces to plain cot_synthesize byte-for-byte") {
  auto q = testsup::query("q1", "p", "4");
  auto set = testsup::candidate_set("q1", numbered_texts(3));

  // Capture the prompt each path sends.
  std::vector<CompletionRequest> direct_reqs, grouped_reqs;
  auto direct_mock = testsup::make_mock("synth");
  direct_mock->set_fallback([&](const CompletionRequest& r, const std::string&) {
    direct_reqs.push_back(r);
    return "\\boxed{4}";
  });
  auto grouped_mock = testsup::make_mock("synth");
  grouped_mock->set_fallback([&](const CompletionRequest& r, const std::string&) {
    grouped_reqs.push_back(r);
    return "\\boxed{4}";
  });

  auto direct = strategies::cot_synthesize(q, set, *direct_mock,
                                           registry().get("synthesis-default"));
  auto grouped = iterative_synthesize(q, set, {5, 8}, *grouped_mock,
                                      registry().get("synthesis-default"));
  REQUIRE(direct_reqs.size() == 1);
  REQUIRE(grouped_reqs.size() == 1);
  CHECK(direct_reqs[0].messages == grouped_reqs[0].messages);
  CHECK(json(direct).dump() == json(grouped).dump());
}

TEST_CASE("later rounds consume full texts from earlier rounds") {
  // 6 candidates, g=5: round 1 synthesizes groups of 5 and 1, and the final
  // call must see both round-1 outputs verbatim.
  auto mock = testsup::make_mock("synth", 1);
  std::vector<std::string> final_round_prompt;
  mock->set_fallback([&](const CompletionRequest& req, const std::string& digest) {
    final_round_prompt.push_back(req.messages.back().content);
    return "output:" + digest.substr(0, 6);
  });
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", numbered_texts(6));
  iterative_synthesize(q, set, {5, 8}, *mock, registry().get("synthesis-default"));
  REQUIRE(final_round_prompt.size() == 3);
  const std::string& last = final_round_prompt.back();
  CHECK(last.find("output:") != std::string::npos);
  // Round-1 outputs appear as Response 1 / Response 2 of the final prompt.
  CHECK(last.find("Response 2") != std::string::npos);
}

TEST_CASE("group failures carry round and group coordinates") {
  auto mock = testsup::make_mock("synth", 1);  // nothing scripted -> every call misses
  auto q = testsup::query("q1", "p");
  auto set = testsup::candidate_set("q1", numbered_texts(12));
  try {
    iterative_synthesize(q, set, {5, 8}, *mock, registry().get("synthesis-default"));
    FAIL("expected GroupingError");
  } catch (const GroupingError& e) {
    CHECK(std::string(e.what()).find("round 1") != std::string::npos);
    CHECK(std::string(e.what()).find("group") != std::string::npos);
  }
}

TEST_CASE("termination stays within the logarithmic round bound") {
  std::mt19937 rng(55);
  for (int iter = 0; iter < 30; ++iter) {
    int n = 1 + static_cast<int>(rng() % 200);
    int g = 2 + static_cast<int>(rng() % 9);
    auto mock = echo_mock();
    auto q = testsup::query("q", "p");
    auto set = testsup::candidate_set("q", numbered_texts(n));
    std::vector<int> rounds;
    iterative_synthesize(q, set, {g, 64}, *mock, registry().get("synthesis-default"), {},
                         &rounds);
    double bound = std::ceil(std::log(std::max(2, n)) / std::log(g)) + 1;
    CHECK(static_cast<double>(rounds.size()) <= bound + 1);
    for (std::size_t i = 1; i + 1 < rounds.size(); ++i)
      CHECK(rounds[i] < rounds[i - 1]);  // strict shrink until the final call
  }
}
