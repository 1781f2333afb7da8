#pragma once

/**
 * Grouped iterative synthesis: scales CoT synthesis past the synthesizer's
 * context limit by partitioning candidates into fixed-size groups,
 * synthesizing each group, then treating the group outputs as the next
 * round's candidates until one output remains.
 *
 * Group outputs feed later rounds as full texts (reasoning included), not
 * as extracted answers. Groups within a round run concurrently; rounds are
 * strictly sequential. Cross-group candidate sharing is deliberately absent.
 */

#include "synthkit/backend.hpp"
#include "synthkit/core.hpp"
#include "synthkit/strategies.hpp"
#include "synthkit/templates.hpp"

#include <string>
#include <vector>

namespace synthkit::grouping {

class GroupingError : public Error {
 public:
  using Error::Error;
};

struct GroupingConfig {
  int group_size = 5;
  int max_rounds = 8;  // safety bound; unreachable for group_size >= 2

  bool operator==(const GroupingConfig&) const = default;

  void validate() const {
    // A group of 1 would make synthesis a no-op pass-through.
    if (group_size < 2) throw ConfigError("grouping: group_size must be >= 2");
    if (max_rounds < 1) throw ConfigError("grouping: max_rounds must be >= 1");
  }
};

inline void to_json(json& j, const GroupingConfig& c) {
  j = json{{"group_size", c.group_size}, {"max_rounds", c.max_rounds}};
}

inline void from_json(const json& j, GroupingConfig& c) {
  c.group_size = j.value("group_size", 5);
  c.max_rounds = j.value("max_rounds", 8);
}

/// Splits items into consecutive groups of exactly group_size, in original
/// order; the final group holds the remainder. Concatenating the groups
/// reproduces the input.
template <class T>
std::vector<std::vector<T>> partition(const std::vector<T>& items, int group_size) {
  if (group_size < 1) throw ConfigError("partition: group_size must be >= 1");
  std::vector<std::vector<T>> groups;
  const std::size_t g = static_cast<std::size_t>(group_size);
  for (std::size_t begin = 0; begin < items.size(); begin += g) {
    std::size_t end = std::min(begin + g, items.size());
    groups.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(begin),
                        items.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return groups;
}

namespace detail {

inline CandidateSet set_from_texts(const std::string& query_id,
                                   const std::vector<std::string>& texts,
                                   const DecodingParams& decoding,
                                   const std::string& backend_id) {
  CandidateSet set;
  set.query_id = query_id;
  set.decoding = decoding;
  for (std::size_t i = 0; i < texts.size(); ++i)
    set.responses.push_back(
        {texts[i], std::nullopt, backend_id, static_cast<int>(i)});
  return set;
}

}  // namespace detail

/// Synthesis calls follow the recurrence n_{r+1} = ceil(n_r / g): each round
/// spends ceil(n_r / g) calls until a single output remains. With n <= g
/// this is exactly one plain cot_synthesize call with an identical prompt.
/// Per-round call counts are appended to round_calls when provided.
inline SynthesisOutput iterative_synthesize(const QueryRecord& x, const CandidateSet& R,
                                            const GroupingConfig& config,
                                            Backend& synthesizer,
                                            const PromptTemplate& tpl,
                                            DecodingParams decoding = {},
                                            std::vector<int>* round_calls = nullptr) {
  config.validate();
  if (R.responses.empty())
    throw GroupingError("grouping: candidate set for '" + x.id + "' is empty");

  if (static_cast<int>(R.responses.size()) <= config.group_size) {
    SynthesisOutput out = strategies::cot_synthesize(x, R, synthesizer, tpl, decoding);
    if (round_calls) round_calls->push_back(1);
    return out;
  }

  std::vector<std::string> texts;
  texts.reserve(R.responses.size());
  for (const auto& c : R.responses) texts.push_back(c.text);

  std::vector<int> rounds;
  int round = 0;
  while (static_cast<int>(texts.size()) > config.group_size) {
    ++round;
    if (round > config.max_rounds)
      throw GroupingError("grouping: exceeded max_rounds=" +
                          std::to_string(config.max_rounds) + " for '" + x.id + "'");

    auto groups = partition(texts, config.group_size);
    std::vector<CompletionRequest> requests;
    requests.reserve(groups.size());
    for (const auto& group : groups) {
      CandidateSet group_set =
          detail::set_from_texts(x.id, group, R.decoding, synthesizer.spec().id);
      requests.push_back(strategies::build_synthesis_prompt(
          x, group_set, tpl, decoding, synthesizer.spec().id));
    }

    auto batch = complete_many(synthesizer, requests);
    std::vector<std::string> next;
    next.reserve(batch.size());
    for (const auto& item : batch) {
      if (!item.ok())
        throw GroupingError("grouping: round " + std::to_string(round) + ", group " +
                            std::to_string(item.index) + ": " + item.error);
      next.push_back(item.result->text);
    }
    rounds.push_back(static_cast<int>(groups.size()));
    texts = std::move(next);
  }

  CandidateSet final_set =
      detail::set_from_texts(x.id, texts, R.decoding, synthesizer.spec().id);
  SynthesisOutput out;
  try {
    out = strategies::cot_synthesize(x, final_set, synthesizer, tpl, decoding);
  } catch (const Error& e) {
    throw GroupingError("grouping: final round: " + std::string(e.what()));
  }
  rounds.push_back(1);
  out.diagnostics["rounds"] = rounds;
  if (round_calls) round_calls->insert(round_calls->end(), rounds.begin(), rounds.end());
  return out;
}

}  // namespace synthkit::grouping
