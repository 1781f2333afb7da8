#pragma once

/**
 * Prompt templates and rendering.
 *
 * A template is (template_id, system_text, user_text). user_text carries
 * {placeholders} that are substituted in a single pass; substituted values
 * are never rescanned, so braces inside candidate texts (e.g. LaTeX) stay
 * literal. Recognized placeholders:
 *
 *   {query} {context} {candidates} {candidate_count} {format_instruction}
 *   {response} {reference} {all_incorrect_notice}
 *
 * Built-in templates cover policy prompting per task kind, candidate
 * synthesis, repair, consistency selection and judging. All of them are
 * plain data: load a templates directory to replace any of them.
 */

#include "synthkit/backend.hpp"
#include "synthkit/core.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace synthkit {

struct PromptTemplate {
  std::string template_id;
  std::string system_text;
  std::string user_text;

  bool operator==(const PromptTemplate&) const = default;
};

inline void to_json(json& j, const PromptTemplate& t) {
  j = json{{"template_id", t.template_id},
           {"system_text", t.system_text},
           {"user_text", t.user_text}};
}

inline void from_json(const json& j, PromptTemplate& t) {
  j.at("template_id").get_to(t.template_id);
  j.at("system_text").get_to(t.system_text);
  j.at("user_text").get_to(t.user_text);
}

class TemplateError : public Error {
 public:
  using Error::Error;
};

// ============================================================================
// Rendering
// ============================================================================

/// Single-pass placeholder substitution. Unknown {names} are left verbatim.
inline std::string render_text(const std::string& text,
                               const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto open = text.find('{', pos);
    if (open == std::string::npos) {
      out.append(text, pos, std::string::npos);
      break;
    }
    auto close = text.find('}', open + 1);
    if (close == std::string::npos) {
      out.append(text, pos, std::string::npos);
      break;
    }
    out.append(text, pos, open - pos);
    std::string key = text.substr(open + 1, close - open - 1);
    auto it = values.find(key);
    if (it != values.end()) {
      out += it->second;
      pos = close + 1;
    } else {
      out += '{';
      pos = open + 1;
    }
  }
  return out;
}

inline bool has_placeholder(const PromptTemplate& t, const std::string& name) {
  return t.user_text.find("{" + name + "}") != std::string::npos;
}

/// Candidates rendered as a numbered list in sample_index order:
/// "Response 1:\n<text>\n\nResponse 2:\n..." (numbering is 1-based).
inline std::string render_candidates_block(const std::vector<CandidateResponse>& responses) {
  std::string block;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (i > 0) block += "\n\n";
    block += "Response " + std::to_string(i + 1) + ":\n" + responses[i].text;
  }
  return block;
}

inline std::string render_candidates_block(const std::vector<std::string>& texts) {
  std::string block;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (i > 0) block += "\n\n";
    block += "Response " + std::to_string(i + 1) + ":\n" + texts[i];
  }
  return block;
}

/// Per-kind instruction telling the model how to mark its final answer, so
/// the matching extraction rule can find it.
inline std::string format_instruction(TaskKind kind) {
  switch (kind) {
    case TaskKind::MathBoxed:
      return "End with the final answer inside \\boxed{}.";
    case TaskKind::GsmHash:
      return "End with a final line of the form '#### <answer>'.";
    case TaskKind::TaggedShort:
      return "Wrap the final short answer in <answer> and </answer> tags.";
    case TaskKind::FreeTextLong:
      return "Write the final answer as complete sentences.";
  }
  throw Error("unknown TaskKind");
}

// ============================================================================
// Built-in templates
// ============================================================================

/// Declaration block inserted into repair prompts via {all_incorrect_notice}.
inline const char* kAllIncorrectNotice =
    "Important: every candidate response below is known to be incorrect. "
    "Reflect on the errors in these candidates, identify any reasoning steps "
    "that remain valid, and synthesize a refined, corrected response.";

inline const char* kSynthesisUserText =
    "{context}Query: {query}\n\n"
    "Below are {candidate_count} candidate responses to the query.\n\n"
    "{candidates}\n\n"
    "First, analyze each candidate response: judge its relevance to the query "
    "and the accuracy of its reasoning. Consider how often similar answers "
    "occur, but do not rely on frequency alone; prioritize logical coherence "
    "and factual correctness, and salvage useful steps even from partially "
    "correct candidates. Then synthesize a single final response that builds "
    "on the strongest reasoning across candidates. {format_instruction}";

inline std::map<std::string, PromptTemplate> builtin_templates() {
  std::map<std::string, PromptTemplate> t;

  auto add = [&t](const std::string& id, const std::string& system,
                  const std::string& user) {
    t[id] = PromptTemplate{id, system, user};
  };

  add("policy-math_boxed", "You are a careful problem solver. Think step by step.",
      "{context}Solve the following problem. Reason step by step, then give "
      "the final answer inside \\boxed{}.\n\nProblem: {query}");
  add("policy-gsm_hash", "You are a careful problem solver. Think step by step.",
      "{context}Solve the following problem. Reason step by step, then finish "
      "with a final line of the form '#### <answer>'.\n\nProblem: {query}");
  add("policy-tagged_short", "You are a careful assistant. Think step by step.",
      "{context}Answer the following question. Reason step by step, then wrap "
      "the final short answer in <answer> and </answer> tags.\n\n"
      "Question: {query}");
  add("policy-free_text_long", "You are a careful assistant. Think step by step.",
      "{context}Answer the following question with a complete, well-formed "
      "response.\n\nQuestion: {query}");

  add("synthesis-default",
      "You are an expert answer synthesizer. You study candidate responses to "
      "a query and produce one final, high-quality response.",
      kSynthesisUserText);

  // Repair is structurally the synthesis prompt plus the all-incorrect
  // declaration in front.
  add("repair-default",
      "You are an expert answer synthesizer. You study candidate responses to "
      "a query and produce one final, high-quality response.",
      std::string("{all_incorrect_notice}\n\n") + kSynthesisUserText);

  add("usc-default",
      "You select the most consistent response from a set of candidates.",
      "{context}Query: {query}\n\n"
      "Below are {candidate_count} candidate responses to the query.\n\n"
      "{candidates}\n\n"
      "Evaluate these responses and identify the one that is most consistent "
      "with the others. Reply with the number of that response, for example: "
      "\"Response 2\".");

  add("judge-default",
      "You are a strict grader. You score answers on a scale from 1 to 10.",
      "{context}Query: {query}\n\n"
      "Reference answer: {reference}\n\n"
      "Proposed answer:\n{response}\n\n"
      "Score the proposed answer for correctness of reasoning and consistency "
      "with the reference, on a scale from 1 (completely wrong) to 10 (fully "
      "correct). Reply with the score first, then a brief justification.");

  add("scorer-default",
      "You are a strict grader. You score answers on a scale from 1 to 10.",
      "{context}Query: {query}\n\n"
      "Proposed answer:\n{response}\n\n"
      "Score this answer's quality and correctness on a scale from 1 to 10. "
      "Reply with the score first, then a brief justification.");

  return t;
}

// ============================================================================
// Registry
// ============================================================================

class TemplateRegistry {
 public:
  TemplateRegistry() : templates_(builtin_templates()) {}

  /// Loads every *.json template file from a directory; files override
  /// built-ins with the same template_id.
  void load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
      throw ConfigError("templates dir does not exist: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() != ".json") continue;
      PromptTemplate t = read_json_file(entry.path().string()).get<PromptTemplate>();
      if (t.template_id.empty())
        throw ConfigError(entry.path().string() + ": template_id is empty");
      templates_[t.template_id] = std::move(t);
    }
  }

  void put(PromptTemplate t) { templates_[t.template_id] = std::move(t); }

  const PromptTemplate& get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end())
      throw TemplateError("unknown template: '" + id + "'");
    return it->second;
  }

  bool has(const std::string& id) const { return templates_.count(id) > 0; }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

}  // namespace synthkit
