#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "modalign/gateway.hpp"

namespace modalign {

/// Phrase-level world knowledge for the rule-based mock: when `phrase`
/// occurs in a translation source the mock emits "The <key> is <value>.".
struct KnowledgeEntry {
  std::string phrase;
  std::string key;
  std::string value;
};

class MockKnowledge {
 public:
  MockKnowledge() = default;
  explicit MockKnowledge(std::vector<KnowledgeEntry> entries) : entries_(std::move(entries)) {}

  /// JSON: [{"phrase": ..., "key": ..., "value": ...}, ...]
  static MockKnowledge load(const std::filesystem::path& path);

  const std::vector<KnowledgeEntry>& entries() const { return entries_; }

 private:
  std::vector<KnowledgeEntry> entries_;
};

/// Raised when a request's final user turn carries no known stage marker.
class UnknownStageMarker : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Deterministic stand-in LLM. Dispatches on the stage marker opening the
/// final user turn and rewrites the text found between <input> tags:
///
///  TRANSLATE  splits the source into segments (newlines, ';', ',', a period
///             followed by whitespace, and the word "and"). Each segment is
///             re-emitted as "The <key> is <value>." clauses, taking the
///             first rule that applies:
///               1. knowledge phrases and values of exemplar clauses found in
///                  the segment, in order of position;
///               2. a "<key> is <value>" or "<key>: <value>" pattern;
///               3. otherwise "The Detail is <segment>.".
///             Duplicate clauses are dropped.
///  SUMMARIZE  splits into sentences and drops every sentence whose content
///             words are already covered by earlier ones; the rest are joined
///             into one paragraph.
///  AUGMENT    returns a single rationale sentence naming the task-description
///             keywords that occur in the input, or a fixed neutral sentence
///             when none do.
Completion mock_rulebased(const ChatRequest& request, const MockKnowledge& knowledge = {});

class MockLlmProvider : public Provider {
 public:
  explicit MockLlmProvider(MockKnowledge knowledge = {}) : knowledge_(std::move(knowledge)) {}
  ProviderReply invoke(const ChatRequest& request) override;

 private:
  MockKnowledge knowledge_;
};

namespace mock_rules {

std::string translate(std::string_view source, const std::vector<std::string>& exemplar_outputs,
                      const MockKnowledge& knowledge);
std::string summarize(std::string_view text);
std::string augment(std::string_view text, std::string_view task_description);

/// Lowercase alphanumeric words that are not stopwords.
std::vector<std::string> content_words(std::string_view text);

inline constexpr std::string_view kNeutralRationale =
    "Reasoning: the description contains no specific indicators for this task, so no strong prediction can be made.";

}  // namespace mock_rules

}  // namespace modalign
