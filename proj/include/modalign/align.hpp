#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "modalign/domain.hpp"
#include "modalign/gateway.hpp"
#include "modalign/prompt_protocol.hpp"
#include "modalign/textualize.hpp"

namespace modalign {

/// Replaces every {{name}} in `text`. Throws ContractError naming the first
/// placeholder without a binding.
std::string render_placeholders(std::string_view text, const std::map<std::string, std::string>& bindings);

/// System text plus the user-turn instruction of one stage. `{{marker}}` is
/// always bound to the stage marker.
struct PromptTemplate {
  LlmStage stage = LlmStage::translate;
  std::string system;
  std::string instruction;

  std::string render_system(std::map<std::string, std::string> bindings) const;
  std::string render_instruction(std::map<std::string, std::string> bindings) const;
};

struct TemplateSet {
  PromptTemplate translate;
  PromptTemplate summarize;
  PromptTemplate augment;

  static TemplateSet defaults();
  /// Loads "<stage>.system.txt" / "<stage>.user.txt" from `dir` (stage in
  /// lowercase); missing files keep the default text.
  static TemplateSet load(const std::filesystem::path& dir);
  /// Writes the current templates in the layout `load` reads.
  void save(const std::filesystem::path& dir) const;

  const PromptTemplate& get(LlmStage stage) const;
};

/// One in-context example: source-style input and its target-style output.
struct Demonstration {
  std::string input;
  std::string output;
  LlmStage stage = LlmStage::translate;

  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

struct StageSettings {
  std::string backend_id = "llm";
  std::string model = "mock";
  SamplingDefaults sampling = kStageSampling;
};

enum class ErrorPolicy { fail_fast, skip_and_log };
enum class CorpusSide { training, inference };

/// A stage failed on one record.
class StageError : public Error {
 public:
  StageError(std::string record_id, const std::string& what)
      : Error("record '" + record_id + "': " + what), record_id_(std::move(record_id)) {}
  const std::string& record_id() const { return record_id_; }

 private:
  std::string record_id_;
};

struct StageContext {
  Gateway& gateway;
  StageSettings settings;
  TemplateSet templates = TemplateSet::defaults();
  ErrorPolicy policy = ErrorPolicy::fail_fast;
  /// Records processed concurrently; the gateway bound still applies.
  std::size_t workers = 1;
};

// ---------------------------------------------------------------------------
// Translation

inline constexpr std::size_t kTranslationShots = 3;

struct TranslationTarget {
  ModalitySet source_modalities;
  ModalitySet target_modalities;
};

ChatRequest build_translation_prompt(const StagedText& source, std::span<const Demonstration> exemplars,
                                     const TranslationTarget& target, const StageSettings& settings,
                                     const TemplateSet& templates);

struct TranslateOptions {
  TranslationTarget target;
  std::uint64_t seed = 7;
  CorpusSide side = CorpusSide::inference;
  /// Reject training-side corpora.
  bool inference_only_guard = true;
};

/// Indices of the exemplars drawn for `record_id`: three distinct pool
/// positions from a generator seeded by (seed, record id).
std::vector<std::size_t> select_exemplars(std::size_t pool_size, std::uint64_t seed, std::string_view record_id);

StagedCorpus translate_stage(const StagedCorpus& corpus, std::span<const Demonstration> exemplar_pool,
                             const TranslateOptions& options, StageContext& ctx);

// ---------------------------------------------------------------------------
// Summarization

ChatRequest build_summary_request(const std::string& input, const Demonstration* demonstration,
                                  const StageSettings& settings, const TemplateSet& templates);

/// Zero-shot summary of `sample`, packaged as the one-shot demonstration.
Demonstration build_summary_demonstration(const StagedText& sample, StageContext& ctx);

StagedCorpus summarize_stage(const StagedCorpus& corpus, const Demonstration& demonstration, StageContext& ctx);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentOptions {
  bool enabled = true;
  /// When non-empty, appended sentences mentioning any of these terms are
  /// removed (label-leakage study). Matching is case-insensitive, whole word.
  std::vector<std::string> strip_terms;
};

ChatRequest build_augment_request(const std::string& input, const std::string& task_description,
                                  const StageSettings& settings, const TemplateSet& templates);

StagedCorpus augment_stage(const StagedCorpus& corpus, const std::string& task_description,
                           const AugmentOptions& options, StageContext& ctx);

/// Joins the outputs of summarization and augmentation run on the same
/// input: summary text + "\n" + augmentation appendix.
StagedCorpus merge_parallel(const StagedCorpus& summarized, const StagedCorpus& augmented);

}  // namespace modalign
