#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "modalign/align.hpp"
#include "modalign/domain.hpp"
#include "modalign/textualize.hpp"

namespace modalign {

/// Stage switches for one run. Transformation is always on.
struct PipelineConfig {
  std::string preset = "full";
  bool translation = true;
  bool summarization = true;
  bool augmentation = true;
  /// Inference side: summarize first, then translate the summary.
  bool summarize_before_translate = false;
  StageSettings llm;
  std::uint64_t seed = 7;
  /// Training records drawn (seeded) as translation exemplar candidates.
  std::size_t exemplar_pool_size = 16;
  std::vector<std::string> strip_terms;
  ErrorPolicy policy = ErrorPolicy::fail_fast;
  std::size_t workers = 1;
  TemplateSet templates = TemplateSet::defaults();

  void validate() const;
};

/// "transform-only", "transform+summarize", "transform+summarize+augment",
/// "full" (the last adds translation).
const std::vector<std::string>& preset_names();
PipelineConfig make_preset(std::string_view name, PipelineConfig base = {});

struct StagedSide {
  /// Corpora after each applied stage, in application order; the last one
  /// is at stage final.
  std::vector<std::pair<std::string, StagedCorpus>> stages;

  const StagedCorpus& final_corpus() const { return stages.back().second; }
  const StagedCorpus* find(std::string_view stage) const;
};

struct PipelineOutput {
  StagedSide train;
  StagedSide test;
  bool translated = false;
};

struct PipelineInputs {
  const DatasetView& train_view;
  const DatasetView& test_view;
  std::string task_description;
  Gateway& gateway;
  Captioner& captioner;
  ModalityOrder order = {};
};

/// Transforms the train view and applies summarize/augment; transforms the
/// test view and applies translate (when the test subset is not contained
/// in the train subset) then summarize/augment; both sides end at final.
PipelineOutput run_pipeline(const PipelineInputs& inputs, const PipelineConfig& config);

/// Transform stage only, over every record of the view.
StagedCorpus transform_view(const DatasetView& view, Captioner& captioner, const ModalityOrder& order = {},
                            ErrorPolicy policy = ErrorPolicy::fail_fast);

/// Translation exemplars: the first `pool_size` records of the seeded
/// shuffle of `train_view`, each rendered through the test modalities
/// (input) and the train modalities (output). Records lacking a test
/// modality payload are skipped.
std::vector<Demonstration> exemplar_pool(const DatasetView& train_view, const ModalitySet& test_modalities,
                                         Captioner& captioner, std::size_t pool_size, std::uint64_t seed,
                                         const ModalityOrder& order = {});

}  // namespace modalign
