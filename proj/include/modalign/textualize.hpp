#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modalign/domain.hpp"
#include "modalign/gateway.hpp"

namespace modalign {

enum class TextStage { transformed, translated, summarized, augmented, final };

std::string_view text_stage_name(TextStage stage);
std::optional<TextStage> parse_text_stage(std::string_view name);

struct ProvenanceEntry {
  TextStage stage = TextStage::transformed;
  std::string backend_id;
  std::string model;
  std::string request_digest;

  friend bool operator==(const ProvenanceEntry&, const ProvenanceEntry&) = default;
};

struct TextSlot {
  ModalityKind modality;
  std::string text;

  friend bool operator==(const TextSlot&, const TextSlot&) = default;
};

/// Synthetic slot names used once LLM stages collapse modalities.
inline const ModalityKind kTranslatedSlot{"translated"};
inline const ModalityKind kSummarySlot{"summary"};
inline const ModalityKind kAugmentedSlot{"augmented"};

/// Textual form of one record as it moves through the pipeline.
struct StagedText {
  std::string record_id;
  /// Kept sorted by the corpus modality order.
  std::vector<TextSlot> per_modality;
  TextStage stage = TextStage::transformed;
  /// Present exactly when stage == final.
  std::optional<std::string> concat;
  /// Text an augmentation call appended, kept so parallel branches can merge.
  std::optional<std::string> appendix;
  std::vector<ProvenanceEntry> provenance;
  std::optional<Label> label;

  const std::string* find(const ModalityKind& kind) const;
  /// Newline join of the slot texts in their stored order.
  std::string merged_text() const;

  friend bool operator==(const StagedText&, const StagedText&) = default;
};

using StagedCorpus = std::vector<StagedText>;

// ---------------------------------------------------------------------------
// Tabular serialization

/// "The <column> is <value>." per non-missing cell, joined by single spaces.
/// Numeric values use the shortest round-trip decimal; a column unit is
/// appended to the value. Throws ContractError when every cell is missing.
std::string serialize_tabular(const TabularPayload& payload);

/// Inverse of serialize_tabular for values that never contain
/// ". The " (the injectivity caveat).
std::vector<std::pair<std::string, std::string>> parse_tabular_clauses(std::string_view text);

// ---------------------------------------------------------------------------
// Captioning

struct CaptionResult {
  std::string text;
  std::optional<ProvenanceEntry> provenance;
};

class CaptionError : public Error {
 public:
  using Error::Error;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual CaptionResult caption(const ImagePayload& image) = 0;
};

/// Mock captioner. Reads the sidecar annotation "<image path>.txt": each
/// non-empty line is one visual phrase and the caption is
/// "The image shows <p1>, <p2> and <p3>." A sidecar starting with "caption:"
/// is returned verbatim after the prefix.
class SidecarCaptioner : public Captioner {
 public:
  CaptionResult caption(const ImagePayload& image) override;
  static std::filesystem::path sidecar_path(const ImagePayload& image);
};

/// Captions through the gateway (live vision provider or replay fixtures).
class GatewayCaptioner : public Captioner {
 public:
  GatewayCaptioner(Gateway& gateway, std::string backend_id, std::string model,
                   SamplingDefaults sampling = kCaptionSampling);
  CaptionResult caption(const ImagePayload& image) override;

  ChatRequest build_request(const ImagePayload& image) const;

 private:
  Gateway& gateway_;
  std::string backend_id_;
  std::string model_;
  SamplingDefaults sampling_;
};

// ---------------------------------------------------------------------------
// Record transformation

/// Text for every modality the view exposes: text copied byte-for-byte,
/// tabular serialized, images captioned.
StagedText transform_record(const RecordView& view, Captioner& captioner, const ModalityOrder& order = {});

/// Final-stage text: slot texts joined by "\n" in `order`.
StagedText concat_in_order(const StagedText& staged, const ModalityOrder& order = {});

// ---------------------------------------------------------------------------
// Staged corpus files: one JSON object per line.

std::string corpus_line(const StagedText& staged);
StagedText parse_corpus_line(std::string_view line);
void write_corpus(const std::filesystem::path& path, const StagedCorpus& corpus);
StagedCorpus read_corpus(const std::filesystem::path& path);

}  // namespace modalign
