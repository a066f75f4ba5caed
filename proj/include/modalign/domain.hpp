#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "modalign/error.hpp"

namespace modalign {

/// Tag naming one input data family. The built-in kinds sort in the fixed
/// canonical order text < image < tabular; custom tags sort after them,
/// lexicographically.
class ModalityKind {
 public:
  ModalityKind() = default;
  explicit ModalityKind(std::string tag);

  static ModalityKind text() { return ModalityKind("text"); }
  static ModalityKind image() { return ModalityKind("image"); }
  static ModalityKind tabular() { return ModalityKind("tabular"); }

  const std::string& tag() const { return tag_; }
  bool is_builtin() const { return builtin_rank() < 3; }

  /// 0, 1, 2 for the built-ins, 3 for anything else.
  int builtin_rank() const;

  friend std::strong_ordering operator<=>(const ModalityKind& a, const ModalityKind& b);
  friend bool operator==(const ModalityKind& a, const ModalityKind& b) { return a.tag_ == b.tag_; }

 private:
  std::string tag_;
};

using ModalitySet = std::set<ModalityKind>;

/// Parses "text+image" or "text,image" style lists.
ModalitySet parse_modality_set(const std::string& spec);
std::string to_string(const ModalitySet& set);

/// Ordering used when concatenating per-modality texts. Defaults to the
/// canonical order; datasets may override it.
class ModalityOrder {
 public:
  ModalityOrder();
  explicit ModalityOrder(std::vector<ModalityKind> order);

  /// Position of `kind`; kinds not listed rank after all listed ones.
  std::size_t rank(const ModalityKind& kind) const;
  const std::vector<ModalityKind>& kinds() const { return order_; }

 private:
  std::vector<ModalityKind> order_;
};

enum class ScenarioMode { strict_mismatch, overlap_allowed };

struct MismatchScenario {
  std::vector<ModalityKind> universe;
  ModalitySet train_set;
  ModalitySet test_set;
  ScenarioMode mode = ScenarioMode::strict_mismatch;
};

struct ScenarioReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks every scenario invariant, returning one message per failure.
ScenarioReport validate_scenario(const MismatchScenario& scenario);

/// Every ordered (train, test) pair of disjoint non-empty subsets of the
/// universe, in a deterministic order. Twelve pairs for three modalities.
std::vector<MismatchScenario> all_mismatch_scenarios(const std::vector<ModalityKind>& universe);

// ---------------------------------------------------------------------------
// Records

enum class ValueKind { numeric, categorical, missing };

struct TabularCell {
  std::string column;
  /// Raw cell text exactly as ingested.
  std::string raw;
  ValueKind kind = ValueKind::categorical;
  std::optional<double> number;
  std::optional<std::string> unit;
};

struct TabularPayload {
  std::vector<TabularCell> cells;
};

struct TextPayload {
  std::string text;
};

struct ImagePayload {
  /// Reference as written in the manifest; this is what cache keys see.
  std::string reference;
  /// Reference resolved against the manifest directory.
  std::filesystem::path resolved;
  bool exists = false;
};

using Payload = std::variant<TextPayload, ImagePayload, TabularPayload>;

/// Class index for classification or real target for regression.
using Label = std::variant<std::size_t, double>;

inline bool is_class_label(const Label& label) { return std::holds_alternative<std::size_t>(label); }
std::size_t class_of(const Label& label);
double value_of(const Label& label);

struct Record {
  std::string id;
  std::map<ModalityKind, Payload> payloads;
  Label label;
};

enum class TaskKind { classification, regression };

struct Task {
  TaskKind kind = TaskKind::classification;
  std::size_t num_classes = 2;

  static Task classification(std::size_t k) { return {TaskKind::classification, k}; }
  static Task regression() { return {TaskKind::regression, 0}; }
  std::size_t output_width() const { return kind == TaskKind::classification ? num_classes : 1; }
};

enum class ColumnKind { numeric, categorical };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::categorical;
  std::optional<std::string> unit;
};

struct TableSchema {
  std::vector<ColumnSpec> columns;
  std::string label_column;
  std::optional<std::string> id_column;
  /// tabular -> columns forming the table; image -> one path column;
  /// text -> one or more free-text columns (joined by a space).
  std::map<ModalityKind, std::vector<std::string>> modality_columns;

  const ColumnSpec* find_column(const std::string& name) const;
  /// Throws ConfigError when names repeat or a selector does not resolve.
  void validate() const;
};

struct Dataset {
  std::string name;
  Task task;
  TableSchema schema;
  std::vector<Record> records;
  std::filesystem::path manifest_path;

  /// Throws ContractError on duplicate ids, out-of-range labels, or a
  /// label whose type disagrees with the task.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Views

/// Non-owning window onto one record exposing only an allowed modality subset.
class RecordView {
 public:
  RecordView(const Record& record, const ModalitySet& allowed) : record_(&record), allowed_(&allowed) {}

  const std::string& id() const { return record_->id; }
  const Label& label() const { return record_->label; }
  const ModalitySet& modalities() const { return *allowed_; }
  bool has_payload(const ModalityKind& kind) const;
  /// Throws ModalityMasked if `kind` is outside the allowed subset and
  /// ContractError if the record has no payload for it.
  const Payload& payload(const ModalityKind& kind) const;

 private:
  const Record* record_;
  const ModalitySet* allowed_;
};

/// Index list into a shared dataset plus the subset of modalities it may see.
class DatasetView {
 public:
  DatasetView() = default;
  DatasetView(std::shared_ptr<const Dataset> dataset, std::vector<std::size_t> indices, ModalitySet allowed);

  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  RecordView operator[](std::size_t i) const;
  std::vector<std::string> ids() const;
  const ModalitySet& modalities() const { return *allowed_; }
  const Dataset& dataset() const { return *dataset_; }
  const std::vector<std::size_t>& indices() const { return indices_; }

  /// Same records, different modality window.
  DatasetView with_modalities(ModalitySet allowed) const;
  /// Records [begin, end) of this view.
  DatasetView slice(std::size_t begin, std::size_t end) const;

 private:
  std::shared_ptr<const Dataset> dataset_;
  std::vector<std::size_t> indices_;
  // Shared so RecordViews stay valid when the view itself is moved.
  std::shared_ptr<const ModalitySet> allowed_;
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 7;
};

/// Seeded shuffle then split. The train view sees only the train subset,
/// the test view only the test subset.
std::pair<DatasetView, DatasetView> scenario_views(std::shared_ptr<const Dataset> dataset,
                                                   const MismatchScenario& scenario, const SplitSpec& split);

// ---------------------------------------------------------------------------
// Manifest ingestion

enum class ImagePolicy { warn_and_keep, fail };
enum class ManifestFormat { automatic, delimited, json_lines };

struct IngestOptions {
  Task task;
  std::string name;
  char delimiter = ',';
  ManifestFormat format = ManifestFormat::automatic;
  ImagePolicy image_policy = ImagePolicy::warn_and_keep;
};

Dataset load_dataset(const std::filesystem::path& manifest_path, const TableSchema& schema,
                     const IngestOptions& options);

/// Writes the dataset back as delimited text using the raw cell values.
void write_manifest(const Dataset& dataset, const std::filesystem::path& path, char delimiter = ',');

/// Reads a schema from its structured (JSON) config form.
TableSchema load_schema(const std::filesystem::path& path);
TableSchema parse_schema(const std::string& json_text);

}  // namespace modalign
