#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "modalign/domain.hpp"
#include "modalign/nn/train.hpp"
#include "modalign/pipeline.hpp"

namespace modalign {

/// (measured - baseline) / baseline. Throws ContractError for a zero baseline.
double relative_gain(double measured, double baseline);

double metric_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);
double metric_mse(std::span<const double> predictions, std::span<const double> labels);
double metric_rmse(std::span<const double> predictions, std::span<const double> labels);

enum class Metric { accuracy, mse, rmse };

std::string_view metric_name(Metric metric);
Metric parse_metric(std::string_view name);
/// Accuracy is better when larger, error metrics when smaller.
bool higher_is_better(Metric metric);

/// Mean Euclidean distance over every (row of a, row of b) pair.
template <typename DerivedA, typename DerivedB>
double mean_pairwise_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.rows() == 0 || b.rows() == 0) throw ContractError("mean_pairwise_distance: empty group");
  if (a.cols() != b.cols()) throw ShapeError("mean_pairwise_distance: dimension mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      total += (a.row(i).template cast<double>() - b.row(j).template cast<double>()).norm();
  return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

/// Feature rows: the mean embedding vector of each text's real tokens.
Eigen::MatrixXd embedding_features(const nn::Tokenizer& tokenizer, const nn::DownstreamModel<float>& model,
                                   std::span<const std::string> texts);

/// "id,group,v0,...,v{d-1}" header then one line per point.
std::string points_csv(std::span<const std::string> ids, std::span<const std::string> groups,
                       const Eigen::MatrixXd& points);
void export_points(const std::filesystem::path& path, std::span<const std::string> ids,
                   std::span<const std::string> groups, const Eigen::MatrixXd& points);

// ---------------------------------------------------------------------------
// Experiments

/// Everything a scenario run needs besides the scenario and the pipeline.
struct Experiment {
  std::shared_ptr<const Dataset> dataset;
  std::string task_description;
  Metric metric = Metric::accuracy;
  SplitSpec split;
  /// Share of the training view held out for early stopping.
  double validation_fraction = 0.2;
  nn::ModelConfig model;
  nn::TokenizerConfig tokenizer;
  nn::TrainConfig training;
  ModalityOrder order;
};

struct RunEnvironment {
  Gateway& gateway;
  Captioner& captioner;
};

struct ScenarioOutcome {
  std::string metric;
  double value = 0.0;
  PipelineOutput pipeline;
  nn::History history;
  std::vector<nn::Prediction> predictions;
  std::shared_ptr<const nn::TrainedModel> trained;
};

std::string scenario_label(const MismatchScenario& scenario);

/// Final texts with their labels; throws ContractError on an unlabelled record.
std::vector<nn::LabeledText> labeled_corpus(const StagedCorpus& corpus);

/// Train-side pipeline, training, test-side pipeline, prediction, metric.
ScenarioOutcome run_scenario(const Experiment& experiment, const MismatchScenario& scenario,
                             const PipelineConfig& pipeline, const RunEnvironment& env);

struct MatrixRow {
  std::string train_set;
  std::string test_set;
  std::string preset;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string error;
};

struct PresetSummary {
  std::string preset;
  std::size_t rows = 0;
  double mean = 0.0;
  /// Population variance over the preset's rows.
  double variance = 0.0;
};

struct MatrixReport {
  std::vector<MatrixRow> rows;
  std::vector<std::string> presets;
  Metric metric = Metric::accuracy;

  /// Recomputed from `rows` on every call; failed rows are excluded.
  std::vector<PresetSummary> summaries() const;
  /// Gain of row `i` over the best other preset of the same scenario, when
  /// that preset has a non-zero value.
  std::optional<double> gain_over_best_other(std::size_t i) const;

  /// One line per row, then one "average" line per preset. Wall time is left
  /// out so reruns are byte-identical; see timings_csv.
  std::string to_csv() const;
  std::string timings_csv() const;
  nlohmann::json to_json() const;
};

struct MatrixOptions {
  /// Parallel scenario runs; each run stays single-threaded.
  std::size_t threads = 1;
  bool fail_fast = true;
};

/// Scenario-major Cartesian product of scenarios and presets.
MatrixReport run_matrix(const Experiment& experiment, const std::vector<MismatchScenario>& scenarios,
                        const std::vector<PipelineConfig>& presets, const RunEnvironment& env,
                        const MatrixOptions& options = {});

// ---------------------------------------------------------------------------
// Distance diagnostic

struct DistanceDiagnostic {
  /// Inference-side transformed texts against training-side transformed texts.
  double before = 0.0;
  /// The same groups after the alignment stages (translation, summarization).
  double after = 0.0;
  std::vector<std::string> ids_before, groups_before, ids_after, groups_after;
  Eigen::MatrixXd points_before, points_after;
};

/// Runs the pipeline for `scenario` and measures both distances in the
/// feature space of a model initialised from `feature_seed`.
DistanceDiagnostic diagnose_distance(const Experiment& experiment, const MismatchScenario& scenario,
                                     const PipelineConfig& pipeline, const RunEnvironment& env,
                                     std::uint64_t feature_seed = 7);

}  // namespace modalign
