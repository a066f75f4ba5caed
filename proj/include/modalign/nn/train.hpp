#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modalign/domain.hpp"
#include "modalign/nn/model.hpp"
#include "modalign/nn/tokenizer.hpp"

namespace modalign::nn {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::uint64_t seed = 7;
  double clip_norm = 1.0;
  /// Epochs without a validation-loss improvement before stopping.
  std::size_t patience = 5;
  /// Stop once validation accuracy reaches this value (classification).
  std::optional<double> target_accuracy;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct LabeledText {
  std::string id;
  std::string text;
  Label label;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  /// Accuracy for classification, RMSE for regression.
  double val_metric = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct History {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  /// "epoch,train_loss,val_loss,val_metric" with round-trip numbers.
  std::string to_csv() const;
  static History from_csv(std::string_view csv);

  friend bool operator==(const History&, const History&) = default;
};

struct TrainedModel {
  Tokenizer tokenizer;
  DownstreamModel<float> model;
  History history;
};

/// Builds the tokenizer (learning a vocabulary when configured), sizes the
/// model to it and optimises on `train`, keeping the weights of the epoch
/// with the lowest validation loss.
TrainedModel train(ModelConfig model_config, const TokenizerConfig& tokenizer_config, const TrainConfig& train_config,
                   std::span<const LabeledText> train, std::span<const LabeledText> validation);

struct Prediction {
  std::string id;
  std::vector<double> output;
  /// Argmax class, lowest index on ties; empty for regression.
  std::optional<std::size_t> label;
};

std::vector<Prediction> predict(const TrainedModel& trained, std::span<const LabeledText> corpus);

/// Mean loss and metric of the model over a labelled corpus.
EpochStats evaluate(const TrainedModel& trained, std::span<const LabeledText> corpus);

// ---------------------------------------------------------------------------
// Checkpoints: "MDLG" magic, u32 version, u32 header length, JSON header
// (model + tokenizer config, vocabulary, tensor names), then per tensor
// u32 rows, u32 cols and row-major little-endian f32 values.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& trained);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace modalign::nn
