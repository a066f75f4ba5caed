#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modalign/eval.hpp"
#include "modalign/gateway.hpp"
#include "modalign/pipeline.hpp"
#include "modalign/textualize.hpp"

namespace modalign {

enum class BackendKind { http, replay, mock };

struct BackendConfig {
  std::string id;
  BackendKind kind = BackendKind::mock;
  std::string endpoint;
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string auth_env = "OPENAI_API_KEY";
  std::size_t concurrency = 4;
  std::optional<std::filesystem::path> cache_dir;
  /// Phrase lexicon for the rule-based mock.
  std::optional<std::filesystem::path> knowledge;
  bool record = false;
  int timeout_seconds = 120;
};

struct DatasetConfig {
  std::filesystem::path manifest;
  std::filesystem::path schema;
  Task task;
  Metric metric = Metric::accuracy;
  std::string name;
  std::string task_description;
  char delimiter = ',';
  ManifestFormat format = ManifestFormat::automatic;
  ImagePolicy image_policy = ImagePolicy::warn_and_keep;
  SplitSpec split;
  std::optional<std::vector<ModalityKind>> order;
};

/// One experiment bundle, parsed strictly: unknown keys are errors and
/// relative paths resolve against the config file's directory.
struct RunConfig {
  std::filesystem::path base_dir;
  DatasetConfig dataset;
  std::map<std::string, BackendConfig> backends;
  PipelineConfig pipeline;
  /// "sidecar" or the id of a vision backend.
  std::string caption_backend = "sidecar";
  std::string caption_model;
  std::vector<std::string> matrix_presets;
  std::size_t matrix_threads = 1;
  nn::TrainConfig training;
  nn::ModelConfig model;
  nn::TokenizerConfig tokenizer;
  double validation_fraction = 0.2;
  std::vector<MismatchScenario> scenarios;
  std::filesystem::path output_dir;
};

/// Sets the dotted `key` ("training.epochs") in `root`; the value is read
/// as JSON when it parses, otherwise as a string.
void apply_override(nlohmann::json& root, const std::string& assignment);

RunConfig parse_run_config(const nlohmann::json& root, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Gateway, captioner and loaded dataset for a config. `mode` overrides
/// every backend: mock swaps in the rule-based LLM and sidecar captions,
/// replay serves only from cache directories, live requires endpoints.
struct Runtime {
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<Captioner> captioner;
  Experiment experiment;

  RunEnvironment environment() { return {*gateway, *captioner}; }
};

Runtime build_runtime(const RunConfig& config, std::optional<RunMode> mode = std::nullopt);

}  // namespace modalign
