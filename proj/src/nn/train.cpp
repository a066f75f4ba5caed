#include "modalign/nn/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "modalign/error.hpp"
#include "modalign/nn/optim.hpp"
#include "modalign/util/rng.hpp"
#include "modalign/util/strings.hpp"

namespace modalign::nn {
namespace {

template <typename T>
void read_field(const nlohmann::json& value, T& out, std::string_view section, const std::string& key) {
  try {
    out = value.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(fmt::format("{}: field '{}' has the wrong type", section, key));
  }
}

struct EncodedCorpus {
  std::vector<Encoded> inputs;
  std::vector<Label> labels;
};

EncodedCorpus encode_all(const Tokenizer& tokenizer, std::span<const LabeledText> corpus) {
  EncodedCorpus out;
  out.inputs.reserve(corpus.size());
  out.labels.reserve(corpus.size());
  for (const auto& item : corpus) {
    out.inputs.push_back(tokenizer.encode(item.text, false));
    out.labels.push_back(item.label);
  }
  return out;
}

EpochStats evaluate_encoded(const DownstreamModel<float>& model, const EncodedCorpus& corpus) {
  EpochStats stats;
  if (corpus.inputs.empty()) return stats;
  double loss = 0.0;
  double metric = 0.0;
  const bool classify = model.config.task.kind == TaskKind::classification;
  for (std::size_t i = 0; i < corpus.inputs.size(); ++i) {
    const auto& e = corpus.inputs[i];
    const RowVec<float> out = forward_sample(model, std::span<const std::int32_t>(e.ids), std::span<const std::uint8_t>(e.mask));
    loss += static_cast<double>(sample_loss<float>(out, corpus.labels[i], model.config.task));
    if (classify) {
      metric += argmax(out) == class_of(corpus.labels[i]) ? 1.0 : 0.0;
    } else {
      const double diff = static_cast<double>(out(0)) - value_of(corpus.labels[i]);
      metric += diff * diff;
    }
  }
  const auto n = static_cast<double>(corpus.inputs.size());
  stats.val_loss = loss / n;
  stats.val_metric = classify ? metric / n : std::sqrt(metric / n);
  return stats;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("model: vocab_size must be at least 2");
  if (d_model == 0 || heads == 0 || ff_width == 0 || head_hidden == 0 || max_sequence_length == 0) {
    throw ConfigError("model: widths, heads and max_sequence_length must be positive");
  }
  if (d_model % heads != 0) throw ConfigError("model: d_model must be divisible by heads");
  if (task.kind == TaskKind::classification && task.num_classes < 2) {
    throw ConfigError("model: classification needs at least two classes");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"d_model", c.d_model},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ff_width", c.ff_width},
          {"head_hidden", c.head_hidden},
          {"max_sequence_length", c.max_sequence_length},
          {"task", c.task.kind == TaskKind::classification ? "classification" : "regression"},
          {"num_classes", c.task.num_classes}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  ModelConfig c;
  std::string task = "classification";
  std::size_t classes = c.task.num_classes;
  for (const auto& [key, value] : j.items()) {
    if (key == "vocab_size") read_field(value, c.vocab_size, "model", key);
    else if (key == "d_model") read_field(value, c.d_model, "model", key);
    else if (key == "layers") read_field(value, c.layers, "model", key);
    else if (key == "heads") read_field(value, c.heads, "model", key);
    else if (key == "ff_width") read_field(value, c.ff_width, "model", key);
    else if (key == "head_hidden") read_field(value, c.head_hidden, "model", key);
    else if (key == "max_sequence_length") read_field(value, c.max_sequence_length, "model", key);
    else if (key == "task") read_field(value, task, "model", key);
    else if (key == "num_classes") read_field(value, classes, "model", key);
    else throw ConfigError("model: unknown key '" + key + "'");
  }
  if (task == "classification") c.task = Task::classification(classes);
  else if (task == "regression") c.task = Task::regression();
  else throw ConfigError("model: unknown task '" + task + "'");
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("training: learning_rate must be >= 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("training: betas must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("training: epsilon must be positive");
  if (batch_size == 0 || epochs == 0 || patience == 0) {
    throw ConfigError("training: batch_size, epochs and patience must be positive");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("training: clip_norm must be positive");
  if (target_accuracy && !(*target_accuracy > 0.0 && *target_accuracy <= 1.0)) {
    throw ConfigError("training: target_accuracy must lie in (0, 1]");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"learning_rate", c.learning_rate}, {"beta1", c.beta1},         {"beta2", c.beta2},
                   {"epsilon", c.epsilon},             {"batch_size", c.batch_size}, {"epochs", c.epochs},
                   {"seed", c.seed},                   {"clip_norm", c.clip_norm},   {"patience", c.patience}};
  if (c.target_accuracy) j["target_accuracy"] = *c.target_accuracy;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training: expected an object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") read_field(value, c.learning_rate, "training", key);
    else if (key == "beta1") read_field(value, c.beta1, "training", key);
    else if (key == "beta2") read_field(value, c.beta2, "training", key);
    else if (key == "epsilon") read_field(value, c.epsilon, "training", key);
    else if (key == "batch_size") read_field(value, c.batch_size, "training", key);
    else if (key == "epochs") read_field(value, c.epochs, "training", key);
    else if (key == "seed") read_field(value, c.seed, "training", key);
    else if (key == "clip_norm") read_field(value, c.clip_norm, "training", key);
    else if (key == "patience") read_field(value, c.patience, "training", key);
    else if (key == "target_accuracy") {
      double v = 0;
      read_field(value, v, "training", key);
      c.target_accuracy = v;
    } else {
      throw ConfigError("training: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::string History::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,val_metric\n";
  for (const auto& e : epochs) {
    out += fmt::format("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_metric);
  }
  return out;
}

History History::from_csv(std::string_view csv) {
  History h;
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line) || util::trim(line) != "epoch,train_loss,val_loss,val_metric") {
    throw ContractError("history: unexpected header");
  }
  while (std::getline(in, line)) {
    if (util::trim(line).empty()) continue;
    const auto cells = util::split(line, ',');
    if (cells.size() != 4) throw ContractError("history: malformed row '" + line + "'");
    h.epochs.push_back({std::stoul(cells[0]), std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])});
  }
  if (!h.epochs.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < h.epochs.size(); ++i)
      if (h.epochs[i].val_loss < h.epochs[best].val_loss) best = i;
    h.best_epoch = h.epochs[best].epoch;
  }
  return h;
}

TrainedModel train(ModelConfig model_config, const TokenizerConfig& tokenizer_config, const TrainConfig& config,
                   std::span<const LabeledText> train_set, std::span<const LabeledText> validation) {
  config.validate();
  if (train_set.empty()) throw ContractError("train: empty training corpus");
  if (validation.empty()) throw ContractError("train: empty validation corpus");

  Tokenizer tokenizer(tokenizer_config);
  if (tokenizer_config.mode == VocabMode::learned) {
    std::vector<std::string> texts;
    texts.reserve(train_set.size());
    for (const auto& item : train_set) texts.push_back(item.text);
    tokenizer = Tokenizer::learn(tokenizer_config, texts);
  }
  model_config.vocab_size = tokenizer.vocab_size();
  model_config.max_sequence_length = tokenizer_config.max_sequence_length;

  TrainedModel result{tokenizer, DownstreamModel<float>(model_config, util::mix_seed(config.seed, 1)), {}};
  auto& model = result.model;
  const EncodedCorpus train_data = encode_all(tokenizer, train_set);
  const EncodedCorpus val_data = encode_all(tokenizer, validation);

  auto params = model.parameters();
  Adam<float> optimizer(params, {config.learning_rate, config.beta1, config.beta2, config.epsilon});

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<float> sample_losses(train_set.size());
  DownstreamModel<float> best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    util::Rng rng(util::mix_seed(config.seed, 1000 + epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Encoded> inputs;
      std::vector<Label> labels;
      for (std::size_t i = start; i < end; ++i) {
        inputs.push_back(train_data.inputs[order[i]]);
        labels.push_back(train_data.labels[order[i]]);
      }
      zero_grads(params);
      std::vector<float> losses;
      const float loss = loss_and_backward(model, make_batch(inputs), labels, &losses);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged(fmt::format("training diverged at epoch {}, batch starting at {}: loss {}", epoch, start, loss));
      }
      for (std::size_t i = start; i < end; ++i) sample_losses[order[i]] = losses[i - start];
      clip_grad_norm(params, config.clip_norm);
      optimizer.step(params);
    }
    double train_loss = 0.0;
    for (const float l : sample_losses) train_loss += static_cast<double>(l);
    EpochStats stats = evaluate_encoded(model, val_data);
    stats.epoch = epoch;
    stats.train_loss = train_loss / static_cast<double>(sample_losses.size());
    if (!std::isfinite(stats.val_loss)) throw TrainingDiverged(fmt::format("validation loss diverged at epoch {}", epoch));
    result.history.epochs.push_back(stats);

    if (stats.val_loss < best_loss) {
      best_loss = stats.val_loss;
      best = model;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.history.stopped_early = true;
      break;
    }
    if (config.target_accuracy && model_config.task.kind == TaskKind::classification &&
        stats.val_metric >= *config.target_accuracy) {
      result.history.stopped_early = epoch < config.epochs;
      break;
    }
  }
  model = std::move(best);
  return result;
}

std::vector<Prediction> predict(const TrainedModel& trained, std::span<const LabeledText> corpus) {
  std::vector<Prediction> out;
  out.reserve(corpus.size());
  for (const auto& item : corpus) {
    const Encoded e = trained.tokenizer.encode(item.text, false);
    const RowVec<float> row =
        forward_sample(trained.model, std::span<const std::int32_t>(e.ids), std::span<const std::uint8_t>(e.mask));
    Prediction p{item.id, {}, std::nullopt};
    for (Eigen::Index i = 0; i < row.size(); ++i) p.output.push_back(static_cast<double>(row(i)));
    if (trained.model.config.task.kind == TaskKind::classification) p.label = argmax(row);
    out.push_back(std::move(p));
  }
  return out;
}

EpochStats evaluate(const TrainedModel& trained, std::span<const LabeledText> corpus) {
  return evaluate_encoded(trained.model, encode_all(trained.tokenizer, corpus));
}

}  // namespace modalign::nn
