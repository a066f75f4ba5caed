#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modalign/domain.hpp"
#include "modalign/nn/layers.hpp"
#include "modalign/nn/tokenizer.hpp"

namespace modalign::nn {

struct ModelConfig {
  std::size_t vocab_size = (std::size_t{1} << 15) + 2;
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_width = 128;
  std::size_t head_hidden = 64;
  std::size_t max_sequence_length = 512;
  Task task = Task::classification(2);

  std::size_t output_width() const { return task.output_width(); }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Encoder over real tokens, mean pooling, then an MLP head.
template <typename Scalar>
struct DownstreamModel {
  ModelConfig config;
  Param<Scalar> embedding;
  Mat<Scalar> positions;
  std::vector<EncoderLayer<Scalar>> layers;
  LayerNorm<Scalar> final_norm;
  Linear<Scalar> head_hidden;
  Linear<Scalar> head_out;

  DownstreamModel() = default;
  DownstreamModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
    cfg.validate();
    util::Rng rng(seed);
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    embedding = Param<Scalar>("embedding", standard_normal<Scalar>(static_cast<Eigen::Index>(cfg.vocab_size), d, rng));
    positions = sinusoidal_positions<Scalar>(static_cast<Eigen::Index>(cfg.max_sequence_length), d);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      layers.emplace_back(d, static_cast<Eigen::Index>(cfg.heads), static_cast<Eigen::Index>(cfg.ff_width),
                          "layer" + std::to_string(l), rng);
    }
    final_norm = LayerNorm<Scalar>(d, "final_norm");
    head_hidden = Linear<Scalar>(d, static_cast<Eigen::Index>(cfg.head_hidden), "head.hidden", rng);
    head_out = Linear<Scalar>(static_cast<Eigen::Index>(cfg.head_hidden),
                              static_cast<Eigen::Index>(cfg.output_width()), "head.out", rng);
  }

  /// Parameters in checkpoint order. The final norm exists only when the
  /// model has encoder layers.
  ParamList<Scalar> parameters() {
    ParamList<Scalar> out{&embedding};
    for (auto& layer : layers)
      for (auto* p : layer.parameters()) out.push_back(p);
    if (!layers.empty())
      for (auto* p : final_norm.parameters()) out.push_back(p);
    for (auto* l : {&head_hidden, &head_out})
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }

  void zero_head() {
    for (auto* l : {&head_hidden, &head_out}) {
      l->weight.value.setZero();
      l->bias.value.setZero();
    }
  }
};

template <typename Scalar>
struct SampleTrace {
  std::vector<std::int32_t> ids;
  std::vector<EncoderCache<Scalar>> layers;
  LayerNormCache<Scalar> final_norm;
  Mat<Scalar> encoder_out;
  Mat<Scalar> pooled;
  Mat<Scalar> hidden_pre;
};

namespace detail {

template <typename Scalar>
void gather(const DownstreamModel<Scalar>& model, std::span<const std::int32_t> ids, std::span<const std::uint8_t> mask,
            std::vector<std::int32_t>& real_ids, Mat<Scalar>& x) {
  if (ids.size() != mask.size()) throw ShapeError("forward: ids and mask lengths differ");
  if (ids.size() > model.config.max_sequence_length) throw ShapeError("forward: sequence longer than the model cap");
  std::vector<Eigen::Index> pos;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (mask[i] > 1) throw ShapeError("forward: mask entries must be 0 or 1");
    if (!mask[i]) continue;
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= model.config.vocab_size) {
      throw ShapeError("forward: token id " + std::to_string(ids[i]) + " outside the vocabulary");
    }
    real_ids.push_back(ids[i]);
    pos.push_back(static_cast<Eigen::Index>(i));
  }
  x.resize(static_cast<Eigen::Index>(real_ids.size()), model.embedding.value.cols());
  for (std::size_t t = 0; t < real_ids.size(); ++t) {
    x.row(static_cast<Eigen::Index>(t)) = model.embedding.value.row(real_ids[t]) + model.positions.row(pos[t]);
  }
}

}  // namespace detail

/// Contextual token states (rows = real tokens in order).
template <typename Scalar>
Mat<Scalar> encode_tokens(const DownstreamModel<Scalar>& model, std::span<const std::int32_t> ids,
                          std::span<const std::uint8_t> mask, SampleTrace<Scalar>* trace = nullptr) {
  std::vector<std::int32_t> real_ids;
  Mat<Scalar> x;
  detail::gather(model, ids, mask, real_ids, x);
  if (trace) trace->layers.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size() && x.rows() > 0; ++l) {
    x = encoder_layer(model.layers[l], x, trace ? &trace->layers[l] : nullptr);
  }
  if (!model.layers.empty() && x.rows() > 0) x = layer_norm(model.final_norm, x, trace ? &trace->final_norm : nullptr);
  if (trace) trace->ids = std::move(real_ids);
  return x;
}

/// Mean over real tokens; the zero vector for an all-pad sequence.
template <typename Scalar>
RowVec<Scalar> mean_pool(const Mat<Scalar>& tokens) {
  if (tokens.rows() == 0) return RowVec<Scalar>::Zero(tokens.cols());
  return tokens.colwise().mean();
}

/// Output row (k logits or one scalar) for one sequence.
template <typename Scalar>
RowVec<Scalar> forward_sample(const DownstreamModel<Scalar>& model, std::span<const std::int32_t> ids,
                              std::span<const std::uint8_t> mask, SampleTrace<Scalar>* trace = nullptr) {
  Mat<Scalar> tokens = encode_tokens(model, ids, mask, trace);
  Mat<Scalar> pooled = mean_pool(tokens);
  Mat<Scalar> pre = linear(model.head_hidden, pooled);
  RowVec<Scalar> out = linear(model.head_out, gelu(pre));
  if (trace) {
    trace->encoder_out = std::move(tokens);
    trace->pooled = std::move(pooled);
    trace->hidden_pre = std::move(pre);
  }
  return out;
}

/// Accumulates parameter gradients for d(loss)/d(output) = `dout`.
template <typename Scalar>
void backward_sample(DownstreamModel<Scalar>& model, const SampleTrace<Scalar>& trace, const RowVec<Scalar>& dout) {
  const Mat<Scalar> dact = linear_backward(model.head_out, gelu(trace.hidden_pre), Mat<Scalar>(dout));
  const Mat<Scalar> dpooled = linear_backward(model.head_hidden, trace.pooled, gelu_backward(trace.hidden_pre, dact));
  const auto n = trace.encoder_out.rows();
  if (n == 0) return;
  Mat<Scalar> dx = dpooled.replicate(n, 1) / static_cast<Scalar>(n);
  if (!model.layers.empty()) dx = layer_norm_backward(model.final_norm, trace.final_norm, dx);
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    dx = encoder_layer_backward(model.layers[l], trace.layers[l], dx);
  }
  for (Eigen::Index t = 0; t < n; ++t) model.embedding.grad.row(trace.ids[static_cast<std::size_t>(t)]) += dx.row(t);
}

template <typename Scalar>
Mat<Scalar> forward(const DownstreamModel<Scalar>& model, const Batch& batch) {
  Mat<Scalar> out(batch.size(), static_cast<Eigen::Index>(model.config.output_width()));
  const auto width = static_cast<std::size_t>(batch.ids.cols());
  for (Eigen::Index r = 0; r < batch.size(); ++r) {
    out.row(r) = forward_sample(model, std::span<const std::int32_t>(batch.ids.row(r).data(), width),
                                std::span<const std::uint8_t>(batch.mask.row(r).data(), width));
  }
  return out;
}

/// Mean of the raw embedding vectors of the real tokens.
template <typename Scalar>
RowVec<Scalar> embedding_mean(const DownstreamModel<Scalar>& model, const Encoded& e) {
  RowVec<Scalar> sum = RowVec<Scalar>::Zero(model.embedding.value.cols());
  std::size_t n = 0;
  for (std::size_t i = 0; i < e.ids.size(); ++i) {
    if (!e.mask[i]) continue;
    if (e.ids[i] < 0 || static_cast<std::size_t>(e.ids[i]) >= model.config.vocab_size) {
      throw ShapeError("embedding_mean: token id outside the vocabulary");
    }
    sum += model.embedding.value.row(e.ids[i]);
    ++n;
  }
  return n ? RowVec<Scalar>(sum / static_cast<Scalar>(n)) : sum;
}

// ---------------------------------------------------------------------------
// Losses

template <typename Scalar>
Scalar cross_entropy(const RowVec<Scalar>& logits, std::size_t label, RowVec<Scalar>* grad = nullptr) {
  if (label >= static_cast<std::size_t>(logits.size())) {
    throw ContractError("class label " + std::to_string(label) + " out of range for " +
                        std::to_string(logits.size()) + " classes");
  }
  const Scalar m = logits.maxCoeff();
  const RowVec<Scalar> e = (logits.array() - m).exp();
  const Scalar z = e.sum();
  if (grad) {
    *grad = e / z;
    (*grad)(static_cast<Eigen::Index>(label)) -= Scalar(1);
  }
  return std::log(z) + m - logits(static_cast<Eigen::Index>(label));
}

template <typename Scalar>
Scalar squared_error(const RowVec<Scalar>& output, double target, RowVec<Scalar>* grad = nullptr) {
  if (output.size() != 1) throw ShapeError("regression output must have width 1");
  const Scalar diff = output(0) - static_cast<Scalar>(target);
  if (grad) *grad = RowVec<Scalar>::Constant(1, Scalar(2) * diff);
  return diff * diff;
}

template <typename Scalar>
Scalar sample_loss(const RowVec<Scalar>& output, const Label& label, const Task& task, RowVec<Scalar>* grad = nullptr) {
  if (static_cast<std::size_t>(output.size()) != task.output_width()) throw ShapeError("loss: output width mismatch");
  if (task.kind == TaskKind::classification) {
    if (!is_class_label(label)) throw ContractError("loss: classification needs class labels");
    return cross_entropy(output, class_of(label), grad);
  }
  if (is_class_label(label)) throw ContractError("loss: regression needs real-valued labels");
  return squared_error(output, value_of(label), grad);
}

/// Mean cross-entropy or mean squared error over the batch rows.
template <typename Scalar>
Scalar batch_loss(const Mat<Scalar>& outputs, std::span<const Label> labels, const Task& task) {
  if (static_cast<std::size_t>(outputs.rows()) != labels.size()) throw ShapeError("loss: batch and label counts differ");
  if (labels.empty()) throw ContractError("loss: empty batch");
  Scalar total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += sample_loss<Scalar>(outputs.row(static_cast<Eigen::Index>(i)), labels[i], task);
  }
  return total / static_cast<Scalar>(labels.size());
}

/// Mean batch loss; gradients of that mean are added to the parameters.
/// `per_sample`, when given, receives each row's loss.
template <typename Scalar>
Scalar loss_and_backward(DownstreamModel<Scalar>& model, const Batch& batch, std::span<const Label> labels,
                         std::vector<Scalar>* per_sample = nullptr) {
  if (static_cast<std::size_t>(batch.size()) != labels.size()) throw ShapeError("loss: batch and label counts differ");
  const auto width = static_cast<std::size_t>(batch.ids.cols());
  const Scalar inv = Scalar(1) / static_cast<Scalar>(labels.size());
  Scalar total = 0;
  for (Eigen::Index r = 0; r < batch.size(); ++r) {
    SampleTrace<Scalar> trace;
    const RowVec<Scalar> out = forward_sample(model, std::span<const std::int32_t>(batch.ids.row(r).data(), width),
                                              std::span<const std::uint8_t>(batch.mask.row(r).data(), width), &trace);
    RowVec<Scalar> grad;
    const Scalar l = sample_loss(out, labels[static_cast<std::size_t>(r)], model.config.task, &grad);
    if (per_sample) per_sample->push_back(l);
    total += l;
    backward_sample(model, trace, RowVec<Scalar>(grad * inv));
  }
  return total * inv;
}

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
std::size_t argmax(const Eigen::MatrixBase<Derived>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i)
    if (row(i) > row(best)) best = i;
  return static_cast<std::size_t>(best);
}

}  // namespace modalign::nn
