#pragma once

#include <cmath>
#include <vector>

#include "modalign/nn/tensor.hpp"

namespace modalign::nn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment descent over a fixed parameter order.
template <typename Scalar>
class Adam {
 public:
  Adam(const ParamList<Scalar>& params, AdamOptions options) : options_(options) {
    for (const auto* p : params) {
      m_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(const ParamList<Scalar>& params) {
    ++t_;
    const auto b1 = static_cast<Scalar>(options_.beta1);
    const auto b2 = static_cast<Scalar>(options_.beta2);
    const auto lr = static_cast<Scalar>(options_.learning_rate);
    const auto eps = static_cast<Scalar>(options_.epsilon);
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(options_.beta1, static_cast<double>(t_)));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(options_.beta2, static_cast<double>(t_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& g = params[i]->grad;
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      params[i]->value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  long long steps() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<Mat<Scalar>> m_, v_;
  long long t_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
template <typename Scalar>
double clip_grad_norm(const ParamList<Scalar>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) sq += p->grad.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto scale = static_cast<Scalar>(max_norm / norm);
    for (auto* p : params) p->grad *= scale;
  }
  return norm;
}

}  // namespace modalign::nn
