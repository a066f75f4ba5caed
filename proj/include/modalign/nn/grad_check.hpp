#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "modalign/nn/model.hpp"

namespace modalign::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  Eigen::Index checked = 0;
};

/// Compares each parameter's stored `grad` with central differences of
/// `loss`: max over entries of |analytic - numeric| / max(1, |numeric|).
/// `loss` must not touch the gradients it is checked against.
template <typename Scalar, typename LossFn>
GradCheckResult finite_difference_check(const ParamList<Scalar>& params, LossFn&& loss, double step = 1e-5) {
  GradCheckResult result;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      Scalar& v = p->value.data()[i];
      const Scalar saved = v;
      v = saved + static_cast<Scalar>(step);
      const double up = static_cast<double>(loss());
      v = saved - static_cast<Scalar>(step);
      const double down = static_cast<double>(loss());
      v = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = static_cast<double>(p->grad.data()[i]);
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      ++result.checked;
      if (!(err <= result.max_relative_error)) {
        result.max_relative_error = err;
        result.worst_parameter = p->name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

/// Full-model check of the mean batch loss.
template <typename Scalar>
GradCheckResult grad_check(DownstreamModel<Scalar>& model, const Batch& batch, std::span<const Label> labels,
                           double step = 1e-5) {
  const auto params = model.parameters();
  zero_grads(params);
  loss_and_backward(model, batch, labels);
  return finite_difference_check<Scalar>(
      params, [&] { return batch_loss<Scalar>(forward(model, batch), labels, model.config.task); }, step);
}

}  // namespace modalign::nn
