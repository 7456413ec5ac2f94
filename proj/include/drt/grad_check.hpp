#pragma once

#include <functional>
#include <vector>

#include "drt/tensor.hpp"

namespace drt {

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  Index worst_input = -1;  // which input tensor held the worst entry
  Index worst_element = -1;
  bool passed = false;
};

/// Compares analytic gradients of a scalar function against central finite
/// differences. The relative error of one entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor),
/// so entries whose true gradient is tiny are judged on an absolute scale.
///
/// `f` must rebuild its graph from `inputs` on every call.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> inputs, double step = 1e-5,
                           double tolerance = 1e-3, double floor = 1e-6);

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double step = 1e-5, double tolerance = 1e-3,
                           double floor = 1e-6);

}  // namespace drt
