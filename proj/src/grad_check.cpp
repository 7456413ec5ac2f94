#include "drt/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "drt/errors.hpp"

namespace drt {

GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> inputs, double step, double tolerance,
                           double floor) {
  for (auto& in : inputs) {
    if (!in.is_leaf() || !in.requires_grad()) {
      throw UsageError("grad_check: inputs must be leaves with requires_grad");
    }
    in.zero_grad();
  }
  Tensor<double> loss = f();
  loss.backward();

  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& in = inputs[t];
    const std::vector<double> analytic = in.has_grad()
                                             ? std::vector<double>(in.grad().begin(), in.grad().end())
                                             : std::vector<double>(static_cast<std::size_t>(in.numel()), 0.0);
    auto values = in.mutable_data();
    NoGradGuard no_grad;
    for (Index i = 0; i < in.numel(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = f().item();
      values[i] = saved - step;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = abs_err / denom;
      report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
      if (rel > report.max_relative_error || report.worst_element < 0) {
        report.max_relative_error = rel;
        report.worst_input = static_cast<Index>(t);
        report.worst_element = i;
      }
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double step, double tolerance, double floor) {
  return grad_check([&] { return f(x); }, std::vector<Tensor<double>>{x}, step, tolerance, floor);
}

}  // namespace drt
