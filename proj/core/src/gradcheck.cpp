#include "tpc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "tpc/random.hpp"

namespace tpc {

GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        std::span<Tensor> params,
                                        const GradCheckOptions& options) {
  for (auto& p : params) p.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  Rng rng(options.seed);
  GradCheckResult result;
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.coords_per_tensor > 0 && options.coords_per_tensor < coords.size()) {
      rng.shuffle(coords);
      coords.resize(options.coords_per_tensor);
    }
    for (std::size_t c : coords) {
      auto values = p.mutable_values();
      const double original = values[c];
      values[c] = original + options.eps;
      const double plus = loss_fn().item();
      values[c] = original - options.eps;
      const double minus = loss_fn().item();
      values[c] = original;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      double a = analytic[t][c];
      if (options.tamper) a = options.tamper(a);
      pairs.emplace_back(a, numeric);
    }
  }
  double scale = 0.0;
  for (const auto& [a, n] : pairs) scale = std::max({scale, std::abs(a), std::abs(n)});
  const double floor = std::max(options.relative_floor * scale, 1e-300);
  for (const auto& [a, n] : pairs) {
    const double diff = std::abs(a - n);
    const double mag = std::abs(a) + std::abs(n);
    result.max_relative_error = std::max(result.max_relative_error, diff / std::max(mag, floor));
    result.max_unfloored_error = std::max(result.max_unfloored_error, diff / (mag + 1e-300));
    result.max_abs_error = std::max(result.max_abs_error, diff);
  }
  result.coords_checked = pairs.size();
  for (auto& p : params) p.zero_grad();
  return result;
}

}  // namespace tpc
