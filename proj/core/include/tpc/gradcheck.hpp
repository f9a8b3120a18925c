#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tpc/tensor.hpp"

namespace tpc {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Applied to each analytic gradient before comparison. Used to confirm the
  /// check catches a faulty gradient.
  std::function<double(double)> tamper;
  /// Denominators are floored at this fraction of the largest gradient
  /// magnitude seen, so coordinates far below the finite-difference noise
  /// level are judged on their absolute error instead.
  double relative_floor = 1e-6;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  /// Same ratio without the floor.
  double max_unfloored_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares the analytic gradient of `loss_fn` with respect to `params`
/// against central differences. The relative error of a coordinate is
/// |analytic - numeric| / max(|analytic| + |numeric|, relative_floor * scale),
/// where scale is the largest |gradient| over all checked coordinates.
///
/// `loss_fn` must rebuild the graph from the current parameter values on each
/// call and be deterministic.
GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        std::span<Tensor> params,
                                        const GradCheckOptions& options = {});

}  // namespace tpc
