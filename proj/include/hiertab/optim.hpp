#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <span>

#include "hiertab/tensor.hpp"

namespace hiertab {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter, then zeroes the
/// gradients. Throws naming the first parameter whose gradient was never
/// populated.
void adam_step(std::span<Parameter* const> params, const AdamOptions& options);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Above this many coordinates a seeded random sample is checked instead.
  std::size_t max_coordinates = 10000;
  /// Denominator floor in |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst_parameter;
};

/// Compares the analytic gradient of the scalar `loss` with central finite
/// differences. `loss` must be deterministic. Throws on non-finite values.
GradCheckResult grad_check(const std::function<Tensor()>& loss,
                           std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

}  // namespace hiertab
