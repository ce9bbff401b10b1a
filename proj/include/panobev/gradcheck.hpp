// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks for every backward op. Each check draws
// random fp64 instances (C <= 4, H, W <= 16), contracts the forward output
// with a random cotangent w, and compares the analytic gradient of <w, f(x)>
// against (L(x + h e_i) - L(x - h e_i)) / 2h for every input element.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace panobev {

struct GradCheckOptions {
  std::uint64_t seed = 12345;
  std::size_t instances = 10;
  double step = 1e-5;
};

struct GradCheckResult {
  std::string op;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  std::size_t instances = 0;
  std::size_t redraws = 0;  // instances rejected for landing near a kink
  double seconds = 0.0;
  bool passed() const noexcept { return max_rel_error < threshold; }
};

/// ||a - b|| / max(||a||, ||b||); 0 when both are zero.
double relative_error(std::span<const double> a, std::span<const double> b);

/// Central differences of a scalar function, perturbing one element at a time.
std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f, std::vector<double> x,
                                     double step);

/// bilinear, voxel_pull, vertical_compress, sgfm, kl, affinity, focal,
/// balanced_mse, masked_l1, uncertainty_sum.
const std::vector<std::string>& gradcheck_ops();

/// Throws InvalidConfig for an unknown op name.
GradCheckResult gradcheck(const std::string& op, const GradCheckOptions& options = {});

std::vector<GradCheckResult> gradcheck_all(const GradCheckOptions& options = {});

}  // namespace panobev
