#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "t2ipal/tensor.hpp"

namespace t2ipal {

// Rows with L2 norm at or below this are rejected by normalisation.
inline constexpr double kNormEpsilon = 1e-12;

/// Row-wise softmax of m/temperature, computed with per-row max subtraction.
/// Throws InvalidArgument for temperature <= 0 or non-finite entries.
Tensor softmax_rows(const Tensor& m, double temperature);

/// Unit-norm copy of `v`; throws DegenerateInput when ‖v‖ <= kNormEpsilon.
std::vector<double> l2_normalize(std::span<const double> v);

/// Row-wise l2_normalize of a rank-2 tensor.
Tensor l2_normalize_rows(const Tensor& m);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);
double cosine(std::span<const double> a, std::span<const double> b);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences (f(x+h·e_k) − f(x−h·e_k)) / 2h for every coordinate.
/// Throws NumericFailure if f returns a non-finite value.
std::vector<double> finite_diff_grad(const ScalarFunction& f, std::span<const double> x,
                                     double h = 1e-6);

struct GradCheckReport {
  bool pass = true;
  double max_abs_error = 0.0;
  // Largest |a−n| / max(|a|, |n|, atol).
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  // First coordinate violating the tolerance, if any.
  std::size_t first_failure = 0;
};

/// Passes iff |a_k − n_k| <= atol + rtol·max(|a_k|, |n_k|) for every k.
GradCheckReport check_gradients(std::span<const double> analytic,
                                std::span<const double> numeric, double rtol, double atol);

}  // namespace t2ipal
