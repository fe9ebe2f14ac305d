#include "t2ipal/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "t2ipal/errors.hpp"

namespace t2ipal {

Tensor softmax_rows(const Tensor& m, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidArgument("softmax temperature must be positive, got " +
                          std::to_string(temperature));
  }
  if (!m.all_finite()) throw InvalidArgument("softmax input has non-finite entries");
  Tensor out(m.shape());
  const std::size_t cols = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto dst = out.row(r);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      dst[c] = std::exp((in[c] - peak) / temperature);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = norm(v);
  if (!(n > kNormEpsilon)) {
    throw DegenerateInput("cannot normalise a vector with norm " + std::to_string(n));
  }
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Tensor l2_normalize_rows(const Tensor& m) {
  Tensor out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto unit = l2_normalize(m.row(r));
    std::copy(unit.begin(), unit.end(), out.row(r).begin());
  }
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(l2_normalize(a), l2_normalize(b));
}

std::vector<double> finite_diff_grad(const ScalarFunction& f, std::span<const double> x,
                                     double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite difference step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const double up = f(probe);
    probe[k] = x[k] - h;
    const double down = f(probe);
    probe[k] = x[k];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericFailure("non-finite function value while differencing coordinate " +
                           std::to_string(k));
    }
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

GradCheckReport check_gradients(std::span<const double> analytic,
                                std::span<const double> numeric, double rtol, double atol) {
  if (analytic.size() != numeric.size()) {
    throw InvalidArgument("check_gradients: length mismatch (" +
                          std::to_string(analytic.size()) + " vs " +
                          std::to_string(numeric.size()) + ")");
  }
  GradCheckReport report;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double a = analytic[k];
    const double n = numeric[k];
    const double diff = std::abs(a - n);
    const double scale = std::max(std::abs(a), std::abs(n));
    const double denom = std::max(scale, atol);
    const double rel = denom > 0.0 ? diff / denom : 0.0;
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = k;
    }
    report.max_abs_error = std::max(report.max_abs_error, diff);
    if (!(diff <= atol + rtol * scale) && report.pass) {
      report.pass = false;
      report.first_failure = k;
    }
  }
  return report;
}

}  // namespace t2ipal
