#include "empl/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "empl/errors.hpp"

namespace empl {

namespace {

void require_same_size(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InvalidInputError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
  }
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

Vec subtract(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b);
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

void axpy(double s, std::span<const double> x, std::span<double> y) {
  require_same_size(x, y);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

Vec matvec(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols) {
    throw InvalidConfigError("matvec: matrix has " + std::to_string(m.cols) +
                             " columns, vector has " + std::to_string(x.size()));
  }
  Vec out(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * x[c];
    out[r] = s;
  }
  return out;
}

Vec matvec_transposed(const Matrix& m, std::span<const double> y) {
  if (y.size() != m.rows) {
    throw InvalidConfigError("matvec_transposed: matrix has " + std::to_string(m.rows) +
                             " rows, vector has " + std::to_string(y.size()));
  }
  Vec out(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) out[c] += row[c] * y[r];
  }
  return out;
}

void add_outer(Matrix& m, double s, std::span<const double> u, std::span<const double> v) {
  if (u.size() != m.rows || v.size() != m.cols) {
    throw InvalidConfigError("add_outer: shape mismatch");
  }
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    const double su = s * u[r];
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += su * v[c];
  }
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b);
  const double aa = dot(a, a);
  const double bb = dot(b, b);
  if (aa == 0.0 || bb == 0.0) throw DegenerateInputError("cosine similarity of a zero vector");
  const double c = dot(a, b) / std::sqrt(aa * bb);
  return std::clamp(c, -1.0, 1.0);
}

std::pair<Vec, Vec> cosine_sim_grad(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b);
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine similarity of a zero vector");
  const double ab = dot(a, b);
  const double inv = 1.0 / (na * nb);
  const double ka = ab / (na * na * na * nb);
  const double kb = ab / (na * nb * nb * nb);
  Vec ga(a.size());
  Vec gb(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ga[i] = b[i] * inv - ka * a[i];
    gb[i] = a[i] * inv - kb * b[i];
  }
  return {std::move(ga), std::move(gb)};
}

Vec softmax_temp(std::span<const double> logits, double gamma) {
  if (!(gamma > 0.0)) throw InvalidConfigError("softmax temperature must be positive");
  if (logits.empty()) throw InvalidConfigError("softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / gamma);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw InvalidConfigError("log_sum_exp of an empty vector");
  if (values.size() == 1) return values[0];
  const double mx = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += std::exp(v - mx);
  return mx + std::log(total);
}

GradReport grad_check(const ScalarField& f, const GradientField& grad_f,
                      std::span<const double> point, double eps) {
  if (!(eps > 0.0)) throw InvalidConfigError("grad_check eps must be positive");
  const Vec analytic = grad_f(point);
  if (analytic.size() != point.size()) {
    throw InvalidConfigError("grad_check: gradient has wrong dimension");
  }
  GradReport report;
  report.eps = eps;
  Vec probe(point.begin(), point.end());
  auto at = [&](std::size_t i, double offset) {
    probe[i] = point[i] + offset;
    const double v = f(probe);
    probe[i] = point[i];
    if (!std::isfinite(v)) {
      throw NumericalFailureError("grad_check: non-finite value near coordinate " + std::to_string(i));
    }
    return v;
  };
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double numeric = (8.0 * (at(i, eps) - at(i, -eps)) - (at(i, 2.0 * eps) - at(i, -2.0 * eps))) / (12.0 * eps);
    const double rel = std::abs(analytic[i] - numeric) /
                       std::max(kGradFloor, std::abs(analytic[i]) + std::abs(numeric));
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coordinate = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

}  // namespace empl
