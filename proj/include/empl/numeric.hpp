#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace empl {

// Dense real vector. All internal arithmetic is double precision; on-disk
// formats narrow to f32 only at the boundary.
using Vec = std::vector<double>;

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  static Matrix identity(std::size_t n);

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm(std::span<const double> a);
Vec subtract(std::span<const double> a, std::span<const double> b);
// y += s * x
void axpy(double s, std::span<const double> x, std::span<double> y);
bool all_finite(std::span<const double> a);

// m * x
Vec matvec(const Matrix& m, std::span<const double> x);
// m^T * y
Vec matvec_transposed(const Matrix& m, std::span<const double> y);
// m += s * u v^T
void add_outer(Matrix& m, double s, std::span<const double> u, std::span<const double> v);

// Cosine similarity. Computed as a.b / sqrt((a.a)(b.b)) so that
// cosine_sim(g, g) == 1 exactly. Throws DegenerateInputError on a zero vector.
double cosine_sim(std::span<const double> a, std::span<const double> b);

// Partial derivatives of cosine_sim with respect to a and to b.
std::pair<Vec, Vec> cosine_sim_grad(std::span<const double> a, std::span<const double> b);

// exp(l_i / gamma) / sum_j exp(l_j / gamma), max-shifted.
Vec softmax_temp(std::span<const double> logits, double gamma);

// log sum_i exp(v_i), max-shifted. Exact identity for a single value.
double log_sum_exp(std::span<const double> values);

struct GradReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  double eps = 0.0;
};

inline constexpr double kGradFloor = 1e-6;

using ScalarField = std::function<double(std::span<const double>)>;
using GradientField = std::function<Vec(std::span<const double>)>;

// Gradient check against the fourth-order central difference
//   fd_i = (8 (f(x + eps e_i) - f(x - eps e_i)) - (f(x + 2 eps e_i) - f(x - 2 eps e_i))) / (12 eps)
// with per-coordinate error
//   rel_i = |g_i - fd_i| / max(kGradFloor, |g_i| + |fd_i|)
// and the report carries the maximum. Throws NumericalFailureError if f is
// not finite at any probe point.
GradReport grad_check(const ScalarField& f, const GradientField& grad_f,
                      std::span<const double> point, double eps);

}  // namespace empl
