#include "iocc/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace iocc::kernels {

namespace {

int initial_threads() {
  if (const char *env = std::getenv("IOCC_THREADS")) {
    char *end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 0) return static_cast<int>(v);
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 0;
#endif
}

int &threads_ref() {
  static int n = initial_threads();
  return n;
}

bool use_parallel() {
#ifdef _OPENMP
  return threads_ref() > 1;
#else
  return false;
#endif
}

// Per-output bodies shared by the serial and OpenMP loops so both evaluate
// the same floating-point expression in the same order.

inline void matmul_row(const Matrix &a, const Matrix &b, Matrix &c, std::size_t i) {
  auto out = c.row(i);
  std::fill(out.begin(), out.end(), 0.0);
  auto ar = a.row(i);
  for (std::size_t p = 0; p < a.cols(); ++p) {
    const double av = ar[p];
    if (av == 0.0) continue;
    auto br = b.row(p);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += av * br[j];
  }
}

inline void matmul_bt_row(const Matrix &a, const Matrix &b, Matrix &c, std::size_t i) {
  auto ar = a.row(i);
  for (std::size_t j = 0; j < b.rows(); ++j) {
    auto br = b.row(j);
    double s = 0.0;
    for (std::size_t p = 0; p < ar.size(); ++p) s += ar[p] * br[p];
    c(i, j) = s;
  }
}

inline void matmul_at_row(const Matrix &a, const Matrix &b, Matrix &c, std::size_t p) {
  auto out = c.row(p);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double av = a(i, p);
    if (av == 0.0) continue;
    auto br = b.row(i);
    for (std::size_t q = 0; q < out.size(); ++q) out[q] += av * br[q];
  }
}

inline double row_lse_one(const Matrix &m, std::span<const double> g, double eps, std::size_t i) {
  auto mr = m.row(i);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < mr.size(); ++j) mx = std::max(mx, (g[j] - mr[j]) / eps);
  double s = 0.0;
  for (std::size_t j = 0; j < mr.size(); ++j) s += std::exp((g[j] - mr[j]) / eps - mx);
  return mx + std::log(s);
}

inline double col_lse_one(const Matrix &m, std::span<const double> f, double eps, std::size_t j) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m.rows(); ++i) mx = std::max(mx, (f[i] - m(i, j)) / eps);
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) s += std::exp((f[i] - m(i, j)) / eps - mx);
  return mx + std::log(s);
}

inline void cosine_row(const Matrix &unit, Matrix &s, std::size_t i) {
  auto ui = unit.row(i);
  for (std::size_t j = 0; j < unit.rows(); ++j) {
    auto uj = unit.row(j);
    double d = 0.0;
    for (std::size_t p = 0; p < ui.size(); ++p) d += ui[p] * uj[p];
    s(i, j) = d;
  }
}

void check_matmul(const Matrix &a, const Matrix &b, const char *what) {
  if (a.cols() != b.rows()) {
    throw ShapeError(std::string(what) + ": inner dimensions " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()));
  }
}

} // namespace

int thread_count() { return threads_ref(); }
void set_thread_count(int n) {
  threads_ref() = n < 0 ? 0 : n;
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

Matrix normalize_rows(const Matrix &a, Vector &norms) {
  Matrix out(a.rows(), a.cols());
  norms.assign(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    double s = 0.0;
    for (double v : r) s += v * v;
    const double n = std::sqrt(s);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw NumericError("normalize_rows: row " + std::to_string(i) + " has norm " + std::to_string(n));
    }
    norms[i] = n;
    auto o = out.row(i);
    for (std::size_t p = 0; p < r.size(); ++p) o[p] = r[p] / n;
  }
  return out;
}

namespace serial {

void matmul(const Matrix &a, const Matrix &b, Matrix &c) {
  check_matmul(a, b, "matmul");
  c = Matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
}

void matmul_bt(const Matrix &a, const Matrix &b, Matrix &c) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_bt: column counts differ");
  c = Matrix(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_bt_row(a, b, c, i);
}

void matmul_at_acc(const Matrix &a, const Matrix &b, Matrix &c) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_at_acc: row counts differ");
  require_shape(c, a.cols(), b.cols(), "matmul_at_acc output");
  for (std::size_t p = 0; p < a.cols(); ++p) matmul_at_row(a, b, c, p);
}

void row_lse(const Matrix &m, std::span<const double> g, double eps, std::span<double> out) {
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = row_lse_one(m, g, eps, i);
}

void col_lse(const Matrix &m, std::span<const double> f, double eps, std::span<double> out) {
  for (std::size_t j = 0; j < m.cols(); ++j) out[j] = col_lse_one(m, f, eps, j);
}

void cosine_gram(const Matrix &a, Matrix &s) {
  Vector norms;
  const Matrix unit = normalize_rows(a, norms);
  s = Matrix(a.rows(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) cosine_row(unit, s, i);
}

} // namespace serial

namespace parallel {

void matmul(const Matrix &a, const Matrix &b, Matrix &c) {
  check_matmul(a, b, "matmul");
  c = Matrix(a.rows(), b.cols());
  const auto n = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) matmul_row(a, b, c, static_cast<std::size_t>(i));
}

void matmul_bt(const Matrix &a, const Matrix &b, Matrix &c) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_bt: column counts differ");
  c = Matrix(a.rows(), b.rows());
  const auto n = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) matmul_bt_row(a, b, c, static_cast<std::size_t>(i));
}

void matmul_at_acc(const Matrix &a, const Matrix &b, Matrix &c) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_at_acc: row counts differ");
  require_shape(c, a.cols(), b.cols(), "matmul_at_acc output");
  const auto n = static_cast<std::ptrdiff_t>(a.cols());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < n; ++p) matmul_at_row(a, b, c, static_cast<std::size_t>(p));
}

void row_lse(const Matrix &m, std::span<const double> g, double eps, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(m.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = row_lse_one(m, g, eps, static_cast<std::size_t>(i));
}

void col_lse(const Matrix &m, std::span<const double> f, double eps, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(m.cols());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < n; ++j) out[j] = col_lse_one(m, f, eps, static_cast<std::size_t>(j));
}

void cosine_gram(const Matrix &a, Matrix &s) {
  Vector norms;
  const Matrix unit = normalize_rows(a, norms);
  s = Matrix(a.rows(), a.rows());
  const auto n = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) cosine_row(unit, s, static_cast<std::size_t>(i));
}

} // namespace parallel

void matmul(const Matrix &a, const Matrix &b, Matrix &c) {
  use_parallel() ? parallel::matmul(a, b, c) : serial::matmul(a, b, c);
}
void matmul_bt(const Matrix &a, const Matrix &b, Matrix &c) {
  use_parallel() ? parallel::matmul_bt(a, b, c) : serial::matmul_bt(a, b, c);
}
void matmul_at_acc(const Matrix &a, const Matrix &b, Matrix &c) {
  use_parallel() ? parallel::matmul_at_acc(a, b, c) : serial::matmul_at_acc(a, b, c);
}
void row_lse(const Matrix &m, std::span<const double> g, double eps, std::span<double> out) {
  use_parallel() ? parallel::row_lse(m, g, eps, out) : serial::row_lse(m, g, eps, out);
}
void col_lse(const Matrix &m, std::span<const double> f, double eps, std::span<double> out) {
  use_parallel() ? parallel::col_lse(m, f, eps, out) : serial::col_lse(m, f, eps, out);
}
void cosine_gram(const Matrix &a, Matrix &s) {
  use_parallel() ? parallel::cosine_gram(a, s) : serial::cosine_gram(a, s);
}

} // namespace iocc::kernels
