#pragma once

// Dense kernels used by the model, the losses and the transport solver.
//
// Every kernel exists twice: a serial reference in `kernels::serial` and an
// OpenMP version in `kernels::parallel`. The parallel versions split work only
// across independent output elements and keep the per-element accumulation
// order of the serial loop, so both produce bitwise-identical results. The
// unqualified entry points dispatch on the configured thread count.

#include <span>

#include "iocc/matrix.hpp"

namespace iocc::kernels {

/// Thread budget for the dispatching kernels. Initialized from the
/// IOCC_THREADS environment variable (0 = serial); when unset the OpenMP
/// default is used.
int thread_count();
void set_thread_count(int n);

/// RAII override of the thread count, mostly for tests.
class ThreadScope {
public:
  explicit ThreadScope(int n) : saved_(thread_count()) { set_thread_count(n); }
  ~ThreadScope() { set_thread_count(saved_); }
  ThreadScope(const ThreadScope &) = delete;
  ThreadScope &operator=(const ThreadScope &) = delete;

private:
  int saved_;
};

namespace serial {
void matmul(const Matrix &a, const Matrix &b, Matrix &c);
void matmul_bt(const Matrix &a, const Matrix &b, Matrix &c);
void matmul_at_acc(const Matrix &a, const Matrix &b, Matrix &c);
void row_lse(const Matrix &m, std::span<const double> g, double eps, std::span<double> out);
void col_lse(const Matrix &m, std::span<const double> f, double eps, std::span<double> out);
void cosine_gram(const Matrix &a, Matrix &s);
} // namespace serial

namespace parallel {
void matmul(const Matrix &a, const Matrix &b, Matrix &c);
void matmul_bt(const Matrix &a, const Matrix &b, Matrix &c);
void matmul_at_acc(const Matrix &a, const Matrix &b, Matrix &c);
void row_lse(const Matrix &m, std::span<const double> g, double eps, std::span<double> out);
void col_lse(const Matrix &m, std::span<const double> f, double eps, std::span<double> out);
void cosine_gram(const Matrix &a, Matrix &s);
} // namespace parallel

/// C = A * B. C is resized.
void matmul(const Matrix &a, const Matrix &b, Matrix &c);
/// C = A * B^T. C is resized.
void matmul_bt(const Matrix &a, const Matrix &b, Matrix &c);
/// C += A^T * B. C must already have shape a.cols() x b.cols().
void matmul_at_acc(const Matrix &a, const Matrix &b, Matrix &c);

/// out[i] = log sum_j exp((g[j] - m(i,j)) / eps), max-shifted.
void row_lse(const Matrix &m, std::span<const double> g, double eps, std::span<double> out);
/// out[j] = log sum_i exp((f[i] - m(i,j)) / eps), max-shifted.
void col_lse(const Matrix &m, std::span<const double> f, double eps, std::span<double> out);

/// s(i,j) = cos(row i, row j). Throws NumericError on a zero row.
void cosine_gram(const Matrix &a, Matrix &s);

/// Row-wise L2 normalization; fills `norms`. Throws NumericError on a zero row.
Matrix normalize_rows(const Matrix &a, Vector &norms);

} // namespace iocc::kernels
