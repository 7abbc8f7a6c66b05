#include "iocc/ieot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "iocc/kernels.hpp"

namespace iocc::ieot {

namespace {

double lse(std::span<const double> x) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

// <Q, M> - eps1 H(Q) + eps2 sum b log b, shared by objective and surrogate.
double base_terms(const Matrix &Q, std::span<const double> b, const Matrix &P0, double eps1, double eps2) {
  double cost = 0.0;
  double ent = 0.0; // H(Q) = -sum Q (log Q - 1)
  for (std::size_t i = 0; i < Q.rows(); ++i) {
    for (std::size_t j = 0; j < Q.cols(); ++j) {
      const double q = Q(i, j);
      cost += q * -std::log(std::max(P0(i, j), kProbFloor));
      ent += -(xlogx(q) - q);
    }
  }
  double negent = 0.0;
  for (double v : b) negent += xlogx(v);
  return cost - eps1 * ent + eps2 * negent;
}

// <A, B> over equal-shaped matrices.
double frobenius(const Matrix &A, const Matrix &B) {
  double s = 0.0;
  auto a = A.flat();
  auto b = B.flat();
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// (S + S^T) Q
Matrix sym_times(const Matrix &S, const Matrix &Q) {
  Matrix SQ;
  kernels::matmul(S, Q, SQ);
  Matrix StQ(Q.rows(), Q.cols());
  kernels::matmul_at_acc(S, Q, StQ);
  for (std::size_t i = 0; i < SQ.size(); ++i) SQ.flat()[i] += StQ.flat()[i];
  return SQ;
}

} // namespace

TransportProblem TransportProblem::uniform(Matrix P0, double eps1, double eps2, double eps3, int T1, int T2) {
  TransportProblem p;
  p.a.assign(P0.rows(), 1.0 / static_cast<double>(P0.rows()));
  p.P0 = std::move(P0);
  p.eps1 = eps1;
  p.eps2 = eps2;
  p.eps3 = eps3;
  p.T1 = T1;
  p.T2 = T2;
  return p;
}

void TransportProblem::validate() const {
  if (P0.rows() == 0 || P0.cols() == 0) throw ConfigError("transport problem: P0 is empty");
  if (a.size() != P0.rows()) throw ShapeError("transport problem: a has wrong length");
  for (std::size_t i = 0; i < P0.rows(); ++i) {
    double s = 0.0;
    for (double v : P0.row(i)) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("transport problem: P0 has a negative or non-finite entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ConfigError("transport problem: P0 row " + std::to_string(i) + " sums to " + std::to_string(s));
  }
  const double as = std::accumulate(a.begin(), a.end(), 0.0);
  if (std::abs(as - 1.0) > 1e-9) throw ConfigError("transport problem: a must sum to 1");
  if (!(eps1 > 0) || !(eps2 > 0) || !(eps3 >= 0)) throw ConfigError("transport problem: eps1, eps2 must be > 0 and eps3 >= 0");
  if (T1 < 1 || T2 < 1) throw ConfigError("transport problem: T1 and T2 must be >= 1");
  if (max_inner_sweeps < T2) throw ConfigError("transport problem: max_inner_sweeps < T2");
}

double TransportPlan::row_residual(std::span<const double> a) const {
  double r = 0.0;
  for (std::size_t i = 0; i < Q.rows(); ++i) {
    double s = 0.0;
    for (double v : Q.row(i)) s += v;
    r = std::max(r, std::abs(s - a[i]));
  }
  return r;
}

double TransportPlan::col_residual() const {
  double r = 0.0;
  for (std::size_t j = 0; j < Q.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < Q.rows(); ++i) s += Q(i, j);
    r = std::max(r, std::abs(s - b[j]));
  }
  return r;
}

Matrix similarity_matrix(const Matrix &P0) {
  Matrix S;
  kernels::cosine_gram(P0, S);
  return S;
}

Matrix surrogate_cost(const Matrix &P0, const Matrix &S, const Matrix &Q_prev, double eps3) {
  require_shape(S, P0.rows(), P0.rows(), "surrogate_cost S");
  require_shape(Q_prev, P0.rows(), P0.cols(), "surrogate_cost Q_prev");
  Matrix M(P0.rows(), P0.cols());
  for (std::size_t i = 0; i < M.size(); ++i) M.flat()[i] = -std::log(std::max(P0.flat()[i], kProbFloor));
  if (eps3 == 0.0) return M;
  const Matrix lin = sym_times(S, Q_prev);
  for (std::size_t i = 0; i < M.size(); ++i) M.flat()[i] -= eps3 * lin.flat()[i];
  return M;
}

namespace {

// Dual state for a fixed g: f from the row constraint, h and b from the
// simplex constraint, pi = row-normalized plan, c = column sums of Q.
struct DualPoint {
  Vector f, b, c;
  Matrix pi;
  double h = 0.0;
  double phi = 0.0; // reduced dual objective, concave in g
};

void eval_dual(const Matrix &M, std::span<const double> a, double eps1, double eps2, const Vector &g, DualPoint &d) {
  const std::size_t n = M.rows(), K = M.cols();
  Vector lse_row(n), scaled(K);
  kernels::row_lse(M, g, eps1, lse_row);
  d.f.resize(n);
  d.pi = Matrix(n, K);
  d.c.assign(K, 0.0);
  d.phi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d.f[i] = eps1 * std::log(a[i]) - eps1 * lse_row[i];
    d.phi += a[i] * d.f[i];
    for (std::size_t j = 0; j < K; ++j) {
      const double p = std::exp((g[j] - M(i, j)) / eps1 - lse_row[i]);
      d.pi(i, j) = p;
      d.c[j] += a[i] * p;
    }
  }
  for (std::size_t j = 0; j < K; ++j) scaled[j] = (-g[j] - eps2) / eps2;
  d.h = -eps2 * lse(scaled);
  d.b.resize(K);
  for (std::size_t j = 0; j < K; ++j) d.b[j] = std::exp((d.h - g[j] - eps2) / eps2);
  d.phi += d.h;
}

double max_abs_diff(const Vector &x, const Vector &y) {
  double r = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) r = std::max(r, std::abs(x[j] - y[j]));
  return r;
}

// Solves A x = r for symmetric positive definite A (K x K) by Cholesky.
Vector spd_solve(Matrix A, Vector r) {
  const std::size_t K = A.rows();
  for (std::size_t j = 0; j < K; ++j) {
    double d = A(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= A(j, k) * A(j, k);
    if (!(d > 0.0)) throw NumericError("inner_solve: singular Newton system");
    A(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < K; ++i) {
      double s = A(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= A(i, k) * A(j, k);
      A(i, j) = s / A(j, j);
    }
  }
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t k = 0; k < i; ++k) r[i] -= A(i, k) * r[k];
    r[i] /= A(i, i);
  }
  for (std::size_t i = K; i-- > 0;) {
    for (std::size_t k = i + 1; k < K; ++k) r[i] -= A(k, i) * r[k];
    r[i] /= A(i, i);
  }
  return r;
}

} // namespace

InnerResult inner_solve(const Matrix &M, std::span<const double> a, double eps1, double eps2, const InnerOptions &opts) {
  const std::size_t n = M.rows();
  const std::size_t K = M.cols();
  if (a.size() != n) throw ShapeError("inner_solve: a has wrong length");

  InnerResult r;
  r.f.assign(n, 0.0);
  if (opts.g0) {
    if (opts.g0->size() != K) throw ShapeError("inner_solve: warm start g has wrong length");
    r.g = *opts.g0;
  } else {
    r.g.assign(K, 0.0);
  }
  Vector row_lse(n), col_lse(K), scaled(K);
  // b_j is proportional to A_j^rho at the joint (g, b) stationary point,
  // A_j = sum_i exp((f_i - M_ij) / eps1).
  const double rho = eps1 / (eps1 + eps2);
  auto check_finite = [&](int sweep) {
    if (!all_finite(r.f) || !all_finite(r.g)) {
      throw NumericError("inner_solve: non-finite dual at sweep " + std::to_string(sweep));
    }
  };

  // Nominal block sweeps.
  for (int sweep = 1; sweep <= opts.min_sweeps; ++sweep) {
    // f_i = eps1 ln a_i - eps1 ln sum_j exp((g_j - M_ij) / eps1)
    kernels::row_lse(M, r.g, eps1, row_lse);
    for (std::size_t i = 0; i < n; ++i) r.f[i] = eps1 * std::log(a[i]) - eps1 * row_lse[i];
    // g_j = eps1 ln b_j - eps1 ln A_j with b solved jointly.
    kernels::col_lse(M, r.f, eps1, col_lse);
    for (std::size_t j = 0; j < K; ++j) scaled[j] = rho * col_lse[j];
    const double norm = lse(scaled);
    for (std::size_t j = 0; j < K; ++j) r.g[j] = eps1 * (scaled[j] - norm - col_lse[j]);
    check_finite(sweep);
    r.sweeps = sweep;
  }

  // Newton polish on the reduced dual in g until b = Q^T 1 within row_tol.
  // grad = b - c, -Hessian = (diag c - sum_i a_i pi_i pi_i^T) / eps1 + (diag b - b b^T) / eps2,
  // whose null direction (constant shift of g) is removed by a rank-one term.
  DualPoint d;
  eval_dual(M, a, eps1, eps2, r.g, d);
  for (int step = r.sweeps + 1; step <= opts.max_sweeps && max_abs_diff(d.b, d.c) > opts.row_tol; ++step) {
    Vector grad(K);
    for (std::size_t j = 0; j < K; ++j) grad[j] = d.b[j] - d.c[j];
    Matrix H(K, K);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < K; ++j) {
        const double w = a[i] * d.pi(i, j) / eps1;
        for (std::size_t k = 0; k < K; ++k) H(j, k) -= w * d.pi(i, k);
      }
    }
    double trace = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      H(j, j) += d.c[j] / eps1 + d.b[j] / eps2;
      for (std::size_t k = 0; k < K; ++k) H(j, k) -= d.b[j] * d.b[k] / eps2;
      trace += H(j, j);
    }
    const double shift = trace / static_cast<double>(K) + 1e-300;
    for (auto &v : H.flat()) v += shift / static_cast<double>(K);
    const Vector dir = spd_solve(H, grad);
    double slope = 0.0;
    for (std::size_t j = 0; j < K; ++j) slope += grad[j] * dir[j];

    DualPoint trial;
    Vector g_new(K);
    double t = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 40; ++bt, t *= 0.5) {
      for (std::size_t j = 0; j < K; ++j) g_new[j] = r.g[j] + t * dir[j];
      eval_dual(M, a, eps1, eps2, g_new, trial);
      const bool ascent = trial.phi >= d.phi + 1e-4 * t * slope;
      const bool flat = trial.phi >= d.phi - 1e-15 * std::abs(d.phi) &&
                        max_abs_diff(trial.b, trial.c) < max_abs_diff(d.b, d.c);
      if (ascent || flat) {
        moved = true;
        break;
      }
    }
    if (!moved) break;
    r.g = std::move(g_new);
    d = std::move(trial);
    check_finite(step);
    r.sweeps = step;
  }

  r.f = d.f;
  r.h = d.h;
  r.b = d.b;
  r.Q = Matrix(n, K);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < K; ++j) r.Q(i, j) = std::exp((r.f[i] + r.g[j] - M(i, j)) / eps1);
  }
  r.row_residual = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : r.Q.row(i)) s += v;
    r.row_residual = std::max(r.row_residual, std::abs(s - a[i]));
  }
  r.col_residual = max_abs_diff(d.b, d.c);
  if (!std::isfinite(r.h) || !all_finite(r.b)) throw NumericError("inner_solve: non-finite marginal");
  return r;
}

TransportPlan mm_solve(const TransportProblem &problem, Rng &rng) {
  problem.validate();
  const std::size_t n = problem.P0.rows();
  const std::size_t K = problem.P0.cols();
  const Matrix S = similarity_matrix(problem.P0);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector b0(K);
  for (auto &v : b0) v = unif(rng);
  const double s0 = std::accumulate(b0.begin(), b0.end(), 0.0);
  for (auto &v : b0) v /= s0;
  Matrix Q(n, K);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < K; ++j) Q(i, j) = problem.a[i] * b0[j];
  }

  InnerOptions opts{problem.T2, problem.max_inner_sweeps, problem.row_tol};
  TransportPlan plan;
  for (int it = 0; it < problem.T1; ++it) {
    const Matrix M = surrogate_cost(problem.P0, S, Q, problem.eps3);
    opts.g0 = it == 0 ? nullptr : &plan.g;
    InnerResult r = inner_solve(M, problem.a, problem.eps1, problem.eps2, opts);
    plan.inner_sweeps += r.sweeps;
    Q = std::move(r.Q);
    plan.b = std::move(r.b);
    plan.f = std::move(r.f);
    plan.g = std::move(r.g);
    plan.h = r.h;
    plan.objective_trace.push_back(
        objective(Q, plan.b, problem.P0, S, problem.eps1, problem.eps2, problem.eps3));
    if (problem.early_stop && plan.objective_trace.size() >= 2) {
      const auto last = plan.objective_trace.size() - 1;
      if (std::abs(plan.objective_trace[last] - plan.objective_trace[last - 1]) <= problem.early_stop_tol) break;
    }
  }
  plan.Q = std::move(Q);
  return plan;
}

double objective(const Matrix &Q, std::span<const double> b, const Matrix &P0, const Matrix &S, double eps1,
                 double eps2, double eps3) {
  require_shape(Q, P0.rows(), P0.cols(), "objective Q");
  double val = base_terms(Q, b, P0, eps1, eps2);
  if (eps3 != 0.0) {
    Matrix SQ;
    kernels::matmul(S, Q, SQ);
    val -= eps3 * frobenius(Q, SQ); // <S, Q Q^T> = <Q, S Q>
  }
  return val;
}

double surrogate_objective(const Matrix &Q, std::span<const double> b, const Matrix &P0, const Matrix &S,
                           const Matrix &Q_prev, double eps1, double eps2, double eps3) {
  require_shape(Q, P0.rows(), P0.cols(), "surrogate_objective Q");
  double val = base_terms(Q, b, P0, eps1, eps2);
  if (eps3 != 0.0) {
    const Matrix lin = sym_times(S, Q_prev);
    Matrix diff = Q;
    for (std::size_t i = 0; i < diff.size(); ++i) diff.flat()[i] -= Q_prev.flat()[i];
    Matrix SQp;
    kernels::matmul(S, Q_prev, SQp);
    val -= eps3 * (frobenius(lin, diff) + frobenius(Q_prev, SQp));
  }
  return val;
}

Labels pseudo_labels(const Matrix &Q) {
  Labels y(Q.rows(), 0);
  for (std::size_t i = 0; i < Q.rows(); ++i) {
    auto r = Q.row(i);
    y[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return y;
}

} // namespace iocc::ieot
