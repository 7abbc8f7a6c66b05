#pragma once

// Interaction-enhanced optimal transport.
//
// Minimizes over a transport plan Q (n x K) and a free cluster marginal b:
//
//   <Q, M> - eps1 H(Q) + eps2 sum_j b_j log b_j - eps3 <S, Q Q^T>
//   s.t.  Q 1 = a,  Q^T 1 = b,  Q >= 0,  b^T 1 = 1
//
// with M = -log P0, H(Q) = -<Q, log Q - 1> and S the cosine similarity of the
// rows of P0. The interaction term is concave in Q, so it is majorized by its
// linearization around the previous plan (majorization-minimization); each
// surrogate is an entropic OT problem with cost
// M~ = M - eps3 (S + S^T) Q_prev, solved by log-domain dual sweeps over
// (f, g, h).

#include <cstdint>

#include "iocc/data.hpp"
#include "iocc/matrix.hpp"

namespace iocc::ieot {

/// Lower clip applied to P0 before taking logs.
inline constexpr double kProbFloor = 1e-12;

struct InnerOptions {
  int min_sweeps = 10;         // nominal T2 block sweeps
  int max_sweeps = 200;        // cap on sweeps plus Newton steps
  double row_tol = 1e-10;      // infinity-norm target for the marginal residuals
  const Vector *g0 = nullptr;  // warm start for g (zero when null)
};

struct TransportProblem {
  Matrix P0;                   // n x K, row-stochastic
  Vector a;                    // n, sums to 1
  double eps1 = 1.0;
  double eps2 = 1000.0;
  double eps3 = 25.0;
  int T1 = 10;
  int T2 = 10;
  int max_inner_sweeps = 200;
  double row_tol = 1e-10;
  bool early_stop = false;     // stop the outer loop once the objective plateaus
  double early_stop_tol = 1e-12;

  /// Uniform sample marginal 1/n.
  static TransportProblem uniform(Matrix P0, double eps1, double eps2, double eps3, int T1 = 10, int T2 = 10);

  void validate() const;
};

struct InnerResult {
  Matrix Q;
  Vector b;
  Vector f;
  Vector g;
  double h = 0.0;
  int sweeps = 0;              // block sweeps plus Newton steps
  double row_residual = 0.0;   // |Q 1 - a|_inf
  double col_residual = 0.0;   // |Q^T 1 - b|_inf
};

struct TransportPlan {
  Matrix Q;
  Vector b;
  Vector f;
  Vector g;
  double h = 0.0;
  Vector objective_trace;  // one entry per outer iteration
  int inner_sweeps = 0;    // summed over outer iterations

  double row_residual(std::span<const double> a) const;
  double col_residual() const;
};

/// S_ij = cos(P0_i, P0_j).
Matrix similarity_matrix(const Matrix &P0);

/// M~ = -log(max(P0, floor)) - eps3 (S + S^T) Q_prev.
Matrix surrogate_cost(const Matrix &P0, const Matrix &S, const Matrix &Q_prev, double eps3);

/// Entropic problem with cost M~ and free marginal b. Runs `min_sweeps`
/// block sweeps (f from the row constraint; g and b jointly from the column
/// constraint and the b stationarity condition; h in closed form), then, if
/// |Q^T 1 - b|_inf > row_tol, Newton steps on the dual in g with f and h
/// eliminated, up to `max_sweeps` in total. The returned f is exact for the
/// returned g, so rows match a to rounding. Throws NumericError on a
/// non-finite dual.
InnerResult inner_solve(const Matrix &M, std::span<const double> a, double eps1, double eps2,
                        const InnerOptions &opts = {});

/// Full MM solve. b0 is drawn uniform(0,1) from `rng` and normalized;
/// Q0 = a b0^T. The first inner solve starts from g = 0, later ones from the
/// previous outer iteration's g.
TransportPlan mm_solve(const TransportProblem &problem, Rng &rng);

/// The exact objective above; 0 log 0 is taken as 0.
double objective(const Matrix &Q, std::span<const double> b, const Matrix &P0, const Matrix &S, double eps1,
                 double eps2, double eps3);

/// The MM surrogate expanded at Q_prev: the interaction term replaced by its
/// tangent plane <(S+S^T) Q_prev, Q - Q_prev> + <S, Q_prev Q_prev^T>.
double surrogate_objective(const Matrix &Q, std::span<const double> b, const Matrix &P0, const Matrix &S,
                           const Matrix &Q_prev, double eps1, double eps2, double eps3);

/// Row argmax, ties to the lowest column.
Labels pseudo_labels(const Matrix &Q);

} // namespace iocc::ieot
