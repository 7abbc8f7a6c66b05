#include "iocc/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "iocc/kernels.hpp"

namespace iocc::losses {

namespace {

void check_labels(std::span<const int> labels, std::size_t n, std::size_t K, const char *what) {
  if (labels.size() != n) throw ShapeError(std::string(what) + ": label count differs from row count");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw ConfigError(std::string(what) + ": label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    }
  }
}

// Pulls a gradient on unit vectors back through u = z / |z|.
void unnormalize_grad(const Matrix &unit, const Vector &norms, Matrix &grad) {
  for (std::size_t i = 0; i < grad.rows(); ++i) {
    auto g = grad.row(i);
    auto u = unit.row(i);
    double dot = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p) dot += g[p] * u[p];
    for (std::size_t p = 0; p < g.size(); ++p) g[p] = (g[p] - dot * u[p]) / norms[i];
  }
}

// One view of the center-aware loss; returns the mean value, fills grad.
double cacl_view(const Matrix &Z, const Matrix &units_c, std::span<const int> labels, double T_P, Matrix &grad) {
  const std::size_t n = Z.rows();
  Vector norms;
  const Matrix unit = kernels::normalize_rows(Z, norms);
  Matrix logits;
  kernels::matmul_bt(unit, units_c, logits); // n x K cosines
  Matrix dlogits(n, units_c.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto l = logits.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (auto &v : l) {
      v /= T_P;
      mx = std::max(mx, v);
    }
    double s = 0.0;
    for (double v : l) s += std::exp(v - mx);
    const double log_z = mx + std::log(s);
    total += log_z - l[labels[i]];
    auto d = dlogits.row(i);
    for (std::size_t k = 0; k < l.size(); ++k) d[k] = std::exp(l[k] - log_z) / (static_cast<double>(n) * T_P);
    d[labels[i]] -= 1.0 / (static_cast<double>(n) * T_P);
  }
  kernels::matmul(dlogits, units_c, grad);
  unnormalize_grad(unit, norms, grad);
  return total / static_cast<double>(n);
}

LossOutput two_view_ce(const Matrix &P1, const Matrix &P2, std::span<const int> labels, const char *what) {
  if (!P1.same_shape(P2)) throw ShapeError(std::string(what) + ": view shapes differ");
  check_labels(labels, P1.rows(), P1.cols(), what);
  const double n = static_cast<double>(P1.rows());
  LossOutput out{0.0, Matrix(P1.rows(), P1.cols()), Matrix(P2.rows(), P2.cols())};
  // per-view sums, so identical views give exactly twice the single-view loss
  auto one = [&](const Matrix &P, Matrix &d) {
    double s = 0.0;
    for (std::size_t i = 0; i < P.rows(); ++i) {
      const double p = P(i, labels[i]);
      if (p > kLogFloor) {
        s -= std::log(p);
        d(i, labels[i]) = -1.0 / (n * p);
      } else {
        s -= std::log(kLogFloor);
      }
    }
    return s;
  };
  const double s1 = one(P1, out.d_first);
  const double s2 = one(P2, out.d_second);
  out.value = (s1 + s2) / n;
  return out;
}

} // namespace

LossOutput cacl_loss(const Matrix &Z1, const Matrix &Z2, const Matrix &centers, std::span<const int> labels,
                     double T_P) {
  if (!Z1.same_shape(Z2)) throw ShapeError("cacl_loss: view shapes differ");
  if (centers.cols() != Z1.cols()) throw ShapeError("cacl_loss: center dimension differs from projection dimension");
  if (!(T_P > 0)) throw ConfigError("cacl_loss: T_P must be > 0");
  check_labels(labels, Z1.rows(), centers.rows(), "cacl_loss");
  Vector cnorms;
  const Matrix units_c = kernels::normalize_rows(centers, cnorms);
  LossOutput out;
  out.value = cacl_view(Z1, units_c, labels, T_P, out.d_first) + cacl_view(Z2, units_c, labels, T_P, out.d_second);
  return out;
}

LossOutput instance_loss(const Matrix &Z1, const Matrix &Z2, double T_I, InstanceDenominator mode) {
  if (!Z1.same_shape(Z2)) throw ShapeError("instance_loss: view shapes differ");
  if (Z1.rows() < 2) throw ConfigError("instance_loss: needs at least 2 samples");
  if (!(T_I > 0)) throw ConfigError("instance_loss: T_I must be > 0");
  const std::size_t n = Z1.rows();
  const std::size_t m = 2 * n;
  const std::size_t D = Z1.cols();

  // Rows 0..n-1 are the first view, n..2n-1 the second.
  Matrix U(m, D);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(Z1.row(i).begin(), Z1.row(i).end(), U.row(i).begin());
    std::copy(Z2.row(i).begin(), Z2.row(i).end(), U.row(n + i).begin());
  }
  Vector norms;
  const Matrix unit = kernels::normalize_rows(U, norms);
  Matrix G;
  kernels::matmul_bt(unit, unit, G);

  // coef(a, b) = dL / dG(a, b) for anchor a.
  Matrix coef(m, m);
  const double scale = 1.0 / (static_cast<double>(n) * T_I);
  double total = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    const std::size_t i = a % n;
    const std::size_t pos = a < n ? n + i : i;
    auto in_denominator = [&](std::size_t b) {
      if (b % n != i) return true;
      return mode == InstanceDenominator::with_positive && b == pos;
    };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < m; ++b) {
      if (in_denominator(b)) mx = std::max(mx, G(a, b) / T_I);
    }
    double s = 0.0;
    for (std::size_t b = 0; b < m; ++b) {
      if (in_denominator(b)) s += std::exp(G(a, b) / T_I - mx);
    }
    const double log_den = mx + std::log(s);
    total += log_den - G(a, pos) / T_I;
    for (std::size_t b = 0; b < m; ++b) {
      if (in_denominator(b)) coef(a, b) = std::exp(G(a, b) / T_I - log_den) * scale;
    }
    coef(a, pos) -= scale;
  }

  // dL/dunit = (coef + coef^T) unit
  Matrix sym(m, m);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) sym(a, b) = coef(a, b) + coef(b, a);
  }
  Matrix dunit;
  kernels::matmul(sym, unit, dunit);
  unnormalize_grad(unit, norms, dunit);

  LossOutput out{total / static_cast<double>(n), Matrix(n, D), Matrix(n, D)};
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(dunit.row(i).begin(), dunit.row(i).end(), out.d_first.row(i).begin());
    std::copy(dunit.row(n + i).begin(), dunit.row(n + i).end(), out.d_second.row(i).begin());
  }
  return out;
}

LossOutput pseudo_ce_loss(const Matrix &P1, const Matrix &P2, std::span<const int> labels) {
  return two_view_ce(P1, P2, labels, "pseudo_ce_loss");
}

LossOutput supervised_ce_loss(const Matrix &P1, const Matrix &P2, std::span<const int> labels) {
  return two_view_ce(P1, P2, labels, "supervised_ce_loss");
}

StageWeights stage_weights(long iter, long E_first, double lambda) {
  StageWeights w;
  if (iter >= E_first) w.center = lambda;
  return w;
}

double total_loss(long iter, long E_first, double lambda, const LossOutput &lX, const LossOutput &lC,
                  const LossOutput &lI, const LossOutput &lP) {
  const auto w = stage_weights(iter, E_first, lambda);
  double v = w.supervised * lX.value + w.pseudo * lC.value + w.instance * lI.value;
  if (w.center != 0.0) v += w.center * lP.value;
  return v;
}

} // namespace iocc::losses
