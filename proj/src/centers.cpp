#include "iocc/centers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace iocc {

bool CenterBank::all_valid() const {
  return std::all_of(valid.begin(), valid.end(), [](bool v) { return v; });
}

CenterBank empty_bank(std::size_t K, std::size_t D) {
  return {Matrix(K, D), std::vector<bool>(K, false), std::vector<std::size_t>(K, 0)};
}

std::vector<bool> reliability_mask(const Matrix &P0, double tau) {
  std::vector<bool> mask(P0.rows(), false);
  for (std::size_t i = 0; i < P0.rows(); ++i) {
    auto r = P0.row(i);
    mask[i] = *std::max_element(r.begin(), r.end()) >= tau;
  }
  return mask;
}

CenterBank update_centers(const Matrix &Zl0, std::span<const int> y, const Matrix &Zu0, std::span<const int> pseudo,
                          const std::vector<bool> &mask, const CenterBank &prev, double ema_decay) {
  const std::size_t K = prev.K();
  const std::size_t D = prev.C.cols();
  if (Zl0.rows() != y.size() || Zu0.rows() != pseudo.size() || mask.size() != pseudo.size()) {
    throw ShapeError("update_centers: row counts of projections, labels and mask differ");
  }
  if ((Zl0.rows() > 0 && Zl0.cols() != D) || (Zu0.rows() > 0 && Zu0.cols() != D)) {
    throw ShapeError("update_centers: projection dimension differs from bank dimension");
  }

  Matrix sums(K, D);
  std::vector<std::size_t> counts(K, 0);
  auto add = [&](std::span<const double> z, int k) {
    if (k < 0 || static_cast<std::size_t>(k) >= K) throw ConfigError("update_centers: label " + std::to_string(k) + " out of range");
    auto s = sums.row(k);
    for (std::size_t p = 0; p < D; ++p) s[p] += z[p];
    ++counts[k];
  };
  for (std::size_t i = 0; i < Zl0.rows(); ++i) add(Zl0.row(i), y[i]);
  for (std::size_t i = 0; i < Zu0.rows(); ++i) {
    if (mask[i]) add(Zu0.row(i), pseudo[i]);
  }

  CenterBank out = prev;
  out.count_last = counts;
  for (std::size_t k = 0; k < K; ++k) {
    if (counts[k] == 0) continue;
    auto c = out.C.row(k);
    auto s = sums.row(k);
    const double inv = 1.0 / static_cast<double>(counts[k]);
    const bool blend = ema_decay > 0.0 && prev.valid[k];
    double sq = 0.0;
    for (std::size_t p = 0; p < D; ++p) {
      const double mean = s[p] * inv;
      c[p] = blend ? ema_decay * prev.C(k, p) + (1.0 - ema_decay) * mean : mean;
      sq += c[p] * c[p];
    }
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericError("update_centers: center " + std::to_string(k) + " has zero or non-finite norm");
    }
    for (auto &v : c) v /= norm;
    out.valid[k] = true;
  }
  return out;
}

CenterBank centers_from_labeled(const Matrix &Zl, std::span<const int> y, std::size_t K) {
  const CenterBank blank = empty_bank(K, Zl.cols());
  const Matrix none(0, Zl.cols());
  return update_centers(Zl, y, none, {}, {}, blank);
}

} // namespace iocc
