#include "iocc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>

namespace iocc::metrics {

std::vector<std::vector<long>> contingency(std::span<const int> y, std::span<const int> yhat, int K) {
  if (y.size() != yhat.size()) throw ShapeError("contingency: label vectors differ in length");
  std::vector<std::vector<long>> c(K, std::vector<long>(K, 0));
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || y[i] >= K || yhat[i] < 0 || yhat[i] >= K) {
      throw ConfigError("contingency: label outside [0, " + std::to_string(K) + ")");
    }
    ++c[y[i]][yhat[i]];
  }
  return c;
}

std::vector<int> max_weight_assignment(const std::vector<std::vector<long>> &w) {
  // Shortest augmenting paths on cost = -w, 1-based with a virtual column 0.
  const int n = static_cast<int>(w.size());
  const long long inf = std::numeric_limits<long long>::max() / 4;
  std::vector<long long> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<long long> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      long long delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const long long cur = -static_cast<long long>(w[i0 - 1][j - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_of_row(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  }
  return col_of_row;
}

double hungarian_accuracy(std::span<const int> y, std::span<const int> yhat, int K) {
  if (y.size() != yhat.size()) throw ShapeError("hungarian_accuracy: label vectors differ in length");
  if (y.empty()) return 0.0;
  const auto c = contingency(y, yhat, K);
  const auto match = max_weight_assignment(c);
  long hits = 0;
  for (int k = 0; k < K; ++k) hits += c[k][match[k]];
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

double nmi(std::span<const int> y, std::span<const int> yhat) {
  if (y.size() != yhat.size()) throw ShapeError("nmi: label vectors differ in length");
  if (y.empty()) throw ConfigError("nmi: empty label vectors");
  const double n = static_cast<double>(y.size());
  std::map<int, double> py, pc;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < y.size(); ++i) {
    py[y[i]] += 1.0;
    pc[yhat[i]] += 1.0;
    joint[{y[i], yhat[i]}] += 1.0;
  }
  auto entropy = [n](const std::map<int, double> &m) {
    double h = 0.0;
    for (const auto &[k, c] : m) h -= (c / n) * std::log(c / n);
    return h;
  };
  const double hy = entropy(py);
  const double hc = entropy(pc);
  if (py.size() == 1 && pc.size() == 1) return 1.0;
  if (py.size() == 1 || pc.size() == 1) return 0.0;
  double mi = 0.0;
  for (const auto &[key, c] : joint) {
    const double pij = c / n;
    mi += pij * std::log(pij / ((py[key.first] / n) * (pc[key.second] / n)));
  }
  const double v = mi / std::sqrt(hy * hc);
  return std::clamp(v, 0.0, 1.0);
}

int predicted_cluster_count(std::span<const int> yhat) {
  return static_cast<int>(std::set<int>(yhat.begin(), yhat.end()).size());
}

} // namespace iocc::metrics
