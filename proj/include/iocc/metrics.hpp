#pragma once

#include <optional>
#include <span>
#include <vector>

#include "iocc/matrix.hpp"

namespace iocc::metrics {

struct MetricsRecord {
  long iter = 0;
  std::optional<double> acc;
  std::optional<double> nmi;
  int predicted_clusters = 0;
};

/// K x K counts, rows = true label, cols = predicted label.
std::vector<std::vector<long>> contingency(std::span<const int> y, std::span<const int> yhat, int K);

/// Maximum-weight perfect assignment on a square weight matrix (Kuhn-Munkres
/// with potentials, O(K^3)). Returns col_of_row.
std::vector<int> max_weight_assignment(const std::vector<std::vector<long>> &w);

/// Fraction of samples correct after the best one-to-one relabeling of yhat.
double hungarian_accuracy(std::span<const int> y, std::span<const int> yhat, int K);

/// I(Y; Yhat) / sqrt(H(Y) H(Yhat)), natural logs. 1 when both partitions are
/// constant, 0 when exactly one marginal entropy vanishes.
double nmi(std::span<const int> y, std::span<const int> yhat);

/// Number of distinct labels.
int predicted_cluster_count(std::span<const int> yhat);

} // namespace iocc::metrics
