#pragma once

#include <span>
#include <vector>

#include "iocc/matrix.hpp"

namespace iocc {

/// K pseudo-centers in projection space. Valid rows are unit-norm.
struct CenterBank {
  Matrix C;
  std::vector<bool> valid;
  std::vector<std::size_t> count_last;

  std::size_t K() const { return C.rows(); }
  bool all_valid() const;

  friend bool operator==(const CenterBank &, const CenterBank &) = default;
};

CenterBank empty_bank(std::size_t K, std::size_t D);

/// mask_i = max_j P0(i, j) >= tau.
std::vector<bool> reliability_mask(const Matrix &P0, double tau);

/// Mean of labeled projections of class k plus reliable unlabeled projections
/// pseudo-labeled k, normalized to unit length. Clusters with no contributor
/// keep their previous row and validity. With ema_decay > 0 a previously valid
/// row is blended as decay * prev + (1 - decay) * mean before normalizing.
CenterBank update_centers(const Matrix &Zl0, std::span<const int> y, const Matrix &Zu0, std::span<const int> pseudo,
                          const std::vector<bool> &mask, const CenterBank &prev, double ema_decay = 0.0);

/// Bank built from per-class means of labeled projections only.
CenterBank centers_from_labeled(const Matrix &Zl, std::span<const int> y, std::size_t K);

} // namespace iocc
