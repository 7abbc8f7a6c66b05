#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "iocc/matrix.hpp"

namespace iocc {

using Rng = std::mt19937_64;

struct ViewPair {
  Matrix first;
  Matrix second;
  friend bool operator==(const ViewPair &, const ViewPair &) = default;
};

/// Fixed sample embeddings plus optional stored augmentations and labels.
/// Immutable once loaded; `validate()` checks every structural invariant.
struct EmbeddingDataset {
  Matrix X;
  std::optional<ViewPair> views;
  std::optional<Labels> y_true;
  std::vector<std::size_t> labeled_idx;
  int K = 0;

  std::size_t n() const { return X.rows(); }
  std::size_t d() const { return X.cols(); }

  /// Indices not in labeled_idx, ascending.
  std::vector<std::size_t> unlabeled_idx() const;

  void validate() const;

  friend bool operator==(const EmbeddingDataset &, const EmbeddingDataset &) = default;
};

struct SyntheticSpec {
  int K = 4;
  std::size_t n = 2000;
  std::size_t d = 32;
  double center_separation = 6.0;
  double noise_sigma = 1.0;
  double imbalance_ratio = 1.0; // largest / smallest cluster size
  std::uint64_t seed = 0;
};

struct Batch {
  // labeled slot: B rows
  Matrix xl, xl1, xl2;
  Labels yl;
  std::vector<std::size_t> l_idx;
  // unlabeled slot: mu_B rows
  Matrix xu, xu1, xu2;
  std::vector<std::size_t> u_idx;
};

/// Binary container when the extension is anything but .jsonl/.ndjson.
EmbeddingDataset load_dataset(const std::filesystem::path &path);
void save_dataset(const EmbeddingDataset &ds, const std::filesystem::path &path);

/// Cluster sizes for K clusters whose sizes decay geometrically from the
/// largest to the smallest by `ratio`; sums to n exactly (largest remainder).
std::vector<std::size_t> cluster_sizes(int K, std::size_t n, double ratio);

/// The "1 or 1%" rule: 1% of every cluster (at least one) when n/K > 100,
/// otherwise exactly one sample per cluster.
std::vector<std::size_t> choose_labeled(const Labels &y, int K, Rng &rng);

EmbeddingDataset generate_synthetic(const SyntheticSpec &spec);

/// Two Gaussian perturbations X + e1, X + e2 with e ~ N(0, sigma_aug^2).
ViewPair make_views(const Matrix &X, double sigma_aug, std::uint64_t seed);

/// 0.05 x mean row norm, the default augmentation scale.
double default_view_sigma(const Matrix &X);

/// Draws B labeled and mu_B unlabeled rows uniformly with replacement. Views
/// come from the dataset when stored, otherwise from make_views with seeds
/// drawn from `rng`.
Batch sample_batch(const EmbeddingDataset &ds, std::size_t B, std::size_t mu_B, Rng &rng, double sigma_aug);

} // namespace iocc
