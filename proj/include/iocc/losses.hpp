#pragma once

// The four training losses with hand-derived gradients. Each returns the
// scalar value and the gradient w.r.t. its two tensor inputs (the two
// augmented views). Centers and labels are constants.

#include <span>

#include "iocc/matrix.hpp"

namespace iocc::losses {

/// Clip applied to every argument of -log.
inline constexpr double kLogFloor = 1e-12;

struct LossOutput {
  double value = 0.0;
  Matrix d_first;  // gradient w.r.t. the first view
  Matrix d_second; // gradient w.r.t. the second view
};

struct Temperatures {
  double T_P = 1.0;
  double T_I = 1.0;
};

/// Which terms enter the instance-loss denominator. `literal` sums the
/// 2(n-1) negatives only; `with_positive` also adds the positive pair
/// (standard NT-Xent).
enum class InstanceDenominator { literal, with_positive };

/// Center-aware contrastive loss: for both views, the mean over samples of
/// -log softmax_k(cos(z_i, c_k) / T_P) at the pseudo-label.
LossOutput cacl_loss(const Matrix &Z1, const Matrix &Z2, const Matrix &centers, std::span<const int> labels,
                     double T_P);

/// Two-view instance contrastive loss, mean over samples of the summed
/// per-view terms -log(delta(pos) / sum delta(neg)), delta = exp(cos / T_I).
LossOutput instance_loss(const Matrix &Z1, const Matrix &Z2, double T_I,
                         InstanceDenominator mode = InstanceDenominator::literal);

/// (1/n) sum_i [CE(y_i, P1_i) + CE(y_i, P2_i)] on pseudo-labels.
LossOutput pseudo_ce_loss(const Matrix &P1, const Matrix &P2, std::span<const int> labels);

/// Same form on the labeled batch with ground-truth labels.
LossOutput supervised_ce_loss(const Matrix &P1, const Matrix &P2, std::span<const int> labels);

/// Per-term weights of the staged objective at `iter`: (L_X, L_C, L_I, L_P).
struct StageWeights {
  double supervised = 1.0;
  double pseudo = 1.0;
  double instance = 1.0;
  double center = 0.0;
};
StageWeights stage_weights(long iter, long E_first, double lambda);

/// L_X + L_C + L_I, plus lambda L_P once iter >= E_first.
double total_loss(long iter, long E_first, double lambda, const LossOutput &lX, const LossOutput &lC,
                  const LossOutput &lI, const LossOutput &lP);

} // namespace iocc::losses
