#pragma once

// Trainable heads on top of frozen embeddings: a classifier d -> h_c -> K
// ending in a row softmax, and a projector d -> h_p -> D. Both are two affine
// layers with an elementwise activation in between. Backward passes are
// written out by hand and accumulate into a ParamGrads.

#include <array>
#include <cstdint>

#include "iocc/matrix.hpp"

namespace iocc {

enum class Activation { relu, identity };

/// Affine layer y = x W + b, W stored in_dim x out_dim, b as 1 x out_dim.
struct Dense {
  Matrix W;
  Matrix b;
  friend bool operator==(const Dense &, const Dense &) = default;
};

struct HeadShape {
  std::size_t d = 0;         // input embedding dimension
  std::size_t hidden_c = 128;
  std::size_t K = 0;
  std::size_t hidden_p = 128;
  std::size_t D = 128;       // projector output dimension
  // Projector reuses the classifier's first layer (requires hidden_p ==
  // hidden_c); the projector's own first layer is then empty.
  bool shared_hidden = false;
  friend bool operator==(const HeadShape &, const HeadShape &) = default;
};

/// Weights of both heads. Tensor order for iteration is
/// classifier (W1, b1, W2, b2) then projector (W1, b1, W2, b2).
struct ModelParams {
  Dense c1, c2, p1, p2;
  Activation activation = Activation::relu;
  bool shared_hidden = false; // p1 is empty and the projector runs through c1

  HeadShape shape() const;
  std::array<Matrix *, 8> tensors();
  std::array<const Matrix *, 8> tensors() const;

  friend bool operator==(const ModelParams &, const ModelParams &) = default;
};

/// Same layout as ModelParams.
struct ParamGrads {
  Dense c1, c2, p1, p2;

  std::array<Matrix *, 8> tensors();
  std::array<const Matrix *, 8> tensors() const;
};

ParamGrads zero_grads(const ModelParams &params);

/// Glorot-uniform weights, zero biases.
ModelParams init_params(const HeadShape &shape, std::uint64_t seed, Activation act = Activation::relu);

/// All weights and biases zero.
ModelParams zero_params(const HeadShape &shape, Activation act = Activation::relu);

struct MlpCache {
  Matrix x;      // layer input
  Matrix pre;    // first affine output
  Matrix hidden; // activation(pre)
};

struct ClassifierCache {
  MlpCache mlp;
  Matrix P;
};

struct ClassifierOutput {
  Matrix P;
  ClassifierCache cache;
};

struct ProjectorOutput {
  Matrix Z;
  MlpCache cache;
};

/// P = row_softmax(affine2(act(affine1(X)))).
ClassifierOutput classifier_forward(const ModelParams &params, const Matrix &X);
/// Z = affine2(act(affine1(X))), unnormalized.
ProjectorOutput projector_forward(const ModelParams &params, const Matrix &X);

/// Accumulates d(loss)/d(classifier weights) given dP = d(loss)/dP.
void classifier_backward(const ModelParams &params, const ClassifierCache &cache, const Matrix &dP, ParamGrads &grads);
/// Accumulates d(loss)/d(projector weights) given dZ = d(loss)/dZ.
void projector_backward(const ModelParams &params, const MlpCache &cache, const Matrix &dZ, ParamGrads &grads);

/// Convenience wrapper: fresh grads from one classifier and one projector pass.
ParamGrads backward(const ModelParams &params, const ClassifierCache &ccache, const Matrix &dP, const MlpCache &pcache,
                    const Matrix &dZ);

struct AdamState {
  ParamGrads m;
  ParamGrads v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState init_adam(const ModelParams &params);

/// One bias-corrected Adam update in place.
void adam_step(ModelParams &params, const ParamGrads &grads, AdamState &state, double lr);

} // namespace iocc
