#include "iocc/model.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "iocc/kernels.hpp"

namespace iocc {

namespace {

Dense glorot(std::size_t in, std::size_t out, std::mt19937_64 &rng) {
  Dense l{Matrix(in, out), Matrix(1, out)};
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-a, a);
  for (auto &w : l.W.flat()) w = u(rng);
  return l;
}

Dense zeros(std::size_t in, std::size_t out) { return {Matrix(in, out), Matrix(1, out)}; }

Dense zeros_like(const Dense &l) { return {Matrix(l.W.rows(), l.W.cols()), Matrix(l.b.rows(), l.b.cols())}; }

Matrix affine(const Matrix &x, const Dense &l) {
  Matrix y;
  kernels::matmul(x, l.W, y);
  auto b = l.b.row(0);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  return y;
}

Matrix activate(const Matrix &pre, Activation act) {
  Matrix h = pre;
  if (act == Activation::relu) {
    for (auto &v : h.flat()) v = v > 0.0 ? v : 0.0;
  }
  return h;
}

MlpCache mlp_forward(const Dense &l1, const Dense &l2, Activation act, const Matrix &X, Matrix &out) {
  if (X.cols() != l1.W.rows()) {
    throw ShapeError("forward: input has " + std::to_string(X.cols()) + " columns, head expects " +
                     std::to_string(l1.W.rows()));
  }
  MlpCache c;
  c.x = X;
  c.pre = affine(X, l1);
  c.hidden = activate(c.pre, act);
  out = affine(c.hidden, l2);
  return c;
}

void add_colsum(const Matrix &m, Matrix &b) {
  auto br = b.row(0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) br[j] += r[j];
  }
}

// dOut is the gradient w.r.t. the second affine output.
void mlp_backward(const Dense &l2, Activation act, const MlpCache &c, const Matrix &dOut, Dense &g1, Dense &g2) {
  kernels::matmul_at_acc(c.hidden, dOut, g2.W);
  add_colsum(dOut, g2.b);
  Matrix dh;
  kernels::matmul_bt(dOut, l2.W, dh);
  if (act == Activation::relu) {
    auto pre = c.pre.flat();
    auto d = dh.flat();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!(pre[i] > 0.0)) d[i] = 0.0;
    }
  }
  kernels::matmul_at_acc(c.x, dh, g1.W);
  add_colsum(dh, g1.b);
}

void softmax_rows(Matrix &m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : r) mx = std::max(mx, v);
    double s = 0.0;
    for (auto &v : r) {
      v = std::exp(v - mx);
      s += v;
    }
    for (auto &v : r) v /= s;
  }
}

template <class Self> auto tensors_of(Self &s) {
  return std::array{&s.c1.W, &s.c1.b, &s.c2.W, &s.c2.b, &s.p1.W, &s.p1.b, &s.p2.W, &s.p2.b};
}

} // namespace

HeadShape ModelParams::shape() const {
  return {c1.W.rows(), c1.W.cols(), c2.W.cols(), shared_hidden ? c1.W.cols() : p1.W.cols(), p2.W.cols(),
          shared_hidden};
}

std::array<Matrix *, 8> ModelParams::tensors() { return tensors_of(*this); }
std::array<const Matrix *, 8> ModelParams::tensors() const { return tensors_of(*this); }
std::array<Matrix *, 8> ParamGrads::tensors() { return tensors_of(*this); }
std::array<const Matrix *, 8> ParamGrads::tensors() const { return tensors_of(*this); }

ParamGrads zero_grads(const ModelParams &p) {
  return {zeros_like(p.c1), zeros_like(p.c2), zeros_like(p.p1), zeros_like(p.p2)};
}

namespace {

void check_shared(const HeadShape &s) {
  if (s.shared_hidden && s.hidden_p != s.hidden_c) throw ConfigError("shared hidden layer needs hidden_p == hidden_c");
}

} // namespace

ModelParams init_params(const HeadShape &s, std::uint64_t seed, Activation act) {
  check_shared(s);
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.c1 = glorot(s.d, s.hidden_c, rng);
  p.c2 = glorot(s.hidden_c, s.K, rng);
  p.p1 = s.shared_hidden ? Dense{} : glorot(s.d, s.hidden_p, rng);
  p.p2 = glorot(s.hidden_p, s.D, rng);
  p.activation = act;
  p.shared_hidden = s.shared_hidden;
  return p;
}

ModelParams zero_params(const HeadShape &s, Activation act) {
  check_shared(s);
  ModelParams p{zeros(s.d, s.hidden_c), zeros(s.hidden_c, s.K), s.shared_hidden ? Dense{} : zeros(s.d, s.hidden_p),
                zeros(s.hidden_p, s.D), act, s.shared_hidden};
  return p;
}

ClassifierOutput classifier_forward(const ModelParams &params, const Matrix &X) {
  ClassifierOutput out;
  out.cache.mlp = mlp_forward(params.c1, params.c2, params.activation, X, out.P);
  softmax_rows(out.P);
  out.cache.P = out.P;
  return out;
}

ProjectorOutput projector_forward(const ModelParams &params, const Matrix &X) {
  ProjectorOutput out;
  const Dense &first = params.shared_hidden ? params.c1 : params.p1;
  out.cache = mlp_forward(first, params.p2, params.activation, X, out.Z);
  return out;
}

void classifier_backward(const ModelParams &params, const ClassifierCache &cache, const Matrix &dP, ParamGrads &grads) {
  require_shape(dP, cache.P.rows(), cache.P.cols(), "classifier_backward dP");
  // Softmax Jacobian: dlogit_ij = P_ij (dP_ij - sum_k dP_ik P_ik).
  Matrix dlogits(dP.rows(), dP.cols());
  for (std::size_t i = 0; i < dP.rows(); ++i) {
    auto p = cache.P.row(i);
    auto g = dP.row(i);
    double dot = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) dot += g[k] * p[k];
    auto o = dlogits.row(i);
    for (std::size_t k = 0; k < p.size(); ++k) o[k] = p[k] * (g[k] - dot);
  }
  mlp_backward(params.c2, params.activation, cache.mlp, dlogits, grads.c1, grads.c2);
}

void projector_backward(const ModelParams &params, const MlpCache &cache, const Matrix &dZ, ParamGrads &grads) {
  require_shape(dZ, cache.x.rows(), params.p2.W.cols(), "projector_backward dZ");
  Dense &first = params.shared_hidden ? grads.c1 : grads.p1;
  mlp_backward(params.p2, params.activation, cache, dZ, first, grads.p2);
}

ParamGrads backward(const ModelParams &params, const ClassifierCache &ccache, const Matrix &dP, const MlpCache &pcache,
                    const Matrix &dZ) {
  ParamGrads g = zero_grads(params);
  classifier_backward(params, ccache, dP, g);
  projector_backward(params, pcache, dZ, g);
  return g;
}

AdamState init_adam(const ModelParams &params) {
  AdamState s;
  s.m = zero_grads(params);
  s.v = zero_grads(params);
  return s;
}

void adam_step(ModelParams &params, const ParamGrads &grads, AdamState &state, double lr) {
  auto pt = params.tensors();
  auto gt = grads.tensors();
  auto mt = state.m.tensors();
  auto vt = state.v.tensors();
  for (std::size_t k = 0; k < pt.size(); ++k) {
    if (!pt[k]->same_shape(*gt[k]) || !pt[k]->same_shape(*mt[k])) throw ShapeError("adam_step: shape mismatch");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < pt.size(); ++k) {
    auto w = pt[k]->flat();
    auto g = gt[k]->flat();
    auto m = mt[k]->flat();
    auto v = vt[k]->flat();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

} // namespace iocc
