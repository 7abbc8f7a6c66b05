#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "iocc/binary_io.hpp"
#include "iocc/checkpoint.hpp"
#include "iocc/gradcheck.hpp"
#include "iocc/model.hpp"
#include "oracles.hpp"

using namespace iocc;

namespace {

Matrix randm(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (auto &v : m.flat()) v = n(g);
  return m;
}

ModelParams jittered(const HeadShape &s, unsigned seed, Activation act = Activation::relu) {
  ModelParams p = init_params(s, seed, act);
  std::mt19937_64 g(seed + 1);
  std::normal_distribution<double> n(0.0, 0.1);
  for (Matrix *t : p.tensors()) {
    for (auto &v : t->flat()) v += n(g);
  }
  return p;
}

} // namespace

TEST_CASE("zero weights give uniform P and bias-only Z") {
  const HeadShape s{5, 8, 3, 6, 4};
  ModelParams p = zero_params(s);
  const Matrix X = randm(7, 5, 1);
  const auto c = classifier_forward(p, X);
  for (double v : c.P.flat()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  for (std::size_t j = 0; j < 4; ++j) p.p2.b(0, j) = static_cast<double>(j) + 0.5;
  const auto z = projector_forward(p, X);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(z.Z(i, j) == static_cast<double>(j) + 0.5);
  }
}

TEST_CASE("forward passes match the re-evaluation oracle") {
  const HeadShape s{6, 9, 4, 7, 5};
  const ModelParams p = jittered(s, 3);
  const Matrix X = randm(3, 6, 4);
  const auto c = classifier_forward(p, X);
  const Matrix Pref = oracle::mlp_reference(X, p.c1.W, p.c1.b, p.c2.W, p.c2.b, true, true);
  for (std::size_t i = 0; i < c.P.size(); ++i) CHECK(c.P.flat()[i] == doctest::Approx(Pref.flat()[i]).epsilon(1e-13));
  for (std::size_t i = 0; i < 3; ++i) {
    double sum = 0;
    for (double v : c.P.row(i)) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  const auto z = projector_forward(p, X);
  const Matrix Zref = oracle::mlp_reference(X, p.p1.W, p.p1.b, p.p2.W, p.p2.b, true, false);
  for (std::size_t i = 0; i < z.Z.size(); ++i) CHECK(z.Z.flat()[i] == doctest::Approx(Zref.flat()[i]).epsilon(1e-13));
}

TEST_CASE("identity activation with zero biases is linear") {
  const HeadShape s{4, 5, 3, 5, 3};
  const ModelParams p = init_params(s, 9, Activation::identity);
  const Matrix X = randm(3, 4, 2);
  Matrix X3 = X;
  for (auto &v : X3.flat()) v *= 3.0;
  const auto a = projector_forward(p, X).Z, b = projector_forward(p, X3).Z;
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b.flat()[i] == doctest::Approx(3.0 * a.flat()[i]).epsilon(1e-13));
}

TEST_CASE("shape mismatch on forward") {
  const ModelParams p = init_params({4, 5, 3, 5, 3}, 1);
  CHECK_THROWS_AS(classifier_forward(p, Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(projector_forward(p, Matrix(2, 5)), ShapeError);
}

TEST_CASE("backward: zero upstream gives zero grads, views accumulate additively") {
  const HeadShape s{3, 4, 2, 4, 3};
  const ModelParams p = jittered(s, 5);
  const Matrix X1 = randm(5, 3, 6), X2 = randm(4, 3, 7);
  const auto c1 = classifier_forward(p, X1), c2 = classifier_forward(p, X2);
  const auto z1 = projector_forward(p, X1), z2 = projector_forward(p, X2);
  const ParamGrads zero = backward(p, c1.cache, Matrix(5, 2), z1.cache, Matrix(5, 3));
  for (const Matrix *t : zero.tensors()) {
    for (double v : t->flat()) CHECK(v == 0.0);
  }
  const Matrix dP1 = randm(5, 2, 8), dP2 = randm(4, 2, 9), dZ1 = randm(5, 3, 10), dZ2 = randm(4, 3, 11);
  ParamGrads both = zero_grads(p);
  classifier_backward(p, c1.cache, dP1, both);
  classifier_backward(p, c2.cache, dP2, both);
  projector_backward(p, z1.cache, dZ1, both);
  projector_backward(p, z2.cache, dZ2, both);
  const ParamGrads g1 = backward(p, c1.cache, dP1, z1.cache, dZ1);
  const ParamGrads g2 = backward(p, c2.cache, dP2, z2.cache, dZ2);
  auto bt = both.tensors();
  auto t1 = g1.tensors();
  auto t2 = g2.tensors();
  for (std::size_t k = 0; k < bt.size(); ++k) {
    for (std::size_t i = 0; i < bt[k]->size(); ++i) {
      CHECK(bt[k]->flat()[i] == doctest::Approx(t1[k]->flat()[i] + t2[k]->flat()[i]).epsilon(1e-13));
    }
  }
  CHECK_THROWS_AS(classifier_backward(p, c1.cache, Matrix(4, 2), both), ShapeError);
}

TEST_CASE("backward matches central differences on a tiny head") {
  const HeadShape s{3, 4, 2, 4, 3};
  ModelParams p = jittered(s, 21);
  const Matrix X = randm(5, 3, 22), RP = randm(5, 2, 23), RZ = randm(5, 3, 24);
  const auto c = classifier_forward(p, X);
  const auto z = projector_forward(p, X);
  const ParamGrads g = backward(p, c.cache, RP, z.cache, RZ);
  auto loss = [&] {
    const auto P = classifier_forward(p, X).P;
    const auto Z = projector_forward(p, X).Z;
    double v = 0;
    for (std::size_t i = 0; i < P.size(); ++i) v += RP.flat()[i] * P.flat()[i];
    for (std::size_t i = 0; i < Z.size(); ++i) v += RZ.flat()[i] * Z.flat()[i];
    return v;
  };
  auto pt = p.tensors();
  auto gt = g.tensors();
  for (std::size_t k = 0; k < pt.size(); ++k) {
    CHECK(gradcheck::tensor_rel_error(loss, *pt[k], *gt[k], 1e-5) <= 1e-4);
  }
}

TEST_CASE("adam") {
  const HeadShape s{1, 1, 1, 1, 1};
  ModelParams p = zero_params(s);
  AdamState st = init_adam(p);
  ParamGrads g = zero_grads(p);
  adam_step(p, g, st, 0.1);
  CHECK(st.t == 1);
  CHECK(p == zero_params(s));

  ModelParams q = zero_params(s);
  AdamState sq = init_adam(q);
  g.c1.W(0, 0) = 1.0;
  adam_step(q, g, sq, 0.1);
  CHECK(q.c1.W(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));

  ModelParams r1 = init_params({3, 4, 2, 4, 3}, 1), r2 = r1;
  AdamState a1 = init_adam(r1), a2 = init_adam(r2);
  ParamGrads gg = zero_grads(r1);
  for (Matrix *t : gg.tensors()) t->fill(0.3);
  adam_step(r1, gg, a1, 0.01);
  adam_step(r2, gg, a2, 0.01);
  CHECK(r1 == r2);
}

TEST_CASE("checkpoint round trip") {
  Checkpoint ck;
  ck.params = jittered({3, 4, 2, 4, 3}, 4);
  ck.adam = init_adam(ck.params);
  ParamGrads g = zero_grads(ck.params);
  for (Matrix *t : g.tensors()) t->fill(0.2);
  adam_step(ck.params, g, ck.adam, 0.01);
  ck.iter = 17;
  CenterBank bank = empty_bank(2, 3);
  bank.C(0, 0) = 1.0;
  bank.valid[0] = true;
  bank.count_last = {4, 0};
  ck.bank = bank;
  const auto path = std::filesystem::temp_directory_path() / "iocc_ck_test.ioccck";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.params == ck.params);
  CHECK(back.iter == 17);
  CHECK(back.adam.t == ck.adam.t);
  CHECK(back.adam.m.c2.W == ck.adam.m.c2.W);
  CHECK(back.adam.v.p1.b == ck.adam.v.p1.b);
  REQUIRE(back.bank.has_value());
  CHECK(*back.bank == bank);

  auto bytes = read_file(path);
  bytes.resize(bytes.size() - 3);
  write_file(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
}
