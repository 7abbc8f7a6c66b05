#include "iocc/gradcheck.hpp"

#include <cmath>
#include <random>

#include "iocc/losses.hpp"
#include "iocc/model.hpp"

namespace iocc::gradcheck {

namespace {

using Gen = std::mt19937_64;

Matrix randn(std::size_t r, std::size_t c, Gen &g) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (auto &v : m.flat()) v = n(g);
  return m;
}

Matrix random_simplex_rows(std::size_t r, std::size_t c, Gen &g) {
  Matrix m = randn(r, c, g);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (auto &v : m.row(i)) s += (v = std::exp(v));
    for (auto &v : m.row(i)) v /= s;
  }
  return m;
}

Labels random_labels(std::size_t n, int K, Gen &g) {
  std::uniform_int_distribution<int> u(0, K - 1);
  Labels y(n);
  for (auto &v : y) v = u(g);
  return y;
}

double uniform(Gen &g, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g); }

struct Acc {
  Row row;
  void add(double err) { row.max_rel_error = std::max(row.max_rel_error, err); }
};

template <class LossFn> double check_two_inputs(LossFn loss, Matrix &a, Matrix &b, double step) {
  const auto out = loss();
  const double ea = tensor_rel_error([&] { return loss().value; }, a, out.d_first, step);
  const double eb = tensor_rel_error([&] { return loss().value; }, b, out.d_second, step);
  return std::max(ea, eb);
}

// ReLU on/off pattern of the first layer of both heads for input X.
std::vector<bool> relu_pattern(const ModelParams &p, const Matrix &X) {
  std::vector<bool> out;
  const auto cc = classifier_forward(p, X);
  for (double v : cc.cache.mlp.pre.flat()) out.push_back(v > 0.0);
  const auto pc = projector_forward(p, X);
  for (double v : pc.cache.pre.flat()) out.push_back(v > 0.0);
  return out;
}

double weighted_sum(const Matrix &w, const Matrix &x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += w.flat()[i] * x.flat()[i];
  return s;
}

// Off-zero biases keep projection rows away from the origin.
void jitter(ModelParams &p, Gen &g) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (Matrix *t : p.tensors()) {
    for (auto &v : t->flat()) v += 0.1 * n(g);
  }
}

// L = <R_P, P> + <R_Z, Z> on a tiny head.
void check_model(Gen &g, bool shared, Acc &acc, double step) {
  const HeadShape shape{3, 4, 2, 4, 3, shared};
  ModelParams p = init_params(shape, g());
  jitter(p, g);
  const Matrix X = randn(5, 3, g);
  const Matrix RP = randn(5, 2, g), RZ = randn(5, 3, g);
  auto loss = [&] {
    return weighted_sum(RP, classifier_forward(p, X).P) + weighted_sum(RZ, projector_forward(p, X).Z);
  };
  const auto co = classifier_forward(p, X);
  const auto po = projector_forward(p, X);
  const ParamGrads grads = backward(p, co.cache, RP, po.cache, RZ);
  const auto base = relu_pattern(p, X);
  auto same_pattern = [&] { return relu_pattern(p, X) == base; };
  auto pt = p.tensors();
  auto gt = grads.tensors();
  for (std::size_t k = 0; k < pt.size(); ++k) {
    acc.add(tensor_rel_error(loss, *pt[k], *gt[k], step, same_pattern, &acc.row.skipped));
  }
}

// Stage-two objective through both heads on a tiny batch.
void check_chain(Gen &g, bool shared, Acc &acc, double step) {
  const HeadShape shape{3, 4, 3, 4, 3, shared};
  ModelParams p = init_params(shape, g());
  jitter(p, g);
  const Matrix xl1 = randn(2, 3, g), xl2 = randn(2, 3, g), xu1 = randn(4, 3, g), xu2 = randn(4, 3, g);
  const Labels yl = random_labels(2, 3, g), pseudo = random_labels(4, 3, g);
  const Matrix centers = randn(3, 3, g);
  const double lambda = uniform(g, 0.5, 5.0);
  auto loss = [&] {
    const auto a = classifier_forward(p, xl1), b = classifier_forward(p, xl2);
    const auto c = classifier_forward(p, xu1), d = classifier_forward(p, xu2);
    const auto z1 = projector_forward(p, xu1), z2 = projector_forward(p, xu2);
    return losses::supervised_ce_loss(a.P, b.P, yl).value + losses::pseudo_ce_loss(c.P, d.P, pseudo).value +
           losses::instance_loss(z1.Z, z2.Z, 1.0).value +
           lambda * losses::cacl_loss(z1.Z, z2.Z, centers, pseudo, 1.0).value;
  };
  const auto a = classifier_forward(p, xl1), b = classifier_forward(p, xl2);
  const auto c = classifier_forward(p, xu1), d = classifier_forward(p, xu2);
  const auto z1 = projector_forward(p, xu1), z2 = projector_forward(p, xu2);
  const auto lx = losses::supervised_ce_loss(a.P, b.P, yl);
  const auto lc = losses::pseudo_ce_loss(c.P, d.P, pseudo);
  const auto li = losses::instance_loss(z1.Z, z2.Z, 1.0);
  const auto lp = losses::cacl_loss(z1.Z, z2.Z, centers, pseudo, 1.0);
  ParamGrads grads = zero_grads(p);
  classifier_backward(p, a.cache, lx.d_first, grads);
  classifier_backward(p, b.cache, lx.d_second, grads);
  classifier_backward(p, c.cache, lc.d_first, grads);
  classifier_backward(p, d.cache, lc.d_second, grads);
  Matrix dz1 = li.d_first, dz2 = li.d_second;
  for (std::size_t i = 0; i < dz1.size(); ++i) {
    dz1.flat()[i] += lambda * lp.d_first.flat()[i];
    dz2.flat()[i] += lambda * lp.d_second.flat()[i];
  }
  projector_backward(p, z1.cache, dz1, grads);
  projector_backward(p, z2.cache, dz2, grads);

  std::vector<std::vector<bool>> base;
  for (const Matrix *x : {&xl1, &xl2, &xu1, &xu2}) base.push_back(relu_pattern(p, *x));
  auto same_pattern = [&] {
    std::size_t k = 0;
    for (const Matrix *x : {&xl1, &xl2, &xu1, &xu2}) {
      if (relu_pattern(p, *x) != base[k++]) return false;
    }
    return true;
  };
  auto pt = p.tensors();
  auto gt = grads.tensors();
  for (std::size_t k = 0; k < pt.size(); ++k) {
    acc.add(tensor_rel_error(loss, *pt[k], *gt[k], step, same_pattern, &acc.row.skipped));
  }
}

} // namespace

double tensor_rel_error(const std::function<double()> &f, Matrix &x, const Matrix &analytic, double step,
                        const std::function<bool()> &valid, std::size_t *skipped) {
  require_shape(analytic, x.rows(), x.cols(), "tensor_rel_error analytic");
  double max_diff = 0.0;
  double max_a = 0.0;
  double max_n = 0.0;
  auto xs = x.flat();
  auto as = analytic.flat();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double orig = xs[i];
    xs[i] = orig + step;
    const double fp = f();
    bool ok = !valid || valid();
    xs[i] = orig - step;
    const double fm = f();
    ok = ok && (!valid || valid());
    xs[i] = orig;
    if (!ok) {
      if (skipped) ++*skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * step);
    max_diff = std::max(max_diff, std::abs(numeric - as[i]));
    max_a = std::max(max_a, std::abs(as[i]));
    max_n = std::max(max_n, std::abs(numeric));
  }
  const double denom = std::max(max_a, max_n);
  return denom > 0.0 ? max_diff / denom : 0.0;
}

std::vector<Row> run_all(const Options &opts) {
  Acc cacl{{"cacl_loss"}}, inst{{"instance_loss(literal)"}}, inst_pos{{"instance_loss(with_positive)"}},
      pce{{"pseudo_ce_loss"}}, sce{{"supervised_ce_loss"}}, model{{"model_backward"}}, model_shared{{"model_backward(shared)"}},
      chain{{"staged_objective_chain"}}, chain_shared{{"staged_objective_chain(shared)"}};

  for (int s = 0; s < opts.instances; ++s) {
    Gen g(opts.seed * 1000003ULL + static_cast<std::uint64_t>(s));

    {
      const int K = 3;
      Matrix z1 = randn(4, 3, g), z2 = randn(4, 3, g);
      Matrix c = randn(K, 3, g);
      const Labels y = random_labels(4, K, g);
      const double T = uniform(g, 0.5, 2.0);
      cacl.add(check_two_inputs([&] { return losses::cacl_loss(z1, z2, c, y, T); }, z1, z2, opts.step));
    }
    {
      Matrix z1 = randn(3, 4, g), z2 = randn(3, 4, g);
      const double T = uniform(g, 0.5, 2.0);
      inst.add(check_two_inputs([&] { return losses::instance_loss(z1, z2, T); }, z1, z2, opts.step));
      inst_pos.add(check_two_inputs(
          [&] { return losses::instance_loss(z1, z2, T, losses::InstanceDenominator::with_positive); }, z1, z2,
          opts.step));
    }
    {
      Matrix p1 = random_simplex_rows(4, 3, g), p2 = random_simplex_rows(4, 3, g);
      const Labels y = random_labels(4, 3, g);
      pce.add(check_two_inputs([&] { return losses::pseudo_ce_loss(p1, p2, y); }, p1, p2, opts.step));
    }
    {
      Matrix p1 = random_simplex_rows(2, 4, g), p2 = random_simplex_rows(2, 4, g);
      const Labels y = random_labels(2, 4, g);
      sce.add(check_two_inputs([&] { return losses::supervised_ce_loss(p1, p2, y); }, p1, p2, opts.step));
    }
    check_model(g, false, model, opts.step);
    check_model(g, true, model_shared, opts.step);
    check_chain(g, false, chain, opts.step);
    check_chain(g, true, chain_shared, opts.step);
  }

  std::vector<Row> rows;
  for (Acc *a : {&cacl, &inst, &inst_pos, &pce, &sce, &model, &model_shared, &chain, &chain_shared}) {
    a->row.instances = opts.instances;
    a->row.pass = a->row.max_rel_error <= opts.tolerance;
    rows.push_back(a->row);
  }
  return rows;
}

} // namespace iocc::gradcheck
