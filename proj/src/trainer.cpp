#include "iocc/trainer.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "iocc/ieot.hpp"

namespace iocc {

namespace {

using nlohmann::json;

std::string to_string(losses::InstanceDenominator m) {
  return m == losses::InstanceDenominator::literal ? "literal" : "with_positive";
}

std::string to_string(EvalMode m) { return m == EvalMode::argmax ? "argmax" : "ieot"; }

template <class T> void read_field(const json &j, const char *key, T &dst) {
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception &e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

void require_finite(const IterationStats &s, long iter, const ieot::TransportPlan &plan) {
  const double vals[] = {s.loss_supervised, s.loss_pseudo, s.loss_instance, s.loss_center, s.loss_total};
  for (double v : vals) {
    if (std::isfinite(v)) continue;
    double fnorm = 0.0, gnorm = 0.0;
    for (double x : plan.f) fnorm = std::max(fnorm, std::abs(x));
    for (double x : plan.g) gnorm = std::max(gnorm, std::abs(x));
    std::ostringstream os;
    os << "non-finite loss at iteration " << iter << ": L_X=" << s.loss_supervised << " L_C=" << s.loss_pseudo
       << " L_I=" << s.loss_instance << " L_P=" << s.loss_center << " |f|_inf=" << fnorm << " |g|_inf=" << gnorm
       << " h=" << plan.h;
    throw NumericError(os.str());
  }
}

Matrix scaled_sum(const Matrix &a, double wa, const Matrix *b, double wb) {
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.flat()[i] *= wa;
    if (b) out.flat()[i] += wb * b->flat()[i];
  }
  return out;
}

} // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string &m) { throw ConfigError("config: " + m); };
  if (!(eps1 > 0) || !(eps2 > 0) || !(eps3 >= 0)) fail("eps1 and eps2 must be > 0, eps3 >= 0");
  if (!(lambda >= 0)) fail("lambda must be >= 0");
  if (T1 < 1 || T2 < 1) fail("T1 and T2 must be >= 1");
  if (max_inner_sweeps < T2) fail("max_inner_sweeps must be >= T2");
  if (!(row_tol > 0)) fail("row_tol must be > 0");
  if (!(T_P > 0) || !(T_I > 0)) fail("temperatures must be > 0");
  if (B < 1) fail("B must be >= 1");
  if (mu_B < 2) fail("mu_B must be >= 2");
  if (D < 1 || hidden_c < 1 || hidden_p < 1) fail("layer widths must be >= 1");
  if (shared_hidden && hidden_p != hidden_c) fail("shared_hidden needs hidden_p == hidden_c");
  if (E_total < 0 || E_first < 0) fail("E_total and E_first must be >= 0");
  if (E_first > E_total) fail("E_first must be <= E_total");
  if (!(lr >= 0)) fail("lr must be >= 0");
  if (!(tau >= 0 && tau <= 1)) fail("tau must be in [0, 1]");
  if (!(center_ema_decay >= 0 && center_ema_decay < 1)) fail("center_ema_decay must be in [0, 1)");
  if (sigma_aug && !(*sigma_aug >= 0)) fail("sigma_aug must be >= 0");
  if (eval_every < 1) fail("eval_every must be >= 1");
}

TrainConfig config_from_json(const json &j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::set<std::string> known = {
      "eps1", "eps2", "eps3", "T1", "T2", "max_inner_sweeps", "row_tol", "ieot_early_stop", "eps3_batch_scaling", "lambda", "T_P", "T_I",
      "instance_denominator", "B", "mu_B", "D", "hidden_c", "hidden_p", "shared_hidden", "E_total", "E_first", "lr", "tau",
      "center_ema_decay", "sigma_aug", "seed", "eval_every", "eval_mode"};
  for (const auto &[k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("config: unknown key '" + k + "'");
  }
  TrainConfig c;
  auto opt = [&](const char *key, auto &dst) {
    if (j.contains(key)) read_field(j, key, dst);
  };
  opt("eps1", c.eps1);
  opt("eps2", c.eps2);
  opt("eps3", c.eps3);
  opt("T1", c.T1);
  opt("T2", c.T2);
  opt("max_inner_sweeps", c.max_inner_sweeps);
  opt("row_tol", c.row_tol);
  opt("ieot_early_stop", c.ieot_early_stop);
  opt("eps3_batch_scaling", c.eps3_batch_scaling);
  opt("lambda", c.lambda);
  opt("T_P", c.T_P);
  opt("T_I", c.T_I);
  opt("B", c.B);
  opt("mu_B", c.mu_B);
  opt("D", c.D);
  opt("hidden_c", c.hidden_c);
  opt("hidden_p", c.hidden_p);
  opt("shared_hidden", c.shared_hidden);
  opt("E_total", c.E_total);
  opt("E_first", c.E_first);
  opt("lr", c.lr);
  opt("tau", c.tau);
  opt("center_ema_decay", c.center_ema_decay);
  opt("seed", c.seed);
  opt("eval_every", c.eval_every);
  if (j.contains("sigma_aug") && !j["sigma_aug"].is_null()) {
    double s = 0;
    read_field(j, "sigma_aug", s);
    c.sigma_aug = s;
  }
  if (j.contains("instance_denominator")) {
    std::string s;
    read_field(j, "instance_denominator", s);
    if (s == "literal") c.instance_denominator = losses::InstanceDenominator::literal;
    else if (s == "with_positive") c.instance_denominator = losses::InstanceDenominator::with_positive;
    else throw ConfigError("config: instance_denominator must be 'literal' or 'with_positive'");
  }
  if (j.contains("eval_mode")) {
    std::string s;
    read_field(j, "eval_mode", s);
    if (s == "argmax") c.eval_mode = EvalMode::argmax;
    else if (s == "ieot") c.eval_mode = EvalMode::ieot;
    else throw ConfigError("config: eval_mode must be 'argmax' or 'ieot'");
  }
  c.validate();
  return c;
}

json config_to_json(const TrainConfig &c) {
  json j;
  j["eps1"] = c.eps1;
  j["eps2"] = c.eps2;
  j["eps3"] = c.eps3;
  j["T1"] = c.T1;
  j["T2"] = c.T2;
  j["max_inner_sweeps"] = c.max_inner_sweeps;
  j["row_tol"] = c.row_tol;
  j["ieot_early_stop"] = c.ieot_early_stop;
  j["eps3_batch_scaling"] = c.eps3_batch_scaling;
  j["lambda"] = c.lambda;
  j["T_P"] = c.T_P;
  j["T_I"] = c.T_I;
  j["instance_denominator"] = to_string(c.instance_denominator);
  j["B"] = c.B;
  j["mu_B"] = c.mu_B;
  j["D"] = c.D;
  j["hidden_c"] = c.hidden_c;
  j["hidden_p"] = c.hidden_p;
  j["shared_hidden"] = c.shared_hidden;
  j["E_total"] = c.E_total;
  j["E_first"] = c.E_first;
  j["lr"] = c.lr;
  j["tau"] = c.tau;
  j["center_ema_decay"] = c.center_ema_decay;
  j["sigma_aug"] = c.sigma_aug ? json(*c.sigma_aug) : json(nullptr);
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["eval_mode"] = to_string(c.eval_mode);
  return j;
}

TrainConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception &e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

double resolved_sigma(const TrainConfig &c, const EmbeddingDataset &ds) {
  return c.sigma_aug ? *c.sigma_aug : default_view_sigma(ds.X);
}

double batch_eps3(const TrainConfig &c, std::size_t batch_rows, std::size_t dataset_n) {
  if (!c.eps3_batch_scaling || dataset_n == 0) return c.eps3;
  return c.eps3 * static_cast<double>(batch_rows) / static_cast<double>(dataset_n);
}

TrainState init_state(const TrainConfig &config, const EmbeddingDataset &ds) {
  config.validate();
  TrainState s;
  s.rng.seed(config.seed);
  const HeadShape shape{ds.d(), config.hidden_c, static_cast<std::size_t>(ds.K), config.hidden_p, config.D,
                        config.shared_hidden};
  s.params = init_params(shape, s.rng());
  s.adam = init_adam(s.params);
  s.bank = empty_bank(static_cast<std::size_t>(ds.K), config.D);
  s.dataset_n = ds.n();
  return s;
}

void train_iteration(TrainState &state, const Batch &batch, const TrainConfig &config) {
  const ModelParams &params = state.params;
  const auto w = losses::stage_weights(state.iter, config.E_first, config.lambda);

  // (1) forwards
  const auto pl1 = classifier_forward(params, batch.xl1);
  const auto pl2 = classifier_forward(params, batch.xl2);
  const auto pu0 = classifier_forward(params, batch.xu);
  const auto pu1 = classifier_forward(params, batch.xu1);
  const auto pu2 = classifier_forward(params, batch.xu2);
  const auto zl0 = projector_forward(params, batch.xl);
  const auto zu0 = projector_forward(params, batch.xu);
  const auto zu1 = projector_forward(params, batch.xu1);
  const auto zu2 = projector_forward(params, batch.xu2);

  // (2) pseudo-labels from the transport plan on the original unlabeled rows
  const double eps3 = batch_eps3(config, batch.xu.rows(), state.dataset_n);
  auto problem = ieot::TransportProblem::uniform(pu0.P, config.eps1, config.eps2, eps3, config.T1, config.T2);
  problem.max_inner_sweeps = config.max_inner_sweeps;
  problem.row_tol = config.row_tol;
  problem.early_stop = config.ieot_early_stop;
  const auto plan = ieot::mm_solve(problem, state.rng);
  const Labels pseudo = ieot::pseudo_labels(plan.Q);

  // (3) centers
  const auto mask = reliability_mask(pu0.P, config.tau);
  state.bank = update_centers(zl0.Z, batch.yl, zu0.Z, pseudo, mask, state.bank, config.center_ema_decay);

  // (4) losses
  const auto lX = losses::supervised_ce_loss(pl1.P, pl2.P, batch.yl);
  const auto lC = losses::pseudo_ce_loss(pu1.P, pu2.P, pseudo);
  const auto lI = losses::instance_loss(zu1.Z, zu2.Z, config.T_I, config.instance_denominator);
  std::optional<losses::LossOutput> lP;
  if (w.center != 0.0) {
    if (!state.bank.all_valid()) throw NumericError("train_iteration: stage two needs every center populated");
    lP = losses::cacl_loss(zu1.Z, zu2.Z, state.bank.C, pseudo, config.T_P);
  }

  IterationStats st;
  st.loss_supervised = lX.value;
  st.loss_pseudo = lC.value;
  st.loss_instance = lI.value;
  st.loss_center = lP ? lP->value : 0.0;
  st.loss_total = w.supervised * lX.value + w.pseudo * lC.value + w.instance * lI.value + (lP ? w.center * lP->value : 0.0);
  st.pseudo_clusters = metrics::predicted_cluster_count(pseudo);
  st.reliable = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  st.ieot_sweeps = plan.inner_sweeps;
  st.ieot_row_residual = plan.row_residual(problem.a);
  st.ieot_col_residual = plan.col_residual();
  for (std::size_t t = 1; t < plan.objective_trace.size(); ++t) {
    st.ieot_max_increase = std::max(st.ieot_max_increase, plan.objective_trace[t] - plan.objective_trace[t - 1]);
  }
  require_finite(st, state.iter, plan);

  // (5) backward through every view that enters a loss
  ParamGrads grads = zero_grads(params);
  classifier_backward(params, pl1.cache, scaled_sum(lX.d_first, w.supervised, nullptr, 0), grads);
  classifier_backward(params, pl2.cache, scaled_sum(lX.d_second, w.supervised, nullptr, 0), grads);
  classifier_backward(params, pu1.cache, scaled_sum(lC.d_first, w.pseudo, nullptr, 0), grads);
  classifier_backward(params, pu2.cache, scaled_sum(lC.d_second, w.pseudo, nullptr, 0), grads);
  projector_backward(params, zu1.cache, scaled_sum(lI.d_first, w.instance, lP ? &lP->d_first : nullptr, w.center),
                     grads);
  projector_backward(params, zu2.cache, scaled_sum(lI.d_second, w.instance, lP ? &lP->d_second : nullptr, w.center),
                     grads);

  // (6) update
  adam_step(state.params, grads, state.adam, config.lr);
  state.iter += 1;
  state.last = st;
}

Labels predict(const TrainState &state, const EmbeddingDataset &ds, const TrainConfig &config) {
  const auto out = classifier_forward(state.params, ds.X);
  if (config.eval_mode == EvalMode::ieot) {
    auto problem = ieot::TransportProblem::uniform(out.P, config.eps1, config.eps2, config.eps3, config.T1, config.T2);
    problem.max_inner_sweeps = config.max_inner_sweeps;
    problem.row_tol = config.row_tol;
    Rng rng(config.seed ^ static_cast<std::uint64_t>(state.iter));
    return ieot::pseudo_labels(ieot::mm_solve(problem, rng).Q);
  }
  return ieot::pseudo_labels(out.P);
}

metrics::MetricsRecord evaluate(const TrainState &state, const EmbeddingDataset &ds, const TrainConfig &config) {
  const Labels yhat = predict(state, ds, config);
  metrics::MetricsRecord m;
  m.iter = state.iter;
  m.predicted_clusters = metrics::predicted_cluster_count(yhat);
  if (ds.y_true) {
    m.acc = metrics::hungarian_accuracy(*ds.y_true, yhat, ds.K);
    m.nmi = metrics::nmi(*ds.y_true, yhat);
  }
  return m;
}

TrainState train(const TrainConfig &config, const EmbeddingDataset &ds, const TrainHooks &hooks) {
  config.validate();
  ds.validate();
  if (!ds.y_true || ds.labeled_idx.empty()) throw ConfigError("train: the dataset has no labeled samples");
  std::vector<bool> covered(ds.K, false);
  for (auto i : ds.labeled_idx) covered[(*ds.y_true)[i]] = true;
  for (int k = 0; k < ds.K; ++k) {
    if (!covered[k]) throw ConfigError("train: labeled pool has no sample of cluster " + std::to_string(k));
  }
  const double sigma = resolved_sigma(config, ds);

  TrainState state = init_state(config, ds);
  auto record = [&] {
    auto m = evaluate(state, ds, config);
    state.metrics_log.push_back(m);
    if (hooks.on_metrics) hooks.on_metrics(m, state);
  };
  record();

  Labels y_labeled;
  for (auto i : ds.labeled_idx) y_labeled.push_back((*ds.y_true)[i]);
  const Matrix x_labeled = gather_rows(ds.X, ds.labeled_idx);

  while (state.iter < config.E_total) {
    if (state.iter == config.E_first) {
      const auto z = projector_forward(state.params, x_labeled);
      state.bank = centers_from_labeled(z.Z, y_labeled, static_cast<std::size_t>(ds.K));
    }
    const Batch batch = sample_batch(ds, config.B, config.mu_B, state.rng, sigma);
    train_iteration(state, batch, config);
    if (hooks.on_iteration) hooks.on_iteration(state);
    if (state.iter % config.eval_every == 0 || state.iter == config.E_total) record();
    if (hooks.on_checkpoint && state.iter == config.E_first) hooks.on_checkpoint(state, "stage1");
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(state, "final");
  return state;
}

nlohmann::json metrics_to_json(const metrics::MetricsRecord &m, const IterationStats *stats) {
  json j;
  j["iter"] = m.iter;
  j["acc"] = m.acc ? json(*m.acc) : json(nullptr);
  j["nmi"] = m.nmi ? json(*m.nmi) : json(nullptr);
  j["predicted_clusters"] = m.predicted_clusters;
  if (stats) {
    j["loss"] = {{"supervised", stats->loss_supervised},
                 {"pseudo", stats->loss_pseudo},
                 {"instance", stats->loss_instance},
                 {"center", stats->loss_center},
                 {"total", stats->loss_total}};
    j["pseudo_clusters"] = stats->pseudo_clusters;
    j["reliable"] = stats->reliable;
    j["ieot_sweeps"] = stats->ieot_sweeps;
  }
  return j;
}

} // namespace iocc
