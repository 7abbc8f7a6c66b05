// iocc: dataset synthesis, training, evaluation, standalone transport solve
// and gradient checks.
//
// Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "iocc/checkpoint.hpp"
#include "iocc/data.hpp"
#include "iocc/error.hpp"
#include "iocc/gradcheck.hpp"
#include "iocc/ieot.hpp"
#include "iocc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace iocc;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

int cmd_generate(const SyntheticSpec &spec, const fs::path &out) {
  const auto ds = generate_synthetic(spec);
  save_dataset(ds, out);
  std::vector<std::size_t> sizes(static_cast<std::size_t>(ds.K), 0);
  for (int y : *ds.y_true) ++sizes[static_cast<std::size_t>(y)];
  std::cout << "n " << ds.n() << "\nd " << ds.d() << "\nK " << ds.K << "\ncluster_sizes";
  for (auto s : sizes) std::cout << ' ' << s;
  std::cout << "\nlabeled " << ds.labeled_idx.size() << "\nwrote " << out.string() << '\n';
  return kOk;
}

int cmd_train(const fs::path &config_path, const fs::path &data_path, const fs::path &out_dir) {
  const TrainConfig config = load_config(config_path);
  const EmbeddingDataset ds = load_dataset(data_path);
  fs::create_directories(out_dir);

  json snapshot = config_to_json(config);
  snapshot["sigma_aug_resolved"] = resolved_sigma(config, ds);
  write_text(out_dir / "config.resolved.json", snapshot.dump(2) + "\n");

  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw Error("cannot open " + (out_dir / "metrics.jsonl").string());

  TrainHooks hooks;
  hooks.on_metrics = [&](const metrics::MetricsRecord &m, const TrainState &s) {
    const IterationStats *stats = s.last ? &*s.last : nullptr;
    const json j = metrics_to_json(m, stats);
    metrics << j.dump() << '\n';
    metrics.flush();
    std::cout << j.dump() << std::endl;
  };
  hooks.on_checkpoint = [&](const TrainState &s, std::string_view tag) {
    Checkpoint ck{s.params, s.adam, std::nullopt, s.iter};
    if (!s.bank.C.empty()) ck.bank = s.bank;
    save_checkpoint(ck, out_dir / ("checkpoint_" + std::string(tag) + ".ioccck"));
  };
  train(config, ds, hooks);
  return kOk;
}

int cmd_eval(const fs::path &ck_path, const fs::path &data_path, const std::optional<fs::path> &config_path) {
  const TrainConfig config = config_path ? load_config(*config_path) : TrainConfig{};
  const EmbeddingDataset ds = load_dataset(data_path);
  Checkpoint ck = load_checkpoint(ck_path);
  const auto shape = ck.params.shape();
  if (shape.d != ds.d()) throw ShapeError("checkpoint input dim does not match the dataset");
  if (static_cast<int>(shape.K) != ds.K) throw ShapeError("checkpoint cluster count does not match the dataset");
  TrainState state;
  state.params = std::move(ck.params);
  state.iter = ck.iter;
  const auto m = evaluate(state, ds, config);
  std::cout << metrics_to_json(m, nullptr).dump() << '\n';
  return kOk;
}

Matrix parse_p0(const json &j) {
  const json &p = j.at("P0");
  if (!p.is_array() || p.empty()) throw ParseError("problem: P0 must be a non-empty array");
  if (p.front().is_array()) {
    const std::size_t K = p.front().size();
    Matrix m(p.size(), K);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!p[i].is_array() || p[i].size() != K) throw ShapeError("problem: ragged P0 rows");
      for (std::size_t k = 0; k < K; ++k) m(i, k) = p[i][k].get<double>();
    }
    return m;
  }
  // flat row-major; needs K
  if (!j.contains("K")) throw ParseError("problem: flat P0 requires K");
  const auto K = j.at("K").get<std::size_t>();
  if (K == 0 || p.size() % K != 0) throw ShapeError("problem: P0 length is not a multiple of K");
  Matrix m(p.size() / K, K);
  for (std::size_t i = 0; i < p.size(); ++i) m.flat()[i] = p[i].get<double>();
  return m;
}

int cmd_solve_ot(const fs::path &problem_path, const fs::path &out) {
  json j;
  {
    std::ifstream in(problem_path);
    if (!in) throw Error("cannot open " + problem_path.string());
    try {
      j = json::parse(in);
    } catch (const json::exception &e) {
      throw ParseError(problem_path.string() + ": " + e.what());
    }
  }
  ieot::TransportProblem pb;
  std::uint64_t seed = 0;
  try {
    pb = ieot::TransportProblem::uniform(parse_p0(j), j.value("eps1", 1.0), j.value("eps2", 1000.0),
                                         j.value("eps3", 25.0), j.value("T1", 10), j.value("T2", 10));
    if (j.contains("a")) pb.a = j.at("a").get<Vector>();
    seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception &e) {
    throw ParseError(problem_path.string() + ": " + e.what());
  }
  pb.validate();
  Rng rng(seed);
  const auto plan = ieot::mm_solve(pb, rng);

  json q = json::array();
  for (std::size_t i = 0; i < plan.Q.rows(); ++i) {
    q.push_back(std::vector<double>(plan.Q.row(i).begin(), plan.Q.row(i).end()));
  }
  const json result = {{"Q", q},
                       {"b", plan.b},
                       {"objective_trace", plan.objective_trace},
                       {"labels", ieot::pseudo_labels(plan.Q)}};
  write_text(out, result.dump(2) + "\n");
  std::printf("row_residual %.3e\ncol_residual %.3e\nobjective %.12g\n", plan.row_residual(pb.a),
              plan.col_residual(), plan.objective_trace.empty() ? 0.0 : plan.objective_trace.back());
  return kOk;
}

int cmd_grad_check(std::uint64_t seed, double tol) {
  gradcheck::Options opts;
  opts.seed = seed;
  opts.tolerance = tol;
  const auto rows = gradcheck::run_all(opts);
  bool all = true;
  std::printf("%-30s %14s %8s %8s  %s\n", "check", "max_rel_error", "inst", "skipped", "result");
  for (const auto &r : rows) {
    std::printf("%-30s %14.3e %8d %8zu  %s\n", r.name.c_str(), r.max_rel_error, r.instances, r.skipped,
                r.pass ? "PASS" : "FAIL");
    all = all && r.pass;
  }
  std::printf("tolerance %.1e: %s\n", tol, all ? "all passed" : "FAILED");
  return all ? kOk : kRuntime;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Few-shot clustering over fixed embeddings"};
  app.require_subcommand(1, 1);

  auto *gen = app.add_subcommand("generate", "Synthesize a Gaussian-mixture embedding dataset");
  SyntheticSpec spec;
  fs::path gen_out;
  gen->add_option("--k", spec.K, "clusters")->required()->check(CLI::PositiveNumber);
  gen->add_option("--n", spec.n, "samples")->required()->check(CLI::PositiveNumber);
  gen->add_option("--d", spec.d, "dimension")->required()->check(CLI::PositiveNumber);
  gen->add_option("--sep", spec.center_separation, "center norm")->capture_default_str();
  gen->add_option("--sigma", spec.noise_sigma, "noise std")->capture_default_str();
  gen->add_option("--ratio", spec.imbalance_ratio, "largest/smallest cluster")->capture_default_str();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->add_option("-o,--out", gen_out, "dataset path (.jsonl for text)")->required();

  auto *tr = app.add_subcommand("train", "Train the heads and write metrics and checkpoints");
  fs::path tr_config, tr_data, tr_out;
  tr->add_option("--config", tr_config, "JSON config")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", tr_data, "dataset")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "output directory")->required();

  auto *ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  fs::path ev_ck, ev_data;
  std::optional<fs::path> ev_config;
  ev->add_option("--checkpoint", ev_ck)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data)->required()->check(CLI::ExistingFile);
  ev->add_option("--config", ev_config, "config for eval_mode and transport settings")->check(CLI::ExistingFile);

  auto *ot = app.add_subcommand("solve-ot", "Solve one transport problem from JSON");
  fs::path ot_problem, ot_out;
  ot->add_option("--problem", ot_problem)->required()->check(CLI::ExistingFile);
  ot->add_option("-o,--out", ot_out)->required();

  auto *gc = app.add_subcommand("grad-check", "Finite-difference check of every gradient");
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_option("--tol", gc_tol)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_generate(spec, gen_out);
    if (*tr) return cmd_train(tr_config, tr_data, tr_out);
    if (*ev) return cmd_eval(ev_ck, ev_data, ev_config);
    if (*ot) return cmd_solve_ot(ot_problem, ot_out);
    if (*gc) return cmd_grad_check(gc_seed, gc_tol);
  } catch (const ConfigError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
