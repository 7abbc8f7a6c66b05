#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "iocc/centers.hpp"
#include "iocc/data.hpp"
#include "iocc/losses.hpp"
#include "iocc/metrics.hpp"
#include "iocc/model.hpp"

namespace iocc {

enum class EvalMode { argmax, ieot };

struct TrainConfig {
  // transport
  double eps1 = 1.0;
  double eps2 = 1000.0;
  double eps3 = 25.0;
  int T1 = 10;
  int T2 = 10;
  int max_inner_sweeps = 200;
  double row_tol = 1e-10;
  bool ieot_early_stop = false;
  // Multiply eps3 by (transport rows / dataset size) for batch problems, the
  // equivalent of a 1/N sample mass renormalized to a unit-mass plan.
  bool eps3_batch_scaling = true;
  // losses
  double lambda = 5.0;
  double T_P = 1.0;
  double T_I = 1.0;
  losses::InstanceDenominator instance_denominator = losses::InstanceDenominator::literal;
  // batches
  std::size_t B = 15;
  std::size_t mu_B = 200;
  // heads
  std::size_t D = 128;
  std::size_t hidden_c = 128;
  std::size_t hidden_p = 128;
  bool shared_hidden = false; // projector reuses the classifier's first layer
  // schedule
  long E_total = 1500;
  long E_first = 1000;
  double lr = 5e-4;
  // centers
  double tau = 0.95;
  double center_ema_decay = 0.0;
  // views; unset means 0.05 x mean row norm of the dataset
  std::optional<double> sigma_aug;
  std::uint64_t seed = 0;
  long eval_every = 100;
  EvalMode eval_mode = EvalMode::argmax;

  void validate() const;
};

/// Unknown keys are rejected with ConfigError.
TrainConfig config_from_json(const nlohmann::json &j);
/// Every field, defaults materialized.
nlohmann::json config_to_json(const TrainConfig &c);
TrainConfig load_config(const std::filesystem::path &path);

struct IterationStats {
  double loss_supervised = 0.0;
  double loss_pseudo = 0.0;
  double loss_instance = 0.0;
  double loss_center = 0.0;
  double loss_total = 0.0;
  int pseudo_clusters = 0;  // distinct IEOT pseudo-labels in the batch
  std::size_t reliable = 0; // unlabeled samples passing tau
  int ieot_sweeps = 0;
  double ieot_row_residual = 0.0;
  double ieot_col_residual = 0.0;
  double ieot_max_increase = 0.0; // largest step-to-step rise of the MM objective trace
};

struct TrainState {
  ModelParams params;
  AdamState adam;
  CenterBank bank;
  long iter = 0;
  std::size_t dataset_n = 0;
  Rng rng;
  std::vector<metrics::MetricsRecord> metrics_log;
  std::optional<IterationStats> last;
};

TrainState init_state(const TrainConfig &config, const EmbeddingDataset &ds);

/// One pass of the training iteration on a sampled batch: forwards, IEOT
/// pseudo-labels, center update, staged losses, backward, Adam.
void train_iteration(TrainState &state, const Batch &batch, const TrainConfig &config);

/// Classifier forward on all original embeddings, argmax labels (or an IEOT
/// pass over the full set when eval_mode = ieot), then ACC/NMI/cluster count.
metrics::MetricsRecord evaluate(const TrainState &state, const EmbeddingDataset &ds, const TrainConfig &config);

/// Predicted labels used by evaluate().
Labels predict(const TrainState &state, const EmbeddingDataset &ds, const TrainConfig &config);

struct TrainHooks {
  std::function<void(const metrics::MetricsRecord &, const TrainState &)> on_metrics;
  std::function<void(const TrainState &, std::string_view tag)> on_checkpoint;
  std::function<void(const TrainState &)> on_iteration; // after every optimizer step
};

/// Runs E_total iterations. Evaluates at iteration 0, every eval_every
/// iterations and at the end. Center bank is seeded from labeled means when
/// stage two begins.
TrainState train(const TrainConfig &config, const EmbeddingDataset &ds, const TrainHooks &hooks = {});

/// One JSON-lines record; loss components are included when `stats` is set.
nlohmann::json metrics_to_json(const metrics::MetricsRecord &m, const IterationStats *stats);

/// eps3 used for a transport problem over `batch_rows` of a dataset of
/// `dataset_n` rows.
double batch_eps3(const TrainConfig &c, std::size_t batch_rows, std::size_t dataset_n);

/// Resolves sigma_aug against the dataset.
double resolved_sigma(const TrainConfig &c, const EmbeddingDataset &ds);

} // namespace iocc
