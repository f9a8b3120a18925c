#pragma once

// Supervised examples, the AdamW trainer with early stopping, autoregressive
// rollout, error metrics and the end-to-end experiment driver.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tpc/model.hpp"
#include "tpc/prompts.hpp"
#include "tpc/series.hpp"

namespace tpc {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 1.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  /// Stop after this many optimizer steps; 0 means no limit.
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One teacher-forced training window in normalized space.
struct Example {
  PatchSequence patches;
  /// (P-1) x L_p: row p holds the L_p values right after patch p.
  std::vector<double> targets;
  Timestamp start;
  Tensor bank;
};

/// `values` holds lookback + patch_len raw steps starting at `start`. The
/// bank is built from the spans of a window starting at `bank_start`.
Example make_example(const ModelConfig& config, std::span<const double> values, Timestamp start,
                     Timestamp bank_start, const TemporalEncoder& encoder);

/// Mean squared error of the prediction rows selected by the loss policy.
Tensor example_loss(const ForecastModel& model, const Example& example);

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, const TrainConfig& config);
  void step();
  void zero_grad();
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  TrainConfig config_;
  std::size_t t_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

/// Mean teacher-forced loss over a set of examples, without recording a graph.
double mean_loss(const ForecastModel& model, std::span<const Example> examples);

/// Trains the model's trainable set. The parameters with the best validation
/// loss are restored at the end. A NaN anywhere raises DivergenceError.
TrainResult train(ForecastModel& model, std::span<const Example> train_set,
                  std::span<const Example> val_set, const TrainConfig& config);

/// Autoregressive forecast of `horizon` steps in the original scale.
/// `lookback` has exactly config.lookback raw values starting at `start`.
/// Bank spans are shifted by `span_offset_seconds`.
std::vector<double> forecast(const ForecastModel& model, const TemporalEncoder& encoder,
                             std::span<const double> lookback, Timestamp start,
                             std::size_t horizon, std::int64_t span_offset_seconds = 0);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

Metrics metrics(std::span<const double> prediction, std::span<const double> truth);

/// Repeats the last observed value.
std::vector<double> persistence_forecast(std::span<const double> lookback, std::size_t horizon);

// ---- experiment driver -------------------------------------------------------

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  std::size_t horizon = 32;
  std::size_t train_stride = 1;
  std::size_t eval_stride = 1;
  /// Each window reads the spans of another window drawn from a fixed
  /// permutation of its split.
  bool shuffle_spans = false;

  void validate() const;
};

struct ExperimentResult {
  TrainResult training;
  Metrics test;
  Metrics persistence;
  ParamReport params;
  std::size_t test_windows = 0;
  double seconds = 0.0;
};

/// Builds examples from the chronological splits, trains, and evaluates on
/// the test split. Multivariate series are treated channel-independently.
ExperimentResult run_experiment(ForecastModel& model, const RawSeries& series,
                                const ExperimentConfig& config, const TemporalEncoder& encoder);

struct TestEvaluation {
  Metrics model;
  Metrics persistence;
  std::size_t windows = 0;
};

/// Rolls the model out over every test window (config.horizon steps, windows
/// every config.eval_stride steps). Spans are shuffled when
/// config.shuffle_spans is set, with the same permutation run_experiment uses.
TestEvaluation evaluate_test(const ForecastModel& model, const RawSeries& series,
                             const ExperimentConfig& config, const TemporalEncoder& encoder);

/// Per-window span offsets (seconds) for a split of windows with the given
/// start indices; zero everywhere unless `shuffle`.
std::vector<std::int64_t> span_offsets(std::span<const std::size_t> starts,
                                       const Granularity& granularity, bool shuffle,
                                       std::uint64_t seed);

}  // namespace tpc
