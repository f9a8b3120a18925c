#include "tpc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "tpc/errors.hpp"
#include "tpc/log.hpp"
#include "tpc/random.hpp"

namespace tpc {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
}

// ---- examples ---------------------------------------------------------------------

Example make_example(const ModelConfig& config, std::span<const double> values, Timestamp start,
                     Timestamp bank_start, const TemporalEncoder& encoder) {
  const std::size_t t = config.lookback;
  const std::size_t lp = config.patch_len;
  if (values.size() != t + lp) {
    throw ContractError("make_example: expected " + std::to_string(t + lp) + " values, got " +
                        std::to_string(values.size()));
  }
  double mean = 0.0, std = 1.0;
  const std::vector<double> norm = revin_normalize(values.first(t), mean, std);
  Example ex;
  ex.patches = patchify(norm, lp, config.stride);
  ex.patches.stats = {{mean}, {std}};
  ex.patches.window_span = {start, start.plus(static_cast<std::int64_t>(t - 1) *
                                              config.granularity.seconds)};
  const std::size_t p = ex.patches.count;
  ex.targets.reserve((p - 1) * lp);
  for (std::size_t row = 0; row + 1 < p; ++row) {
    const std::size_t from = row * config.stride + lp;
    for (std::size_t j = 0; j < lp; ++j) ex.targets.push_back((values[from + j] - mean) / std);
  }
  ex.start = start;
  ex.bank = build_bank(spans_for_window(bank_start, config.granularity, t, lp, config.stride,
                                        config.span_policy),
                       encoder);
  return ex;
}

Tensor example_loss(const ForecastModel& model, const Example& example) {
  const std::size_t p = example.patches.count;
  const std::size_t lp = example.patches.patch_len;
  Tensor pred = model.forward(example.patches, example.bank);
  if (model.config().loss_positions == LossPositions::last) {
    Tensor target(1, lp,
                  std::vector<double>(example.targets.end() - static_cast<std::ptrdiff_t>(lp),
                                      example.targets.end()));
    return mse_loss(slice_rows(pred, p - 2, 1), target);
  }
  return mse_loss(slice_rows(pred, 0, p - 1), Tensor(p - 1, lp, example.targets));
}

// ---- optimizer --------------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, const TrainConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamW::step() {
  ++t_;
  double scale = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (auto& p : params_) {
      if (!p.has_grad()) continue;
      for (double g : p.mutable_grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
    if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto w = p.mutable_values();
    const bool has = p.has_grad();
    std::span<double> g = has ? p.mutable_grad() : std::span<double>();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? g[j] * scale : 0.0;
      m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * gj;
      v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * gj * gj;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      w[j] -= lr * (mhat / (std::sqrt(vhat) + config_.adam_eps) + config_.weight_decay * w[j]);
    }
  }
}

// ---- training ---------------------------------------------------------------------

double mean_loss(const ForecastModel& model, std::span<const Example> examples) {
  if (examples.empty()) return 0.0;
  NoGradGuard guard;
  double total = 0.0;
  for (const auto& ex : examples) total += example_loss(model, ex).item();
  return total / static_cast<double>(examples.size());
}

namespace {

std::vector<std::vector<double>> copy_values(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.values().begin(), p.values().end());
  return out;
}

void load_values(std::vector<Tensor>& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(values[i].begin(), values[i].end(), params[i].mutable_values().begin());
  }
}

}  // namespace

TrainResult train(ForecastModel& model, std::span<const Example> train_set,
                  std::span<const Example> val_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  std::vector<Tensor> params = model.params().trainable_tensors();
  AdamW opt(params, config);
  Rng rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  auto best = copy_values(params);
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  bool out_of_steps = false;

  for (std::size_t epoch = 0; epoch < config.epochs && !out_of_steps; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - b);
      opt.zero_grad();
      const std::size_t step_no = opt.steps() + 1;
      try {
        for (std::size_t i = b; i < end; ++i) {
          Tensor loss = example_loss(model, train_set[order[i]]);
          epoch_loss += loss.item();
          backward(scale(loss, inv));
        }
        opt.step();
      } catch (const NumericalError& e) {
        throw DivergenceError(
            "training diverged at step " + std::to_string(step_no) + ": " + e.what(), step_no);
      }
      seen += end - b;
      if (config.max_steps != 0 && opt.steps() >= config.max_steps) {
        out_of_steps = true;
        break;
      }
    }
    EpochLog log{epoch, epoch_loss / static_cast<double>(seen), 0.0};
    try {
      log.val_loss = val_set.empty() ? log.train_loss : mean_loss(model, val_set);
    } catch (const NumericalError& e) {
      throw DivergenceError(
          "validation diverged after step " + std::to_string(opt.steps()) + ": " + e.what(),
          opt.steps());
    }
    if (!std::isfinite(log.val_loss)) {
      throw DivergenceError("non-finite validation loss after step " + std::to_string(opt.steps()),
                            opt.steps());
    }
    result.epochs.push_back(log);
    log_info("epoch " + std::to_string(epoch) + " train " + std::to_string(log.train_loss) +
             " val " + std::to_string(log.val_loss) + " steps " + std::to_string(opt.steps()));
    if (log.val_loss < result.best_val_loss) {
      result.best_val_loss = log.val_loss;
      result.best_epoch = epoch;
      best = copy_values(params);
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  load_values(params, best);
  result.steps = opt.steps();
  return result;
}

// ---- inference --------------------------------------------------------------------

std::vector<double> forecast(const ForecastModel& model, const TemporalEncoder& encoder,
                             std::span<const double> lookback, Timestamp start,
                             std::size_t horizon, std::int64_t span_offset_seconds) {
  const ModelConfig& cfg = model.config();
  if (horizon == 0) throw ConfigError("forecast horizon must be >= 1");
  if (lookback.size() != cfg.lookback) {
    throw ContractError("forecast: lookback has " + std::to_string(lookback.size()) +
                        " values, model expects " + std::to_string(cfg.lookback));
  }
  NoGradGuard guard;
  const std::size_t t = cfg.lookback;
  const std::size_t lp = cfg.patch_len;
  const std::size_t p = cfg.num_patches();
  std::vector<double> history(lookback.begin(), lookback.end());
  std::vector<double> produced;
  double fixed_mean = 0.0, fixed_std = 1.0;
  revin_normalize(lookback, fixed_mean, fixed_std);

  while (produced.size() < horizon) {
    std::span<const double> window(history.data() + history.size() - t, t);
    const Timestamp window_start =
        start.plus(static_cast<std::int64_t>(produced.size()) * cfg.granularity.seconds);
    double mean = fixed_mean, std = fixed_std;
    std::vector<double> norm;
    if (cfg.rollout_stats == RolloutStats::recompute) {
      norm = revin_normalize(window, mean, std);
    } else {
      norm.reserve(t);
      for (double x : window) norm.push_back((x - mean) / std);
    }
    const PatchSequence patches = patchify(norm, lp, cfg.stride);
    const Tensor bank =
        build_bank(model.spans_for(window_start.plus(span_offset_seconds)), encoder);
    const Tensor pred = model.forward(patches, bank);
    for (std::size_t j = 0; j < lp; ++j) {
      const double x = pred(p - 2, j) * std + mean;
      history.push_back(x);
      produced.push_back(x);
    }
  }
  produced.resize(horizon);
  return produced;
}

Metrics metrics(std::span<const double> prediction, std::span<const double> truth) {
  if (prediction.size() != truth.size()) {
    throw ContractError("metrics: " + std::to_string(prediction.size()) + " predictions vs " +
                        std::to_string(truth.size()) + " targets");
  }
  if (prediction.empty()) throw ContractError("metrics: empty input");
  Metrics m;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double e = prediction[i] - truth[i];
    m.mse += e * e;
    m.mae += std::abs(e);
  }
  m.mse /= static_cast<double>(prediction.size());
  m.mae /= static_cast<double>(prediction.size());
  return m;
}

std::vector<double> persistence_forecast(std::span<const double> lookback, std::size_t horizon) {
  if (lookback.empty()) throw ContractError("persistence: empty lookback");
  return std::vector<double>(horizon, lookback.back());
}

// ---- experiment driver ------------------------------------------------------------

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  if (horizon == 0) throw ConfigError("horizon must be >= 1");
  if (train_stride == 0 || eval_stride == 0) throw ConfigError("window strides must be >= 1");
}

std::vector<std::int64_t> span_offsets(std::span<const std::size_t> starts,
                                       const Granularity& granularity, bool shuffle,
                                       std::uint64_t seed) {
  std::vector<std::int64_t> out(starts.size(), 0);
  if (!shuffle) return out;
  std::vector<std::size_t> perm(starts.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(perm);
  for (std::size_t i = 0; i < starts.size(); ++i) {
    out[i] = (static_cast<std::int64_t>(starts[perm[i]]) - static_cast<std::int64_t>(starts[i])) *
             granularity.seconds;
  }
  return out;
}

namespace {

// Offsets keyed by window start, shared by every variable of the split.
std::map<std::size_t, std::int64_t> offsets_by_start(const std::vector<WindowPair>& windows,
                                                     const ExperimentConfig& config,
                                                     std::uint64_t salt) {
  std::vector<std::size_t> starts;
  for (const auto& w : windows) starts.push_back(w.start);
  std::sort(starts.begin(), starts.end());
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  const auto offs = span_offsets(starts, config.model.granularity, config.shuffle_spans,
                                 config.train.seed ^ salt);
  std::map<std::size_t, std::int64_t> out;
  for (std::size_t i = 0; i < starts.size(); ++i) out[starts[i]] = offs[i];
  return out;
}

std::vector<Example> build_examples(const std::vector<WindowPair>& windows,
                                    const ExperimentConfig& config,
                                    const TemporalEncoder& encoder, std::uint64_t salt) {
  const auto offsets = offsets_by_start(windows, config, salt);
  std::vector<Example> out;
  out.reserve(windows.size());
  std::vector<double> values;
  for (const auto& w : windows) {
    values = w.lookback;
    values.insert(values.end(), w.target.values.begin(),
                  w.target.values.begin() + static_cast<std::ptrdiff_t>(config.model.patch_len));
    const Timestamp start = w.lookback_span.start;
    out.push_back(make_example(config.model, values, start, start.plus(offsets.at(w.start)),
                               encoder));
  }
  return out;
}

}  // namespace

TestEvaluation evaluate_test(const ForecastModel& model, const RawSeries& series,
                             const ExperimentConfig& config, const TemporalEncoder& encoder) {
  const ModelConfig& mc = config.model;
  const SplitBorders borders = chronological_split(series.length());
  const auto test_windows = split_windows(series, borders, Split::test, mc.lookback,
                                          config.horizon, config.eval_stride);
  const auto offsets = offsets_by_start(test_windows, config, 0x74657374ULL);
  std::vector<double> pred, truth, naive;
  for (const auto& w : test_windows) {
    const auto f = forecast(model, encoder, w.lookback, w.lookback_span.start, config.horizon,
                            offsets.at(w.start));
    pred.insert(pred.end(), f.begin(), f.end());
    truth.insert(truth.end(), w.target.values.begin(), w.target.values.end());
    const auto n = persistence_forecast(w.lookback, config.horizon);
    naive.insert(naive.end(), n.begin(), n.end());
  }
  TestEvaluation out;
  out.model = metrics(pred, truth);
  out.persistence = metrics(naive, truth);
  out.windows = test_windows.size();
  return out;
}

ExperimentResult run_experiment(ForecastModel& model, const RawSeries& series,
                                const ExperimentConfig& config, const TemporalEncoder& encoder) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig& mc = config.model;
  if (series.granularity.seconds != mc.granularity.seconds) {
    throw ConfigError("series granularity " + series.granularity.label() +
                      " does not match model granularity " + mc.granularity.label());
  }
  const SplitBorders borders = chronological_split(series.length());
  const auto train_windows =
      split_windows(series, borders, Split::train, mc.lookback, mc.patch_len, config.train_stride);
  const auto val_windows = split_windows(series, borders, Split::validation, mc.lookback,
                                         mc.patch_len, config.train_stride);

  const auto train_set = build_examples(train_windows, config, encoder, 0x7261696eULL);
  const auto val_set = build_examples(val_windows, config, encoder, 0x76616c00ULL);
  log_info("examples: " + std::to_string(train_set.size()) + " train, " +
           std::to_string(val_set.size()) + " validation");

  ExperimentResult result;
  result.training = train(model, train_set, val_set, config.train);
  const TestEvaluation eval = evaluate_test(model, series, config, encoder);
  result.test = eval.model;
  result.persistence = eval.persistence;
  result.test_windows = eval.windows;
  result.params = param_report(model);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace tpc
