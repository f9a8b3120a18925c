#pragma once

// Forecasting model assembly: patch embedder, frozen decoder with TPC hooks,
// TS-token bank and output head, plus the ablation conditioning modes that
// share the same trunk.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tpc/backbone.hpp"
#include "tpc/params.hpp"
#include "tpc/prompts.hpp"
#include "tpc/series.hpp"
#include "tpc/tpc.hpp"

namespace tpc {

/// How temporal embeddings reach the model.
///   tpc: TS-tokens cross-attending to the bank at the insertion layers.
///   positional_add: bank row p added to patch embedding p at the input.
///   prefix_prompt: bank rows prepended to the patch sequence.
enum class Conditioning { tpc, positional_add, prefix_prompt };
/// Which decoder weights are trained.
enum class FineTune { none, full, partial };
enum class LossPositions { all, last };
enum class RolloutStats { recompute, fixed };

std::string to_string(Conditioning c);
std::string to_string(FineTune f);
std::string to_string(LossPositions p);
std::string to_string(RolloutStats s);
Conditioning parse_conditioning(std::string_view text);
FineTune parse_finetune(std::string_view text);
LossPositions parse_loss_positions(std::string_view text);
RolloutStats parse_rollout_stats(std::string_view text);

struct ModelConfig {
  DecoderConfig backbone;
  std::uint64_t backbone_seed = 1;
  std::uint64_t seed = 0;
  double init_std = 0.02;

  std::size_t lookback = 96;
  std::size_t patch_len = 16;
  std::size_t stride = 16;
  Granularity granularity = Granularity::hourly();

  std::size_t ts_tokens = 4;
  /// Unset means InsertionSchedule::evenly_spaced(depth); empty means no
  /// TPC modules.
  std::optional<std::vector<std::size_t>> insertion;
  Visibility visibility = Visibility::suffix_global;
  SpanPolicy span_policy = SpanPolicy::per_patch;
  std::size_t cross_heads = 1;
  FfnScope ffn_scope = FfnScope::all_positions;

  Conditioning conditioning = Conditioning::tpc;
  FineTune finetune = FineTune::none;
  /// Layers unfrozen under FineTune::partial; empty means the insertion layers.
  std::vector<std::size_t> partial_layers;
  std::size_t lora_rank = 0;

  LossPositions loss_positions = LossPositions::all;
  RolloutStats rollout_stats = RolloutStats::recompute;

  std::size_t num_patches() const;
  InsertionSchedule schedule() const;
  std::vector<std::size_t> resolved_partial_layers() const;
  /// Number of bank rows the model expects per window.
  std::size_t bank_rows() const;
  void validate() const;
};

struct ParamGroupCount {
  std::size_t total = 0;
  std::size_t trainable = 0;
};

struct ParamReport {
  std::size_t total = 0;
  std::size_t trainable = 0;
  std::map<std::string, ParamGroupCount> groups;
  double trainable_fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
  }
};

class ForecastModel {
 public:
  /// Bank calibration is left at the identity.
  explicit ForecastModel(const ModelConfig& config);
  /// Calibrates the bank standardization against `encoder`.
  ForecastModel(const ModelConfig& config, const TemporalEncoder& encoder);

  ForecastModel(const ForecastModel&) = delete;
  ForecastModel& operator=(const ForecastModel&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  ParamRegistry& params() noexcept { return registry_; }
  const ParamRegistry& params() const noexcept { return registry_; }
  const Backbone& backbone() const noexcept { return backbone_; }
  const std::vector<TpcLayerParams>& tpc_layers() const noexcept { return tpc_layers_; }

  /// E = X W_e^T + b_e, one row per patch.
  Tensor embed_patches(const PatchSequence& patches) const;

  /// Next-patch predictions, one row per patch position (normalized scale).
  /// Row p targets the patch_len values right after patch p.
  Tensor forward(const PatchSequence& patches, const Tensor& bank) const;

  /// Hidden states of the patch rows after the final norm.
  Tensor patch_states(const PatchSequence& patches, const Tensor& bank) const;

  /// Spans whose embeddings form the bank of a window starting at `start`.
  std::vector<TemporalSpan> spans_for(Timestamp start) const;

  /// Frozen per-dimension standardization applied to every incoming bank:
  /// row -> (row - shift) * scale.
  void set_bank_calibration(std::span<const double> shift, std::span<const double> scale);
  Tensor calibrate(const Tensor& bank) const;

  /// Sets every cross-attention gate pre-activation to -inf (gate exactly 0).
  void close_cross_gates();

  /// Hash of the "backbone." entries.
  std::uint64_t backbone_fingerprint() const { return registry_.fingerprint("backbone."); }

 private:
  void apply_freezing();

  ModelConfig config_;
  ParamRegistry registry_;
  Backbone backbone_;
  Tensor embed_w_, embed_b_;
  Tensor head_w_, head_b_;
  Tensor ts_tokens_;
  Tensor bank_shift_, bank_scale_;
  std::vector<TpcLayerParams> tpc_layers_;
  std::vector<std::size_t> insertion_;
};

ParamReport param_report(const ForecastModel& model);

struct BankCalibration {
  std::vector<double> shift;
  std::vector<double> scale;
};

/// Mean and inverse population std of the embeddings of a reference week:
/// 168 consecutive span starts at the configured granularity from Monday
/// 2001-01-01, each span shaped like one bank row of the configured policy.
BankCalibration calibrate_bank(const ModelConfig& config, const TemporalEncoder& encoder);

}  // namespace tpc
