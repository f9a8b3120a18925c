#pragma once

// Ablation variants sharing one trunk, and a harness that trains each on
// identical windows, seeds and step budgets.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tpc/model.hpp"
#include "tpc/training.hpp"

namespace tpc {

enum class VariantKind { tpc, pos_embed, prefix_prompt, full_ft, partial_ft, lora };

std::string to_string(VariantKind kind);
VariantKind parse_variant_kind(std::string_view text);

struct VariantSpec {
  VariantKind kind = VariantKind::tpc;
  /// lora only.
  std::size_t lora_rank = 0;
  /// partial-ft only; empty means the TPC insertion layers.
  std::vector<std::size_t> partial_layers;
  /// Multiplies the base learning rate (0.1 for full-ft by default).
  double lr_scale = 1.0;

  /// Defaults: LoRA rank 4, full-ft learning rate x0.1.
  static VariantSpec defaults(VariantKind kind);
  void validate(const ModelConfig& base) const;
};

/// Model configuration of a variant derived from the TPC base configuration.
ModelConfig variant_config(const ModelConfig& base, const VariantSpec& spec);
TrainConfig variant_train_config(const TrainConfig& base, const VariantSpec& spec);

std::unique_ptr<ForecastModel> build_variant(const ModelConfig& base, const VariantSpec& spec,
                                             const TemporalEncoder& encoder);
/// Bank rows added to patch embeddings; patch embedder and head trainable.
std::unique_ptr<ForecastModel> build_pos_embed_variant(const ModelConfig& base,
                                                       const TemporalEncoder& encoder);
/// [bank rows | patch embeddings] under a causal mask.
std::unique_ptr<ForecastModel> build_prefix_prompt_variant(const ModelConfig& base,
                                                           const TemporalEncoder& encoder);
/// pos-embed with every backbone weight trainable.
std::unique_ptr<ForecastModel> build_full_ft_variant(const ModelConfig& base,
                                                     const TemporalEncoder& encoder);
/// pos-embed with the decoder blocks at the TPC insertion layers trainable.
std::unique_ptr<ForecastModel> build_partial_ft_variant(const ModelConfig& base,
                                                        const TemporalEncoder& encoder);
/// pos-embed with rank-r adapters on W_Q and W_V of every layer.
std::unique_ptr<ForecastModel> build_lora_variant(const ModelConfig& base, std::size_t rank,
                                                  const TemporalEncoder& encoder);

struct NamedSeries {
  std::string name;
  RawSeries series;
};

struct AblationRow {
  std::string dataset;
  std::string variant;
  std::uint64_t seed = 0;
  Metrics test;
  Metrics persistence;
  std::size_t trainable = 0;
  std::size_t total = 0;
  std::size_t steps = 0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  /// Parallel to the datasets passed to run_ablation.
  std::vector<std::string> datasets;
  std::vector<std::uint64_t> data_fingerprints;
  std::vector<std::size_t> test_windows;

  const AblationRow* find(const std::string& dataset, const std::string& variant,
                          std::uint64_t seed) const;
};

/// FNV-1a over timestamps and values.
std::uint64_t series_fingerprint(const RawSeries& series);

/// Trains and evaluates every (dataset, variant, seed) cell. `base` holds the
/// TPC model, the trainer and the window settings; each seed replaces the
/// model and trainer seeds for every variant alike.
AblationResult run_ablation(const std::vector<NamedSeries>& datasets,
                            const std::vector<VariantSpec>& variants,
                            const std::vector<std::uint64_t>& seeds,
                            const ExperimentConfig& base, const TemporalEncoder& encoder);

/// One CSV row per cell.
std::string ablation_csv(const AblationResult& result);
/// Variants down, datasets across, MSE and MAE as mean +- std over seeds.
std::string format_ablation_table(const AblationResult& result);

}  // namespace tpc
