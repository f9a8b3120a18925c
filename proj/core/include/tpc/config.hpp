#pragma once

// Run configuration: a flat list of dotted `key = value` lines.
//
//   # comment
//   data.source = synthetic
//   model.ts_tokens = 4
//
// Every key has a default, so an empty file is a complete configuration.
// to_text() writes every key in a fixed order and is what output artifacts
// embed; parsing that text back yields the same configuration.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tpc/series.hpp"
#include "tpc/training.hpp"

namespace tpc {

enum class DataSource { synthetic, csv };

struct RunConfig {
  DataSource source = DataSource::synthetic;
  std::string csv_path;
  std::string dataset_name = "synthetic";
  SyntheticSpec synthetic;
  ExperimentConfig experiment;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::string bank_cache;

  /// Variants and seeds used by the ablation command.
  std::vector<std::string> ablation_variants = {"tpc",     "pos-embed",  "prefix-prompt",
                                                "full-ft", "partial-ft", "lora"};
  std::vector<std::uint64_t> ablation_seeds = {0, 1, 2};
  double full_ft_lr_scale = 0.1;
  std::size_t ablation_lora_rank = 4;

  /// Copies `seed` into the model and trainer seeds and checks every field.
  void resolve();
  std::string to_text() const;
};

/// Names of all keys, in echo order.
const std::vector<std::string>& config_keys();
/// Value of one key rendered as it appears in the echo.
std::string config_value(const RunConfig& config, std::string_view key);
/// Throws ConfigError on an unknown key or a malformed value.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

/// Applies `key = value` lines on top of `config`. Throws ConfigError with the
/// line number on a syntax error.
void apply_config_text(RunConfig& config, std::string_view text);
RunConfig parse_config_text(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Loads the CSV or generates the synthetic series the configuration names.
RawSeries load_dataset(const RunConfig& config);

}  // namespace tpc
