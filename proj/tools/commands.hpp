#pragma once

// Command implementations behind the `tpc` executable. Every artifact embeds
// the resolved configuration (RunConfig::to_text) and nothing time-dependent,
// except the wall-clock column of the ablation table.

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "tpc/ablation.hpp"
#include "tpc/config.hpp"

namespace tpc::cli {

struct TrainArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_curve;
  std::filesystem::path metrics;
  ExperimentResult result;
};

struct AblateArtifacts {
  std::filesystem::path csv;
  std::filesystem::path table;
  AblationResult result;
};

/// Writes <out>/data.csv with the configuration as a '#' comment header.
std::filesystem::path cmd_generate_data(const RunConfig& config);

/// Writes <out>/checkpoint.bin, <out>/loss_curve.csv and <out>/metrics.json.
TrainArtifacts cmd_train(const RunConfig& config);

/// Forecasts `horizon` steps past the end of the dataset for every variable
/// and writes <out>/forecast.csv (timestamp, variable, value).
std::filesystem::path cmd_forecast(const RunConfig& config,
                                   const std::filesystem::path& checkpoint);

/// Writes <out>/ablation.csv and <out>/ablation.txt.
AblateArtifacts cmd_ablate(const RunConfig& config);

/// Prints the parameter report and writes <out>/params.json. Without a
/// checkpoint the model is built from the configuration.
std::filesystem::path cmd_report_params(const RunConfig& config,
                                        const std::optional<std::filesystem::path>& checkpoint,
                                        std::ostream& out);

/// Configuration stored in a checkpoint's metadata.
RunConfig checkpoint_config(const std::filesystem::path& checkpoint);

/// Parses arguments, runs a command, and maps errors to exit codes:
/// 0 success, 1 configuration, 2 data, 3 numerical divergence, 4 internal.
int run(int argc, char** argv);

}  // namespace tpc::cli
