#pragma once

// Dataset ingestion, synthetic generation, windowing, reversible instance
// normalization and patch segmentation.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tpc/tensor.hpp"
#include "tpc/time.hpp"

namespace tpc {

/// Uniformly sampled multivariate series; values[v][t] is variable v at step t.
struct RawSeries {
  std::vector<Timestamp> timestamps;
  std::vector<std::string> names;
  std::vector<std::vector<double>> values;
  Granularity granularity;

  std::size_t length() const noexcept { return timestamps.size(); }
  std::size_t variables() const noexcept { return values.size(); }
  Timestamp time_at(std::size_t step) const;
};

/// Reads `date,<var1>,...,<varN>`. Lines starting with '#' are comments.
/// Throws DataError on gaps, non-monotone stamps or non-numeric cells.
RawSeries load_csv(const std::filesystem::path& path, const Granularity& granularity);
void write_csv(const std::filesystem::path& path, const RawSeries& series,
               const std::string& comment_header = {});

/// x(t) = a(dow(t)) * sin(2*pi*hod(t)/24 + phi_b) + eps, with
/// a(d) = 1 + kappa * kWeekdayProfile[d] and phi_b a random phase redrawn at
/// the start of every block of `phase_block` steps (counted from the first
/// step). eps ~ Normal(0, sigma).
struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t length = 10000;
  Granularity granularity = Granularity::hourly();
  double kappa = 1.0;
  double sigma = 0.1;
  Timestamp start = Timestamp::from_civil(2017, 1, 1);
  std::size_t variables = 1;
  std::size_t phase_block = 24;
};

/// Day-of-week deviations, Monday first.
inline constexpr double kWeekdayProfile[7] = {-0.5, -0.25, 0.0, 0.25, 0.5, 0.75, -0.75};

double weekday_amplitude(unsigned weekday, double kappa);
RawSeries generate_synthetic(const SyntheticSpec& spec);

// ---- RevIN -------------------------------------------------------------------

inline constexpr double kRevinEps = 1e-8;

struct RevinStats {
  std::vector<double> mean;
  std::vector<double> std;  // population std, floored at kRevinEps
};

struct Normalized {
  std::vector<std::vector<double>> values;
  RevinStats stats;
};

/// Per-variable zero mean / unit variance over the window. Requires T >= 2.
Normalized revin_normalize(const std::vector<std::vector<double>>& window);
std::vector<std::vector<double>> revin_denormalize(const std::vector<std::vector<double>>& values,
                                                   const RevinStats& stats);

/// Univariate forms used by the channel-independent model.
std::vector<double> revin_normalize(std::span<const double> window, double& mean, double& std);
std::vector<double> revin_denormalize(std::span<const double> values, double mean, double std);

// ---- patches -----------------------------------------------------------------

struct TimeRange {
  Timestamp start;
  Timestamp end;  // inclusive: timestamp of the last step
};

struct PatchSequence {
  std::size_t count = 0;
  std::size_t patch_len = 0;
  std::size_t stride = 0;
  std::vector<double> patches;  // count x patch_len, row-major
  TimeRange window_span;
  RevinStats stats;

  Tensor as_tensor() const { return Tensor(count, patch_len, patches); }
  std::span<const double> patch(std::size_t i) const {
    return std::span<const double>(patches).subspan(i * patch_len, patch_len);
  }
};

/// floor((T - L_p) / S) + 2
std::size_t patch_count(std::size_t window_len, std::size_t patch_len, std::size_t stride);

/// Segments a normalized univariate window. The window is right-padded with a
/// copy of its final S values, and patches start at offsets 0, S, 2S, ...
/// Throws ConfigError when L_p > T or S == 0.
PatchSequence patchify(std::span<const double> window, std::size_t patch_len, std::size_t stride);

// ---- windows -----------------------------------------------------------------

struct TargetWindow {
  std::vector<double> values;
  TimeRange span;
};

struct WindowPair {
  std::size_t variable = 0;
  std::size_t start = 0;  // index of the first lookback step
  std::vector<double> lookback;
  TimeRange lookback_span;
  TargetWindow target;
};

/// Univariate sliding windows, one set per variable (channel independence).
/// Lookback starts run over [first_start, last_start] in steps of `stride`;
/// last_start defaults to the last feasible start.
std::vector<WindowPair> make_windows(const RawSeries& series, std::size_t lookback,
                                     std::size_t horizon, std::size_t stride,
                                     std::size_t first_start = 0,
                                     std::size_t last_start = SIZE_MAX);

/// Chronological 70/10/20 split. Validation and test windows may draw their
/// lookback from the preceding split; targets never cross a border.
struct SplitBorders {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t end = 0;
};
SplitBorders chronological_split(std::size_t length, double train_frac = 0.7,
                                 double val_frac = 0.1);

enum class Split { train, validation, test };
/// Windows whose lookback + horizon fit inside the split.
std::vector<WindowPair> split_windows(const RawSeries& series, const SplitBorders& borders,
                                      Split split, std::size_t lookback, std::size_t horizon,
                                      std::size_t stride);

}  // namespace tpc
