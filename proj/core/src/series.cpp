#include "tpc/series.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "tpc/errors.hpp"
#include "tpc/random.hpp"

namespace tpc {

Timestamp RawSeries::time_at(std::size_t step) const {
  if (timestamps.empty()) throw ContractError("time_at on an empty series");
  return timestamps.front().plus(static_cast<std::int64_t>(step) * granularity.seconds);
}

// ---- CSV ---------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    cells.push_back(line.substr(pos, comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

RawSeries load_csv(const std::filesystem::path& path, const Granularity& granularity) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  RawSeries series;
  series.granularity = granularity;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    auto cells = split_csv_line(view);
    if (!have_header) {
      if (cells.size() < 2 || trim(cells[0]) != "date") {
        throw DataError(path.string() + ": header must be 'date,<var1>,...'");
      }
      for (std::size_t c = 1; c < cells.size(); ++c) series.names.emplace_back(trim(cells[c]));
      series.values.resize(series.names.size());
      have_header = true;
      continue;
    }
    if (cells.size() != series.names.size() + 1) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(series.names.size() + 1) + " columns, found " +
                      std::to_string(cells.size()));
    }
    Timestamp ts;
    try {
      ts = Timestamp::parse(trim(cells[0]));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!series.timestamps.empty()) {
      const Timestamp prev = series.timestamps.back();
      if (ts <= prev) {
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": timestamps not increasing (" + prev.format() + " then " +
                        ts.format() + ")");
      }
      if (ts.seconds - prev.seconds != granularity.seconds) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": gap between " +
                        prev.format() + " and " + ts.format() + " (expected " +
                        granularity.label() + " spacing)");
      }
    }
    series.timestamps.push_back(ts);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const auto cell = trim(cells[c]);
      double v = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc{} || res.ptr != cell.data() + cell.size() ||
          !std::isfinite(v)) {
        throw DataError(path.string() + ": row " + std::to_string(line_no) + ", column " +
                        std::to_string(c + 1) + " ('" + series.names[c - 1] +
                        "'): not a number: '" + std::string(cell) + "'");
      }
      series.values[c - 1].push_back(v);
    }
  }
  if (!have_header) throw DataError(path.string() + ": missing header");
  if (series.timestamps.empty()) throw DataError(path.string() + ": no data rows");
  return series;
}

void write_csv(const std::filesystem::path& path, const RawSeries& series,
               const std::string& comment_header) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  if (!comment_header.empty()) {
    std::istringstream lines(comment_header);
    std::string l;
    while (std::getline(lines, l)) out << "# " << l << '\n';
  }
  out << "date";
  for (const auto& n : series.names) out << ',' << n;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t t = 0; t < series.length(); ++t) {
    out << series.timestamps[t].format();
    for (const auto& var : series.values) out << ',' << var[t];
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

// ---- synthetic ---------------------------------------------------------------

double weekday_amplitude(unsigned weekday, double kappa) {
  return 1.0 + kappa * kWeekdayProfile[weekday % 7];
}

RawSeries generate_synthetic(const SyntheticSpec& spec) {
  if (spec.length == 0) throw ConfigError("synthetic length must be positive");
  if (spec.variables == 0) throw ConfigError("synthetic series needs at least one variable");
  if (spec.phase_block == 0) throw ConfigError("synthetic phase_block must be positive");
  RawSeries s;
  s.granularity = spec.granularity;
  s.timestamps.reserve(spec.length);
  for (std::size_t t = 0; t < spec.length; ++t) {
    s.timestamps.push_back(spec.start.plus(static_cast<std::int64_t>(t) * spec.granularity.seconds));
  }
  Rng rng(spec.seed);
  s.values.assign(spec.variables, std::vector<double>(spec.length));
  for (std::size_t v = 0; v < spec.variables; ++v) {
    s.names.push_back(spec.variables == 1 ? "value" : "var" + std::to_string(v + 1));
  }
  std::vector<double> phase(spec.variables, 0.0);
  for (std::size_t t = 0; t < spec.length; ++t) {
    if (t % spec.phase_block == 0) {
      for (auto& p : phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    const Timestamp ts = s.timestamps[t];
    const double hod = static_cast<double>(ts.seconds % 86400) / 3600.0;
    const double amp = weekday_amplitude(ts.weekday(), spec.kappa);
    for (std::size_t v = 0; v < spec.variables; ++v) {
      const double noise = spec.sigma > 0.0 ? rng.normal(0.0, spec.sigma) : 0.0;
      s.values[v][t] = amp * std::sin(2.0 * std::numbers::pi * hod / 24.0 + phase[v]) + noise;
    }
  }
  return s;
}

// ---- RevIN -------------------------------------------------------------------

std::vector<double> revin_normalize(std::span<const double> window, double& mean, double& std) {
  if (window.size() < 2) throw ConfigError("RevIN needs a window of at least 2 steps");
  double m = 0.0;
  for (double x : window) m += x;
  m /= static_cast<double>(window.size());
  double var = 0.0;
  for (double x : window) var += (x - m) * (x - m);
  var /= static_cast<double>(window.size());
  const double s = std::max(std::sqrt(var), kRevinEps);
  std::vector<double> out(window.size());
  for (std::size_t i = 0; i < window.size(); ++i) out[i] = (window[i] - m) / s;
  mean = m;
  std = s;
  return out;
}

std::vector<double> revin_denormalize(std::span<const double> values, double mean, double std) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] * std + mean;
  return out;
}

Normalized revin_normalize(const std::vector<std::vector<double>>& window) {
  Normalized n;
  for (const auto& var : window) {
    double m = 0.0, s = 0.0;
    n.values.push_back(revin_normalize(var, m, s));
    n.stats.mean.push_back(m);
    n.stats.std.push_back(s);
  }
  return n;
}

std::vector<std::vector<double>> revin_denormalize(const std::vector<std::vector<double>>& values,
                                                   const RevinStats& stats) {
  if (values.size() != stats.mean.size()) throw ShapeError("revin_denormalize: variable count mismatch");
  std::vector<std::vector<double>> out;
  for (std::size_t v = 0; v < values.size(); ++v) {
    out.push_back(revin_denormalize(values[v], stats.mean[v], stats.std[v]));
  }
  return out;
}

// ---- patches -----------------------------------------------------------------

std::size_t patch_count(std::size_t window_len, std::size_t patch_len, std::size_t stride) {
  if (stride == 0) throw ConfigError("patch stride must be >= 1");
  if (patch_len == 0 || patch_len > window_len) {
    throw ConfigError("patch length " + std::to_string(patch_len) + " exceeds window length " +
                      std::to_string(window_len));
  }
  return (window_len - patch_len) / stride + 2;
}

PatchSequence patchify(std::span<const double> window, std::size_t patch_len, std::size_t stride) {
  const std::size_t count = patch_count(window.size(), patch_len, stride);
  std::vector<double> padded(window.begin(), window.end());
  // The last patch starts at (count-1)*S and may reach up to S past the window;
  // the pad replicates the final S values.
  const std::size_t pad = stride;
  const std::size_t tail = std::min(pad, window.size());
  for (std::size_t i = 0; i < pad; ++i) padded.push_back(window[window.size() - tail + (i % tail)]);
  PatchSequence seq;
  seq.count = count;
  seq.patch_len = patch_len;
  seq.stride = stride;
  seq.patches.reserve(count * patch_len);
  for (std::size_t p = 0; p < count; ++p) {
    const std::size_t off = p * stride;
    seq.patches.insert(seq.patches.end(), padded.begin() + static_cast<std::ptrdiff_t>(off),
                       padded.begin() + static_cast<std::ptrdiff_t>(off + patch_len));
  }
  return seq;
}

// ---- windows -----------------------------------------------------------------

std::vector<WindowPair> make_windows(const RawSeries& series, std::size_t lookback,
                                     std::size_t horizon, std::size_t stride,
                                     std::size_t first_start, std::size_t last_start) {
  if (horizon == 0) throw ConfigError("horizon must be >= 1");
  if (stride == 0) throw ConfigError("window stride must be >= 1");
  if (lookback + horizon > series.length()) {
    throw ConfigError("series of length " + std::to_string(series.length()) +
                      " is too short for lookback " + std::to_string(lookback) + " + horizon " +
                      std::to_string(horizon));
  }
  const std::size_t max_start = series.length() - lookback - horizon;
  last_start = std::min(last_start, max_start);
  std::vector<WindowPair> out;
  if (first_start > last_start) return out;
  const auto step = series.granularity.seconds;
  for (std::size_t v = 0; v < series.variables(); ++v) {
    const auto& x = series.values[v];
    for (std::size_t s = first_start; s <= last_start; s += stride) {
      WindowPair w;
      w.variable = v;
      w.start = s;
      w.lookback.assign(x.begin() + static_cast<std::ptrdiff_t>(s),
                        x.begin() + static_cast<std::ptrdiff_t>(s + lookback));
      w.lookback_span = {series.time_at(s), series.time_at(s + lookback - 1)};
      w.target.values.assign(x.begin() + static_cast<std::ptrdiff_t>(s + lookback),
                             x.begin() + static_cast<std::ptrdiff_t>(s + lookback + horizon));
      w.target.span = {w.lookback_span.end.plus(step),
                       w.lookback_span.end.plus(static_cast<std::int64_t>(horizon) * step)};
      out.push_back(std::move(w));
    }
  }
  return out;
}

SplitBorders chronological_split(std::size_t length, double train_frac, double val_frac) {
  SplitBorders b;
  b.train_end = static_cast<std::size_t>(static_cast<double>(length) * train_frac);
  b.val_end = b.train_end + static_cast<std::size_t>(static_cast<double>(length) * val_frac);
  b.end = length;
  return b;
}

std::vector<WindowPair> split_windows(const RawSeries& series, const SplitBorders& borders,
                                      Split split, std::size_t lookback, std::size_t horizon,
                                      std::size_t stride) {
  std::size_t begin = 0, end = borders.train_end;
  if (split == Split::validation) {
    begin = borders.train_end >= lookback ? borders.train_end - lookback : 0;
    end = borders.val_end;
  } else if (split == Split::test) {
    begin = borders.val_end >= lookback ? borders.val_end - lookback : 0;
    end = borders.end;
  }
  if (end < begin + lookback + horizon) {
    throw ConfigError("split is too short for lookback " + std::to_string(lookback) +
                      " + horizon " + std::to_string(horizon));
  }
  return make_windows(series, lookback, horizon, stride, begin, end - lookback - horizon);
}

}  // namespace tpc
