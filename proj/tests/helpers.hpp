#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "tpc/model.hpp"
#include "tpc/random.hpp"
#include "tpc/training.hpp"

namespace testing {

inline tpc::Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed,
                                 double std = 1.0, bool requires_grad = false) {
  tpc::Rng rng(seed);
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal(0.0, std);
  return tpc::Tensor(r, c, std::move(v), requires_grad);
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double std = 1.0) {
  tpc::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, std);
  return v;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_identical(const tpc::Tensor& a, const tpc::Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  const auto x = a.values();
  const auto y = b.values();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
}

/// Small decoder for fast tests: D=2, d=16, 2 heads, T=24, L_p=8, S=8 (P=4).
inline tpc::ModelConfig small_config() {
  tpc::ModelConfig c;
  c.backbone.depth = 2;
  c.backbone.width = 16;
  c.backbone.heads = 2;
  c.backbone.max_seq = 128;
  c.lookback = 24;
  c.patch_len = 8;
  c.stride = 8;
  c.ts_tokens = 2;
  c.seed = 5;
  return c;
}

inline tpc::Timestamp test_start() { return tpc::Timestamp::from_civil(2020, 3, 2, 5); }

inline tpc::Example example_for(const tpc::ModelConfig& c, const tpc::TemporalEncoder& enc,
                                std::uint64_t seed, tpc::Timestamp start = test_start()) {
  const auto values = random_values(c.lookback + c.patch_len, seed);
  return tpc::make_example(c, values, start, start, enc);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tpc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
