#pragma once

// Temporal prompt rendering, encoding through the frozen decoder, and the
// persistent embedding cache.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tpc/backbone.hpp"
#include "tpc/series.hpp"
#include "tpc/time.hpp"

namespace tpc {

struct TemporalSpan {
  Timestamp start;
  Timestamp end;
  Granularity granularity;

  /// start < end and end - start a positive multiple of the granularity.
  void validate() const;
  bool operator==(const TemporalSpan&) const = default;
};

/// "This series spans <start> to <end>. Sampling granularity: <label>."
std::string render_prompt(const TemporalSpan& span);

enum class SpanPolicy { per_patch, whole_window };

std::string to_string(SpanPolicy p);
SpanPolicy parse_span_policy(std::string_view text);

/// Spans describing a lookback window that starts at `window_start` and has
/// `window_len` steps. per_patch yields one span per patch (including the
/// padded final patch, whose range runs past the window); whole_window yields
/// the single span of the window.
std::vector<TemporalSpan> spans_for_window(Timestamp window_start, const Granularity& granularity,
                                           std::size_t window_len, std::size_t patch_len,
                                           std::size_t stride, SpanPolicy policy);

/// Map from (span, backbone fingerprint) to its embedding.
///
/// File layout, little-endian, append-only:
///   "TPCBANK1" | then records of
///   u32 key length | key bytes | u32 width | width doubles
/// Keys are "<start>|<end>|<granularity>|<fingerprint hex>". A truncated
/// trailing record (interrupted write) is ignored on load.
class BankCache {
 public:
  /// In-memory only.
  BankCache() = default;
  /// Loads `path` if it exists; new entries are appended to it.
  explicit BankCache(std::filesystem::path path);

  static std::string key(const TemporalSpan& span, std::uint64_t fingerprint);

  std::optional<std::vector<double>> find(const std::string& key) const;
  void insert(const std::string& key, const std::vector<double>& vector);
  void flush();

  std::size_t size() const;
  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }

 private:
  std::filesystem::path path_;
  std::unordered_map<std::string, std::vector<double>> entries_;
  std::unique_ptr<std::ofstream> writer_;
  mutable std::mutex mutex_;
  mutable std::size_t hits_ = 0;
  mutable std::size_t misses_ = 0;
};

/// Encodes spans with a private frozen copy of the decoder built from
/// (config, seed). Fine-tuning the forecasting trunk therefore never changes
/// the bank, which stays precomputable.
class TemporalEncoder {
 public:
  TemporalEncoder(const DecoderConfig& config, std::uint64_t backbone_seed,
                  std::shared_ptr<BankCache> cache = nullptr);

  std::vector<double> embed(const TemporalSpan& span) const;
  const Backbone& backbone() const noexcept { return backbone_; }
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }
  BankCache* cache() const noexcept { return cache_.get(); }
  std::size_t width() const noexcept { return backbone_.config().width; }

 private:
  ParamRegistry registry_;
  Backbone backbone_;
  std::uint64_t fingerprint_;
  std::shared_ptr<BankCache> cache_;
};

/// M x d matrix whose row p encodes spans[p]. Throws ContractError on an
/// empty span list.
Tensor build_bank(std::span<const TemporalSpan> spans, const TemporalEncoder& encoder);

}  // namespace tpc
