#include "tpc/prompts.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>

#include "tpc/errors.hpp"
#include "tpc/log.hpp"

namespace tpc {

void TemporalSpan::validate() const {
  if (!(start < end)) {
    throw ContractError("temporal span must have start < end (" + start.format() + ", " +
                        end.format() + ")");
  }
  if ((end.seconds - start.seconds) % granularity.seconds != 0) {
    throw ContractError("temporal span length is not a multiple of " + granularity.label());
  }
}

std::string render_prompt(const TemporalSpan& span) {
  return "This series spans " + span.start.format() + " to " + span.end.format() +
         ". Sampling granularity: " + span.granularity.label() + ".";
}

std::string to_string(SpanPolicy p) {
  return p == SpanPolicy::per_patch ? "per-patch" : "whole-window";
}

SpanPolicy parse_span_policy(std::string_view text) {
  if (text == "per-patch") return SpanPolicy::per_patch;
  if (text == "whole-window") return SpanPolicy::whole_window;
  throw ConfigError("unknown span policy '" + std::string(text) + "'");
}

std::vector<TemporalSpan> spans_for_window(Timestamp window_start, const Granularity& granularity,
                                           std::size_t window_len, std::size_t patch_len,
                                           std::size_t stride, SpanPolicy policy) {
  const auto g = granularity.seconds;
  if (policy == SpanPolicy::whole_window) {
    TemporalSpan s{window_start, window_start.plus(static_cast<std::int64_t>(window_len - 1) * g),
                   granularity};
    s.validate();
    return {s};
  }
  const std::size_t count = patch_count(window_len, patch_len, stride);
  std::vector<TemporalSpan> spans;
  spans.reserve(count);
  for (std::size_t p = 0; p < count; ++p) {
    const auto off = static_cast<std::int64_t>(p * stride);
    TemporalSpan s{window_start.plus(off * g),
                   window_start.plus((off + static_cast<std::int64_t>(patch_len) - 1) * g),
                   granularity};
    s.validate();
    spans.push_back(s);
  }
  return spans;
}

// ---- cache -----------------------------------------------------------------------

namespace {

constexpr char kBankMagic[8] = {'T', 'P', 'C', 'B', 'A', 'N', 'K', '1'};

}  // namespace

BankCache::BankCache(std::filesystem::path path) : path_(std::move(path)) {
  bool fresh = true;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_, std::ios::binary);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (in && std::memcmp(magic, kBankMagic, sizeof(magic)) == 0) {
      fresh = false;
      while (true) {
        std::uint32_t klen = 0;
        if (!in.read(reinterpret_cast<char*>(&klen), sizeof(klen))) break;
        std::string key(klen, '\0');
        std::uint32_t width = 0;
        if (!in.read(key.data(), klen) || !in.read(reinterpret_cast<char*>(&width), sizeof(width))) break;
        std::vector<double> v(width);
        if (!in.read(reinterpret_cast<char*>(v.data()),
                     static_cast<std::streamsize>(width * sizeof(double)))) {
          break;
        }
        entries_[std::move(key)] = std::move(v);
      }
    } else if (std::filesystem::file_size(path_) > 0) {
      throw DataError(path_.string() + " is not a bank cache file");
    }
  }
  writer_ = std::make_unique<std::ofstream>(path_, std::ios::binary | std::ios::app);
  if (!*writer_) throw DataError("cannot open bank cache " + path_.string());
  if (fresh) writer_->write(kBankMagic, sizeof(kBankMagic));
}

std::string BankCache::key(const TemporalSpan& span, std::uint64_t fingerprint) {
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016" PRIx64, fingerprint);
  return span.start.format() + "|" + span.end.format() + "|" + span.granularity.label() + "|" + hex;
}

std::optional<std::vector<double>> BankCache::find(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    ++misses_;
    return std::nullopt;
  }
  ++hits_;
  return it->second;
}

void BankCache::insert(const std::string& key, const std::vector<double>& vector) {
  std::lock_guard lock(mutex_);
  if (!entries_.emplace(key, vector).second) return;
  if (writer_) {
    const auto klen = static_cast<std::uint32_t>(key.size());
    const auto width = static_cast<std::uint32_t>(vector.size());
    writer_->write(reinterpret_cast<const char*>(&klen), sizeof(klen));
    writer_->write(key.data(), klen);
    writer_->write(reinterpret_cast<const char*>(&width), sizeof(width));
    writer_->write(reinterpret_cast<const char*>(vector.data()),
                   static_cast<std::streamsize>(vector.size() * sizeof(double)));
  }
}

void BankCache::flush() {
  std::lock_guard lock(mutex_);
  if (writer_) writer_->flush();
}

std::size_t BankCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

// ---- encoder ---------------------------------------------------------------------

TemporalEncoder::TemporalEncoder(const DecoderConfig& config, std::uint64_t backbone_seed,
                                 std::shared_ptr<BankCache> cache)
    : backbone_(config, registry_, backbone_seed),
      fingerprint_(backbone_.fingerprint()),
      cache_(std::move(cache)) {}

std::vector<double> TemporalEncoder::embed(const TemporalSpan& span) const {
  std::string key;
  if (cache_) {
    key = BankCache::key(span, fingerprint_);
    if (auto hit = cache_->find(key)) return *std::move(hit);
  }
  const std::string prompt = render_prompt(span);
  log_debug("prompt: " + prompt);
  auto v = backbone_.encode_text(tokenize(prompt));
  if (cache_) cache_->insert(key, v);
  return v;
}

Tensor build_bank(std::span<const TemporalSpan> spans, const TemporalEncoder& encoder) {
  if (spans.empty()) throw ContractError("build_bank: no spans");
  const std::size_t d = encoder.width();
  std::vector<double> rows;
  rows.reserve(spans.size() * d);
  for (const auto& s : spans) {
    auto v = encoder.embed(s);
    rows.insert(rows.end(), v.begin(), v.end());
  }
  return Tensor(spans.size(), d, std::move(rows));
}

}  // namespace tpc
