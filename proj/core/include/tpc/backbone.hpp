#pragma once

// Tiny GPT-2 style decoder, initialized from a seed and kept frozen. It is
// both the forecasting trunk and the encoder for temporal prompts.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpc/params.hpp"
#include "tpc/random.hpp"
#include "tpc/tensor.hpp"

namespace tpc {

struct DecoderConfig {
  std::size_t depth = 6;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t vocab = 258;
  std::size_t max_seq = 256;
  double init_std = 0.02;

  void validate() const;
};

// ---- tokenizer -------------------------------------------------------------------

inline constexpr std::size_t kBosToken = 256;
inline constexpr std::size_t kEosToken = 257;
inline constexpr std::size_t kByteVocab = 258;

/// One token per byte, wrapped in BOS/EOS. Only printable ASCII is accepted.
std::vector<std::size_t> tokenize(std::string_view text);
/// Inverse of tokenize; BOS/EOS are dropped.
std::string detokenize(std::span<const std::size_t> ids);

// ---- masks -----------------------------------------------------------------------

/// Where TS-tokens sit and what they may see.
///   suffix_global: [patches | ts]. Patches attend causally to patches and to
///     every TS-token; TS-tokens attend to TS-tokens only.
///   prefix: [ts | patches] under a plain causal mask.
enum class Visibility { suffix_global, prefix };

std::string to_string(Visibility v);
Visibility parse_visibility(std::string_view text);

/// n x n additive mask, 0 on and below the diagonal, -inf above.
Tensor causal_mask(std::size_t n);
/// Mask over a sequence of `num_patches` patch rows and `num_ts` TS-token rows.
Tensor sequence_mask(std::size_t num_patches, std::size_t num_ts, Visibility visibility);

// ---- decoder ---------------------------------------------------------------------

class Backbone {
 public:
  /// Registers every weight under "backbone." in `registry`, frozen.
  Backbone(const DecoderConfig& config, ParamRegistry& registry, std::uint64_t seed);

  const DecoderConfig& config() const noexcept { return config_; }

  /// Pre-LN block: h + MHA(LN(h)), then + FFN(LN(.)). Masked by `mask`.
  Tensor self_attention_layer(const Tensor& h, std::size_t layer, const Tensor& mask) const;

  using LayerHook = std::function<Tensor(std::size_t layer, const Tensor& h)>;

  /// Runs all layers; after each layer listed in `hook_layers` the hidden
  /// state passes through `hook`. Returns the final layer-normed states.
  Tensor decoder_forward(const Tensor& h0, const Tensor& mask,
                         std::span<const std::size_t> hook_layers = {},
                         const LayerHook& hook = {}) const;

  Tensor embed_tokens(std::span<const std::size_t> ids) const;
  /// Rows [begin, begin + count) of the positional table.
  Tensor positions(std::size_t begin, std::size_t count) const;

  /// Last-position hidden state of the frozen decoder under a causal mask.
  std::vector<double> encode_text(std::span<const std::size_t> ids) const;

  /// Adds trainable low-rank deltas B*A (B zero, A random) to W_Q and W_V of
  /// every layer, registered under "lora.". Scale alpha/r with alpha = r.
  void attach_lora(std::size_t rank, ParamRegistry& registry, Rng& rng);
  bool has_lora() const noexcept { return !lora_.empty(); }

  /// Hash of the frozen weights; keys cached prompt embeddings.
  std::uint64_t fingerprint() const;

  static std::string layer_prefix(std::size_t layer);

 private:
  struct Layer {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
  };
  struct Lora {
    Tensor q_a, q_b, v_a, v_b;
    double scale = 1.0;
  };

  Tensor project(const Tensor& x, const Tensor& w, const Tensor& b, const Tensor* lora_a,
                 const Tensor* lora_b, double lora_scale) const;

  DecoderConfig config_;
  Tensor token_embedding_;
  Tensor position_table_;
  std::vector<Layer> layers_;
  std::vector<Lora> lora_;
  Tensor lnf_gain_, lnf_bias_;
  std::vector<Tensor> all_weights_;
  std::vector<std::string> all_names_;
};

}  // namespace tpc
