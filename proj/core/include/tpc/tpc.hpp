#pragma once

// Temporal-prior conditioning modules: learnable TS-tokens that cross-attend
// to the temporal embedding bank at selected decoder layers, followed by a
// gated position-wise feed-forward update.
//
// Patch rows never read the bank. Within one module the bank reaches only the
// TS-token rows; patches see that context later, through the decoder's own
// self-attention.

#include <cstdint>
#include <string>
#include <vector>

#include "tpc/backbone.hpp"
#include "tpc/params.hpp"
#include "tpc/random.hpp"
#include "tpc/tensor.hpp"

namespace tpc {

/// Logistic sigmoid of a gate pre-activation.
double gate_value(double pre_activation);

struct TpcLayerParams {
  Tensor wq, wk, wv;              // d x d, cross-attention projections
  Tensor gate_attn, gate_ffn;     // 1 x 1 pre-activations, 0 at init
  Tensor ln_q_gain, ln_q_bias;    // norm on the query side only
  Tensor ln_ffn_gain, ln_ffn_bias;
  Tensor w1, b1, w2, b2;          // d -> ffn_mult*d -> d

  /// Registers the parameters under `prefix` (e.g. "tpc.layer2."), trainable.
  static TpcLayerParams create(const std::string& prefix, std::size_t width,
                               std::size_t ffn_mult, double init_std, ParamRegistry& registry,
                               Rng& rng);
};

/// X_ts + sigmoid(a1) * softmax(Norm(X_ts) W_Q (bank W_K)^T / sqrt(d_h)) bank W_V.
/// With heads > 1 the projections are split column-wise per head.
Tensor gated_cross_attention(const Tensor& ts_tokens, const Tensor& bank,
                             const TpcLayerParams& params, std::size_t heads = 1);

/// H + sigmoid(a2) * FFN(Norm(H)), applied row-wise.
Tensor gated_ffn(const Tensor& h, const TpcLayerParams& params);

enum class FfnScope { all_positions, ts_tokens_only };

std::string to_string(FfnScope s);
FfnScope parse_ffn_scope(std::string_view text);

struct SequenceLayout {
  std::size_t num_patches = 0;
  std::size_t num_ts = 0;
  Visibility visibility = Visibility::suffix_global;

  std::size_t ts_begin() const noexcept {
    return visibility == Visibility::suffix_global ? num_patches : 0;
  }
  std::size_t patch_begin() const noexcept {
    return visibility == Visibility::suffix_global ? 0 : num_ts;
  }
  std::size_t rows() const noexcept { return num_patches + num_ts; }
};

/// Full module applied to the post-self-attention state of one layer: cross
/// attention on the TS-token rows, re-assembly, then the gated FFN.
Tensor tpc_layer(const Tensor& h, const Tensor& bank, const TpcLayerParams& params,
                 const SequenceLayout& layout, std::size_t heads = 1,
                 FfnScope scope = FfnScope::all_positions);

/// Strictly increasing layer indices in [0, depth).
struct InsertionSchedule {
  std::vector<std::size_t> layers;

  /// depth/2 modules at layers 0, 2, 4, ...: every module is followed by at
  /// least one decoder layer that can carry its output to the patch rows.
  static InsertionSchedule evenly_spaced(std::size_t depth);
  void validate(std::size_t depth) const;
};

}  // namespace tpc
