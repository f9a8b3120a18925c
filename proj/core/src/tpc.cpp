#include "tpc/tpc.hpp"

#include <cmath>

#include "tpc/errors.hpp"

namespace tpc {

double gate_value(double pre_activation) { return 1.0 / (1.0 + std::exp(-pre_activation)); }

TpcLayerParams TpcLayerParams::create(const std::string& prefix, std::size_t width,
                                      std::size_t ffn_mult, double init_std,
                                      ParamRegistry& registry, Rng& rng) {
  auto normal = [&](std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (double& x : v) x = rng.normal(0.0, init_std);
    return Tensor(r, c, std::move(v));
  };
  const std::size_t d = width;
  const std::size_t f = width * ffn_mult;
  TpcLayerParams p;
  p.wq = registry.add(prefix + "cross.wq", normal(d, d), true);
  p.wk = registry.add(prefix + "cross.wk", normal(d, d), true);
  p.wv = registry.add(prefix + "cross.wv", normal(d, d), true);
  p.gate_attn = registry.add(prefix + "gate_attn", Tensor::scalar(0.0), true);
  p.gate_ffn = registry.add(prefix + "gate_ffn", Tensor::scalar(0.0), true);
  p.ln_q_gain = registry.add(prefix + "ln_q.gain", Tensor::full(1, d, 1.0), true);
  p.ln_q_bias = registry.add(prefix + "ln_q.bias", Tensor::zeros(1, d), true);
  p.ln_ffn_gain = registry.add(prefix + "ln_ffn.gain", Tensor::full(1, d, 1.0), true);
  p.ln_ffn_bias = registry.add(prefix + "ln_ffn.bias", Tensor::zeros(1, d), true);
  p.w1 = registry.add(prefix + "ffn.w1", normal(d, f), true);
  p.b1 = registry.add(prefix + "ffn.b1", Tensor::zeros(1, f), true);
  p.w2 = registry.add(prefix + "ffn.w2", normal(f, d), true);
  p.b2 = registry.add(prefix + "ffn.b2", Tensor::zeros(1, d), true);
  return p;
}

Tensor gated_cross_attention(const Tensor& ts_tokens, const Tensor& bank,
                             const TpcLayerParams& params, std::size_t heads) {
  if (bank.rows() == 0) throw ContractError("gated_cross_attention: empty temporal bank");
  const std::size_t d = params.wq.rows();
  if (ts_tokens.cols() != d || bank.cols() != d) {
    throw ContractError("gated_cross_attention: width mismatch (tokens " +
                        std::to_string(ts_tokens.cols()) + ", bank " +
                        std::to_string(bank.cols()) + ", params " + std::to_string(d) + ")");
  }
  if (heads == 0 || d % heads != 0) throw ConfigError("cross-attention heads must divide width");

  Tensor q = matmul(layer_norm(ts_tokens, params.ln_q_gain, params.ln_q_bias), params.wq);
  Tensor k = matmul(bank, params.wk);
  Tensor v = matmul(bank, params.wv);
  const std::size_t hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor ca;
  if (heads == 1) {
    ca = matmul(softmax_rows(scale(matmul_nt(q, k), inv_sqrt)), v);
  } else {
    std::vector<Tensor> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(q, h * hd, hd);
      Tensor kh = slice_cols(k, h * hd, hd);
      Tensor vh = slice_cols(v, h * hd, hd);
      outs.push_back(matmul(softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt)), vh));
    }
    ca = concat_cols(outs);
  }
  return add(ts_tokens, scale_by(ca, sigmoid(params.gate_attn)));
}

Tensor gated_ffn(const Tensor& h, const TpcLayerParams& params) {
  Tensor x = layer_norm(h, params.ln_ffn_gain, params.ln_ffn_bias);
  Tensor f = add_row(matmul(gelu(add_row(matmul(x, params.w1), params.b1)), params.w2), params.b2);
  return add(h, scale_by(f, sigmoid(params.gate_ffn)));
}

std::string to_string(FfnScope s) { return s == FfnScope::all_positions ? "all" : "ts"; }

FfnScope parse_ffn_scope(std::string_view text) {
  if (text == "all") return FfnScope::all_positions;
  if (text == "ts") return FfnScope::ts_tokens_only;
  throw ConfigError("unknown ffn gate scope '" + std::string(text) + "'");
}

Tensor tpc_layer(const Tensor& h, const Tensor& bank, const TpcLayerParams& params,
                 const SequenceLayout& layout, std::size_t heads, FfnScope scope) {
  if (h.rows() != layout.rows()) {
    throw ContractError("tpc_layer: expected " + std::to_string(layout.rows()) + " rows (" +
                        std::to_string(layout.num_patches) + " patches + " +
                        std::to_string(layout.num_ts) + " TS-tokens), got " +
                        std::to_string(h.rows()));
  }
  if (layout.num_ts == 0) {
    return scope == FfnScope::all_positions ? gated_ffn(h, params) : h;
  }
  Tensor patches = slice_rows(h, layout.patch_begin(), layout.num_patches);
  Tensor ts = gated_cross_attention(slice_rows(h, layout.ts_begin(), layout.num_ts), bank,
                                    params, heads);
  if (scope == FfnScope::ts_tokens_only) ts = gated_ffn(ts, params);
  Tensor merged;
  if (layout.num_patches == 0) {
    merged = ts;
  } else if (layout.visibility == Visibility::suffix_global) {
    merged = concat_rows({patches, ts});
  } else {
    merged = concat_rows({ts, patches});
  }
  return scope == FfnScope::all_positions ? gated_ffn(merged, params) : merged;
}

InsertionSchedule InsertionSchedule::evenly_spaced(std::size_t depth) {
  InsertionSchedule s;
  const std::size_t count = std::max<std::size_t>(depth / 2, 1);
  const std::size_t step = depth / count;
  for (std::size_t i = 0; i < count; ++i) s.layers.push_back(i * step);
  return s;
}

void InsertionSchedule::validate(std::size_t depth) const {
  if (layers.size() > depth) throw ConfigError("more insertion layers than decoder layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] >= depth) {
      throw ConfigError("insertion layer " + std::to_string(layers[i]) + " >= depth " +
                        std::to_string(depth));
    }
    if (i > 0 && layers[i] <= layers[i - 1]) {
      throw ConfigError("insertion layers must be strictly increasing");
    }
  }
}

}  // namespace tpc
