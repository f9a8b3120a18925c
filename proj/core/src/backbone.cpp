#include "tpc/backbone.hpp"

#include <cmath>
#include <limits>

#include "tpc/errors.hpp"

namespace tpc {

void DecoderConfig::validate() const {
  if (depth < 1) throw ConfigError("decoder depth must be >= 1");
  if (width == 0 || heads == 0 || width % heads != 0) {
    throw ConfigError("decoder width " + std::to_string(width) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (ffn_mult == 0) throw ConfigError("ffn_mult must be >= 1");
  if (vocab < kByteVocab) throw ConfigError("vocab must cover the 258 byte tokens");
  if (max_seq == 0) throw ConfigError("max_seq must be >= 1");
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
}

// ---- tokenizer -------------------------------------------------------------------

std::vector<std::size_t> tokenize(std::string_view text) {
  std::vector<std::size_t> ids;
  ids.reserve(text.size() + 2);
  ids.push_back(kBosToken);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto byte = static_cast<unsigned char>(text[i]);
    if (byte < 0x20 || byte > 0x7e) {
      throw DataError("tokenize: non-printable or non-ASCII byte 0x" +
                      std::to_string(static_cast<unsigned>(byte)) + " at offset " +
                      std::to_string(i));
    }
    ids.push_back(byte);
  }
  ids.push_back(kEosToken);
  return ids;
}

std::string detokenize(std::span<const std::size_t> ids) {
  std::string out;
  for (std::size_t id : ids) {
    if (id == kBosToken || id == kEosToken) continue;
    if (id > 0xff) throw DataError("detokenize: id out of byte range");
    out.push_back(static_cast<char>(id));
  }
  return out;
}

// ---- masks -----------------------------------------------------------------------

std::string to_string(Visibility v) {
  return v == Visibility::suffix_global ? "suffix-global" : "prefix";
}

Visibility parse_visibility(std::string_view text) {
  if (text == "suffix-global") return Visibility::suffix_global;
  if (text == "prefix") return Visibility::prefix;
  throw ConfigError("unknown visibility mode '" + std::string(text) + "'");
}

Tensor causal_mask(std::size_t n) {
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = ninf;
  return Tensor(n, n, std::move(m));
}

Tensor sequence_mask(std::size_t num_patches, std::size_t num_ts, Visibility visibility) {
  const std::size_t n = num_patches + num_ts;
  if (visibility == Visibility::prefix || num_ts == 0) return causal_mask(n);
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> m(n * n, ninf);
  for (std::size_t i = 0; i < num_patches; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 0.0;
    for (std::size_t j = num_patches; j < n; ++j) m[i * n + j] = 0.0;
  }
  for (std::size_t i = num_patches; i < n; ++i)
    for (std::size_t j = num_patches; j < n; ++j) m[i * n + j] = 0.0;
  return Tensor(n, n, std::move(m));
}

// ---- decoder ---------------------------------------------------------------------

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double std, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.normal(0.0, std);
  return Tensor(rows, cols, std::move(v));
}

}  // namespace

std::string Backbone::layer_prefix(std::size_t layer) {
  return "backbone.layer" + std::to_string(layer) + ".";
}

Backbone::Backbone(const DecoderConfig& config, ParamRegistry& registry, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.width;
  const std::size_t f = config_.width * config_.ffn_mult;
  const double std = config_.init_std;
  // GPT-2 scales residual output projections by 1/sqrt(2 * depth).
  const double proj_std = std / std::sqrt(2.0 * static_cast<double>(config_.depth));

  auto reg = [&](const std::string& name, Tensor t) {
    all_names_.push_back(name);
    all_weights_.push_back(t);
    registry.add(name, t, false);
    return t;
  };

  token_embedding_ = reg("backbone.token_embedding", random_matrix(config_.vocab, d, std, rng));
  position_table_ = reg("backbone.position_table", random_matrix(config_.max_seq, d, std, rng));
  for (std::size_t l = 0; l < config_.depth; ++l) {
    const std::string p = layer_prefix(l);
    Layer layer;
    layer.ln1_gain = reg(p + "ln1.gain", Tensor::full(1, d, 1.0));
    layer.ln1_bias = reg(p + "ln1.bias", Tensor::zeros(1, d));
    layer.wq = reg(p + "attn.wq", random_matrix(d, d, std, rng));
    layer.bq = reg(p + "attn.bq", Tensor::zeros(1, d));
    layer.wk = reg(p + "attn.wk", random_matrix(d, d, std, rng));
    layer.bk = reg(p + "attn.bk", Tensor::zeros(1, d));
    layer.wv = reg(p + "attn.wv", random_matrix(d, d, std, rng));
    layer.bv = reg(p + "attn.bv", Tensor::zeros(1, d));
    layer.wo = reg(p + "attn.wo", random_matrix(d, d, proj_std, rng));
    layer.bo = reg(p + "attn.bo", Tensor::zeros(1, d));
    layer.ln2_gain = reg(p + "ln2.gain", Tensor::full(1, d, 1.0));
    layer.ln2_bias = reg(p + "ln2.bias", Tensor::zeros(1, d));
    layer.w1 = reg(p + "mlp.w1", random_matrix(d, f, std, rng));
    layer.b1 = reg(p + "mlp.b1", Tensor::zeros(1, f));
    layer.w2 = reg(p + "mlp.w2", random_matrix(f, d, proj_std, rng));
    layer.b2 = reg(p + "mlp.b2", Tensor::zeros(1, d));
    layers_.push_back(std::move(layer));
  }
  lnf_gain_ = reg("backbone.ln_f.gain", Tensor::full(1, d, 1.0));
  lnf_bias_ = reg("backbone.ln_f.bias", Tensor::zeros(1, d));
}

Tensor Backbone::project(const Tensor& x, const Tensor& w, const Tensor& b, const Tensor* lora_a,
                         const Tensor* lora_b, double lora_scale) const {
  Tensor y = add_row(matmul(x, w), b);
  if (lora_a != nullptr) {
    y = add(y, scale(matmul(matmul(x, *lora_b), *lora_a), lora_scale));
  }
  return y;
}

Tensor Backbone::self_attention_layer(const Tensor& h, std::size_t layer_index,
                                      const Tensor& mask) const {
  if (layer_index >= layers_.size()) throw ConfigError("layer index out of range");
  if (h.cols() != config_.width) {
    throw ContractError("self_attention_layer: width " + std::to_string(h.cols()) +
                        " != " + std::to_string(config_.width));
  }
  if (mask.rows() != h.rows() || mask.cols() != h.rows()) {
    throw ContractError("self_attention_layer: mask shape does not match sequence length");
  }
  const Layer& L = layers_[layer_index];
  const Lora* lora = lora_.empty() ? nullptr : &lora_[layer_index];

  Tensor x = layer_norm(h, L.ln1_gain, L.ln1_bias);
  Tensor q = project(x, L.wq, L.bq, lora ? &lora->q_a : nullptr, lora ? &lora->q_b : nullptr,
                     lora ? lora->scale : 0.0);
  Tensor k = add_row(matmul(x, L.wk), L.bk);
  Tensor v = project(x, L.wv, L.bv, lora ? &lora->v_a : nullptr, lora ? &lora->v_b : nullptr,
                     lora ? lora->scale : 0.0);

  const std::size_t hd = config_.width / config_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> heads;
  heads.reserve(config_.heads);
  for (std::size_t hh = 0; hh < config_.heads; ++hh) {
    Tensor qh = slice_cols(q, hh * hd, hd);
    Tensor kh = slice_cols(k, hh * hd, hd);
    Tensor vh = slice_cols(v, hh * hd, hd);
    Tensor attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    heads.push_back(matmul(attn, vh));
  }
  Tensor merged = config_.heads == 1 ? heads.front() : concat_cols(heads);
  Tensor h1 = add(h, add_row(matmul(merged, L.wo), L.bo));

  Tensor y = layer_norm(h1, L.ln2_gain, L.ln2_bias);
  Tensor m = add_row(matmul(gelu(add_row(matmul(y, L.w1), L.b1)), L.w2), L.b2);
  return add(h1, m);
}

Tensor Backbone::decoder_forward(const Tensor& h0, const Tensor& mask,
                                 std::span<const std::size_t> hook_layers,
                                 const LayerHook& hook) const {
  for (std::size_t l : hook_layers) {
    if (l >= config_.depth) {
      throw ConfigError("insertion layer " + std::to_string(l) + " >= depth " +
                        std::to_string(config_.depth));
    }
  }
  if (!hook_layers.empty() && !hook) throw ContractError("decoder_forward: hook layers without hook");
  Tensor h = h0;
  for (std::size_t l = 0; l < config_.depth; ++l) {
    h = self_attention_layer(h, l, mask);
    for (std::size_t hl : hook_layers) {
      if (hl == l) {
        h = hook(l, h);
        break;
      }
    }
  }
  return layer_norm(h, lnf_gain_, lnf_bias_);
}

Tensor Backbone::embed_tokens(std::span<const std::size_t> ids) const {
  return gather_rows(token_embedding_, ids);
}

Tensor Backbone::positions(std::size_t begin, std::size_t count) const {
  if (begin + count > config_.max_seq) {
    throw ConfigError("sequence of " + std::to_string(begin + count) +
                      " positions exceeds max_seq " + std::to_string(config_.max_seq));
  }
  return slice_rows(position_table_, begin, count);
}

std::vector<double> Backbone::encode_text(std::span<const std::size_t> ids) const {
  if (ids.empty()) throw ContractError("encode_text: empty token sequence");
  if (ids.size() > config_.max_seq) {
    throw ConfigError("prompt of " + std::to_string(ids.size()) + " tokens exceeds max_seq " +
                      std::to_string(config_.max_seq));
  }
  Tensor h0 = add(embed_tokens(ids), positions(0, ids.size()));
  Tensor out = decoder_forward(h0, causal_mask(ids.size()));
  Tensor last = slice_rows(out, ids.size() - 1, 1);
  auto v = last.values();
  return {v.begin(), v.end()};
}

void Backbone::attach_lora(std::size_t rank, ParamRegistry& registry, Rng& rng) {
  const std::size_t d = config_.width;
  if (rank == 0 || rank >= d) {
    throw ConfigError("LoRA rank must be in [1, " + std::to_string(d) + "), got " +
                      std::to_string(rank));
  }
  if (!lora_.empty()) throw ContractError("LoRA already attached");
  const double a_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < config_.depth; ++l) {
    const std::string p = "lora.layer" + std::to_string(l) + ".";
    Lora lo;
    lo.q_b = registry.add(p + "wq.b", Tensor::zeros(d, rank), true);
    lo.q_a = registry.add(p + "wq.a", random_matrix(rank, d, a_std, rng), true);
    lo.v_b = registry.add(p + "wv.b", Tensor::zeros(d, rank), true);
    lo.v_a = registry.add(p + "wv.a", random_matrix(rank, d, a_std, rng), true);
    lo.scale = 1.0;  // alpha / r with alpha = r
    lora_.push_back(std::move(lo));
  }
}

std::uint64_t Backbone::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t i = 0; i < all_weights_.size(); ++i) {
    mix(all_names_[i].data(), all_names_[i].size());
    auto v = all_weights_[i].values();
    mix(v.data(), v.size() * sizeof(double));
  }
  return h;
}

}  // namespace tpc
