#include "tpc/model.hpp"

#include <algorithm>
#include <limits>

#include "tpc/errors.hpp"

namespace tpc {

std::string to_string(Conditioning c) {
  switch (c) {
    case Conditioning::tpc: return "tpc";
    case Conditioning::positional_add: return "positional-add";
    case Conditioning::prefix_prompt: return "prefix-prompt";
  }
  return "?";
}

std::string to_string(FineTune f) {
  switch (f) {
    case FineTune::none: return "none";
    case FineTune::full: return "full";
    case FineTune::partial: return "partial";
  }
  return "?";
}

std::string to_string(LossPositions p) { return p == LossPositions::all ? "all" : "last"; }
std::string to_string(RolloutStats s) { return s == RolloutStats::recompute ? "recompute" : "fixed"; }

Conditioning parse_conditioning(std::string_view text) {
  if (text == "tpc") return Conditioning::tpc;
  if (text == "positional-add") return Conditioning::positional_add;
  if (text == "prefix-prompt") return Conditioning::prefix_prompt;
  throw ConfigError("unknown conditioning '" + std::string(text) + "'");
}

FineTune parse_finetune(std::string_view text) {
  if (text == "none") return FineTune::none;
  if (text == "full") return FineTune::full;
  if (text == "partial") return FineTune::partial;
  throw ConfigError("unknown finetune mode '" + std::string(text) + "'");
}

LossPositions parse_loss_positions(std::string_view text) {
  if (text == "all") return LossPositions::all;
  if (text == "last") return LossPositions::last;
  throw ConfigError("unknown loss_positions '" + std::string(text) + "'");
}

RolloutStats parse_rollout_stats(std::string_view text) {
  if (text == "recompute") return RolloutStats::recompute;
  if (text == "fixed") return RolloutStats::fixed;
  throw ConfigError("unknown rollout_stats '" + std::string(text) + "'");
}

// ---- config ----------------------------------------------------------------------

std::size_t ModelConfig::num_patches() const { return patch_count(lookback, patch_len, stride); }

InsertionSchedule ModelConfig::schedule() const {
  if (conditioning != Conditioning::tpc) return {};
  if (!insertion) return InsertionSchedule::evenly_spaced(backbone.depth);
  return {*insertion};
}

std::vector<std::size_t> ModelConfig::resolved_partial_layers() const {
  if (!partial_layers.empty()) return partial_layers;
  if (insertion) return *insertion;
  return InsertionSchedule::evenly_spaced(backbone.depth).layers;
}

std::size_t ModelConfig::bank_rows() const {
  return span_policy == SpanPolicy::per_patch ? num_patches() : 1;
}

void ModelConfig::validate() const {
  backbone.validate();
  if (lookback < 2) throw ConfigError("lookback must be >= 2");
  if (patch_len < 2) throw ConfigError("patch_len must be >= 2");
  const std::size_t p = num_patches();  // throws on L_p > T or S == 0
  if ((lookback - patch_len) % stride != 0) {
    throw ConfigError("stride " + std::to_string(stride) + " must divide lookback - patch_len (" +
                      std::to_string(lookback - patch_len) +
                      ") so the last real patch ends at the forecast origin");
  }
  schedule().validate(backbone.depth);
  std::size_t rows = p;
  if (conditioning == Conditioning::tpc) rows += ts_tokens;
  if (conditioning == Conditioning::prefix_prompt) rows += bank_rows();
  if (rows > backbone.max_seq) {
    throw ConfigError("sequence of " + std::to_string(rows) + " rows exceeds max_seq " +
                      std::to_string(backbone.max_seq));
  }
  if (conditioning == Conditioning::positional_add && span_policy != SpanPolicy::per_patch) {
    throw ConfigError("positional-add conditioning needs the per-patch span policy");
  }
  if (cross_heads == 0 || backbone.width % cross_heads != 0) {
    throw ConfigError("cross_heads must divide the width");
  }
  if (lora_rank >= backbone.width) {
    throw ConfigError("LoRA rank " + std::to_string(lora_rank) + " must be below width " +
                      std::to_string(backbone.width));
  }
  if (finetune == FineTune::partial) {
    for (std::size_t l : resolved_partial_layers()) {
      if (l >= backbone.depth) throw ConfigError("partial fine-tuning layer out of range");
    }
  }
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
}

// ---- model -----------------------------------------------------------------------

namespace {

Tensor normal_matrix(std::size_t rows, std::size_t cols, double std, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.normal(0.0, std);
  return Tensor(rows, cols, std::move(v));
}

}  // namespace

ForecastModel::ForecastModel(const ModelConfig& config)
    : config_((config.validate(), config)),
      backbone_(config_.backbone, registry_, config_.backbone_seed) {
  Rng rng(config_.seed);
  const std::size_t d = config_.backbone.width;
  const std::size_t lp = config_.patch_len;
  embed_w_ = registry_.add("patch_embedder.weight", normal_matrix(d, lp, config_.init_std, rng), true);
  embed_b_ = registry_.add("patch_embedder.bias", Tensor::zeros(1, d), true);
  head_w_ = registry_.add("output_head.weight", normal_matrix(lp, d, config_.init_std, rng), true);
  head_b_ = registry_.add("output_head.bias", Tensor::zeros(1, lp), true);
  if (config_.conditioning == Conditioning::tpc) {
    if (config_.ts_tokens > 0) {
      ts_tokens_ = registry_.add("ts_tokens",
                                 normal_matrix(config_.ts_tokens, d, config_.init_std, rng), true);
    }
    insertion_ = config_.schedule().layers;
    for (std::size_t l : insertion_) {
      tpc_layers_.push_back(TpcLayerParams::create("tpc.layer" + std::to_string(l) + ".", d,
                                                   config_.backbone.ffn_mult, config_.init_std,
                                                   registry_, rng));
    }
  }
  bank_shift_ = registry_.add("bank_norm.shift", Tensor::zeros(1, d), false);
  bank_scale_ = registry_.add("bank_norm.scale", Tensor::full(1, d, 1.0), false);
  if (config_.lora_rank > 0) backbone_.attach_lora(config_.lora_rank, registry_, rng);
  apply_freezing();
}

ForecastModel::ForecastModel(const ModelConfig& config, const TemporalEncoder& encoder)
    : ForecastModel(config) {
  const BankCalibration cal = calibrate_bank(config_, encoder);
  set_bank_calibration(cal.shift, cal.scale);
}

void ForecastModel::set_bank_calibration(std::span<const double> shift,
                                         std::span<const double> scale) {
  const std::size_t d = config_.backbone.width;
  if (shift.size() != d || scale.size() != d) {
    throw ContractError("bank calibration must have width " + std::to_string(d));
  }
  std::copy(shift.begin(), shift.end(), bank_shift_.mutable_values().begin());
  std::copy(scale.begin(), scale.end(), bank_scale_.mutable_values().begin());
}

Tensor ForecastModel::calibrate(const Tensor& bank) const {
  const std::size_t d = config_.backbone.width;
  if (bank.cols() != d) {
    throw ContractError("bank width " + std::to_string(bank.cols()) + " != " + std::to_string(d));
  }
  const auto shift = bank_shift_.values();
  const auto scl = bank_scale_.values();
  std::vector<double> out(bank.values().begin(), bank.values().end());
  for (std::size_t r = 0; r < bank.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = (out[r * d + c] - shift[c]) * scl[c];
  }
  return Tensor(bank.rows(), d, std::move(out));
}

void ForecastModel::apply_freezing() {
  switch (config_.finetune) {
    case FineTune::none: break;
    case FineTune::full: registry_.set_trainable("backbone.", true); break;
    case FineTune::partial:
      for (std::size_t l : config_.resolved_partial_layers()) {
        registry_.set_trainable(Backbone::layer_prefix(l), true);
      }
      break;
  }
}

Tensor ForecastModel::embed_patches(const PatchSequence& patches) const {
  if (patches.patch_len != config_.patch_len) {
    throw ContractError("embed_patches: patch length " + std::to_string(patches.patch_len) +
                        " != configured " + std::to_string(config_.patch_len));
  }
  return add_row(matmul_nt(patches.as_tensor(), embed_w_), embed_b_);
}

Tensor ForecastModel::patch_states(const PatchSequence& patches, const Tensor& raw_bank) const {
  const std::size_t p = config_.num_patches();
  if (patches.count != p) {
    throw ContractError("forward: expected " + std::to_string(p) + " patches, got " +
                        std::to_string(patches.count));
  }
  const Tensor bank = calibrate(raw_bank);
  Tensor e = embed_patches(patches);

  switch (config_.conditioning) {
    case Conditioning::tpc: {
      const SequenceLayout layout{p, config_.ts_tokens, config_.visibility};
      Tensor seq = e;
      if (layout.num_ts > 0) {
        seq = layout.visibility == Visibility::suffix_global ? concat_rows({e, ts_tokens_})
                                                             : concat_rows({ts_tokens_, e});
      }
      seq = add(seq, backbone_.positions(0, layout.rows()));
      const Tensor mask = sequence_mask(layout.num_patches, layout.num_ts, layout.visibility);
      auto hook = [&](std::size_t layer, const Tensor& h) {
        const auto it = std::find(insertion_.begin(), insertion_.end(), layer);
        const auto& prm = tpc_layers_[static_cast<std::size_t>(it - insertion_.begin())];
        return tpc_layer(h, bank, prm, layout, config_.cross_heads, config_.ffn_scope);
      };
      Tensor out = backbone_.decoder_forward(seq, mask, insertion_, hook);
      return slice_rows(out, layout.patch_begin(), p);
    }
    case Conditioning::positional_add: {
      if (bank.rows() != p) {
        throw ContractError("positional-add: bank has " + std::to_string(bank.rows()) +
                            " rows for " + std::to_string(p) + " patches");
      }
      Tensor seq = add(add(e, bank), backbone_.positions(0, p));
      return backbone_.decoder_forward(seq, causal_mask(p));
    }
    case Conditioning::prefix_prompt: {
      const std::size_t m = bank.rows();
      Tensor seq = add(concat_rows({bank, e}), backbone_.positions(0, m + p));
      Tensor out = backbone_.decoder_forward(seq, causal_mask(m + p));
      return slice_rows(out, m, p);
    }
  }
  throw ContractError("unhandled conditioning mode");
}

Tensor ForecastModel::forward(const PatchSequence& patches, const Tensor& bank) const {
  return add_row(matmul_nt(patch_states(patches, bank), head_w_), head_b_);
}

std::vector<TemporalSpan> ForecastModel::spans_for(Timestamp start) const {
  return spans_for_window(start, config_.granularity, config_.lookback, config_.patch_len,
                          config_.stride, config_.span_policy);
}

void ForecastModel::close_cross_gates() {
  for (auto& layer : tpc_layers_) {
    layer.gate_attn.mutable_values()[0] = -std::numeric_limits<double>::infinity();
  }
}

BankCalibration calibrate_bank(const ModelConfig& config, const TemporalEncoder& encoder) {
  const std::size_t d = encoder.width();
  const std::size_t n = 168;
  const std::size_t steps =
      config.span_policy == SpanPolicy::per_patch ? config.patch_len : config.lookback;
  const std::int64_t g = config.granularity.seconds;
  const Timestamp origin = Timestamp::from_civil(2001, 1, 1);
  std::vector<double> sum(d, 0.0), sq(d, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const Timestamp start = origin.plus(static_cast<std::int64_t>(k) * g);
    const TemporalSpan span{start, start.plus(static_cast<std::int64_t>(steps - 1) * g),
                            config.granularity};
    const std::vector<double> v = encoder.embed(span);
    for (std::size_t j = 0; j < d; ++j) {
      sum[j] += v[j];
      sq[j] += v[j] * v[j];
    }
  }
  BankCalibration cal;
  for (std::size_t j = 0; j < d; ++j) {
    const double mean = sum[j] / static_cast<double>(n);
    const double var = std::max(sq[j] / static_cast<double>(n) - mean * mean, 0.0);
    cal.shift.push_back(mean);
    cal.scale.push_back(1.0 / std::max(std::sqrt(var), kRevinEps));
  }
  return cal;
}

ParamReport param_report(const ForecastModel& model) {
  ParamReport r;
  for (const auto& e : model.params().entries()) {
    auto& g = r.groups[std::string(param_group(e.name))];
    g.total += e.tensor.size();
    r.total += e.tensor.size();
    if (e.trainable) {
      g.trainable += e.tensor.size();
      r.trainable += e.tensor.size();
    }
  }
  return r;
}

}  // namespace tpc
