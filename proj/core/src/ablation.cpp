#include "tpc/ablation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "tpc/errors.hpp"
#include "tpc/log.hpp"

namespace tpc {

namespace {

constexpr VariantKind kAllKinds[] = {VariantKind::tpc,     VariantKind::pos_embed,
                                     VariantKind::prefix_prompt, VariantKind::full_ft,
                                     VariantKind::partial_ft,    VariantKind::lora};

bool builds_on_pos_embed(VariantKind k) {
  return k == VariantKind::pos_embed || k == VariantKind::full_ft ||
         k == VariantKind::partial_ft || k == VariantKind::lora;
}

std::string num(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

MeanSd mean_sd(const std::vector<double>& xs) {
  MeanSd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

}  // namespace

std::string to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::tpc: return "tpc";
    case VariantKind::pos_embed: return "pos-embed";
    case VariantKind::prefix_prompt: return "prefix-prompt";
    case VariantKind::full_ft: return "full-ft";
    case VariantKind::partial_ft: return "partial-ft";
    case VariantKind::lora: return "lora";
  }
  return "?";
}

VariantKind parse_variant_kind(std::string_view text) {
  for (VariantKind k : kAllKinds) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown ablation variant '" + std::string(text) + "'");
}

VariantSpec VariantSpec::defaults(VariantKind kind) {
  VariantSpec s;
  s.kind = kind;
  if (kind == VariantKind::lora) s.lora_rank = 4;
  if (kind == VariantKind::full_ft) s.lr_scale = 0.1;
  return s;
}

void VariantSpec::validate(const ModelConfig& base) const {
  if ((kind == VariantKind::lora) != (lora_rank > 0)) {
    throw ConfigError("a LoRA rank is required by, and only by, the lora variant");
  }
  if (kind != VariantKind::partial_ft && !partial_layers.empty()) {
    throw ConfigError("partial layers are only meaningful for the partial-ft variant");
  }
  if (!(lr_scale > 0.0)) throw ConfigError("variant learning-rate scale must be positive");
  if (builds_on_pos_embed(kind) && base.span_policy != SpanPolicy::per_patch) {
    throw ConfigError(to_string(kind) + " adds bank rows to patch embeddings and needs the "
                      "per-patch span policy");
  }
}

ModelConfig variant_config(const ModelConfig& base, const VariantSpec& spec) {
  spec.validate(base);
  ModelConfig c = base;
  c.finetune = FineTune::none;
  c.lora_rank = 0;
  c.partial_layers.clear();
  switch (spec.kind) {
    case VariantKind::tpc:
      c.conditioning = Conditioning::tpc;
      break;
    case VariantKind::prefix_prompt:
      c.conditioning = Conditioning::prefix_prompt;
      c.ts_tokens = 0;
      break;
    case VariantKind::pos_embed:
    case VariantKind::full_ft:
    case VariantKind::partial_ft:
    case VariantKind::lora:
      c.conditioning = Conditioning::positional_add;
      c.ts_tokens = 0;
      break;
  }
  if (spec.kind == VariantKind::full_ft) c.finetune = FineTune::full;
  if (spec.kind == VariantKind::partial_ft) {
    c.finetune = FineTune::partial;
    c.partial_layers = spec.partial_layers;
    if (c.partial_layers.empty()) c.partial_layers = c.resolved_partial_layers();
  }
  if (spec.kind == VariantKind::lora) c.lora_rank = spec.lora_rank;
  c.validate();
  return c;
}

TrainConfig variant_train_config(const TrainConfig& base, const VariantSpec& spec) {
  TrainConfig t = base;
  t.learning_rate *= spec.lr_scale;
  t.validate();
  return t;
}

std::unique_ptr<ForecastModel> build_variant(const ModelConfig& base, const VariantSpec& spec,
                                             const TemporalEncoder& encoder) {
  return std::make_unique<ForecastModel>(variant_config(base, spec), encoder);
}

std::unique_ptr<ForecastModel> build_pos_embed_variant(const ModelConfig& base,
                                                       const TemporalEncoder& encoder) {
  return build_variant(base, VariantSpec::defaults(VariantKind::pos_embed), encoder);
}

std::unique_ptr<ForecastModel> build_prefix_prompt_variant(const ModelConfig& base,
                                                           const TemporalEncoder& encoder) {
  return build_variant(base, VariantSpec::defaults(VariantKind::prefix_prompt), encoder);
}

std::unique_ptr<ForecastModel> build_full_ft_variant(const ModelConfig& base,
                                                     const TemporalEncoder& encoder) {
  return build_variant(base, VariantSpec::defaults(VariantKind::full_ft), encoder);
}

std::unique_ptr<ForecastModel> build_partial_ft_variant(const ModelConfig& base,
                                                        const TemporalEncoder& encoder) {
  return build_variant(base, VariantSpec::defaults(VariantKind::partial_ft), encoder);
}

std::unique_ptr<ForecastModel> build_lora_variant(const ModelConfig& base, std::size_t rank,
                                                  const TemporalEncoder& encoder) {
  VariantSpec spec = VariantSpec::defaults(VariantKind::lora);
  spec.lora_rank = rank;
  return build_variant(base, spec, encoder);
}

const AblationRow* AblationResult::find(const std::string& dataset, const std::string& variant,
                                        std::uint64_t seed) const {
  for (const auto& r : rows) {
    if (r.dataset == dataset && r.variant == variant && r.seed == seed) return &r;
  }
  return nullptr;
}

std::uint64_t series_fingerprint(const RawSeries& series) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& t : series.timestamps) mix(&t.seconds, sizeof t.seconds);
  for (const auto& v : series.values) mix(v.data(), v.size() * sizeof(double));
  return h;
}

AblationResult run_ablation(const std::vector<NamedSeries>& datasets,
                            const std::vector<VariantSpec>& variants,
                            const std::vector<std::uint64_t>& seeds,
                            const ExperimentConfig& base, const TemporalEncoder& encoder) {
  if (datasets.empty() || variants.empty() || seeds.empty()) {
    throw ConfigError("ablation needs at least one dataset, variant and seed");
  }
  for (const auto& v : variants) variant_config(base.model, v);

  AblationResult result;
  for (const auto& ds : datasets) {
    result.datasets.push_back(ds.name);
    result.data_fingerprints.push_back(series_fingerprint(ds.series));
    result.test_windows.push_back(0);
    for (std::uint64_t seed : seeds) {
      for (const auto& v : variants) {
        ExperimentConfig ec = base;
        ec.model.seed = seed;
        ec.train.seed = seed;
        ec.model = variant_config(ec.model, v);
        ec.train = variant_train_config(ec.train, v);
        log_info("ablation: " + ds.name + " / " + to_string(v.kind) + " / seed " +
                 std::to_string(seed));
        ForecastModel model(ec.model, encoder);
        const ExperimentResult r = run_experiment(model, ds.series, ec, encoder);
        AblationRow row;
        row.dataset = ds.name;
        row.variant = to_string(v.kind);
        row.seed = seed;
        row.test = r.test;
        row.persistence = r.persistence;
        row.trainable = r.params.trainable;
        row.total = r.params.total;
        row.steps = r.training.steps;
        row.learning_rate = ec.train.learning_rate;
        row.seconds = r.seconds;
        result.rows.push_back(row);
        result.test_windows.back() = r.test_windows;
      }
    }
  }
  return result;
}

std::string ablation_csv(const AblationResult& result) {
  std::string out =
      "dataset,variant,seed,mse,mae,persistence_mse,persistence_mae,trainable,total,steps,"
      "learning_rate,seconds\n";
  for (const auto& r : result.rows) {
    out += r.dataset + "," + r.variant + "," + std::to_string(r.seed) + "," + num(r.test.mse) +
           "," + num(r.test.mae) + "," + num(r.persistence.mse) + "," + num(r.persistence.mae) +
           "," + std::to_string(r.trainable) + "," + std::to_string(r.total) + "," +
           std::to_string(r.steps) + "," + num(r.learning_rate) + "," + num(r.seconds) + "\n";
  }
  return out;
}

std::string format_ablation_table(const AblationResult& result) {
  std::vector<std::string> variants;
  for (const auto& r : result.rows) {
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) {
      variants.push_back(r.variant);
    }
  }
  char buf[128];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-14s %10s", "variant", "trainable");
  out += buf;
  for (const auto& ds : result.datasets) {
    std::snprintf(buf, sizeof buf, " | %-21s %-21s", (ds + " MSE").c_str(), (ds + " MAE").c_str());
    out += buf;
  }
  out += "\n" + std::string(out.size() - 1, '-') + "\n";

  auto cell = [&](const std::vector<double>& xs) {
    const MeanSd m = mean_sd(xs);
    std::snprintf(buf, sizeof buf, "%.4f +- %.4f", m.mean, m.sd);
    return std::string(buf);
  };
  auto row_text = [&](const std::string& label, std::size_t trainable, auto select) {
    std::string line;
    std::snprintf(buf, sizeof buf, "%-14s %10zu", label.c_str(), trainable);
    line += buf;
    for (const auto& ds : result.datasets) {
      std::vector<double> mse, mae;
      for (const auto& r : result.rows) {
        if (r.dataset != ds || !select(r)) continue;
        const Metrics& m = label == "persistence" ? r.persistence : r.test;
        mse.push_back(m.mse);
        mae.push_back(m.mae);
      }
      std::snprintf(buf, sizeof buf, " | %-21s %-21s", cell(mse).c_str(), cell(mae).c_str());
      line += buf;
    }
    return line + "\n";
  };
  for (const auto& v : variants) {
    std::size_t trainable = 0;
    for (const auto& r : result.rows) {
      if (r.variant == v) trainable = r.trainable;
    }
    out += row_text(v, trainable, [&](const AblationRow& r) { return r.variant == v; });
  }
  // Persistence does not depend on the variant; one seed's rows suffice.
  const std::string first = variants.empty() ? std::string() : variants.front();
  out += row_text("persistence", 0, [&](const AblationRow& r) { return r.variant == first; });
  return out;
}

}  // namespace tpc
