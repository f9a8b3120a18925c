#include "tpc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "tpc/ablation.hpp"
#include "tpc/errors.hpp"

namespace tpc {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) +
                      "' as a number");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" +
                    std::string(text) + "'");
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = trim(text.substr(pos, comma == std::string_view::npos ? comma : comma - pos));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += items[i];
    } else {
      out += std::to_string(items[i]);
    }
  }
  return out;
}

struct KeySpec {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define TPC_SIZE_KEY(NAME, FIELD)                                                          \
  KeySpec {                                                                                \
    NAME, [](const RunConfig& c) { return std::to_string(c.FIELD); },                      \
        [](RunConfig& c, std::string_view v) { c.FIELD = parse_number<std::size_t>(NAME, v); } \
  }
#define TPC_U64_KEY(NAME, FIELD)                                                             \
  KeySpec {                                                                                  \
    NAME, [](const RunConfig& c) { return std::to_string(c.FIELD); },                        \
        [](RunConfig& c, std::string_view v) { c.FIELD = parse_number<std::uint64_t>(NAME, v); } \
  }
#define TPC_DOUBLE_KEY(NAME, FIELD)                                                      \
  KeySpec {                                                                              \
    NAME, [](const RunConfig& c) { return format_double(c.FIELD); },                     \
        [](RunConfig& c, std::string_view v) { c.FIELD = parse_number<double>(NAME, v); } \
  }
#define TPC_ENUM_KEY(NAME, FIELD, PARSE)                                   \
  KeySpec {                                                                \
    NAME, [](const RunConfig& c) { return to_string(c.FIELD); },           \
        [](RunConfig& c, std::string_view v) { c.FIELD = PARSE(v); }       \
  }

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"data.source",
       [](const RunConfig& c) { return c.source == DataSource::csv ? "csv" : "synthetic"; },
       [](RunConfig& c, std::string_view v) {
         if (v == "csv") {
           c.source = DataSource::csv;
         } else if (v == "synthetic") {
           c.source = DataSource::synthetic;
         } else {
           throw ConfigError("data.source must be csv or synthetic, got '" + std::string(v) + "'");
         }
       }},
      {"data.csv", [](const RunConfig& c) { return c.csv_path; },
       [](RunConfig& c, std::string_view v) { c.csv_path = v; }},
      {"data.name", [](const RunConfig& c) { return c.dataset_name; },
       [](RunConfig& c, std::string_view v) { c.dataset_name = v; }},
      {"data.granularity", [](const RunConfig& c) { return c.synthetic.granularity.label(); },
       [](RunConfig& c, std::string_view v) {
         c.synthetic.granularity = Granularity::parse(v);
         c.experiment.model.granularity = c.synthetic.granularity;
       }},
      TPC_U64_KEY("data.synthetic.seed", synthetic.seed),
      TPC_SIZE_KEY("data.synthetic.length", synthetic.length),
      TPC_DOUBLE_KEY("data.synthetic.kappa", synthetic.kappa),
      TPC_DOUBLE_KEY("data.synthetic.sigma", synthetic.sigma),
      {"data.synthetic.start", [](const RunConfig& c) { return c.synthetic.start.format(); },
       [](RunConfig& c, std::string_view v) {
         try {
           c.synthetic.start = Timestamp::parse(v);
         } catch (const DataError& e) {
           throw ConfigError(std::string("data.synthetic.start: ") + e.what());
         }
       }},
      TPC_SIZE_KEY("data.synthetic.variables", synthetic.variables),
      TPC_SIZE_KEY("data.synthetic.phase_block", synthetic.phase_block),

      TPC_SIZE_KEY("model.depth", experiment.model.backbone.depth),
      TPC_SIZE_KEY("model.width", experiment.model.backbone.width),
      TPC_SIZE_KEY("model.heads", experiment.model.backbone.heads),
      TPC_SIZE_KEY("model.ffn_mult", experiment.model.backbone.ffn_mult),
      TPC_SIZE_KEY("model.max_seq", experiment.model.backbone.max_seq),
      TPC_DOUBLE_KEY("model.backbone_init_std", experiment.model.backbone.init_std),
      TPC_U64_KEY("model.backbone_seed", experiment.model.backbone_seed),
      TPC_DOUBLE_KEY("model.init_std", experiment.model.init_std),
      TPC_SIZE_KEY("model.lookback", experiment.model.lookback),
      TPC_SIZE_KEY("model.patch_len", experiment.model.patch_len),
      TPC_SIZE_KEY("model.stride", experiment.model.stride),
      TPC_SIZE_KEY("model.ts_tokens", experiment.model.ts_tokens),
      {"model.insertion",
       [](const RunConfig& c) {
         const auto& ins = c.experiment.model.insertion;
         if (!ins) return std::string("default");
         return ins->empty() ? std::string("none") : join(*ins);
       },
       [](RunConfig& c, std::string_view v) {
         auto& ins = c.experiment.model.insertion;
         if (v == "default") {
           ins.reset();
         } else if (v == "none") {
           ins.emplace();
         } else {
           ins = parse_list<std::size_t>("model.insertion", v);
         }
       }},
      TPC_ENUM_KEY("model.visibility", experiment.model.visibility, parse_visibility),
      TPC_ENUM_KEY("model.span_policy", experiment.model.span_policy, parse_span_policy),
      TPC_SIZE_KEY("model.cross_heads", experiment.model.cross_heads),
      TPC_ENUM_KEY("model.ffn_gate_scope", experiment.model.ffn_scope, parse_ffn_scope),
      TPC_ENUM_KEY("model.conditioning", experiment.model.conditioning, parse_conditioning),
      TPC_ENUM_KEY("model.finetune", experiment.model.finetune, parse_finetune),
      {"model.partial_layers",
       [](const RunConfig& c) { return join(c.experiment.model.partial_layers); },
       [](RunConfig& c, std::string_view v) {
         c.experiment.model.partial_layers = parse_list<std::size_t>("model.partial_layers", v);
       }},
      TPC_SIZE_KEY("model.lora_rank", experiment.model.lora_rank),
      TPC_ENUM_KEY("model.loss_positions", experiment.model.loss_positions,
                   parse_loss_positions),
      TPC_ENUM_KEY("model.rollout_stats", experiment.model.rollout_stats, parse_rollout_stats),

      TPC_DOUBLE_KEY("train.learning_rate", experiment.train.learning_rate),
      TPC_DOUBLE_KEY("train.beta1", experiment.train.beta1),
      TPC_DOUBLE_KEY("train.beta2", experiment.train.beta2),
      TPC_DOUBLE_KEY("train.adam_eps", experiment.train.adam_eps),
      TPC_DOUBLE_KEY("train.weight_decay", experiment.train.weight_decay),
      TPC_DOUBLE_KEY("train.clip_norm", experiment.train.clip_norm),
      TPC_SIZE_KEY("train.batch_size", experiment.train.batch_size),
      TPC_SIZE_KEY("train.epochs", experiment.train.epochs),
      TPC_SIZE_KEY("train.patience", experiment.train.patience),
      TPC_SIZE_KEY("train.max_steps", experiment.train.max_steps),
      TPC_SIZE_KEY("train.window_stride", experiment.train_stride),

      TPC_SIZE_KEY("eval.horizon", experiment.horizon),
      TPC_SIZE_KEY("eval.window_stride", experiment.eval_stride),
      {"eval.shuffle_spans",
       [](const RunConfig& c) { return std::string(c.experiment.shuffle_spans ? "true" : "false"); },
       [](RunConfig& c, std::string_view v) {
         c.experiment.shuffle_spans = parse_bool("eval.shuffle_spans", v);
       }},

      {"ablation.variants", [](const RunConfig& c) { return join(c.ablation_variants); },
       [](RunConfig& c, std::string_view v) { c.ablation_variants = split_list(v); }},
      {"ablation.seeds", [](const RunConfig& c) { return join(c.ablation_seeds); },
       [](RunConfig& c, std::string_view v) {
         c.ablation_seeds = parse_list<std::uint64_t>("ablation.seeds", v);
       }},
      TPC_DOUBLE_KEY("ablation.full_ft_lr_scale", full_ft_lr_scale),
      TPC_SIZE_KEY("ablation.lora_rank", ablation_lora_rank),

      TPC_U64_KEY("seed", seed),
      {"out", [](const RunConfig& c) { return c.out_dir; },
       [](RunConfig& c, std::string_view v) { c.out_dir = v; }},
      {"bank_cache", [](const RunConfig& c) { return c.bank_cache; },
       [](RunConfig& c, std::string_view v) { c.bank_cache = v; }},
  };
  return specs;
}

#undef TPC_SIZE_KEY
#undef TPC_U64_KEY
#undef TPC_DOUBLE_KEY
#undef TPC_ENUM_KEY

const KeySpec& find_key(std::string_view key) {
  for (const auto& spec : key_specs()) {
    if (spec.name == key) return spec;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::resolve() {
  experiment.model.seed = seed;
  experiment.train.seed = seed;
  experiment.model.granularity = synthetic.granularity;
  if (source == DataSource::csv && csv_path.empty()) {
    throw ConfigError("data.source = csv requires data.csv");
  }
  if (synthetic.length == 0) throw ConfigError("data.synthetic.length must be positive");
  if (synthetic.variables == 0) throw ConfigError("data.synthetic.variables must be positive");
  if (synthetic.phase_block == 0) throw ConfigError("data.synthetic.phase_block must be positive");
  if (!(synthetic.sigma >= 0.0)) throw ConfigError("data.synthetic.sigma must be non-negative");
  experiment.validate();
  for (const auto& v : ablation_variants) parse_variant_kind(v);
  if (ablation_variants.empty()) throw ConfigError("ablation.variants is empty");
  if (ablation_seeds.empty()) throw ConfigError("ablation.seeds is empty");
  if (!(full_ft_lr_scale > 0.0)) throw ConfigError("ablation.full_ft_lr_scale must be positive");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& spec : key_specs()) out += spec.name + " = " + spec.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& spec : key_specs()) k.push_back(spec.name);
    return k;
  }();
  return keys;
}

std::string config_value(const RunConfig& config, std::string_view key) {
  return find_key(key).get(config);
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  find_key(key).set(config, trim(value));
}

void apply_config_text(RunConfig& config, std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(std::string_view(line).substr(0, eq));
    try {
      set_config_value(config, key, std::string_view(line).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig parse_config_text(std::string_view text) {
  RunConfig config;
  apply_config_text(config, text);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

RawSeries load_dataset(const RunConfig& config) {
  if (config.source == DataSource::csv) {
    return load_csv(config.csv_path, config.synthetic.granularity);
  }
  return generate_synthetic(config.synthetic);
}

}  // namespace tpc
