#include "commands.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <memory>
#include <sstream>

#include "tpc/errors.hpp"
#include "tpc/log.hpp"

namespace tpc::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string comment_block(const RunConfig& config) {
  std::string out;
  std::istringstream in(config.to_text());
  for (std::string line; std::getline(in, line);) out += "# " + line + "\n";
  return out;
}

fs::path prepare_out(const RunConfig& config) {
  const fs::path dir = config.out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::unique_ptr<TemporalEncoder> make_encoder(const RunConfig& config) {
  auto cache = config.bank_cache.empty() ? std::make_shared<BankCache>()
                                         : std::make_shared<BankCache>(config.bank_cache);
  return std::make_unique<TemporalEncoder>(config.experiment.model.backbone,
                                           config.experiment.model.backbone_seed, cache);
}

ordered_json metrics_json(const Metrics& m) { return {{"mse", m.mse}, {"mae", m.mae}}; }

ordered_json report_json(const ParamReport& r) {
  ordered_json groups = ordered_json::object();
  for (const auto& [name, g] : r.groups) {
    groups[name] = {{"total", g.total}, {"trainable", g.trainable}};
  }
  return {{"total", r.total},
          {"trainable", r.trainable},
          {"trainable_fraction", r.trainable_fraction()},
          {"groups", groups}};
}

VariantSpec variant_from_config(const RunConfig& config, const std::string& name) {
  VariantSpec spec = VariantSpec::defaults(parse_variant_kind(name));
  if (spec.kind == VariantKind::lora) spec.lora_rank = config.ablation_lora_rank;
  if (spec.kind == VariantKind::full_ft) spec.lr_scale = config.full_ft_lr_scale;
  return spec;
}

}  // namespace

fs::path cmd_generate_data(const RunConfig& config) {
  if (config.source != DataSource::synthetic) {
    throw ConfigError("generate-data needs data.source = synthetic");
  }
  const fs::path path = prepare_out(config) / "data.csv";
  write_csv(path, generate_synthetic(config.synthetic), config.to_text());
  log_info("wrote " + path.string());
  return path;
}

TrainArtifacts cmd_train(const RunConfig& config) {
  const fs::path dir = prepare_out(config);
  const RawSeries series = load_dataset(config);
  const auto encoder = make_encoder(config);
  ForecastModel model(config.experiment.model, *encoder);

  TrainArtifacts a;
  a.result = run_experiment(model, series, config.experiment, *encoder);
  if (auto* cache = encoder->cache()) cache->flush();

  a.checkpoint = dir / "checkpoint.bin";
  write_checkpoint(a.checkpoint, snapshot(model.params(), config.to_text()));

  a.loss_curve = dir / "loss_curve.csv";
  std::ostringstream curve;
  curve.precision(17);
  curve << comment_block(config) << "epoch,train_loss,val_loss\n";
  for (const auto& e : a.result.training.epochs) {
    curve << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
  }
  write_text(a.loss_curve, curve.str());

  a.metrics = dir / "metrics.json";
  const auto& r = a.result;
  ordered_json j = {{"config", config.to_text()},
                    {"test", metrics_json(r.test)},
                    {"persistence", metrics_json(r.persistence)},
                    {"test_windows", r.test_windows},
                    {"steps", r.training.steps},
                    {"best_epoch", r.training.best_epoch},
                    {"best_val_loss", r.training.best_val_loss},
                    {"params", report_json(r.params)}};
  write_text(a.metrics, j.dump(2) + "\n");
  log_info("test mse " + std::to_string(r.test.mse) + ", persistence mse " +
           std::to_string(r.persistence.mse));
  return a;
}

RunConfig checkpoint_config(const fs::path& checkpoint) {
  return parse_config_text(read_checkpoint(checkpoint).metadata);
}

fs::path cmd_forecast(const RunConfig& config, const fs::path& checkpoint) {
  const fs::path dir = prepare_out(config);
  const Checkpoint ck = read_checkpoint(checkpoint);
  const auto encoder = make_encoder(config);
  ForecastModel model(config.experiment.model, *encoder);
  restore(model.params(), ck);

  const RawSeries series = load_dataset(config);
  const std::size_t T = config.experiment.model.lookback;
  const std::size_t horizon = config.experiment.horizon;
  if (series.length() < T) {
    throw DataError("series has " + std::to_string(series.length()) +
                    " steps, fewer than the lookback " + std::to_string(T));
  }
  const std::size_t first = series.length() - T;
  const Timestamp start = series.time_at(first);
  std::ostringstream out;
  out.precision(17);
  out << comment_block(config) << "timestamp,variable,value\n";
  for (std::size_t v = 0; v < series.variables(); ++v) {
    const std::span<const double> lookback(series.values[v].data() + first, T);
    const auto pred = forecast(model, *encoder, lookback, start, horizon);
    for (std::size_t h = 0; h < horizon; ++h) {
      const Timestamp t =
          start.plus(static_cast<std::int64_t>(T + h) * series.granularity.seconds);
      out << t.format() << ',' << series.names[v] << ',' << pred[h] << '\n';
    }
  }
  if (auto* cache = encoder->cache()) cache->flush();
  const fs::path path = dir / "forecast.csv";
  write_text(path, out.str());
  return path;
}

AblateArtifacts cmd_ablate(const RunConfig& config) {
  const fs::path dir = prepare_out(config);
  std::vector<VariantSpec> variants;
  for (const auto& name : config.ablation_variants) {
    variants.push_back(variant_from_config(config, name));
  }
  const std::vector<NamedSeries> datasets = {{config.dataset_name, load_dataset(config)}};
  const auto encoder = make_encoder(config);

  AblateArtifacts a;
  a.result = run_ablation(datasets, variants, config.ablation_seeds, config.experiment, *encoder);
  if (auto* cache = encoder->cache()) cache->flush();

  a.csv = dir / "ablation.csv";
  write_text(a.csv, comment_block(config) + ablation_csv(a.result));
  a.table = dir / "ablation.txt";
  std::string table = format_ablation_table(a.result);
  for (std::size_t i = 0; i < a.result.datasets.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "\ndata %s fingerprint %016llx, %zu test windows",
                  a.result.datasets[i].c_str(),
                  static_cast<unsigned long long>(a.result.data_fingerprints[i]),
                  a.result.test_windows[i]);
    table += buf;
  }
  table += "\nfull-ft learning rate x" + config_value(config, "ablation.full_ft_lr_scale") +
           "\n\n" + comment_block(config);
  write_text(a.table, table);
  return a;
}

fs::path cmd_report_params(const RunConfig& config, const std::optional<fs::path>& checkpoint,
                           std::ostream& out) {
  const fs::path dir = prepare_out(config);
  const auto encoder = make_encoder(config);
  ForecastModel model(config.experiment.model, *encoder);
  if (checkpoint) restore(model.params(), read_checkpoint(*checkpoint));
  const ParamReport report = param_report(model);

  ModelConfig full = config.experiment.model;
  full.conditioning = Conditioning::positional_add;
  full.finetune = FineTune::full;
  full.lora_rank = 0;
  full.partial_layers.clear();
  const ParamReport full_report = param_report(ForecastModel(full));

  char buf[128];
  std::snprintf(buf, sizeof buf, "%-16s %12s %12s\n", "group", "total", "trainable");
  out << buf;
  for (const auto& [name, g] : report.groups) {
    std::snprintf(buf, sizeof buf, "%-16s %12zu %12zu\n", name.c_str(), g.total, g.trainable);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-16s %12zu %12zu\n", "all", report.total, report.trainable);
  out << buf;
  const double ratio = static_cast<double>(report.trainable) /
                       static_cast<double>(full_report.trainable);
  std::snprintf(buf, sizeof buf,
                "trainable fraction %.6f; full fine-tuning trains %zu; ratio %.6f\n",
                report.trainable_fraction(), full_report.trainable, ratio);
  out << buf;

  ordered_json j = report_json(report);
  j["full_ft_trainable"] = full_report.trainable;
  j["ratio_to_full_ft"] = ratio;
  j["config"] = config.to_text();
  const fs::path path = dir / "params.json";
  write_text(path, j.dump(2) + "\n");
  return path;
}

int run(int argc, char** argv) {
  CLI::App app{"Temporal-prior conditioning for time-series forecasting"};
  app.require_subcommand(1);

  std::string config_path;
  std::string log_level = "info";
  std::optional<std::string> checkpoint;
  std::map<std::string, std::string> overrides;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run configuration file (key = value lines)");
    sub->add_option("--log-level", log_level, "quiet, info or debug");
    for (const auto& key : config_keys()) {
      const std::string flag = key == "bank_cache" ? "--bank-cache" : "--" + key;
      sub->add_option_function<std::string>(
          flag, [&overrides, key](const std::string& v) { overrides[key] = v; },
          "Override " + key);
    }
  };

  auto* gen = app.add_subcommand("generate-data", "Write a synthetic dataset CSV");
  auto* train_cmd = app.add_subcommand("train", "Train and evaluate one model");
  auto* fc = app.add_subcommand("forecast", "Forecast past the end of the dataset");
  auto* ablate = app.add_subcommand("ablate", "Run the ablation variants");
  auto* report = app.add_subcommand("report-params", "Count total and trainable parameters");
  for (auto* s : {gen, train_cmd, fc, ablate, report}) add_common(s);
  fc->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  report->add_option("--checkpoint", checkpoint, "Checkpoint written by train");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (log_level == "quiet") {
      set_log_level(LogLevel::quiet);
    } else if (log_level == "info") {
      set_log_level(LogLevel::info);
    } else if (log_level == "debug") {
      set_log_level(LogLevel::debug);
    } else {
      throw ConfigError("unknown log level '" + log_level + "'");
    }

    // Precedence: checkpoint echo < --config file < individual flags.
    RunConfig config;
    if (checkpoint) config = checkpoint_config(*checkpoint);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config file " + config_path);
      std::ostringstream ss;
      ss << in.rdbuf();
      apply_config_text(config, ss.str());
    }
    for (const auto& [key, value] : overrides) set_config_value(config, key, value);
    config.resolve();

    if (gen->parsed()) {
      std::cout << cmd_generate_data(config).string() << '\n';
    } else if (train_cmd->parsed()) {
      const auto a = cmd_train(config);
      std::cout << "test mse " << a.result.test.mse << " mae " << a.result.test.mae
                << " (persistence mse " << a.result.persistence.mse << ")\n"
                << a.checkpoint.string() << '\n';
    } else if (fc->parsed()) {
      std::cout << cmd_forecast(config, *checkpoint).string() << '\n';
    } else if (ablate->parsed()) {
      const auto a = cmd_ablate(config);
      std::cout << format_ablation_table(a.result) << a.csv.string() << '\n';
    } else if (report->parsed()) {
      std::cout << cmd_report_params(config, checkpoint, std::cout).string() << '\n';
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "numerical divergence at step " << e.step() << ": " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace tpc::cli
