#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gpht/checkpoint.hpp"
#include "gpht/error.hpp"
#include "gpht/eval.hpp"
#include "gpht/infer.hpp"
#include "gpht/train.hpp"

namespace gpht::cli {

namespace fs = std::filesystem;

namespace {

template <typename Fn>
int guarded(std::ostream& log, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    log << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericError& e) {
    log << "numeric abort: " << e.what() << '\n';
    return kNumericAbort;
  } catch (const ProtocolError& e) {
    log << "protocol violation: " << e.what() << '\n';
    return kProtocolViolation;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kInternal;
  }
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw ConfigError("output directory " + dir.string() + " is not empty (use --force)");
    }
  }
  fs::create_directories(dir);
}

void refuse_overwrite(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) {
    throw ConfigError(file.string() + " already exists (use --force)");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

struct Splits {
  std::vector<MultivariateSeries> series;
  std::vector<SourceSplit> sources;
};

Splits split_sources(const RunConfig& cfg) {
  Splits s;
  s.series = load_sources(cfg);
  for (const auto& ser : s.series) {
    s.sources.push_back({nullptr, chronological_split(ser.length(), cfg.data.ratios_for(ser.name))});
  }
  for (std::size_t i = 0; i < s.series.size(); ++i) s.sources[i].series = &s.series[i];
  return s;
}

EpochCallback epoch_logger(std::ostream& log) {
  return [&log](const EpochLog& e) {
    log << "epoch " << e.epoch << " train_mse=" << e.train_mse << " val_mse=" << e.val_mse << '\n';
  };
}

}  // namespace

int cmd_pretrain(const fs::path& config, const fs::path& out_dir, const GlobalOptions& g,
                 std::ostream& log) {
  return guarded(log, [&] {
    const RunConfig cfg = load_run_config(config, {g.preset, g.seed});
    prepare_out_dir(out_dir, g.force);
    write_text(out_dir / "resolved.cfg", cfg.resolved_text());
    const auto data = split_sources(cfg);
    const auto train = build_mixed_dataset(data.sources, Role::train);
    const auto val = build_mixed_dataset(data.sources, Role::validation);
    log << "pretraining on " << train.segments.size() << " segments from "
        << train.sources().size() << " sources, " << count_parameters(init_model(cfg.model))
        << " parameters\n";
    const auto result = pretrain(cfg.model, cfg.train, train, val, epoch_logger(log));
    write_loss_csv(result.log, out_dir / "loss.csv");
    save_checkpoint(result.checkpoint, out_dir / "model.ckpt");
    log << "best epoch " << result.checkpoint.meta.epoch << " val_mse "
        << result.checkpoint.meta.best_val_loss << '\n';
    return kOk;
  });
}

int cmd_finetune(const fs::path& ckpt_path, const fs::path& config, const fs::path& out_dir,
                 bool full_tune, const GlobalOptions& g, std::ostream& log) {
  return guarded(log, [&] {
    const Checkpoint source = load_checkpoint(ckpt_path);
    RunConfig cfg = load_run_config(config, {Preset::none, g.seed});
    cfg.model = source.params.config;
    if (cfg.train_scope_given && cfg.train.scope == TrainScope::all && !full_tune) {
      throw ConfigError("train.scope = all requires --full-tune");
    }
    cfg.train.scope = full_tune ? TrainScope::all : TrainScope::head_only;
    prepare_out_dir(out_dir, g.force);
    write_text(out_dir / "resolved.cfg", cfg.resolved_text());
    const auto data = split_sources(cfg);
    const auto train = build_mixed_dataset(data.sources, Role::train);
    const auto val = build_mixed_dataset(data.sources, Role::validation);
    const auto result = full_tune ? fine_tune(source, cfg.train, train, val, epoch_logger(log))
                                  : finetune_heads(source, cfg.train, train, val, epoch_logger(log));
    write_loss_csv(result.log, out_dir / "loss.csv");
    save_checkpoint(result.checkpoint, out_dir / "model.ckpt");
    return kOk;
  });
}

int cmd_forecast(const fs::path& ckpt_path, const fs::path& input, std::size_t horizon,
                 const fs::path& out_csv, const GlobalOptions& g, std::ostream& log) {
  return guarded(log, [&] {
    if (horizon == 0) throw ConfigError("--horizon must be >= 1");
    refuse_overwrite(out_csv, g.force);
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto series = load_csv_dataset(input, input.stem().string());
    const auto result = ar_forecast(ckpt.params, {series.channels, horizon});
    MultivariateSeries out;
    out.name = series.name;
    out.channel_names = series.channel_names;
    out.channels = result.predictions;
    save_csv(out, out_csv);
    log << "decode_steps=" << result.decode_steps << '\n';
    return kOk;
  });
}

int cmd_evaluate(const fs::path& ckpt_path, const fs::path& config, const fs::path& out_dir,
                 const GlobalOptions& g, std::ostream& out, std::ostream& log) {
  return guarded(log, [&] {
    RunConfig cfg = load_run_config(config, {Preset::none, g.seed});
    if (cfg.eval.protocol == Protocol::few_shot && !cfg.eval.fraction) {
      throw ConfigError("few-shot protocol requires eval.fraction");
    }
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    cfg.model = ckpt.params.config;
    prepare_out_dir(out_dir, g.force);
    write_text(out_dir / "resolved.cfg", cfg.resolved_text());

    EvalOptions opts;
    opts.horizons = cfg.eval.horizons;
    opts.lookback = cfg.eval.lookback;
    opts.stride = cfg.eval.stride;
    opts.threads = g.threads;

    const auto data = split_sources(cfg);
    EvalReport report;
    for (const auto& src : data.sources) {
      EvalReport part;
      switch (cfg.eval.protocol) {
        case Protocol::standard: part = evaluate(ckpt, *src.series, src.split, opts); break;
        case Protocol::zero_shot: part = zero_shot_protocol(ckpt, *src.series, src.split, opts); break;
        case Protocol::few_shot:
          part = few_shot_protocol(ckpt, *src.series, src.split, *cfg.eval.fraction, cfg.train, opts).report;
          break;
      }
      report.fingerprint = part.fingerprint;
      report.rows.insert(report.rows.end(), part.rows.begin(), part.rows.end());
    }
    write_text(out_dir / "report.csv", report_to_csv(report));
    print_report_table(out, report);
    return kOk;
  });
}

int cmd_synth(const fs::path& config, const fs::path& out_csv, const GlobalOptions& g,
              std::ostream& log) {
  return guarded(log, [&] {
    const RunConfig cfg = load_run_config(config, {Preset::none, g.seed});
    if (!cfg.synth) throw ConfigError("config has no [synth] section");
    refuse_overwrite(out_csv, g.force);
    const auto series = synth_generate(cfg.synth->spec, cfg.synth->seed, out_csv.stem().string());
    save_csv(series, out_csv);
    log << "wrote " << series.num_channels() << " channels x " << series.length() << " points\n";
    return kOk;
  });
}

int cmd_inspect(const fs::path& ckpt_path, std::ostream& out, std::ostream& log) {
  return guarded(log, [&] {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    out << "[model]\n";
    for (const auto& [k, v] : ckpt.params.config.to_entries()) out << k << " = " << v << '\n';
    const auto& m = ckpt.meta;
    out << "\n[meta]\nepoch = " << m.epoch << "\nbest_val_loss = " << m.best_val_loss
        << "\nseed = " << m.seed << "\nsources = ";
    for (std::size_t i = 0; i < m.sources.size(); ++i) out << (i ? "," : "") << m.sources[i];
    out << "\nfinetune_sources = ";
    for (std::size_t i = 0; i < m.finetune_sources.size(); ++i) out << (i ? "," : "") << m.finetune_sources[i];
    const auto all = count_parameters(ckpt.params, ScopeFilter::all);
    const auto head = count_parameters(ckpt.params, ScopeFilter::head);
    out << "\n\n[parameters]\nall = " << all << "\nhead = " << head
        << "\nnon_head = " << count_parameters(ckpt.params, ScopeFilter::non_head)
        << "\nhead_fraction = " << static_cast<double>(head) / static_cast<double>(all) << '\n';
    return kOk;
  });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& log) {
  CLI::App app{"Hierarchical generative pretraining for time series forecasting", "gpht"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  std::uint64_t seed = 0;
  std::string preset = "none";
  auto* seed_opt = app.add_option("--seed", seed, "Override model/train/synth seeds");
  app.add_option("--threads", g.threads, "Worker threads for evaluation")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Overwrite existing outputs");
  app.add_option("--preset", preset, "Hyperparameter preset")->check(CLI::IsMember({"none", "paper"}));

  fs::path config, out_dir, ckpt, input, out_csv;
  std::size_t horizon = 0;
  bool full_tune = false;

  auto* pre = app.add_subcommand("pretrain", "Pretrain on the mixed dataset");
  pre->add_option("--config", config)->required();
  pre->add_option("--out", out_dir)->required();

  auto* fin = app.add_subcommand("finetune", "Fine-tune forecast heads from a checkpoint");
  fin->add_option("--ckpt", ckpt)->required();
  fin->add_option("--config", config)->required();
  fin->add_option("--out", out_dir)->required();
  fin->add_flag("--full-tune", full_tune, "Update every parameter, not only the heads");

  auto* fc = app.add_subcommand("forecast", "Forecast every channel of a CSV file");
  fc->add_option("--ckpt", ckpt)->required();
  fc->add_option("--input", input)->required();
  fc->add_option("--horizon", horizon)->required();
  fc->add_option("--out", out_csv)->required();

  auto* ev = app.add_subcommand("evaluate", "Run an evaluation protocol");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--config", config)->required();
  ev->add_option("--out", out_dir)->required();

  auto* sy = app.add_subcommand("synth", "Generate a synthetic series CSV");
  sy->add_option("--config", config)->required();
  sy->add_option("--out", out_csv)->required();

  auto* in = app.add_subcommand("inspect", "Print checkpoint config and parameter counts");
  in->add_option("--ckpt", ckpt)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, log);
    return code == 0 ? kOk : kConfigError;
  }
  if (*seed_opt) g.seed = seed;
  g.preset = preset == "paper" ? Preset::paper : Preset::none;

  if (pre->parsed()) return cmd_pretrain(config, out_dir, g, log);
  if (fin->parsed()) return cmd_finetune(ckpt, config, out_dir, full_tune, g, log);
  if (fc->parsed()) return cmd_forecast(ckpt, input, horizon, out_csv, g, log);
  if (ev->parsed()) return cmd_evaluate(ckpt, config, out_dir, g, out, log);
  if (sy->parsed()) return cmd_synth(config, out_csv, g, log);
  return cmd_inspect(ckpt, out, log);
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace gpht::cli
