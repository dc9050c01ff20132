#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kpcast/config.hpp"
#include "kpcast/dataset.hpp"
#include "kpcast/error.hpp"
#include "kpcast/features.hpp"
#include "kpcast/fetch.hpp"
#include "kpcast/forecast.hpp"
#include "kpcast/ingest.hpp"
#include "kpcast/metrics.hpp"
#include "kpcast/model.hpp"
#include "kpcast/plots.hpp"
#include "kpcast/table.hpp"
#include "kpcast/tape.hpp"
#include "kpcast/train.hpp"

namespace kpcast::cli {

namespace fs = std::filesystem;
using config::PipelineConfig;

/// Artifact locations inside the work directory.
struct WorkPaths {
  fs::path root;
  fs::path merged() const { return root / "merged.kpt"; }
  fs::path prepared() const { return root / "prepared.kpt"; }
  fs::path shards() const { return root / "train_shards"; }
  fs::path transform() const { return root / "transform.kpf"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path model() const { return root / "model.kpc"; }
  fs::path model_config() const { return root / "model.cfg"; }
  fs::path history() const { return root / "history.csv"; }
  fs::path batches() const { return root / "batches.csv"; }
  fs::path report() const { return root / "report.csv"; }
  fs::path gaps() const { return root / "gaps.txt"; }
  fs::path summary() const { return root / "summary.csv"; }
  fs::path histograms() const { return root / "histograms.csv"; }
  fs::path deltas() const { return root / "baseline_deltas.csv"; }
  fs::path plots() const { return root / "plots"; }
};

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot read " + p.string());
  return is;
}

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot write " + p.string());
  return os;
}

inline void require_path(const fs::path& p, const char* key) {
  if (p.empty()) fail(ErrorKind::Config, std::string("config key ") + key + " is not set");
}

// ---------------------------------------------------------------------------
// Stages

inline void stage_ingest(const PipelineConfig& c, std::ostream& log) {
  require_path(c.satellite_path, "paths.satellite");
  require_path(c.kp_path, "paths.kp");
  require_path(c.image_path, "paths.image_features");
  auto sat_in = open_in(c.satellite_path);
  const auto sat = ingest::parse_satellite_table(sat_in);
  auto kp_in = open_in(c.kp_path);
  const auto kp = ingest::parse_kp_series(kp_in);
  const auto img = ingest::load_image_features(c.image_path.string());
  const auto sat_c = ingest::condition(sat, ingest::default_sentinels());
  const auto img_c = ingest::condition(img, {});
  const auto merged = ingest::merge_by_timestamp(sat_c, kp, img_c);
  fs::create_directories(c.work_dir);
  save_table(WorkPaths{c.work_dir}.merged().string(), merged);
  log << "ingest: " << sat.rows() << " satellite rows, " << kp.size() << " Kp readings, " << img.rows()
      << " image records -> " << merged.rows() << " merged hourly rows\n";
}

inline dataset::SplitTables split_prepared(const TimeTable& prepared, const PipelineConfig& c) {
  config::require_split(c);
  return dataset::split_by_date(prepared, c.train_end, c.test_start, c.test_end);
}

inline void stage_prepare(const PipelineConfig& c, std::ostream& log) {
  const WorkPaths w{c.work_dir};
  const auto merged = load_table(w.merged().string());
  const auto prepared = dataset::resample_3h_mean(merged);
  save_table(w.prepared().string(), prepared);
  const auto split = split_prepared(prepared, c);
  const auto layout = dataset::infer_layout(prepared);
  const auto windows = dataset::make_windows(split.train, c.window, c.labels, c.window.stride_train, layout);
  if (windows.empty()) fail(ErrorKind::WindowUnderflow, "training range yields no complete windows");
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (c.balance) order = dataset::expand_balance_indices(windows, c.seed, c.balance_key);
  if (fs::exists(w.shards())) fs::remove_all(w.shards());
  dataset::write_shards(w.shards(), windows, order);
  log << "prepare: " << prepared.rows() << " three-hour rows, " << split.train.rows() << " training rows, "
      << windows.size() << " windows, " << order.size() << " after balancing\n";
}

inline void stage_fit_transforms(const PipelineConfig& c, std::ostream& log) {
  const WorkPaths w{c.work_dir};
  const auto split = split_prepared(load_table(w.prepared().string()), c);
  const auto ft = features::fit_transforms(split.train, c.pca_k, &log);
  features::save_transform(w.transform().string(), ft);
  log << "fit-transforms: PCA rank " << ft.pca.k() << " over " << ft.image_columns.size() << " image columns, "
      << ft.columns.names.size() << " satellite columns, fitted on " << ft.fitted_on.rows << " rows up to "
      << format_iso8601(ft.fitted_on.last) << "\n";
}

inline model::ModelConfig model_config_for(const PipelineConfig& c, const features::FeatureTransform& ft) {
  model::ModelConfig m = c.model;
  m.img_dim = ft.pca.k();
  m.sat_dim = ft.columns.names.size();
  m.kp_dim = 1;
  if (m.img_dim == 0) fail(ErrorKind::Config, "the prepared data has no image-feature columns");
  if (m.sat_dim == 0) fail(ErrorKind::Config, "the prepared data has no satellite columns");
  m.validate();
  return m;
}

inline void stage_train(const PipelineConfig& c, std::ostream& log) {
  const WorkPaths w{c.work_dir};
  const auto ft = features::load_transform(w.transform().string());
  const auto raw = dataset::read_shards(w.shards());
  config::require_split(c);
  std::vector<dataset::WindowSample> samples;
  samples.reserve(raw.size());
  for (const auto& s : raw) {
    if (s.output_end() > c.train_end)
      fail(ErrorKind::Leakage, "training window starting " + format_iso8601(s.t0) + " ends after split.train_end");
    samples.push_back(features::transform_sample(ft, s));
  }
  const auto mcfg = model_config_for(c, ft);
  auto params = model::init_params(mcfg);
  if (fs::exists(w.checkpoints())) fs::remove_all(w.checkpoints());
  fs::create_directories(w.checkpoints());
  auto batches = open_out(w.batches());
  batches << loss::breakdown_header() << '\n';
  auto history = open_out(w.history());
  history << train::history_header() << '\n';

  train::TrainCallbacks cb;
  cb.on_batch = [&](std::size_t e, std::size_t b, const loss::LossBreakdown& bd) {
    loss::write_breakdown_row(batches, e, b, bd);
  };
  cb.on_improve = [&](const train::EpochRecord& r, const nn::ParamStore& ps) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04zu.kpc", r.epoch);
    nn::save_checkpoint((w.checkpoints() / name).string(), ps);
    auto best = open_out(w.checkpoints() / "best.txt");
    best << "checkpoint=" << name << "\nepoch=" << r.epoch << '\n';
  };
  cb.on_epoch = [&](const train::EpochRecord& r) {
    train::write_history_row(history, r);
    log << "train: epoch " << r.epoch << " loss " << r.train.total;
    if (r.has_val) log << " val " << r.val.total;
    log << (r.improved ? " *" : "") << '\n';
  };
  const auto res = train::train_loop(samples, std::move(params), mcfg, c.loss, c.train, cb);
  nn::save_checkpoint(w.model().string(), res.params);
  auto mc = open_out(w.model_config());
  mc << model::to_text(mcfg);
  log << "train: " << res.history.size() << " epochs, best epoch " << res.best_epoch << "\n";
}

inline model::ModelConfig load_model_config(const fs::path& p) {
  auto is = open_in(p);
  return model::parse_model_config(is);
}

inline void stage_forecast(const PipelineConfig& c, std::ostream& log) {
  const WorkPaths w{c.work_dir};
  config::require_split(c);
  const auto ft = features::load_transform(w.transform().string());
  const auto prepared = load_table(w.prepared().string());
  const auto params = nn::load_checkpoint(w.model().string());
  forecast::Setup setup;
  setup.model = load_model_config(w.model_config());
  setup.loss = c.loss;
  setup.labels = c.labels;
  setup.optimizer = c.train;
  setup.forecast = c.forecast;
  std::ostringstream gaps;
  const auto res = forecast::run_walkforward(params, prepared, ft, c.test_start + kDay, c.test_end, setup, &gaps);
  forecast::save_report(w.report().string(), res.report);
  auto g = open_out(w.gaps());
  g << gaps.str();
  log << "forecast: " << res.report.rows.size() << " rows, " << res.report.gaps.size() << " gaps\n";
}

inline void stage_report(const PipelineConfig& c, std::ostream& log) {
  const WorkPaths w{c.work_dir};
  const auto report = forecast::load_report(w.report().string());
  const auto summary = eval::error_summary(report);
  std::optional<eval::Comparison> cmp;
  if (!c.baseline_path.empty())
    cmp = eval::compare_baseline(report, eval::load_baseline(c.baseline_path.string(), c.baseline_format));
  {
    auto os = open_out(w.summary());
    os << eval::summary_header() << '\n';
    eval::write_summary_rows(os, "model", summary);
    if (cmp) {
      eval::write_summary_rows(os, "model_common", cmp->model);
      eval::write_summary_rows(os, "baseline_common", cmp->baseline);
    }
  }
  {
    auto os = open_out(w.histograms());
    os << "model,horizon,bin_lower,count\n";
    eval::write_histograms(os, "model", summary);
  }
  if (cmp) {
    auto os = open_out(w.deltas());
    eval::write_deltas(os, *cmp);
  }
  if (fs::exists(w.plots())) fs::remove_all(w.plots());
  const auto files = eval::emit_plots(report, w.plots());
  for (const auto& [h, s] : summary) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "report: horizon %d: n=%zu MAE %.4f RMSE %.4f bias %+.4f\n", h, s.count, s.mae,
                  s.rmse, s.bias);
    log << buf;
  }
  log << "report: " << files.size() << " plot files\n";
}

inline int stage_fetch(const PipelineConfig& c, std::ostream& log) {
  require_path(c.fetch_manifest, "fetch.manifest");
  auto is = open_in(c.fetch_manifest);
  const auto entries = fetch::parse_manifest(is);
  fetch::FetchOptions opt;
  opt.attempts = c.fetch_attempts;
  const auto st = fetch::fetch_all(entries, c.fetch_dir, opt);
  int failed = 0;
  for (const auto& s : st) {
    log << "fetch: " << s.filename << ": " << fetch::to_string(s.outcome);
    if (!s.message.empty()) log << " (" << s.message << ")";
    log << '\n';
    failed += s.outcome == fetch::Outcome::Failed;
  }
  if (failed) {
    log << "fetch: " << failed << " of " << st.size() << " files missing\n";
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------

inline int exit_code(const Error& e) { return e.kind() == ErrorKind::Usage ? 2 : 1; }

/// Entry point. Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"kpcast: multimodal Kp-index forecasting pipeline"};
  app.name("kpcast");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "pipeline config file");
  app.add_option("--seed", seed, "seed for every stochastic stage (overrides run.seed)");
  app.add_option("--set", overrides, "override a config value: section.key=value (repeatable)");
  app.require_subcommand(1);
  app.fallthrough();
  const std::vector<std::pair<const char*, const char*>> commands = {
      {"ingest", "parse and clean raw inputs, merge onto an hourly grid"},
      {"prepare", "three-hour means, train/test split, windows, balancing"},
      {"fit-transforms", "fit PCA and column normalization on training rows"},
      {"train", "train the model; writes checkpoints and history"},
      {"forecast", "walk-forward fine-tuning and multi-day forecasts over the test range"},
      {"report", "error summaries, baseline comparison and plots"},
      {"fetch", "download the files listed in the fetch manifest"}};
  for (const auto& [name, desc] : commands) app.add_subcommand(name, desc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (config_path.empty()) fail(ErrorKind::Config, "no config file given (use --config)");
    if (seed) overrides.push_back("run.seed=" + std::to_string(*seed));
    const auto cfg = config::load(config_path, overrides);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "ingest") stage_ingest(cfg, err);
    else if (cmd == "prepare") stage_prepare(cfg, err);
    else if (cmd == "fit-transforms") stage_fit_transforms(cfg, err);
    else if (cmd == "train") stage_train(cfg, err);
    else if (cmd == "forecast") stage_forecast(cfg, err);
    else if (cmd == "report") stage_report(cfg, err);
    else if (cmd == "fetch") return stage_fetch(cfg, err);
    return 0;
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    err << "error [runtime]: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace kpcast::cli
