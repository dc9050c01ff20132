#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kpcast/dataset.hpp"
#include "kpcast/error.hpp"
#include "kpcast/forecast.hpp"
#include "kpcast/ingest.hpp"
#include "kpcast/loss.hpp"
#include "kpcast/model.hpp"
#include "kpcast/time.hpp"
#include "kpcast/train.hpp"

namespace kpcast::config {

/// section -> key -> raw value.
using RawConfig = std::map<std::string, std::map<std::string, std::string>>;

/// `[section]` headers, `key = value` lines, '#' or ';' comments.
inline RawConfig parse_raw(std::istream& is) {
  RawConfig raw;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t(ingest::trim(line));
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const std::string where = "config line " + std::to_string(lineno);
    if (t.front() == '[') {
      if (t.back() != ']') fail(ErrorKind::Config, where + ": unterminated section header");
      section = std::string(ingest::trim(std::string_view(t).substr(1, t.size() - 2)));
      if (section.empty()) fail(ErrorKind::Config, where + ": empty section name");
      raw[section];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Config, where + ": expected key = value");
    if (section.empty()) fail(ErrorKind::Config, where + ": key outside any section");
    const std::string key(ingest::trim(std::string_view(t).substr(0, eq)));
    const std::string val(ingest::trim(std::string_view(t).substr(eq + 1)));
    if (key.empty()) fail(ErrorKind::Config, where + ": empty key");
    raw[section][key] = val;
  }
  return raw;
}

/// Applies a `section.key=value` override.
inline void apply_override(RawConfig& raw, const std::string& spec) {
  const auto eq = spec.find('=');
  const auto dot = spec.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq)
    fail(ErrorKind::Config, "override '" + spec + "' is not of the form section.key=value");
  raw[spec.substr(0, dot)][spec.substr(dot + 1, eq - dot - 1)] = spec.substr(eq + 1);
}

struct PipelineConfig {
  std::uint64_t seed = 42;
  std::filesystem::path work_dir = "work";

  std::filesystem::path satellite_path;
  std::filesystem::path kp_path;
  std::filesystem::path image_path;

  UtcSeconds train_end = 0;
  UtcSeconds test_start = 0;
  UtcSeconds test_end = 0;

  dataset::WindowConfig window;
  dataset::LabelConfig labels;
  std::size_t pca_k = 512;
  bool balance = true;
  dataset::BalanceKeyMode balance_key = dataset::BalanceKeyMode::MaxInput;
  model::ModelConfig model;
  loss::LossConfig loss;
  train::TrainConfig train;
  forecast::ForecastConfig forecast;

  std::filesystem::path baseline_path;
  std::string baseline_format = "csv";

  std::filesystem::path fetch_manifest;
  std::filesystem::path fetch_dir = "downloads";
  int fetch_attempts = 3;
};

namespace detail {

inline double to_double(const std::string& where, const std::string& v) {
  double d = 0.0;
  if (!ingest::parse_number(v, d) || std::isnan(d)) fail(ErrorKind::Config, where + ": expected a number, got '" + v + "'");
  return d;
}

inline std::size_t to_size(const std::string& where, const std::string& v) {
  const double d = to_double(where, v);
  if (d < 0 || d != std::floor(d) || d > 1e15)
    fail(ErrorKind::Config, where + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(d);
}

inline bool to_bool(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::Config, where + ": expected true/false, got '" + v + "'");
}

inline UtcSeconds to_time(const std::string& where, const std::string& v) {
  try {
    return parse_iso8601(v);
  } catch (const Error& e) {
    fail(ErrorKind::Config, where + ": " + e.what());
  }
}

}  // namespace detail

/// Builds the typed configuration. Relative paths resolve against `base_dir`. Unknown sections
/// or keys are errors.
inline PipelineConfig build(const RawConfig& raw, const std::filesystem::path& base_dir) {
  using namespace detail;
  PipelineConfig c;
  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  for (const auto& [section, kv] : raw) {
    for (const auto& [key, v] : kv) {
      const std::string where = section + "." + key;
      auto unknown = [&]() { fail(ErrorKind::Config, "unknown config key '" + where + "'"); };
      if (section == "run") {
        if (key == "seed") c.seed = to_size(where, v);
        else if (key == "work_dir") c.work_dir = path(v);
        else unknown();
      } else if (section == "paths") {
        if (key == "satellite") c.satellite_path = path(v);
        else if (key == "kp") c.kp_path = path(v);
        else if (key == "image_features") c.image_path = path(v);
        else unknown();
      } else if (section == "split") {
        if (key == "train_end") c.train_end = to_time(where, v);
        else if (key == "test_start") c.test_start = to_time(where, v);
        else if (key == "test_end") c.test_end = to_time(where, v);
        else unknown();
      } else if (section == "window") {
        if (key == "input_steps") c.window.input_steps = to_size(where, v);
        else if (key == "output_steps") c.window.output_steps = to_size(where, v);
        else if (key == "stride_train") c.window.stride_train = to_size(where, v);
        else if (key == "stride_daily") c.window.stride_daily = to_size(where, v);
        else unknown();
      } else if (section == "label") {
        if (key == "high_kp_threshold") c.labels.high_kp_threshold = to_double(where, v);
        else if (key == "quiet_upper") c.labels.quiet_upper = to_double(where, v);
        else if (key == "storm_lower") c.labels.storm_lower = to_double(where, v);
        else unknown();
      } else if (section == "features") {
        if (key == "pca_k") c.pca_k = to_size(where, v);
        else unknown();
      } else if (section == "balance") {
        if (key == "enabled") c.balance = to_bool(where, v);
        else if (key == "key") {
          if (v == "max_input") c.balance_key = dataset::BalanceKeyMode::MaxInput;
          else if (v == "last_input") c.balance_key = dataset::BalanceKeyMode::LastInput;
          else if (v == "max_output") c.balance_key = dataset::BalanceKeyMode::MaxOutput;
          else fail(ErrorKind::Config, where + ": expected max_input, last_input or max_output");
        } else unknown();
      } else if (section == "model") {
        if (key == "input_steps" || key == "output_steps" || key == "img_dim" || key == "sat_dim" || key == "kp_dim" ||
            key == "seed")
          fail(ErrorKind::Config, where + " is derived from the data and [window]/[run]; remove it");
        if (!model::set_field(c.model, key, v)) unknown();
      } else if (section == "loss") {
        if (key == "alpha") c.loss.alpha = to_double(where, v);
        else if (key == "lambda_align") c.loss.lambda_align = to_double(where, v);
        else if (key == "lambda_l2") c.loss.lambda_l2 = to_double(where, v);
        else if (key == "wasserstein") {
          if (v == "mean") c.loss.variant = loss::WassersteinVariant::Mean;
          else if (v == "sum") c.loss.variant = loss::WassersteinVariant::Sum;
          else fail(ErrorKind::Config, where + ": expected mean or sum");
        } else unknown();
      } else if (section == "train") {
        auto& t = c.train;
        if (key == "lr") t.lr = to_double(where, v);
        else if (key == "beta1") t.beta1 = to_double(where, v);
        else if (key == "beta2") t.beta2 = to_double(where, v);
        else if (key == "eps") t.eps = to_double(where, v);
        else if (key == "batch_size") t.batch_size = to_size(where, v);
        else if (key == "max_epochs") t.max_epochs = to_size(where, v);
        else if (key == "patience") t.patience = to_size(where, v);
        else if (key == "plateau_factor") t.plateau_factor = to_double(where, v);
        else if (key == "plateau_patience") t.plateau_patience = to_size(where, v);
        else if (key == "lr_floor") t.lr_floor = to_double(where, v);
        else if (key == "val_fraction") t.val_fraction = to_double(where, v);
        else unknown();
      } else if (section == "forecast") {
        auto& f = c.forecast;
        if (key == "finetune_epochs") f.finetune_epochs = to_size(where, v);
        else if (key == "finetune_lr") f.finetune_lr = to_double(where, v);
        else if (key == "finetune_samples") f.finetune_samples = to_size(where, v);
        else if (key == "horizons") {
          f.horizons.clear();
          for (const auto& tok : ingest::split_fields(v, ingest::Delimiter::Comma))
            f.horizons.push_back(static_cast<int>(to_size(where, tok)));
        } else unknown();
      } else if (section == "report") {
        if (key == "baseline") c.baseline_path = v.empty() ? std::filesystem::path() : path(v);
        else if (key == "baseline_format") c.baseline_format = v;
        else unknown();
      } else if (section == "fetch") {
        if (key == "manifest") c.fetch_manifest = path(v);
        else if (key == "out_dir") c.fetch_dir = path(v);
        else if (key == "attempts") c.fetch_attempts = static_cast<int>(to_size(where, v));
        else unknown();
      } else {
        fail(ErrorKind::Config, "unknown config section '[" + section + "]'");
      }
    }
  }
  if (c.work_dir.is_relative()) c.work_dir = base_dir / c.work_dir;
  if (c.fetch_dir.is_relative()) c.fetch_dir = base_dir / c.fetch_dir;

  c.model.input_steps = c.window.input_steps;
  c.model.output_steps = c.window.output_steps;
  c.model.seed = c.seed;
  c.train.seed = c.seed;
  c.forecast.seed = c.seed;
  c.forecast.output_steps = c.window.output_steps;
  c.window.validate();
  c.labels.validate();
  c.loss.validate();
  c.train.validate();
  c.forecast.validate();
  if (c.pca_k == 0) fail(ErrorKind::Config, "features.pca_k must be >= 1");
  if (c.baseline_format != "csv" && c.baseline_format != "noaa")
    fail(ErrorKind::Config, "report.baseline_format must be csv or noaa");
  if (c.fetch_attempts < 1) fail(ErrorKind::Config, "fetch.attempts must be >= 1");
  return c;
}

inline PipelineConfig load(const std::filesystem::path& file, const std::vector<std::string>& overrides = {}) {
  std::ifstream is(file);
  if (!is) fail(ErrorKind::Io, "cannot read config file " + file.string());
  auto raw = parse_raw(is);
  for (const auto& o : overrides) apply_override(raw, o);
  return build(raw, file.parent_path().empty() ? std::filesystem::path(".") : file.parent_path());
}

/// Split bounds are needed by prepare, fit-transforms, train and forecast.
inline void require_split(const PipelineConfig& c) {
  if (c.train_end == 0 || c.test_start == 0 || c.test_end == 0)
    fail(ErrorKind::Config, "[split] needs train_end, test_start and test_end");
  if (c.train_end > c.test_start) fail(ErrorKind::Config, "split.train_end is after split.test_start");
  if (c.test_start >= c.test_end) fail(ErrorKind::Config, "split.test_start must be before split.test_end");
  if (c.test_start % kDay != 0 || c.test_end % kDay != 0)
    fail(ErrorKind::Config, "split.test_start and split.test_end must be midnight UTC dates");
}

}  // namespace kpcast::config
