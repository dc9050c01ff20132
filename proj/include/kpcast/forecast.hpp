#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "kpcast/dataset.hpp"
#include "kpcast/error.hpp"
#include "kpcast/features.hpp"
#include "kpcast/ingest.hpp"
#include "kpcast/loss.hpp"
#include "kpcast/model.hpp"
#include "kpcast/table.hpp"
#include "kpcast/time.hpp"
#include "kpcast/train.hpp"

namespace kpcast::forecast {

using nn::ParamStore;

inline constexpr std::size_t kStepsPerDay = 8;

struct ForecastConfig {
  std::size_t finetune_epochs = 2;
  double finetune_lr = 1e-4;
  std::vector<int> horizons = {1, 2, 3};
  std::size_t output_steps = 24;
  // Daily samples per fine-tune step: the one ending at the boundary plus earlier ones a day apart.
  std::size_t finetune_samples = 1;
  std::uint64_t seed = 42;

  void validate() const {
    if (horizons.empty()) fail(ErrorKind::Config, "forecast.horizons must not be empty");
    if (output_steps != 24 && output_steps != 40) fail(ErrorKind::Config, "forecast.output_steps must be 24 or 40");
    for (int h : horizons) {
      if (h < 1 || h > 5) fail(ErrorKind::Config, "forecast horizons must lie in 1..5, got " + std::to_string(h));
      if (static_cast<std::size_t>(h) * kStepsPerDay > output_steps)
        fail(ErrorKind::Config, "horizon " + std::to_string(h) + " needs " + std::to_string(h * 8) +
                                    " output steps, model has " + std::to_string(output_steps));
    }
    if (!(finetune_lr > 0.0)) fail(ErrorKind::Config, "forecast.finetune_lr must be > 0");
    if (finetune_samples < 1) fail(ErrorKind::Config, "forecast.finetune_samples must be >= 1");
  }
};

/// Everything the walk-forward needs besides data and parameters.
struct Setup {
  model::ModelConfig model;
  loss::LossConfig loss;
  dataset::LabelConfig labels;
  train::TrainConfig optimizer;  // betas and eps; the rate comes from ForecastConfig
  ForecastConfig forecast;

  void validate() const {
    model.validate();
    loss.validate();
    labels.validate();
    forecast.validate();
    if (forecast.output_steps != model.output_steps)
      fail(ErrorKind::Config, "forecast.output_steps (" + std::to_string(forecast.output_steps) +
                                  ") != model.output_steps (" + std::to_string(model.output_steps) + ")");
  }
};

struct ForecastRow {
  UtcSeconds day = 0;  // issue boundary: the fine-tune day ends here
  int horizon = 0;
  UtcSeconds step_time = 0;
  double kp_expected = 0.0;
  double kp_argmax = 0.0;
  double kp_observed = 0.0;
  double error = 0.0;  // kp_expected - kp_observed

  bool operator==(const ForecastRow&) const = default;
};

struct ForecastGap {
  UtcSeconds day = 0;
  int horizon = 0;  // 0: whole day
  std::string reason;
};

struct ForecastReport {
  std::vector<ForecastRow> rows;
  std::vector<ForecastGap> gaps;
};

/// Expected value of a 28-bin distribution over bin centers k/3.
inline double expected_kp(std::span<const double> dist) {
  double e = 0.0;
  for (std::size_t k = 0; k < dist.size(); ++k) e += dist[k] * (static_cast<double>(k) / 3.0);
  return std::clamp(e, 0.0, 9.0);
}

inline double argmax_kp(std::span<const double> dist) {
  const auto k = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
  return static_cast<double>(k) / 3.0;
}

/// Raises a leakage error unless every sample's output window ends at or before `boundary`.
inline void audit_finetune_samples(const std::vector<dataset::WindowSample>& samples, UtcSeconds boundary) {
  for (const auto& s : samples)
    if (s.output_end() > boundary)
      fail(ErrorKind::Leakage, "fine-tune sample starting " + format_iso8601(s.t0) + " runs to " +
                                   format_iso8601(s.output_end()) + ", past the boundary " + format_iso8601(boundary));
}

/// `finetune_epochs` Adam steps on the mean gradient of the day samples, fresh optimizer state.
inline ParamStore finetune_day(ParamStore params, const std::vector<dataset::WindowSample>& day_samples,
                               UtcSeconds boundary, const Setup& setup) {
  audit_finetune_samples(day_samples, boundary);
  if (setup.forecast.finetune_epochs == 0 || day_samples.empty()) return params;
  train::OptimizerState opt;
  std::mt19937_64 rng(setup.forecast.seed ^ static_cast<std::uint64_t>(boundary));
  std::vector<const dataset::WindowSample*> batch;
  for (const auto& s : day_samples) batch.push_back(&s);
  for (std::size_t e = 0; e < setup.forecast.finetune_epochs; ++e)
    train::train_batch(params, opt, batch, setup.model, setup.loss, setup.optimizer, setup.forecast.finetune_lr, rng);
  return params;
}

/// Row index holding timestamp `t`, if present.
inline std::optional<std::size_t> row_at(const TimeTable& t, UtcSeconds ts) { return t.find_row(ts); }

/// Transformed fine-tune samples ending at `boundary`, newest first. Only rows of `history`
/// (which must end before `boundary`) are read.
inline std::vector<dataset::WindowSample> daily_samples(const TimeTable& history, const dataset::ColumnLayout& layout,
                                                        const features::FeatureTransform& ft, UtcSeconds boundary,
                                                        const Setup& setup) {
  std::vector<dataset::WindowSample> out;
  const std::size_t in = setup.model.input_steps, nout = setup.model.output_steps;
  for (std::size_t k = 0; k < setup.forecast.finetune_samples; ++k) {
    const UtcSeconds end = boundary - static_cast<UtcSeconds>(k) * kDay;
    const UtcSeconds start = end - static_cast<UtcSeconds>(in + nout) * kThreeHours;
    const auto r = row_at(history, start);
    if (!r || *r + in + nout > history.rows() || !dataset::rows_contiguous(history, *r, in + nout, kThreeHours))
      continue;
    auto s = dataset::build_sample(history, *r, in, nout, setup.labels, layout);
    s.step = kThreeHours;
    out.push_back(features::transform_sample(ft, s));
  }
  return out;
}

/// Transformed input-only sample whose input window ends at `boundary`, if `history` has it.
inline std::optional<dataset::WindowSample> input_sample(const TimeTable& history, const dataset::ColumnLayout& layout,
                                                         const features::FeatureTransform& ft, UtcSeconds boundary,
                                                         const Setup& setup) {
  const std::size_t in = setup.model.input_steps;
  const UtcSeconds start = boundary - static_cast<UtcSeconds>(in) * kThreeHours;
  const auto r = row_at(history, start);
  if (!r || *r + in > history.rows() || !dataset::rows_contiguous(history, *r, in, kThreeHours)) return std::nullopt;
  auto s = dataset::build_sample(history, *r, in, 0, setup.labels, layout);
  s.step = kThreeHours;
  return features::transform_sample(ft, s);
}

/// One inference on the window ending at `boundary`; horizon h reads output steps [8(h-1), 8h).
/// Inputs come from `history` only; `observed` supplies the Kp the rows are scored against.
inline void predict_horizons(const ParamStore& params, const TimeTable& history, const TimeTable& observed,
                             const dataset::ColumnLayout& layout, const features::FeatureTransform& ft,
                             UtcSeconds boundary, const Setup& setup, ForecastReport& report) {
  const auto sample = input_sample(history, layout, ft, boundary, setup);
  if (!sample) {
    report.gaps.push_back({boundary, 0, "input window incomplete"});
    return;
  }
  const auto out = model::predict(params, *sample, setup.model);
  const auto kp_col = observed.column_index(ingest::kKpColumn);
  for (int h : setup.forecast.horizons) {
    std::vector<ForecastRow> rows;
    bool complete = true;
    for (std::size_t j = kStepsPerDay * static_cast<std::size_t>(h - 1); j < kStepsPerDay * static_cast<std::size_t>(h);
         ++j) {
      const UtcSeconds ts = boundary + static_cast<UtcSeconds>(j) * kThreeHours;
      const auto r = observed.find_row(ts);
      if (!r || observed.missing(*r, kp_col)) {
        complete = false;
        break;
      }
      ForecastRow row;
      row.day = boundary;
      row.horizon = h;
      row.step_time = ts;
      row.kp_expected = expected_kp(out.dist28.row_span(j));
      row.kp_argmax = argmax_kp(out.dist28.row_span(j));
      row.kp_observed = dataset::kp_thirds(observed.value(*r, kp_col)) / 3.0;
      row.error = row.kp_expected - row.kp_observed;
      rows.push_back(row);
    }
    if (!complete) {
      report.gaps.push_back({boundary, h, "observed Kp unavailable"});
      continue;
    }
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
}

struct WalkforwardResult {
  ForecastReport report;
  ParamStore params;
};

/// Daily loop over issue boundaries first..last (inclusive, midnight UTC): fine-tune on the day
/// ending at the boundary, then forecast. Parameters carry forward.
inline WalkforwardResult run_walkforward(const ParamStore& initial, const TimeTable& table,
                                         const features::FeatureTransform& ft, UtcSeconds first, UtcSeconds last,
                                         const Setup& setup, std::ostream* log = nullptr) {
  setup.validate();
  if (first % kDay != 0 || last % kDay != 0) fail(ErrorKind::Config, "issue boundaries must fall on midnight UTC");
  if (first > last) fail(ErrorKind::Config, "walk-forward range is empty");
  features::check_fitted_before(ft, first);
  const auto layout = dataset::infer_layout(table);
  WalkforwardResult res;
  res.params = initial;
  for (UtcSeconds b = first; b <= last; b += kDay) {
    const TimeTable history = table.slice_time(std::numeric_limits<UtcSeconds>::min(), b);
    const auto day = daily_samples(history, layout, ft, b, setup);
    if (day.empty()) {
      res.report.gaps.push_back({b, 0, "no fine-tune sample"});
      if (log) *log << "gap: " << format_iso8601(b) << " no fine-tune sample\n";
    }
    res.params = finetune_day(std::move(res.params), day, b, setup);
    const std::size_t before = res.report.gaps.size();
    predict_horizons(res.params, history, table, layout, ft, b, setup, res.report);
    if (log)
      for (std::size_t g = before; g < res.report.gaps.size(); ++g)
        *log << "gap: " << format_iso8601(b) << " horizon " << res.report.gaps[g].horizon << ": "
             << res.report.gaps[g].reason << '\n';
  }
  return res;
}

// ---------------------------------------------------------------------------
// Report text format

inline const char* report_header() {
  return "day,horizon,step_timestamp,kp_pred_expected,kp_pred_argmax,kp_observed,error";
}

inline void write_report(std::ostream& os, const ForecastReport& r) {
  os << report_header() << '\n';
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%.17g,%.17g,%.17g,%.17g\n", format_iso8601(row.day).c_str(), row.horizon,
                  format_iso8601(row.step_time).c_str(), row.kp_expected, row.kp_argmax, row.kp_observed, row.error);
    os << buf;
  }
}

inline ForecastReport read_report(std::istream& is) {
  ForecastReport r;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (ingest::is_skippable(line)) continue;
    if (line.rfind("day,", 0) == 0) continue;
    const auto f = ingest::split_fields(line, ingest::Delimiter::Comma);
    const std::string where = "report line " + std::to_string(lineno);
    if (f.size() != 7) fail(ErrorKind::Parse, where + ": expected 7 fields");
    auto num = [&](const std::string& tok) {
      double v = 0.0;
      if (!ingest::parse_number(tok, v) || std::isnan(v)) fail(ErrorKind::Parse, where + ": bad number '" + tok + "'");
      return v;
    };
    ForecastRow row;
    row.day = parse_iso8601(f[0]);
    const double h = num(f[1]);
    if (!(h >= 1 && h <= 5) || h != std::floor(h)) fail(ErrorKind::Parse, where + ": bad horizon '" + f[1] + "'");
    row.horizon = static_cast<int>(h);
    row.step_time = parse_iso8601(f[2]);
    row.kp_expected = num(f[3]);
    row.kp_argmax = num(f[4]);
    row.kp_observed = num(f[5]);
    row.error = num(f[6]);
    r.rows.push_back(row);
  }
  return r;
}

inline void save_report(const std::string& path, const ForecastReport& r) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot write " + path);
  write_report(os, r);
  if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

inline ForecastReport load_report(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot read " + path);
  return read_report(is);
}

}  // namespace kpcast::forecast
