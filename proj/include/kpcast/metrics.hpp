#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "kpcast/error.hpp"
#include "kpcast/forecast.hpp"
#include "kpcast/ingest.hpp"
#include "kpcast/time.hpp"

namespace kpcast::eval {

using forecast::ForecastReport;
using forecast::ForecastRow;

inline constexpr double kHistLo = -9.0;
inline constexpr double kHistHi = 9.0;
inline constexpr std::size_t kHistBins = 54;  // width 1/3 over [-9, 9]

struct ErrorSummary {
  int horizon = 0;
  std::size_t count = 0;
  double mae = 0.0;
  double rmse = 0.0;
  double bias = 0.0;
  std::vector<std::size_t> histogram = std::vector<std::size_t>(kHistBins, 0);
};

/// Bin of an error on the 1/3-wide grid over [-9, 9]; the top edge falls in the last bin.
inline std::size_t histogram_bin(double e) {
  const double x = std::clamp(e, kHistLo, kHistHi);
  const auto b = static_cast<long>(std::floor((x - kHistLo) * 3.0 + 1e-9));
  return static_cast<std::size_t>(std::clamp(b, 0L, static_cast<long>(kHistBins) - 1));
}

inline double histogram_bin_lower(std::size_t b) { return kHistLo + static_cast<double>(b) / 3.0; }

/// Metrics of a set of signed errors. Errors are sorted first so the result does not depend on
/// input order.
inline ErrorSummary summarize_errors(std::vector<double> errors, int horizon = 0) {
  ErrorSummary s;
  s.horizon = horizon;
  s.count = errors.size();
  if (errors.empty()) return s;
  std::sort(errors.begin(), errors.end());
  double sa = 0.0, s2 = 0.0, s1 = 0.0;
  for (double e : errors) {
    sa += std::abs(e);
    s2 += e * e;
    s1 += e;
    ++s.histogram[histogram_bin(e)];
  }
  const double n = static_cast<double>(errors.size());
  s.mae = sa / n;
  s.rmse = std::sqrt(s2 / n);
  s.bias = s1 / n;
  return s;
}

/// Per-horizon summaries of the expected-value track.
inline std::map<int, ErrorSummary> error_summary(const ForecastReport& report) {
  std::map<int, std::vector<double>> by_h;
  for (const auto& r : report.rows) by_h[r.horizon].push_back(r.error);
  std::map<int, ErrorSummary> out;
  for (auto& [h, e] : by_h) out.emplace(h, summarize_errors(std::move(e), h));
  return out;
}

inline const char* summary_header() { return "model,horizon,count,mae,rmse,bias"; }

inline void write_summary_rows(std::ostream& os, const std::string& model, const std::map<int, ErrorSummary>& s) {
  char buf[256];
  for (const auto& [h, e] : s) {
    std::snprintf(buf, sizeof buf, "%s,%d,%zu,%.17g,%.17g,%.17g\n", model.c_str(), h, e.count, e.mae, e.rmse, e.bias);
    os << buf;
  }
}

inline void write_histograms(std::ostream& os, const std::string& model, const std::map<int, ErrorSummary>& s) {
  char buf[128];
  for (const auto& [h, e] : s)
    for (std::size_t b = 0; b < kHistBins; ++b) {
      std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%zu\n", model.c_str(), h, histogram_bin_lower(b), e.histogram[b]);
      os << buf;
    }
}

// ---------------------------------------------------------------------------
// Baseline forecasts

struct BaselineRow {
  UtcSeconds day = 0;
  int horizon = 0;
  UtcSeconds step_time = 0;
  double kp = 0.0;
};

struct BaselineForecast {
  std::vector<BaselineRow> rows;
};

inline void validate_baseline_row(const BaselineRow& r, const std::string& where) {
  if (!(r.kp >= 0.0 && r.kp <= 9.0)) fail(ErrorKind::Validation, where + ": baseline Kp outside [0, 9]");
  if (r.step_time % kThreeHours != 0) fail(ErrorKind::Validation, where + ": step not on a 3-hour boundary");
  if (r.horizon < 1 || r.horizon > 5) fail(ErrorKind::Validation, where + ": horizon outside 1..5");
}

/// Delimited text mirroring the report: day,horizon,step_timestamp,kp_pred.
inline BaselineForecast read_baseline_csv(std::istream& is) {
  BaselineForecast b;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (ingest::is_skippable(line) || line.rfind("day,", 0) == 0) continue;
    const auto f = ingest::split_fields(line, ingest::Delimiter::Comma);
    const std::string where = "baseline line " + std::to_string(lineno);
    if (f.size() != 4) fail(ErrorKind::Parse, where + ": expected 4 fields");
    BaselineRow r;
    double h = 0.0;
    r.day = parse_iso8601(f[0]);
    if (!ingest::parse_number(f[1], h) || h != std::floor(h)) fail(ErrorKind::Parse, where + ": bad horizon");
    r.horizon = static_cast<int>(h);
    r.step_time = parse_iso8601(f[2]);
    if (!ingest::parse_number(f[3], r.kp) || std::isnan(r.kp)) fail(ErrorKind::Parse, where + ": bad Kp");
    validate_baseline_row(r, where);
    b.rows.push_back(r);
  }
  return b;
}

inline void write_baseline_csv(std::ostream& os, const BaselineForecast& b) {
  os << "day,horizon,step_timestamp,kp_pred\n";
  char buf[160];
  for (const auto& r : b.rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%.17g\n", format_iso8601(r.day).c_str(), r.horizon,
                  format_iso8601(r.step_time).c_str(), r.kp);
    os << buf;
  }
}

inline int month_from_abbrev(std::string_view m) {
  static const char* names[] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  for (int i = 0; i < 12; ++i)
    if (m == names[i]) return i + 1;
  return 0;
}

/// Reads the NOAA SWPC "3-Day Forecast" product text. Only the Kp breakdown block is used:
///
///   :Issued: 2024 May 08 0030 UTC
///   NOAA Kp index breakdown May 08-May 10 2024
///                May 08       May 09       May 10
///   00-03UT       4.00         5.67 (G2)    3.67
///
/// The issue day is the midnight before the issue time; the column for issue day + (h-1) becomes
/// horizon h. Storm-scale tags in parentheses are ignored.
inline BaselineForecast parse_noaa_3day(std::istream& is) {
  BaselineForecast b;
  std::string line;
  int year = 0;
  UtcSeconds issue_day = 0;
  bool have_issue = false;
  std::vector<UtcSeconds> col_days;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto f = ingest::split_fields(line, ingest::Delimiter::Whitespace);
    if (f.empty()) continue;
    if (f[0] == ":Issued:" && f.size() >= 4) {
      year = std::atoi(f[1].c_str());
      const int mon = month_from_abbrev(f[2]);
      const int day = std::atoi(f[3].c_str());
      if (year <= 0 || mon == 0 || day <= 0) fail(ErrorKind::Parse, "NOAA line " + std::to_string(lineno) + ": bad :Issued:");
      issue_day = utc_seconds(year, mon, day, 0, 0, 0);
      have_issue = true;
      continue;
    }
    if (have_issue && col_days.empty() && f.size() >= 2 && f.size() % 2 == 0 && month_from_abbrev(f[0]) != 0) {
      bool all = true;
      for (std::size_t i = 0; i < f.size(); i += 2) all = all && month_from_abbrev(f[i]) != 0;
      if (!all) continue;
      for (std::size_t i = 0; i < f.size(); i += 2) {
        UtcSeconds d = utc_seconds(year, month_from_abbrev(f[i]), std::atoi(f[i + 1].c_str()), 0, 0, 0);
        if (d < issue_day - 200 * kDay) d = utc_seconds(year + 1, month_from_abbrev(f[i]), std::atoi(f[i + 1].c_str()), 0, 0, 0);
        col_days.push_back(d);
      }
      continue;
    }
    if (!col_days.empty() && f[0].size() == 7 && f[0].substr(2, 1) == "-" && f[0].substr(5) == "UT") {
      const int hour = std::atoi(f[0].substr(0, 2).c_str());
      std::size_t col = 0;
      for (std::size_t i = 1; i < f.size() && col < col_days.size(); ++i) {
        if (f[i].front() == '(') continue;
        double v = 0.0;
        if (!ingest::parse_number(f[i], v) || std::isnan(v))
          fail(ErrorKind::Parse, "NOAA line " + std::to_string(lineno) + ": bad Kp '" + f[i] + "'");
        const long h = (col_days[col] - issue_day) / kDay + 1;
        ++col;
        if (h < 1 || h > 5) continue;
        BaselineRow r{issue_day, static_cast<int>(h), col_days[col - 1] + hour * kHour, v};
        validate_baseline_row(r, "NOAA line " + std::to_string(lineno));
        b.rows.push_back(r);
      }
    }
  }
  if (!have_issue) fail(ErrorKind::Parse, "NOAA product has no :Issued: line");
  if (b.rows.empty()) fail(ErrorKind::Parse, "NOAA product has no Kp breakdown rows");
  std::sort(b.rows.begin(), b.rows.end(), [](const BaselineRow& x, const BaselineRow& y) {
    return std::tie(x.day, x.horizon, x.step_time) < std::tie(y.day, y.horizon, y.step_time);
  });
  return b;
}

struct StepDelta {
  UtcSeconds day = 0;
  int horizon = 0;
  UtcSeconds step_time = 0;
  double model_error = 0.0;
  double baseline_error = 0.0;
  double abs_delta = 0.0;  // |model_error| - |baseline_error|
};

struct Comparison {
  std::map<int, ErrorSummary> model;
  std::map<int, ErrorSummary> baseline;
  std::vector<StepDelta> deltas;
};

/// Joins on (day, horizon, step); both summaries cover exactly the joined rows.
inline Comparison compare_baseline(const ForecastReport& report, const BaselineForecast& baseline) {
  std::map<std::tuple<UtcSeconds, int, UtcSeconds>, double> base;
  for (const auto& r : baseline.rows) base[{r.day, r.horizon, r.step_time}] = r.kp;
  Comparison c;
  std::map<int, std::vector<double>> em, eb;
  for (const auto& r : report.rows) {
    auto it = base.find({r.day, r.horizon, r.step_time});
    if (it == base.end()) continue;
    StepDelta d{r.day, r.horizon, r.step_time, r.error, it->second - r.kp_observed, 0.0};
    d.abs_delta = std::abs(d.model_error) - std::abs(d.baseline_error);
    c.deltas.push_back(d);
    em[r.horizon].push_back(d.model_error);
    eb[r.horizon].push_back(d.baseline_error);
  }
  if (c.deltas.empty()) fail(ErrorKind::Comparison, "report and baseline share no (day, horizon, step) rows");
  std::sort(c.deltas.begin(), c.deltas.end(), [](const StepDelta& x, const StepDelta& y) {
    return std::tie(x.day, x.horizon, x.step_time) < std::tie(y.day, y.horizon, y.step_time);
  });
  for (auto& [h, e] : em) c.model.emplace(h, summarize_errors(std::move(e), h));
  for (auto& [h, e] : eb) c.baseline.emplace(h, summarize_errors(std::move(e), h));
  return c;
}

inline void write_deltas(std::ostream& os, const Comparison& c) {
  os << "day,horizon,step_timestamp,model_error,baseline_error,abs_delta\n";
  char buf[200];
  for (const auto& d : c.deltas) {
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%.17g,%.17g,%.17g\n", format_iso8601(d.day).c_str(), d.horizon,
                  format_iso8601(d.step_time).c_str(), d.model_error, d.baseline_error, d.abs_delta);
    os << buf;
  }
}

inline BaselineForecast load_baseline(const std::string& path, const std::string& format) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot read " + path);
  if (format == "csv") return read_baseline_csv(is);
  if (format == "noaa") return parse_noaa_3day(is);
  fail(ErrorKind::Config, "unknown baseline format '" + format + "' (csv or noaa)");
}

}  // namespace kpcast::eval
