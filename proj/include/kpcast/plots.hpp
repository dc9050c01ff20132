#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kpcast/error.hpp"
#include "kpcast/forecast.hpp"
#include "kpcast/metrics.hpp"
#include "kpcast/time.hpp"

namespace kpcast::eval {

namespace svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline void open(std::ostream& os, int w, int h, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << title << "</text>\n";
}

inline void close(std::ostream& os) { os << "</svg>\n"; }

}  // namespace svg

/// Plot area shared by both chart kinds.
struct Frame {
  double left = 50, top = 35, width = 560, height = 260;
};

/// Step plot of predicted (expected and argmax) and observed Kp over one day's horizon.
inline std::string forecast_svg(const std::vector<forecast::ForecastRow>& rows, UtcSeconds day, int horizon) {
  std::ostringstream os;
  const Frame f;
  svg::open(os, 640, 330, "Kp forecast issued " + format_iso8601(day) + ", horizon " + std::to_string(horizon) + " d");
  auto y = [&](double kp) { return f.top + f.height * (1.0 - kp / 9.0); };
  const double n = static_cast<double>(std::max<std::size_t>(rows.size(), 1));
  auto x = [&](double i) { return f.left + f.width * i / n; };
  os << "<g stroke=\"#ccc\" stroke-width=\"1\">\n";
  for (int k = 0; k <= 9; ++k)
    os << "<line x1=\"" << svg::num(f.left) << "\" y1=\"" << svg::num(y(k)) << "\" x2=\"" << svg::num(f.left + f.width)
       << "\" y2=\"" << svg::num(y(k)) << "\"/>\n";
  os << "</g>\n<g font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">\n";
  for (int k = 0; k <= 9; ++k)
    os << "<text x=\"" << svg::num(f.left - 6) << "\" y=\"" << svg::num(y(k) + 3) << "\">" << k << "</text>\n";
  os << "</g>\n";
  auto step_path = [&](auto value, const char* colour, const char* dash) {
    std::string d;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = value(rows[i]);
      d += (i == 0 ? "M" : "L") + svg::num(x(static_cast<double>(i))) + "," + svg::num(y(v)) + " ";
      d += "L" + svg::num(x(static_cast<double>(i + 1))) + "," + svg::num(y(v)) + " ";
    }
    os << "<path d=\"" << d << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\"" << dash << "/>\n";
  };
  step_path([](const forecast::ForecastRow& r) { return r.kp_observed; }, "black", "");
  step_path([](const forecast::ForecastRow& r) { return r.kp_expected; }, "#1f77b4", "");
  step_path([](const forecast::ForecastRow& r) { return r.kp_argmax; }, "#ff7f0e", " stroke-dasharray=\"4 3\"");
  os << "<g font-family=\"sans-serif\" font-size=\"10\">\n"
     << "<text x=\"60\" y=\"315\" fill=\"black\">observed</text>\n"
     << "<text x=\"140\" y=\"315\" fill=\"#1f77b4\">expected</text>\n"
     << "<text x=\"220\" y=\"315\" fill=\"#ff7f0e\">argmax</text>\n";
  if (!rows.empty())
    os << "<text x=\"" << svg::num(f.left + f.width) << "\" y=\"315\" text-anchor=\"end\">"
       << format_iso8601(rows.front().step_time) << " .. " << format_iso8601(rows.back().step_time) << "</text>\n";
  os << "</g>\n";
  svg::close(os);
  return os.str();
}

/// Bar chart of the error histogram of one horizon.
inline std::string histogram_svg(const ErrorSummary& s) {
  std::ostringstream os;
  const Frame f;
  svg::open(os, 640, 330,
            "Error distribution, horizon " + std::to_string(s.horizon) + " d (n=" + std::to_string(s.count) +
                ", MAE " + svg::num(s.mae) + ", RMSE " + svg::num(s.rmse) + ")");
  const std::size_t peak = std::max<std::size_t>(1, *std::max_element(s.histogram.begin(), s.histogram.end()));
  const double bw = f.width / static_cast<double>(kHistBins);
  os << "<g fill=\"#1f77b4\">\n";
  for (std::size_t b = 0; b < kHistBins; ++b) {
    if (s.histogram[b] == 0) continue;
    const double h = f.height * static_cast<double>(s.histogram[b]) / static_cast<double>(peak);
    os << "<rect x=\"" << svg::num(f.left + bw * static_cast<double>(b)) << "\" y=\"" << svg::num(f.top + f.height - h)
       << "\" width=\"" << svg::num(bw - 1) << "\" height=\"" << svg::num(h) << "\"/>\n";
  }
  os << "</g>\n<g font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">\n";
  for (int e = -9; e <= 9; e += 3)
    os << "<text x=\"" << svg::num(f.left + f.width * (e + 9) / 18.0) << "\" y=\"" << svg::num(f.top + f.height + 14)
       << "\">" << e << "</text>\n";
  os << "</g>\n<line x1=\"" << svg::num(f.left) << "\" y1=\"" << svg::num(f.top + f.height) << "\" x2=\""
     << svg::num(f.left + f.width) << "\" y2=\"" << svg::num(f.top + f.height) << "\" stroke=\"black\"/>\n";
  svg::close(os);
  return os.str();
}

inline std::string compact_date(UtcSeconds t) {
  const auto c = civil_from_seconds(t);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d%02u%02u", c.year, c.month, c.day);
  return buf;
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot write " + p.string());
  os << text;
  if (!os) fail(ErrorKind::Io, "write failed for " + p.string());
}

/// One forecast plot per (day, horizon) and one histogram per horizon. Returns the files written,
/// in write order.
inline std::vector<std::filesystem::path> emit_plots(const ForecastReport& report, const std::filesystem::path& out_dir) {
  std::vector<std::filesystem::path> files;
  if (report.rows.empty()) return files;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    fail(ErrorKind::Io, "cannot create plot directory " + out_dir.string());
  std::map<std::pair<UtcSeconds, int>, std::vector<forecast::ForecastRow>> groups;
  for (const auto& r : report.rows) groups[{r.day, r.horizon}].push_back(r);
  for (auto& [key, rows] : groups) {
    std::sort(rows.begin(), rows.end(),
              [](const forecast::ForecastRow& a, const forecast::ForecastRow& b) { return a.step_time < b.step_time; });
    const auto p = out_dir / ("forecast_" + compact_date(key.first) + "_h" + std::to_string(key.second) + ".svg");
    write_text_file(p, forecast_svg(rows, key.first, key.second));
    files.push_back(p);
  }
  for (const auto& [h, s] : error_summary(report)) {
    const auto p = out_dir / ("errors_h" + std::to_string(h) + ".svg");
    write_text_file(p, histogram_svg(s));
    files.push_back(p);
  }
  return files;
}

}  // namespace kpcast::eval
