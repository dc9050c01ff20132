#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kpcast/binio.hpp"
#include "kpcast/error.hpp"
#include "kpcast/table.hpp"
#include "kpcast/time.hpp"

namespace kpcast::ingest {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Text tokenizing

enum class Delimiter { Comma, Whitespace };

inline Delimiter detect_delimiter(std::string_view header) {
  bool quoted = false;
  for (char c : header) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) return Delimiter::Comma;
  }
  return Delimiter::Whitespace;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

/// Splits one line. Comma mode honours double quotes ("" escapes a quote).
inline std::vector<std::string> split_fields(std::string_view line, Delimiter d) {
  std::vector<std::string> out;
  if (d == Delimiter::Whitespace) {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      out.emplace_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.emplace_back(trim(cur));
  return out;
}

/// Parses a double; "nan"/"NaN"/empty yield NaN. Returns false on garbage.
inline bool parse_number(std::string_view tok, double& out) {
  tok = trim(tok);
  if (tok.empty() || tok == "nan" || tok == "NaN" || tok == "NA") {
    out = kNaN;
    return true;
  }
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

inline bool is_skippable(std::string_view line) {
  line = trim(line);
  return line.empty() || line.front() == '#';
}

// ---------------------------------------------------------------------------
// Satellite table

/// One retained satellite column. `name` is the canonical header (may contain commas and must
/// then be quoted in comma-delimited files); `key` is a whitespace-safe alias.
struct SatelliteColumn {
  std::string name;
  std::string key;
  std::string unit;
};

using ColumnSpec = std::vector<SatelliteColumn>;

inline const ColumnSpec& default_column_spec() {
  static const ColumnSpec spec = {
      {"YEAR", "YEAR", ""},
      {"DOY", "DOY", "day"},
      {"Hour", "Hour", "h"},
      {"Scalar B, nT", "scalar_b", "nT"},
      {"Vector B Magnitude, nT", "vector_b_mag", "nT"},
      {"Lat. Angle of B (GSE)", "lat_angle_b_gse", "deg"},
      {"Long. Angle of B (GSE)", "long_angle_b_gse", "deg"},
      {"BX, nT (GSE, GSM)", "bx_gse_gsm", "nT"},
      {"BY, nT (GSE)", "by_gse", "nT"},
      {"BZ, nT (GSE)", "bz_gse", "nT"},
      {"BY, nT (GSM)", "by_gsm", "nT"},
      {"BZ, nT (GSM)", "bz_gsm", "nT"},
      {"RMS_magnitude, nT", "rms_magnitude", "nT"},
      {"RMS_field_vector, nT", "rms_field_vector", "nT"},
      {"RMS_BX_GSE, nT", "rms_bx_gse", "nT"},
      {"RMS_BY_GSE, nT", "rms_by_gse", "nT"},
      {"RMS_BZ_GSE, nT", "rms_bz_gse", "nT"},
      {"SW Plasma Temperature, K", "sw_temperature", "K"},
      {"SW Proton Density, N/cm^3", "sw_density", "N/cm^3"},
      {"SW Plasma Speed, km/s", "sw_speed", "km/s"},
      {"SW Plasma flow long. angle", "sw_flow_long_angle", "deg"},
      {"SW Plasma flow lat. angle", "sw_flow_lat_angle", "deg"},
      {"Alpha/Prot. ratio", "alpha_proton_ratio", ""},
      {"Flow pressure", "flow_pressure", "nPa"},
      {"E electric field", "e_field", "mV/m"},
      {"Plasma Beta", "plasma_beta", ""},
      {"Alfven mach number", "alfven_mach", ""},
      {"Magnetosonic Mach number", "magnetosonic_mach", ""},
      {"Quasy-Invariant", "quasi_invariant", ""},
  };
  return spec;
}

inline const std::vector<std::string>& temporal_columns() {
  static const std::vector<std::string> cols = {"YEAR", "DOY", "Hour"};
  return cols;
}

inline bool is_temporal_column(std::string_view name) {
  const auto& t = temporal_columns();
  return std::find(t.begin(), t.end(), name) != t.end();
}

/// Reads a delimited satellite table (comma or whitespace, auto-detected from the header row).
/// Columns not named in `spec` are ignored. Output columns follow `spec` order.
inline TimeTable parse_satellite_table(std::istream& in, const ColumnSpec& spec = default_column_spec()) {
  std::string line;
  std::size_t line_no = 0;
  std::string header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!is_skippable(line)) {
      header = line;
      break;
    }
  }
  if (header.empty()) fail(ErrorKind::Schema, "satellite table has no header row");
  const Delimiter delim = detect_delimiter(header);
  const auto names = split_fields(header, delim);

  std::vector<std::size_t> src(spec.size());
  for (std::size_t c = 0; c < spec.size(); ++c) {
    auto it = std::find_if(names.begin(), names.end(),
                           [&](const std::string& n) { return n == spec[c].name || n == spec[c].key; });
    if (it == names.end()) fail(ErrorKind::Schema, "missing mandatory column '" + spec[c].name + "'");
    src[c] = static_cast<std::size_t>(it - names.begin());
  }
  auto pos_of = [&](std::string_view n) -> std::size_t {
    for (std::size_t c = 0; c < spec.size(); ++c)
      if (spec[c].name == n) return src[c];
    fail(ErrorKind::Schema, "column spec lacks temporal column '" + std::string(n) + "'");
  };
  const std::size_t year_pos = pos_of("YEAR"), doy_pos = pos_of("DOY"), hour_pos = pos_of("Hour");

  std::vector<ColumnDesc> cols;
  for (const auto& c : spec) cols.push_back({c.name, c.unit});
  TimeTable table(std::move(cols));
  std::vector<double> vals(spec.size());
  std::vector<std::uint8_t> miss(spec.size());
  std::vector<double> raw;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_skippable(line)) continue;
    const auto fields = split_fields(line, delim);
    if (fields.size() != names.size())
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected " + std::to_string(names.size()) +
                                 " fields, got " + std::to_string(fields.size()));
    raw.assign(fields.size(), 0.0);
    for (std::size_t f = 0; f < fields.size(); ++f) {
      if (!parse_number(fields[f], raw[f]))
        fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": bad number '" + fields[f] + "'");
    }
    const double y = raw[year_pos], d = raw[doy_pos], h = raw[hour_pos];
    if (!std::isfinite(y) || !std::isfinite(d) || !std::isfinite(h))
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": missing date field");
    UtcSeconds ts = 0;
    try {
      ts = from_year_doy_hour(static_cast<int>(y), static_cast<int>(d), h);
    } catch (const Error& e) {
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!table.empty() && ts <= table.timestamps().back())
      fail(ErrorKind::Validation, "line " + std::to_string(line_no) + ": " +
                                      (ts == table.timestamps().back() ? "duplicate timestamp "
                                                                       : "non-monotonic timestamp ") +
                                      format_iso8601(ts));
    for (std::size_t c = 0; c < spec.size(); ++c) {
      vals[c] = raw[src[c]];
      miss[c] = std::isnan(vals[c]) ? 1 : 0;
    }
    table.append_row(ts, vals, miss);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Kp series

struct KpSeries {
  std::vector<UtcSeconds> timestamps;
  std::vector<double> kp;

  std::size_t size() const { return kp.size(); }
};

/// Snaps a Kp reading to the nearest third; rejects values further than `tol` from any third.
inline double snap_kp(double kp, double tol = 0.01) {
  if (!std::isfinite(kp) || kp < -tol || kp > 9.0 + tol) fail(ErrorKind::Domain, "Kp out of range: " + std::to_string(kp));
  const double k = std::round(kp * 3.0);
  if (std::abs(kp * 3.0 - k) > 3.0 * tol) fail(ErrorKind::Domain, "Kp not on the thirds scale: " + std::to_string(kp));
  return std::clamp(k, 0.0, 27.0) / 3.0;
}

inline void validate_kp_series(const KpSeries& s) {
  if (s.timestamps.size() != s.kp.size()) fail(ErrorKind::Validation, "Kp timestamps/values length mismatch");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.timestamps[i] % kThreeHours != 0)
      fail(ErrorKind::Validation, "Kp timestamp not on a 3-hour boundary: " + format_iso8601(s.timestamps[i]));
    if (i > 0 && s.timestamps[i] <= s.timestamps[i - 1])
      fail(ErrorKind::Validation, "Kp timestamps not strictly increasing at " + format_iso8601(s.timestamps[i]));
    const double k = s.kp[i];
    if (!(k >= 0.0 && k <= 9.0) || std::abs(k * 3.0 - std::round(k * 3.0)) > 3e-6)
      fail(ErrorKind::Validation, "Kp value violates thirds scale: " + std::to_string(k));
  }
}

/// Two-column delimited text: ISO-8601 timestamp, kp. An optional header row is skipped when its
/// first field does not parse as a timestamp.
inline KpSeries parse_kp_series(std::istream& in) {
  KpSeries s;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_skippable(line)) continue;
    const auto fields = split_fields(line, detect_delimiter(line));
    if (fields.size() != 2)
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected 2 fields, got " +
                                 std::to_string(fields.size()));
    UtcSeconds ts = 0;
    try {
      ts = parse_iso8601(fields[0]);
    } catch (const Error&) {
      if (first) {
        first = false;
        continue;
      }
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": bad timestamp '" + fields[0] + "'");
    }
    first = false;
    double v = 0;
    if (!parse_number(fields[1], v) || std::isnan(v))
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": bad Kp value '" + fields[1] + "'");
    try {
      v = snap_kp(v);
    } catch (const Error& e) {
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    s.timestamps.push_back(ts);
    s.kp.push_back(v);
  }
  validate_kp_series(s);
  return s;
}

// ---------------------------------------------------------------------------
// Image-feature files
//
// Text:   header line "# kpcast-image-features v1 dim=<D>", then one record per line:
//         <ISO-8601 hour>,<v1>,...,<vD>   (comma or whitespace separated).
// Binary: "KPIMGF01", u32 dim, u64 count, then per record a u32 payload length (8 + 8*dim)
//         followed by i64 hour (UTC seconds) and dim little-endian f64 values.

inline constexpr std::string_view kImageFeatureMagic = "KPIMGF01";
inline constexpr std::string_view kImageFeatureTextHeader = "# kpcast-image-features v1 dim=";

struct FeatureRecord {
  UtcSeconds hour = 0;
  std::vector<double> values;
};

inline std::string image_column_name(std::size_t i) { return "img_" + std::to_string(i); }

inline TimeTable records_to_table(const std::vector<FeatureRecord>& recs, std::size_t dim) {
  std::vector<ColumnDesc> cols;
  for (std::size_t i = 0; i < dim; ++i) cols.push_back({image_column_name(i), ""});
  TimeTable t(std::move(cols));
  std::vector<std::uint8_t> miss(dim);
  for (const auto& r : recs) {
    if (r.values.size() != dim) fail(ErrorKind::Dimension, "feature record width mismatch");
    if (r.hour % kHour != 0) fail(ErrorKind::Validation, "feature key not on an hour: " + format_iso8601(r.hour));
    if (!t.empty() && r.hour <= t.timestamps().back())
      fail(ErrorKind::Validation, (r.hour == t.timestamps().back() ? "duplicate hour " : "unsorted hour ") +
                                      format_iso8601(r.hour));
    for (std::size_t i = 0; i < dim; ++i) miss[i] = std::isfinite(r.values[i]) ? 0 : 1;
    t.append_row(r.hour, r.values, miss);
  }
  return t;
}

inline TimeTable parse_image_features_text(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t.substr(0, kImageFeatureTextHeader.size()) != kImageFeatureTextHeader)
      fail(ErrorKind::Schema, "image feature file lacks '" + std::string(kImageFeatureTextHeader) + "' header");
    double d = 0;
    if (!parse_number(t.substr(kImageFeatureTextHeader.size()), d) || !(d >= 1))
      fail(ErrorKind::Schema, "bad dim in image feature header");
    dim = static_cast<std::size_t>(d);
    break;
  }
  if (dim == 0) fail(ErrorKind::Schema, "image feature file is empty (header required)");
  std::vector<FeatureRecord> recs;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_skippable(line)) continue;
    const auto fields = split_fields(line, detect_delimiter(line));
    if (fields.size() != dim + 1)
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 1) +
                                 " fields, got " + std::to_string(fields.size()));
    FeatureRecord r;
    try {
      r.hour = parse_iso8601(fields[0]);
    } catch (const Error& e) {
      fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    r.values.resize(dim);
    for (std::size_t i = 0; i < dim; ++i)
      if (!parse_number(fields[i + 1], r.values[i]))
        fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ": bad number '" + fields[i + 1] + "'");
    recs.push_back(std::move(r));
  }
  return records_to_table(recs, dim);
}

inline TimeTable parse_image_features_binary(std::istream& in) {
  binio::expect_magic(in, kImageFeatureMagic);
  const auto dim = binio::read_u32(in, "feature dim");
  const auto count = binio::read_u64(in, "record count");
  if (dim == 0) fail(ErrorKind::Schema, "feature dim is zero");
  std::vector<FeatureRecord> recs;
  recs.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = binio::read_u32(in, "record length");
    if (len != 8u + 8u * dim)
      fail(ErrorKind::Parse, "record " + std::to_string(i) + ": length " + std::to_string(len) + " != " +
                                 std::to_string(8u + 8u * dim));
    FeatureRecord r;
    r.hour = binio::read_i64(in, "record hour");
    r.values.resize(dim);
    binio::read_f64s(in, r.values, "record values");
    recs.push_back(std::move(r));
  }
  return records_to_table(recs, dim);
}

/// Dispatches on the first bytes: binary magic or text header.
inline TimeTable parse_image_features(std::istream& in) {
  char head[8] = {};
  in.read(head, 8);
  const auto got = static_cast<std::size_t>(in.gcount());
  in.clear();
  in.seekg(0);
  if (got == 8 && std::string_view(head, 8) == kImageFeatureMagic) return parse_image_features_binary(in);
  return parse_image_features_text(in);
}

inline TimeTable load_image_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path);
  return parse_image_features(in);
}

inline void write_image_features_text(std::ostream& os, const std::vector<FeatureRecord>& recs, std::size_t dim) {
  os << kImageFeatureTextHeader << dim << '\n';
  char buf[40];
  for (const auto& r : recs) {
    if (r.values.size() != dim) fail(ErrorKind::Dimension, "feature record width mismatch");
    os << format_iso8601(r.hour);
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      os << buf;
    }
    os << '\n';
  }
}

inline void write_image_features_binary(std::ostream& os, const std::vector<FeatureRecord>& recs, std::size_t dim) {
  binio::write_magic(os, kImageFeatureMagic);
  binio::write_u32(os, static_cast<std::uint32_t>(dim));
  binio::write_u64(os, recs.size());
  for (const auto& r : recs) {
    if (r.values.size() != dim) fail(ErrorKind::Dimension, "feature record width mismatch");
    binio::write_u32(os, static_cast<std::uint32_t>(8 + 8 * dim));
    binio::write_i64(os, r.hour);
    binio::write_f64s(os, r.values);
  }
}

// ---------------------------------------------------------------------------
// Sanitize / interpolate / resample / merge

/// Per-column sentinel values marking missing measurements.
struct SentinelConfig {
  std::map<std::string, std::vector<double>> sentinels;
};

/// Fill values from the OMNI2 hourly data dictionary.
inline SentinelConfig default_sentinels() {
  SentinelConfig cfg;
  auto& s = cfg.sentinels;
  for (const char* c : {"Scalar B, nT", "Vector B Magnitude, nT", "Lat. Angle of B (GSE)", "Long. Angle of B (GSE)",
                        "BX, nT (GSE, GSM)", "BY, nT (GSE)", "BZ, nT (GSE)", "BY, nT (GSM)", "BZ, nT (GSM)",
                        "RMS_magnitude, nT", "RMS_field_vector, nT", "RMS_BX_GSE, nT", "RMS_BY_GSE, nT",
                        "RMS_BZ_GSE, nT", "SW Proton Density, N/cm^3", "SW Plasma flow long. angle",
                        "SW Plasma flow lat. angle", "Alfven mach number"})
    s[c] = {999.9};
  s["SW Plasma Temperature, K"] = {9999999.0};
  s["SW Plasma Speed, km/s"] = {9999.0};
  s["Alpha/Prot. ratio"] = {9.999};
  s["Flow pressure"] = {99.99};
  s["E electric field"] = {999.99};
  s["Plasma Beta"] = {999.99};
  s["Magnetosonic Mach number"] = {99.9};
  s["Quasy-Invariant"] = {9.9999};
  return cfg;
}

inline bool matches_sentinel(double v, double sentinel) {
  if (sentinel == 0.0) return v == 0.0;
  return std::abs(v - sentinel) <= 1e-9 * std::abs(sentinel);
}

inline TimeTable sanitize(const TimeTable& table, const SentinelConfig& cfg) {
  std::vector<std::pair<std::size_t, const std::vector<double>*>> targets;
  for (const auto& [name, list] : cfg.sentinels) {
    const auto idx = table.find_column(name);
    if (!idx) fail(ErrorKind::Config, "sentinel configured for unknown column '" + name + "'");
    targets.emplace_back(*idx, &list);
  }
  TimeTable out = table;
  for (const auto& [c, list] : targets)
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (double s : *list)
        if (matches_sentinel(out.value(r, c), s)) {
          out.set_missing(r, c, true);
          break;
        }
  return out;
}

/// Linear interpolation in time across interior gaps; nearest-value fill at the edges.
inline TimeTable interpolate_linear(const TimeTable& table) {
  TimeTable out = table;
  const auto& ts = table.timestamps();
  std::vector<std::size_t> known;
  for (std::size_t c = 0; c < table.cols(); ++c) {
    known.clear();
    for (std::size_t r = 0; r < table.rows(); ++r)
      if (!table.missing(r, c)) known.push_back(r);
    if (known.empty()) {
      if (table.rows() == 0) continue;
      fail(ErrorKind::Unfillable, "column '" + table.columns()[c].name + "' has no non-missing values");
    }
    for (std::size_t r = 0; r < known.front(); ++r) out.value(r, c) = table.value(known.front(), c);
    for (std::size_t r = known.back() + 1; r < table.rows(); ++r) out.value(r, c) = table.value(known.back(), c);
    for (std::size_t k = 0; k + 1 < known.size(); ++k) {
      const std::size_t a = known[k], b = known[k + 1];
      if (b == a + 1) continue;
      const double va = table.value(a, c), vb = table.value(b, c);
      const double span = static_cast<double>(ts[b] - ts[a]);
      for (std::size_t r = a + 1; r < b; ++r) {
        const double w = static_cast<double>(ts[r] - ts[a]) / span;
        out.value(r, c) = va + w * (vb - va);
      }
    }
    for (std::size_t r = 0; r < table.rows(); ++r) out.set_missing(r, c, false);
  }
  return out;
}

/// Hourly grid from floor_hour(first) to floor_hour(last); each slot copies the latest input row
/// at or before it. Slots before the first input row are all-missing.
inline TimeTable resample_hourly_ffill(const TimeTable& table) {
  if (table.empty()) fail(ErrorKind::EmptyInput, "cannot resample an empty table");
  table.validate();
  TimeTable out(table.columns());
  const UtcSeconds start = floor_to(table.timestamps().front(), kHour);
  const UtcSeconds end = floor_to(table.timestamps().back(), kHour);
  std::vector<double> nan_row(table.cols(), kNaN);
  std::vector<std::uint8_t> all_missing(table.cols(), 1), row_mask(table.cols());
  std::size_t src = 0;
  bool have = false;
  for (UtcSeconds t = start; t <= end; t += kHour) {
    while (src < table.rows() && table.timestamp(src) <= t) {
      ++src;
      have = true;
    }
    if (!have) {
      out.append_row(t, nan_row, all_missing);
      continue;
    }
    const std::size_t r = src - 1;
    for (std::size_t c = 0; c < table.cols(); ++c) row_mask[c] = table.missing(r, c) ? 1 : 0;
    out.append_row(t, table.row(r), row_mask);
  }
  return out;
}

inline constexpr std::string_view kKpColumn = "kp";

/// Inner join on hourly timestamps. Each Kp reading covers [t, t + 3h).
inline TimeTable merge_by_timestamp(const TimeTable& sat, const KpSeries& kp, const TimeTable& img) {
  validate_kp_series(kp);
  std::vector<ColumnDesc> cols = sat.columns();
  cols.push_back({std::string(kKpColumn), ""});
  for (const auto& c : img.columns()) cols.push_back(c);
  {
    std::vector<std::string> names;
    for (const auto& c : cols) names.push_back(c.name);
    std::sort(names.begin(), names.end());
    auto dup = std::adjacent_find(names.begin(), names.end());
    if (dup != names.end()) fail(ErrorKind::Merge, "column name collision: '" + *dup + "'");
  }
  TimeTable out(std::move(cols));
  std::vector<double> vals(out.cols());
  std::vector<std::uint8_t> miss(out.cols());
  std::size_t ki = 0, ii = 0;
  for (std::size_t r = 0; r < sat.rows(); ++r) {
    const UtcSeconds t = sat.timestamp(r);
    while (ki < kp.size() && kp.timestamps[ki] + kThreeHours <= t) ++ki;
    if (ki >= kp.size() || kp.timestamps[ki] > t) continue;
    while (ii < img.rows() && img.timestamp(ii) < t) ++ii;
    if (ii >= img.rows() || img.timestamp(ii) != t) continue;
    std::size_t c = 0;
    for (std::size_t j = 0; j < sat.cols(); ++j, ++c) {
      vals[c] = sat.value(r, j);
      miss[c] = sat.missing(r, j);
    }
    vals[c] = kp.kp[ki];
    miss[c++] = 0;
    for (std::size_t j = 0; j < img.cols(); ++j, ++c) {
      vals[c] = img.value(ii, j);
      miss[c] = img.missing(ii, j);
    }
    out.append_row(t, vals, miss);
  }
  if (out.empty()) fail(ErrorKind::Merge, "satellite, Kp and image-feature inputs share no timestamps");
  return out;
}

/// Full ingestion chain for one source: sanitize, hourly forward fill, then interpolation.
inline TimeTable condition(const TimeTable& raw, const SentinelConfig& cfg) {
  return interpolate_linear(resample_hourly_ffill(sanitize(raw, cfg)));
}

}  // namespace kpcast::ingest
