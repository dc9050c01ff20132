#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "kpcast/binio.hpp"
#include "kpcast/error.hpp"
#include "kpcast/time.hpp"

namespace kpcast {

struct ColumnDesc {
  std::string name;
  std::string unit;

  bool operator==(const ColumnDesc&) const = default;
};

/// Timestamp-indexed matrix of named feature columns with a missing-value mask.
///
/// Values are row-major. A cell flagged missing keeps whatever value it had (NaN by convention);
/// readers must consult the mask, not the value.
class TimeTable {
 public:
  TimeTable() = default;
  explicit TimeTable(std::vector<ColumnDesc> columns) : columns_(std::move(columns)) { check_unique_names(); }
  TimeTable(std::initializer_list<ColumnDesc> columns) : TimeTable(std::vector<ColumnDesc>(columns)) {}

  std::size_t rows() const { return timestamps_.size(); }
  std::size_t cols() const { return columns_.size(); }
  bool empty() const { return timestamps_.empty(); }

  const std::vector<UtcSeconds>& timestamps() const { return timestamps_; }
  UtcSeconds timestamp(std::size_t r) const { return timestamps_[r]; }
  const std::vector<ColumnDesc>& columns() const { return columns_; }

  double value(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& value(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  bool missing(std::size_t r, std::size_t c) const { return missing_[r * cols() + c] != 0; }
  void set_missing(std::size_t r, std::size_t c, bool m) { missing_[r * cols() + c] = m ? 1 : 0; }

  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }
  std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }

  const std::vector<double>& values() const { return values_; }
  const std::vector<std::uint8_t>& missing_mask() const { return missing_; }

  std::optional<std::size_t> find_column(std::string_view name) const {
    for (std::size_t i = 0; i < columns_.size(); ++i)
      if (columns_[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t column_index(std::string_view name) const {
    if (auto i = find_column(name)) return *i;
    fail(ErrorKind::Schema, "no column named '" + std::string(name) + "'");
  }

  /// Appends a row; `missing` may be empty (nothing missing).
  void append_row(UtcSeconds t, std::span<const double> vals, std::span<const std::uint8_t> missing = {}) {
    if (vals.size() != cols())
      fail(ErrorKind::Dimension, "row has " + std::to_string(vals.size()) + " values, table has " +
                                     std::to_string(cols()) + " columns");
    if (!missing.empty() && missing.size() != cols()) fail(ErrorKind::Dimension, "missing mask width mismatch");
    timestamps_.push_back(t);
    values_.insert(values_.end(), vals.begin(), vals.end());
    if (missing.empty())
      missing_.insert(missing_.end(), cols(), 0);
    else
      missing_.insert(missing_.end(), missing.begin(), missing.end());
  }

  bool any_missing() const {
    return std::any_of(missing_.begin(), missing_.end(), [](std::uint8_t m) { return m != 0; });
  }

  bool row_has_missing(std::size_t r) const {
    for (std::size_t c = 0; c < cols(); ++c)
      if (missing(r, c)) return true;
    return false;
  }

  /// Index of the row with timestamp exactly t.
  std::optional<std::size_t> find_row(UtcSeconds t) const {
    auto it = std::lower_bound(timestamps_.begin(), timestamps_.end(), t);
    if (it == timestamps_.end() || *it != t) return std::nullopt;
    return static_cast<std::size_t>(it - timestamps_.begin());
  }

  /// Number of rows with timestamp < t.
  std::size_t rows_before(UtcSeconds t) const {
    return static_cast<std::size_t>(std::lower_bound(timestamps_.begin(), timestamps_.end(), t) -
                                    timestamps_.begin());
  }

  /// Rows with from <= timestamp < to.
  TimeTable slice_time(UtcSeconds from, UtcSeconds to) const {
    TimeTable out(columns_);
    const std::size_t lo = rows_before(from);
    const std::size_t hi = std::max(lo, rows_before(to));
    out.timestamps_.assign(timestamps_.begin() + lo, timestamps_.begin() + hi);
    out.values_.assign(values_.begin() + lo * cols(), values_.begin() + hi * cols());
    out.missing_.assign(missing_.begin() + lo * cols(), missing_.begin() + hi * cols());
    return out;
  }

  TimeTable select_columns(const std::vector<std::size_t>& idx) const {
    std::vector<ColumnDesc> cs;
    for (auto i : idx) cs.push_back(columns_.at(i));
    TimeTable out(std::move(cs));
    std::vector<double> v(idx.size());
    std::vector<std::uint8_t> m(idx.size());
    for (std::size_t r = 0; r < rows(); ++r) {
      for (std::size_t j = 0; j < idx.size(); ++j) {
        v[j] = value(r, idx[j]);
        m[j] = missing_[r * cols() + idx[j]];
      }
      out.append_row(timestamps_[r], v, m);
    }
    return out;
  }

  /// Checks the structural invariants; throws Validation on the first violation.
  void validate(bool require_uniform_spacing = false) const {
    check_unique_names();
    if (values_.size() != rows() * cols() || missing_.size() != values_.size())
      fail(ErrorKind::Validation, "values/missing dimensions disagree with rows x cols");
    for (std::size_t r = 1; r < rows(); ++r) {
      if (timestamps_[r] == timestamps_[r - 1])
        fail(ErrorKind::Validation, "duplicate timestamp " + format_iso8601(timestamps_[r]));
      if (timestamps_[r] < timestamps_[r - 1])
        fail(ErrorKind::Validation, "timestamps not increasing at row " + std::to_string(r));
    }
    if (require_uniform_spacing && rows() > 2) {
      const UtcSeconds step = timestamps_[1] - timestamps_[0];
      for (std::size_t r = 2; r < rows(); ++r)
        if (timestamps_[r] - timestamps_[r - 1] != step)
          fail(ErrorKind::Validation, "non-uniform spacing at row " + std::to_string(r));
    }
  }

  bool operator==(const TimeTable& o) const {
    if (columns_ != o.columns_ || timestamps_ != o.timestamps_ || missing_ != o.missing_) return false;
    // Bitwise so NaN placeholders compare equal.
    return values_.size() == o.values_.size() &&
           std::memcmp(values_.data(), o.values_.data(), values_.size() * sizeof(double)) == 0;
  }

 private:
  void check_unique_names() const {
    std::unordered_set<std::string> seen;
    for (const auto& c : columns_)
      if (!seen.insert(c.name).second) fail(ErrorKind::Schema, "duplicate column name '" + c.name + "'");
  }

  std::vector<ColumnDesc> columns_;
  std::vector<UtcSeconds> timestamps_;
  std::vector<double> values_;
  std::vector<std::uint8_t> missing_;
};

// Binary table file: "KPTTBL01", u64 rows, u32 cols, per column (name, unit) strings,
// then per row: i64 timestamp, cols f64 values, cols u8 missing flags.
inline constexpr std::string_view kTableMagic = "KPTTBL01";

inline void write_table(std::ostream& os, const TimeTable& t) {
  binio::write_magic(os, kTableMagic);
  binio::write_u64(os, t.rows());
  binio::write_u32(os, static_cast<std::uint32_t>(t.cols()));
  for (const auto& c : t.columns()) {
    binio::write_string(os, c.name);
    binio::write_string(os, c.unit);
  }
  for (std::size_t r = 0; r < t.rows(); ++r) {
    binio::write_i64(os, t.timestamp(r));
    binio::write_f64s(os, t.row(r));
    for (std::size_t c = 0; c < t.cols(); ++c) os.put(t.missing(r, c) ? 1 : 0);
  }
}

inline TimeTable read_table(std::istream& is) {
  binio::expect_magic(is, kTableMagic);
  const auto rows = binio::read_u64(is, "row count");
  const auto cols = binio::read_u32(is, "column count");
  std::vector<ColumnDesc> cs;
  for (std::uint32_t c = 0; c < cols; ++c) {
    auto name = binio::read_string(is);
    auto unit = binio::read_string(is);
    cs.push_back({std::move(name), std::move(unit)});
  }
  TimeTable t(std::move(cs));
  std::vector<double> v(cols);
  std::vector<std::uint8_t> m(cols);
  for (std::uint64_t r = 0; r < rows; ++r) {
    const auto ts = binio::read_i64(is, "timestamp");
    binio::read_f64s(is, v, "row values");
    is.read(reinterpret_cast<char*>(m.data()), cols);
    if (!is) fail(ErrorKind::Parse, "truncated missing mask");
    t.append_row(ts, v, m);
  }
  t.validate();
  return t;
}

inline void save_table(const std::string& path, const TimeTable& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot write " + path);
  write_table(os, t);
  if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

inline TimeTable load_table(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot read " + path);
  return read_table(is);
}

}  // namespace kpcast
