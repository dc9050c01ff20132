#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "kpcast/binio.hpp"
#include "kpcast/error.hpp"
#include "kpcast/ingest.hpp"
#include "kpcast/table.hpp"
#include "kpcast/tensor.hpp"
#include "kpcast/time.hpp"

namespace kpcast::dataset {

inline constexpr int kClasses28 = 28;
inline constexpr int kClasses10 = 10;
inline constexpr int kClasses3 = 3;

struct WindowConfig {
  std::size_t input_steps = 40;
  std::size_t output_steps = 24;
  std::size_t stride_train = 1;
  std::size_t stride_daily = 8;

  void validate() const {
    if (input_steps == 0) fail(ErrorKind::Config, "input_steps must be > 0");
    if (output_steps != 24 && output_steps != 40)
      fail(ErrorKind::Config, "output_steps must be 24 or 40, got " + std::to_string(output_steps));
    if (stride_train < 1 || stride_daily < 1) fail(ErrorKind::Config, "strides must be >= 1");
  }
};

struct LabelConfig {
  double high_kp_threshold = 7.0;
  double quiet_upper = 4.0;
  double storm_lower = 5.0;

  void validate() const {
    if (!(quiet_upper > 0.0 && quiet_upper <= storm_lower && storm_lower <= 9.0))
      fail(ErrorKind::Config, "three-class bounds must satisfy 0 < quiet_upper <= storm_lower <= 9");
    if (!(high_kp_threshold > 0.0 && high_kp_threshold <= 9.0))
      fail(ErrorKind::Config, "high_kp_threshold must lie in (0, 9]");
  }
};

/// Index on the thirds scale, 0..27.
inline int kp_thirds(double kp) { return static_cast<int>(std::clamp(std::round(kp * 3.0), 0.0, 27.0)); }

inline int label28(double kp) { return kp_thirds(kp); }
inline int label10(double kp) { return std::min(kp_thirds(kp) / 3, 9); }
inline int label3(double kp, const LabelConfig& lc) {
  const double k = kp_thirds(kp) / 3.0;
  if (k < lc.quiet_upper) return 0;
  if (k < lc.storm_lower) return 1;
  return 2;
}
inline int label_high(double kp, const LabelConfig& lc) { return kp_thirds(kp) / 3.0 >= lc.high_kp_threshold ? 1 : 0; }

/// One training or forecast instance.
///
/// `kp_in` holds raw Kp until the sample is transformed, after which it holds kp/9 and
/// `transformed` is set. `kp_out` always holds raw Kp snapped to thirds.
struct WindowSample {
  UtcSeconds t0 = 0;
  UtcSeconds step = kThreeHours;
  Tensor img_in;
  Tensor sat_in;
  Tensor kp_in;
  std::vector<int> labels28;
  std::vector<int> labels10;
  std::vector<int> labels3;
  std::vector<int> label_high;
  std::vector<double> kp_out;
  bool transformed = false;

  std::size_t input_steps() const { return kp_in.rows(); }
  std::size_t output_steps() const { return kp_out.size(); }
  UtcSeconds input_end() const { return t0 + static_cast<UtcSeconds>(input_steps()) * step; }
  UtcSeconds output_end() const { return input_end() + static_cast<UtcSeconds>(output_steps()) * step; }

  double input_kp(std::size_t i) const {
    if (!transformed) return kp_in[i];
    const double t = std::round(kp_in[i] * 27.0);
    return std::abs(kp_in[i] * 27.0 - t) <= 1e-9 ? t / 3.0 : kp_in[i] * 9.0;
  }
};

/// Which columns feed which modality.
struct ColumnLayout {
  std::vector<std::size_t> image;
  std::vector<std::size_t> satellite;
  std::size_t kp = 0;
};

inline bool is_image_column(const std::string& name) {
  return name.rfind("img_", 0) == 0 || name.rfind("pc_", 0) == 0;
}

/// kp column by name; image columns by `img_`/`pc_` prefix; everything else except the temporal
/// markers is a satellite feature.
inline ColumnLayout infer_layout(const TimeTable& t) {
  ColumnLayout l;
  bool have_kp = false;
  for (std::size_t c = 0; c < t.cols(); ++c) {
    const auto& n = t.columns()[c].name;
    if (n == ingest::kKpColumn) {
      l.kp = c;
      have_kp = true;
    } else if (is_image_column(n)) {
      l.image.push_back(c);
    } else if (!ingest::is_temporal_column(n)) {
      l.satellite.push_back(c);
    }
  }
  if (!have_kp) fail(ErrorKind::Schema, "table has no '" + std::string(ingest::kKpColumn) + "' column");
  return l;
}

/// Three-hour bucket means (missing cells skipped); rows still holding a missing cell are dropped.
inline TimeTable resample_3h_mean(const TimeTable& table) {
  if (table.empty()) fail(ErrorKind::EmptyInput, "cannot resample an empty table");
  table.validate();
  TimeTable out(table.columns());
  const std::size_t nc = table.cols();
  std::vector<double> sum(nc), mean(nc);
  std::vector<std::size_t> n(nc);
  std::vector<std::uint8_t> miss(nc);
  std::size_t r = 0;
  while (r < table.rows()) {
    const UtcSeconds bucket = floor_to(table.timestamp(r), kThreeHours);
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(n.begin(), n.end(), 0);
    for (; r < table.rows() && floor_to(table.timestamp(r), kThreeHours) == bucket; ++r)
      for (std::size_t c = 0; c < nc; ++c)
        if (!table.missing(r, c)) {
          sum[c] += table.value(r, c);
          ++n[c];
        }
    bool complete = true;
    for (std::size_t c = 0; c < nc; ++c) {
      if (n[c] == 0) {
        complete = false;
        break;
      }
      mean[c] = sum[c] / static_cast<double>(n[c]);
      miss[c] = 0;
    }
    if (complete) out.append_row(bucket, mean, miss);
  }
  return out;
}

struct SplitTables {
  TimeTable train;
  TimeTable test;
};

inline SplitTables split_by_date(const TimeTable& table, UtcSeconds train_end, UtcSeconds test_start,
                                 UtcSeconds test_end) {
  if (test_start > test_end) fail(ErrorKind::Config, "test_start is after test_end");
  if (train_end > test_start) fail(ErrorKind::Config, "train_end is after test_start (train/test would overlap)");
  return {table.slice_time(std::numeric_limits<UtcSeconds>::min(), train_end), table.slice_time(test_start, test_end)};
}

inline std::size_t expected_window_count(std::size_t rows, std::size_t in, std::size_t out, std::size_t stride) {
  if (rows < in + out) return 0;
  return (rows - in - out) / stride + 1;
}

/// Builds the sample whose first input row is `start`. Does not check spacing.
inline WindowSample build_sample(const TimeTable& table, std::size_t start, std::size_t in, std::size_t out,
                                 const LabelConfig& lcfg, const ColumnLayout& layout) {
  WindowSample s;
  s.t0 = table.timestamp(start);
  s.step = table.rows() > 1 ? table.timestamp(1) - table.timestamp(0) : kThreeHours;
  s.img_in = Tensor::matrix(in, layout.image.size());
  s.sat_in = Tensor::matrix(in, layout.satellite.size());
  s.kp_in = Tensor::matrix(in, 1);
  for (std::size_t i = 0; i < in; ++i) {
    const std::size_t r = start + i;
    for (std::size_t j = 0; j < layout.image.size(); ++j) s.img_in(i, j) = table.value(r, layout.image[j]);
    for (std::size_t j = 0; j < layout.satellite.size(); ++j) s.sat_in(i, j) = table.value(r, layout.satellite[j]);
    s.kp_in(i, 0) = table.value(r, layout.kp);
  }
  for (std::size_t o = 0; o < out; ++o) {
    const double kp = kp_thirds(table.value(start + in + o, layout.kp)) / 3.0;
    s.kp_out.push_back(kp);
    s.labels28.push_back(label28(kp));
    s.labels10.push_back(label10(kp));
    s.labels3.push_back(label3(kp, lcfg));
    s.label_high.push_back(label_high(kp, lcfg));
  }
  return s;
}

/// True when rows [start, start+len) are evenly spaced by `step`.
inline bool rows_contiguous(const TimeTable& table, std::size_t start, std::size_t len, UtcSeconds step) {
  for (std::size_t i = start + 1; i < start + len; ++i)
    if (table.timestamp(i) - table.timestamp(i - 1) != step) return false;
  return true;
}

/// Sliding windows with the given stride. Windows that straddle a time gap are skipped.
inline std::vector<WindowSample> make_windows(const TimeTable& table, const WindowConfig& wcfg,
                                              const LabelConfig& lcfg, std::size_t stride,
                                              const ColumnLayout& layout) {
  lcfg.validate();
  if (wcfg.input_steps == 0) fail(ErrorKind::Config, "input_steps must be > 0");
  if (stride == 0) fail(ErrorKind::Config, "stride must be >= 1");
  const std::size_t need = wcfg.input_steps + wcfg.output_steps;
  if (table.rows() < need)
    fail(ErrorKind::WindowUnderflow, "need at least " + std::to_string(need) + " rows, table has " +
                                         std::to_string(table.rows()));
  const UtcSeconds step = kThreeHours;
  std::vector<WindowSample> out;
  out.reserve(expected_window_count(table.rows(), wcfg.input_steps, wcfg.output_steps, stride));
  for (std::size_t start = 0; start + need <= table.rows(); start += stride) {
    if (!rows_contiguous(table, start, need, step)) continue;
    auto s = build_sample(table, start, wcfg.input_steps, wcfg.output_steps, lcfg, layout);
    s.step = step;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<WindowSample> make_windows(const TimeTable& table, const WindowConfig& wcfg,
                                              const LabelConfig& lcfg) {
  wcfg.validate();
  return make_windows(table, wcfg, lcfg, wcfg.stride_train, infer_layout(table));
}

enum class BalanceKeyMode { MaxInput, LastInput, MaxOutput };

/// Balancing class of a window on the thirds scale.
inline int balance_key(const WindowSample& s, BalanceKeyMode mode = BalanceKeyMode::MaxInput) {
  switch (mode) {
    case BalanceKeyMode::MaxInput: {
      int k = 0;
      for (std::size_t i = 0; i < s.input_steps(); ++i) k = std::max(k, kp_thirds(s.input_kp(i)));
      return k;
    }
    case BalanceKeyMode::LastInput:
      return kp_thirds(s.input_kp(s.input_steps() - 1));
    case BalanceKeyMode::MaxOutput:
      return s.labels28.empty() ? 0 : *std::max_element(s.labels28.begin(), s.labels28.end());
  }
  return 0;
}

/// Oversamples every balancing class up to the size of the most frequent one, then shuffles.
/// Returns indices into `samples` so callers can avoid copying large blocks.
inline std::vector<std::size_t> expand_balance_indices(const std::vector<WindowSample>& samples, std::uint64_t seed,
                                                       BalanceKeyMode mode = BalanceKeyMode::MaxInput) {
  if (samples.empty()) fail(ErrorKind::EmptyInput, "expand_balance needs at least one sample");
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < samples.size(); ++i) members[balance_key(samples[i], mode)].push_back(i);
  std::size_t target = 0;
  for (const auto& [k, v] : members) target = std::max(target, v.size());
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> idx;
  idx.reserve(target * members.size());
  for (const auto& [k, v] : members) {
    idx.insert(idx.end(), v.begin(), v.end());
    std::uniform_int_distribution<std::size_t> pick(0, v.size() - 1);
    for (std::size_t extra = v.size(); extra < target; ++extra) idx.push_back(v[pick(rng)]);
  }
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

inline std::vector<WindowSample> expand_balance(const std::vector<WindowSample>& samples, std::uint64_t seed,
                                                BalanceKeyMode mode = BalanceKeyMode::MaxInput) {
  std::vector<WindowSample> out;
  for (auto i : expand_balance_indices(samples, seed, mode)) out.push_back(samples[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Sample shards
//
// A shard directory holds one record file per distinct window (w_<t0>.kps) and `index.txt`, which
// lists record file names in training order (duplicates allowed). Record layout, little-endian:
//   "KPSMPL01"
//   i64 t0, i64 step, u32 input_steps, u32 output_steps, u32 img_width, u32 sat_width, u32 transformed
//   f64 img_in[input_steps*img_width], f64 sat_in[input_steps*sat_width], f64 kp_in[input_steps]
//   f64 labels28[out], f64 labels10[out], f64 labels3[out], f64 label_high[out], f64 kp_out[out]

inline constexpr std::string_view kSampleMagic = "KPSMPL01";

inline void write_sample(std::ostream& os, const WindowSample& s) {
  binio::write_magic(os, kSampleMagic);
  binio::write_i64(os, s.t0);
  binio::write_i64(os, s.step);
  binio::write_u32(os, static_cast<std::uint32_t>(s.input_steps()));
  binio::write_u32(os, static_cast<std::uint32_t>(s.output_steps()));
  binio::write_u32(os, static_cast<std::uint32_t>(s.img_in.cols()));
  binio::write_u32(os, static_cast<std::uint32_t>(s.sat_in.cols()));
  binio::write_u32(os, s.transformed ? 1 : 0);
  binio::write_f64s(os, s.img_in.data);
  binio::write_f64s(os, s.sat_in.data);
  binio::write_f64s(os, s.kp_in.data);
  for (const auto* block : {&s.labels28, &s.labels10, &s.labels3, &s.label_high})
    for (int v : *block) binio::write_f64(os, static_cast<double>(v));
  binio::write_f64s(os, s.kp_out);
}

inline WindowSample read_sample(std::istream& is) {
  binio::expect_magic(is, kSampleMagic);
  WindowSample s;
  s.t0 = binio::read_i64(is, "t0");
  s.step = binio::read_i64(is, "step");
  const auto in = binio::read_u32(is, "input_steps");
  const auto out = binio::read_u32(is, "output_steps");
  const auto iw = binio::read_u32(is, "img width");
  const auto sw = binio::read_u32(is, "sat width");
  s.transformed = binio::read_u32(is, "flags") != 0;
  s.img_in = Tensor::matrix(in, iw);
  s.sat_in = Tensor::matrix(in, sw);
  s.kp_in = Tensor::matrix(in, 1);
  binio::read_f64s(is, s.img_in.data);
  binio::read_f64s(is, s.sat_in.data);
  binio::read_f64s(is, s.kp_in.data);
  for (auto* block : {&s.labels28, &s.labels10, &s.labels3, &s.label_high}) {
    block->resize(out);
    for (auto& v : *block) v = static_cast<int>(binio::read_f64(is, "label"));
  }
  s.kp_out.resize(out);
  binio::read_f64s(is, s.kp_out);
  return s;
}

inline std::string sample_file_name(const WindowSample& s) { return "w_" + std::to_string(s.t0) + ".kps"; }

/// Writes `order` (indices into `samples`) as a shard directory.
inline void write_shards(const std::filesystem::path& dir, const std::vector<WindowSample>& samples,
                         const std::vector<std::size_t>& order) {
  std::filesystem::create_directories(dir);
  std::vector<bool> written(samples.size(), false);
  std::ofstream index(dir / "index.txt");
  if (!index) fail(ErrorKind::Io, "cannot write " + (dir / "index.txt").string());
  index << "# " << kSampleMagic << '\n';
  for (auto i : order) {
    const auto name = sample_file_name(samples.at(i));
    if (!written[i]) {
      std::ofstream os(dir / name, std::ios::binary);
      if (!os) fail(ErrorKind::Io, "cannot write " + (dir / name).string());
      write_sample(os, samples[i]);
      written[i] = true;
    }
    index << name << '\n';
  }
}

inline std::vector<WindowSample> read_shards(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.txt");
  if (!index) fail(ErrorKind::Io, "cannot read " + (dir / "index.txt").string());
  std::map<std::string, WindowSample> cache;
  std::vector<WindowSample> out;
  std::string line;
  while (std::getline(index, line)) {
    if (ingest::is_skippable(line)) continue;
    const std::string name(ingest::trim(line));
    auto it = cache.find(name);
    if (it == cache.end()) {
      std::ifstream is(dir / name, std::ios::binary);
      if (!is) fail(ErrorKind::Io, "cannot read shard record " + name);
      it = cache.emplace(name, read_sample(is)).first;
    }
    out.push_back(it->second);
  }
  return out;
}

}  // namespace kpcast::dataset
