#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "kpcast/binio.hpp"
#include "kpcast/dataset.hpp"
#include "kpcast/error.hpp"
#include "kpcast/table.hpp"
#include "kpcast/tensor.hpp"

namespace kpcast::features {

inline constexpr double kKpScale = 9.0;

/// Readings within 0.01 of a third are taken as that third, so 4.333 maps to 13/27.
inline double normalize_kp(double kp) {
  const double t = std::round(kp * 3.0);
  if (std::abs(kp * 3.0 - t) <= 0.03) return t / (3.0 * kKpScale);
  return kp / kKpScale;
}

/// Inverse of normalize_kp; exact on the 28 thirds values.
inline double denormalize_kp(double x) {
  const double t = std::round(x * 3.0 * kKpScale);
  if (std::abs(x * 3.0 * kKpScale - t) <= 1e-9) return t / 3.0;
  return x * kKpScale;
}

/// Zero mean, unit population std. Constant rows map to zeros.
inline std::vector<double> row_standardize(std::span<const double> v) {
  if (v.size() < 2) fail(ErrorKind::Dimension, "row_standardize needs at least 2 entries");
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(v.size(), 0.0);
  if (sd <= 1e-300 * std::max(1.0, std::abs(mean)) || !(sd > 0.0)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) / sd;
  return out;
}

/// Identifies the rows a transform was fitted on.
struct Fingerprint {
  UtcSeconds first = 0;
  UtcSeconds last = 0;
  std::uint64_t rows = 0;
  std::uint64_t hash = 0;

  bool operator==(const Fingerprint&) const = default;
};

inline Fingerprint fingerprint(std::span<const UtcSeconds> ts) {
  Fingerprint f;
  f.rows = ts.size();
  if (!ts.empty()) {
    f.first = ts.front();
    f.last = ts.back();
  }
  std::uint64_t h = 1469598103934665603ull;
  for (auto t : ts) {
    auto u = static_cast<std::uint64_t>(t);
    for (int b = 0; b < 8; ++b) {
      h ^= (u >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  f.hash = h;
  return f;
}

struct Pca {
  Tensor components;  // k x dims, orthonormal rows
  Tensor mean;        // dims
  std::vector<double> explained_variance;  // k, sample variance (n-1)

  std::size_t k() const { return components.rows(); }
  std::size_t dims() const { return mean.size(); }
};

inline std::size_t feasible_pca_rank(std::size_t rows, std::size_t dims, std::size_t requested) {
  return std::min({requested, rows, dims});
}

/// Top-k right singular vectors of the centered matrix. Each component is sign-fixed so its
/// largest-magnitude entry is positive.
inline Pca fit_pca(const Tensor& rows, std::size_t k) {
  const std::size_t n = rows.rows(), d = rows.cols();
  if (n < 2) fail(ErrorKind::Dimension, "fit_pca needs at least 2 rows");
  if (k == 0 || k > std::min(n, d))
    fail(ErrorKind::Rank, "k=" + std::to_string(k) + " exceeds min(rows, dims)=" + std::to_string(std::min(n, d)));
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> x(rows.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mu;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const auto& v = svd.matrixV();

  Pca p;
  p.mean = Tensor::vector(std::vector<double>(mu.data(), mu.data() + d));
  p.components = Tensor::matrix(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    Eigen::Index arg = 0;
    v.col(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff(&arg);
    const double sign = v(arg, static_cast<Eigen::Index>(i)) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j)
      p.components(i, j) = sign * v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
    const double s = i < static_cast<std::size_t>(sv.size()) ? sv(static_cast<Eigen::Index>(i)) : 0.0;
    p.explained_variance.push_back(s * s / static_cast<double>(n - 1));
  }
  return p;
}

inline Tensor apply_pca(const Pca& p, const Tensor& rows) {
  if (rows.cols() != p.dims())
    fail(ErrorKind::Dimension, "apply_pca: input width " + std::to_string(rows.cols()) + " != fitted width " +
                                   std::to_string(p.dims()));
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto n = static_cast<Eigen::Index>(rows.rows()), d = static_cast<Eigen::Index>(p.dims()),
             k = static_cast<Eigen::Index>(p.k());
  Eigen::Map<const RowMat> x(rows.data.data(), n, d);
  Eigen::Map<const Eigen::RowVectorXd> mu(p.mean.data.data(), d);
  Eigen::Map<const RowMat> w(p.components.data.data(), k, d);
  Tensor out = Tensor::matrix(rows.rows(), p.k());
  Eigen::Map<RowMat> y(out.data.data(), n, k);
  y.noalias() = (x.rowwise() - mu) * w.transpose();
  return out;
}

struct ColumnNorm {
  std::vector<std::string> names;
  std::vector<double> means;
  std::vector<double> stds;  // population std; 0 marks a zero-variance column
  std::vector<std::uint8_t> zero_variance;
};

inline ColumnNorm fit_column_norm(const TimeTable& train, const std::vector<std::size_t>& columns) {
  if (train.rows() == 0) fail(ErrorKind::EmptyInput, "cannot fit column normalization on an empty table");
  ColumnNorm cn;
  for (auto c : columns) {
    double mean = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) mean += train.value(r, c);
    mean /= static_cast<double>(train.rows());
    double var = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) var += (train.value(r, c) - mean) * (train.value(r, c) - mean);
    const double sd = std::sqrt(var / static_cast<double>(train.rows()));
    const bool zero = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
    cn.names.push_back(train.columns()[c].name);
    cn.means.push_back(mean);
    cn.stds.push_back(zero ? 0.0 : sd);
    cn.zero_variance.push_back(zero ? 1 : 0);
  }
  return cn;
}

/// Fits every satellite column of the layout inferred from `train`.
inline ColumnNorm fit_column_norm(const TimeTable& train) {
  return fit_column_norm(train, dataset::infer_layout(train).satellite);
}

inline double apply_norm(const ColumnNorm& cn, std::size_t j, double v) {
  return cn.zero_variance[j] ? 0.0 : (v - cn.means[j]) / cn.stds[j];
}

inline TimeTable apply_column_norm(const ColumnNorm& cn, const TimeTable& table) {
  TimeTable out = table;
  for (std::size_t j = 0; j < cn.names.size(); ++j) {
    const auto c = table.find_column(cn.names[j]);
    if (!c) fail(ErrorKind::Schema, "column '" + cn.names[j] + "' missing from table");
    for (std::size_t r = 0; r < out.rows(); ++r) out.value(r, *c) = apply_norm(cn, j, table.value(r, *c));
  }
  return out;
}

/// All statistics the model inputs depend on, fitted on training rows only.
struct FeatureTransform {
  Pca pca;
  ColumnNorm columns;
  std::vector<std::string> image_columns;
  double kp_scale = kKpScale;
  Fingerprint fitted_on;
};

/// Row-standardizes then projects raw image-feature rows.
inline Tensor transform_image_rows(const FeatureTransform& ft, const Tensor& raw) {
  Tensor std_rows = Tensor::matrix(raw.rows(), raw.cols());
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    const auto z = row_standardize(raw.row_span(r));
    std::copy(z.begin(), z.end(), std_rows.row_span(r).begin());
  }
  return apply_pca(ft.pca, std_rows);
}

inline Tensor image_block(const TimeTable& t, const std::vector<std::size_t>& cols) {
  Tensor m = Tensor::matrix(t.rows(), cols.size());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t j = 0; j < cols.size(); ++j) m(r, j) = t.value(r, cols[j]);
  return m;
}

/// Fits on `train`. The PCA rank is reduced to what the row count supports, with a warning.
inline FeatureTransform fit_transforms(const TimeTable& train, std::size_t pca_k = 512,
                                       std::ostream* log = &std::cerr) {
  if (train.rows() < 2) fail(ErrorKind::EmptyInput, "need at least 2 training rows to fit transforms");
  const auto layout = dataset::infer_layout(train);
  FeatureTransform ft;
  ft.fitted_on = fingerprint(train.timestamps());
  for (auto c : layout.image) ft.image_columns.push_back(train.columns()[c].name);
  ft.columns = fit_column_norm(train, layout.satellite);
  if (!layout.image.empty()) {
    const Tensor raw = image_block(train, layout.image);
    Tensor std_rows = Tensor::matrix(raw.rows(), raw.cols());
    for (std::size_t r = 0; r < raw.rows(); ++r) {
      const auto z = row_standardize(raw.row_span(r));
      std::copy(z.begin(), z.end(), std_rows.row_span(r).begin());
    }
    const std::size_t k = feasible_pca_rank(raw.rows(), raw.cols(), pca_k);
    if (k < pca_k && log)
      *log << "warning: PCA rank reduced from " << pca_k << " to " << k << " (" << raw.rows() << " training rows, "
           << raw.cols() << " dims)\n";
    ft.pca = fit_pca(std_rows, k);
  }
  return ft;
}

/// Raises a leakage error unless the transform was fitted strictly before `boundary`.
inline void check_fitted_before(const FeatureTransform& ft, UtcSeconds boundary) {
  if (ft.fitted_on.rows == 0) fail(ErrorKind::Leakage, "feature transform carries no training fingerprint");
  if (ft.fitted_on.last >= boundary)
    fail(ErrorKind::Leakage, "feature transform was fitted on rows up to " + format_iso8601(ft.fitted_on.last) +
                                 ", not before " + format_iso8601(boundary));
}

/// Maps a raw window sample into model space: image rows standardized and projected, satellite
/// columns z-scored, Kp divided by 9.
inline dataset::WindowSample transform_sample(const FeatureTransform& ft, const dataset::WindowSample& raw) {
  if (raw.transformed) fail(ErrorKind::Validation, "sample is already transformed");
  if (raw.sat_in.cols() != ft.columns.names.size())
    fail(ErrorKind::Dimension, "satellite block width " + std::to_string(raw.sat_in.cols()) + " != fitted " +
                                   std::to_string(ft.columns.names.size()));
  dataset::WindowSample s = raw;
  if (ft.pca.k() > 0) s.img_in = transform_image_rows(ft, raw.img_in);
  for (std::size_t r = 0; r < s.sat_in.rows(); ++r)
    for (std::size_t j = 0; j < s.sat_in.cols(); ++j) s.sat_in(r, j) = apply_norm(ft.columns, j, raw.sat_in(r, j));
  for (auto& v : s.kp_in.data) v = normalize_kp(v);
  s.transformed = true;
  return s;
}

// Serialized transform: "KPFTRN01", fingerprint (i64 first, i64 last, u64 rows, u64 hash), f64 kp_scale,
// u32 k, u32 dims, f64 mean[dims], f64 components[k*dims], f64 explained[k],
// u32 image column count + names, u32 satellite column count, then per column: name, f64 mean,
// f64 std, u8 zero_variance.
inline constexpr std::string_view kTransformMagic = "KPFTRN01";

inline void write_transform(std::ostream& os, const FeatureTransform& ft) {
  binio::write_magic(os, kTransformMagic);
  binio::write_i64(os, ft.fitted_on.first);
  binio::write_i64(os, ft.fitted_on.last);
  binio::write_u64(os, ft.fitted_on.rows);
  binio::write_u64(os, ft.fitted_on.hash);
  binio::write_f64(os, ft.kp_scale);
  binio::write_u32(os, static_cast<std::uint32_t>(ft.pca.k()));
  binio::write_u32(os, static_cast<std::uint32_t>(ft.pca.dims()));
  binio::write_f64s(os, ft.pca.mean.data);
  binio::write_f64s(os, ft.pca.components.data);
  binio::write_f64s(os, ft.pca.explained_variance);
  binio::write_u32(os, static_cast<std::uint32_t>(ft.image_columns.size()));
  for (const auto& n : ft.image_columns) binio::write_string(os, n);
  binio::write_u32(os, static_cast<std::uint32_t>(ft.columns.names.size()));
  for (std::size_t j = 0; j < ft.columns.names.size(); ++j) {
    binio::write_string(os, ft.columns.names[j]);
    binio::write_f64(os, ft.columns.means[j]);
    binio::write_f64(os, ft.columns.stds[j]);
    os.put(static_cast<char>(ft.columns.zero_variance[j]));
  }
}

inline FeatureTransform read_transform(std::istream& is) {
  binio::expect_magic(is, kTransformMagic);
  FeatureTransform ft;
  ft.fitted_on.first = binio::read_i64(is);
  ft.fitted_on.last = binio::read_i64(is);
  ft.fitted_on.rows = binio::read_u64(is);
  ft.fitted_on.hash = binio::read_u64(is);
  ft.kp_scale = binio::read_f64(is);
  if (ft.kp_scale != kKpScale) fail(ErrorKind::Parse, "transform file: unexpected Kp scale");
  const auto k = binio::read_u32(is, "k");
  const auto dims = binio::read_u32(is, "dims");
  ft.pca.mean = Tensor::vector(std::vector<double>(dims));
  ft.pca.components = Tensor::matrix(k, dims);
  ft.pca.explained_variance.resize(k);
  binio::read_f64s(is, ft.pca.mean.data);
  binio::read_f64s(is, ft.pca.components.data);
  binio::read_f64s(is, ft.pca.explained_variance);
  const auto ni = binio::read_u32(is, "image column count");
  for (std::uint32_t i = 0; i < ni; ++i) ft.image_columns.push_back(binio::read_string(is));
  const auto ns = binio::read_u32(is, "satellite column count");
  for (std::uint32_t j = 0; j < ns; ++j) {
    ft.columns.names.push_back(binio::read_string(is));
    ft.columns.means.push_back(binio::read_f64(is));
    ft.columns.stds.push_back(binio::read_f64(is));
    const int z = is.get();
    if (!is) fail(ErrorKind::Parse, "truncated transform file");
    ft.columns.zero_variance.push_back(static_cast<std::uint8_t>(z));
  }
  return ft;
}

inline void save_transform(const std::string& path, const FeatureTransform& ft) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot write " + path);
  write_transform(os, ft);
}

inline FeatureTransform load_transform(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot read " + path);
  return read_transform(is);
}

}  // namespace kpcast::features
