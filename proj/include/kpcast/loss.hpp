#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kpcast/dataset.hpp"
#include "kpcast/error.hpp"
#include "kpcast/model.hpp"
#include "kpcast/nnkernel.hpp"
#include "kpcast/tape.hpp"

namespace kpcast::loss {

using nn::Tape;
using nn::Var;

inline constexpr double kLogEps = 1e-12;

enum class WassersteinVariant { Sum, Mean };

struct LossConfig {
  double alpha = 0.8;
  double lambda_align = 0.1;
  double lambda_l2 = 1e-4;
  WassersteinVariant variant = WassersteinVariant::Mean;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::Config, "alpha must lie in [0, 1]");
    if (!(lambda_align >= 0.0)) fail(ErrorKind::Config, "lambda_align must be >= 0");
    if (!(lambda_l2 >= 0.0)) fail(ErrorKind::Config, "lambda_l2 must be >= 0");
  }
};

/// Probability vector over K ordered bins.
struct DistVector {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }

  static DistVector one_hot(std::size_t k, std::size_t index) {
    DistVector d{std::vector<double>(k, 0.0)};
    d.probs.at(index) = 1.0;
    return d;
  }
  static DistVector uniform(std::size_t k) { return DistVector{std::vector<double>(k, 1.0 / static_cast<double>(k))}; }
};

inline void validate_distribution(std::span<const double> p, const char* what = "distribution") {
  if (p.empty()) fail(ErrorKind::Domain, std::string(what) + " is empty");
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorKind::Domain, std::string(what) + " has a negative or non-finite entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) fail(ErrorKind::Domain, std::string(what) + " sums to " + std::to_string(s));
}

namespace detail {

/// Σ_{k<K} |F_p(k) − F_q(k)|. The k = K term is zero for normalized inputs and is omitted.
inline double cdf_l1(std::span<const double> p, std::span<const double> q) {
  double fp = 0.0, fq = 0.0, acc = 0.0;
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    fp += p[k];
    fq += q[k];
    acc += std::abs(fp - fq);
  }
  return acc;
}

/// d cdf_l1 / d p_i = Σ_{k >= i, k < K-1} sign(F_p(k) − F_q(k)); written into `out` (size K).
inline void cdf_l1_grad(std::span<const double> p, std::span<const double> q, std::span<double> out) {
  const std::size_t K = p.size();
  std::vector<double> sign(K, 0.0);
  double fp = 0.0, fq = 0.0;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    fp += p[k];
    fq += q[k];
    const double d = fp - fq;
    sign[k] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  }
  double suffix = 0.0;
  for (std::size_t i = K; i-- > 0;) {
    suffix += sign[i];
    out[i] = suffix;
  }
}

inline double variant_scale(WassersteinVariant v, std::size_t K) {
  return v == WassersteinVariant::Mean ? 1.0 / static_cast<double>(K) : 1.0;
}

}  // namespace detail

/// Discrete 1-D Wasserstein distance from CDF differences.
inline double wasserstein_1d(const DistVector& p, const DistVector& q, WassersteinVariant variant) {
  if (p.size() != q.size())
    fail(ErrorKind::Dimension, "wasserstein_1d: lengths differ (" + std::to_string(p.size()) + " vs " +
                                   std::to_string(q.size()) + ")");
  validate_distribution(p.probs, "p");
  validate_distribution(q.probs, "q");
  return detail::cdf_l1(p.probs, q.probs) * detail::variant_scale(variant, p.size());
}

inline double cross_entropy(const DistVector& d, std::size_t target) {
  if (target >= d.size()) fail(ErrorKind::Dimension, "target class out of range");
  return -std::log(d.probs[target] + kLogEps);
}

inline double clamp_prob(double p) { return std::min(std::max(p, kLogEps), 1.0 - kLogEps); }

inline double binary_cross_entropy(double p_high, int label) {
  if (!(p_high >= 0.0 && p_high <= 1.0)) fail(ErrorKind::Domain, "probability outside [0, 1]");
  const double p = clamp_prob(p_high);
  const double y = label ? 1.0 : 0.0;
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

/// Mean of the three pairwise distances.
inline double alignment_loss(const DistVector& a, const DistVector& b, const DistVector& c, WassersteinVariant v) {
  return (wasserstein_1d(a, b, v) + wasserstein_1d(a, c, v) + wasserstein_1d(b, c, v)) / 3.0;
}

inline double combined_class_loss(const DistVector& d, std::size_t target, const LossConfig& cfg) {
  return cfg.alpha * cross_entropy(d, target) +
         (1.0 - cfg.alpha) * wasserstein_1d(d, DistVector::one_hot(d.size(), target), cfg.variant);
}

// ---------------------------------------------------------------------------
// Tape ops (row-batched: one distribution per row, loss averaged over rows)

/// Mean over rows of −log(P[r, target_r] + ε).
inline Var cross_entropy_rows(Var P, const std::vector<int>& targets) {
  const Tensor& X = P.value();
  if (X.rows() != targets.size() || X.rows() == 0) fail(ErrorKind::Dimension, "cross_entropy_rows: target count mismatch");
  const double inv_n = 1.0 / static_cast<double>(X.rows());
  double acc = 0.0;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= X.cols())
      fail(ErrorKind::Dimension, "cross_entropy_rows: target out of range");
    acc += -std::log(X(r, static_cast<std::size_t>(targets[r])) + kLogEps);
  }
  return P.tape->record(Tensor::scalar(acc * inv_n), {P}, [P, targets, inv_n](Tape& t, const Tensor& g) {
    Tensor gp(P.value().shape, 0.0);
    for (std::size_t r = 0; r < gp.rows(); ++r) {
      const auto c = static_cast<std::size_t>(targets[r]);
      gp(r, c) = -g[0] * inv_n / (P.value()(r, c) + kLogEps);
    }
    t.accumulate(P, gp);
  });
}

/// Mean over rows of W(P_r, Q_r). Both operands may be tracked.
inline Var wasserstein_rows(Var P, Var Q, WassersteinVariant variant) {
  const Tensor& A = P.value();
  const Tensor& B = Q.value();
  if (!A.same_shape(B) || A.rank() != 2 || A.rows() == 0)
    fail(ErrorKind::Dimension, "wasserstein_rows: shapes " + A.shape_str() + " vs " + B.shape_str());
  const double s = detail::variant_scale(variant, A.cols()) / static_cast<double>(A.rows());
  double acc = 0.0;
  for (std::size_t r = 0; r < A.rows(); ++r) acc += detail::cdf_l1(A.row_span(r), B.row_span(r));
  return P.tape->record(Tensor::scalar(acc * s), {P, Q}, [P, Q, s](Tape& t, const Tensor& g) {
    const Tensor& A = P.value();
    Tensor ga(A.shape, 0.0);
    for (std::size_t r = 0; r < A.rows(); ++r) detail::cdf_l1_grad(A.row_span(r), Q.value().row_span(r), ga.row_span(r));
    for (auto& v : ga.data) v *= s * g[0];
    t.accumulate(P, ga);
    if (t.requires_grad(Q)) {
      for (auto& v : ga.data) v = -v;
      t.accumulate(Q, ga);
    }
  });
}

inline Tensor one_hot_rows(const std::vector<int>& targets, std::size_t k) {
  Tensor t = Tensor::matrix(targets.size(), k);
  for (std::size_t r = 0; r < targets.size(); ++r) t(r, static_cast<std::size_t>(targets[r])) = 1.0;
  return t;
}

/// Mean over rows of the ε-clamped binary cross-entropy; `p` is [n x 1].
inline Var bce_rows(Var p, const std::vector<int>& labels) {
  const Tensor& X = p.value();
  if (X.size() != labels.size() || labels.empty()) fail(ErrorKind::Dimension, "bce_rows: label count mismatch");
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) acc += binary_cross_entropy(X[i], labels[i]);
  return p.tape->record(Tensor::scalar(acc * inv_n), {p}, [p, labels, inv_n](Tape& t, const Tensor& g) {
    Tensor gp(p.value().shape, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double x = p.value()[i];
      if (x <= kLogEps || x >= 1.0 - kLogEps) continue;
      const double y = labels[i] ? 1.0 : 0.0;
      gp[i] = g[0] * inv_n * (-y / x + (1.0 - y) / (1.0 - x));
    }
    t.accumulate(p, gp);
  });
}

/// Mean pairwise distance between three [1 x K] distributions.
inline Var alignment_loss(Var a, Var b, Var c, WassersteinVariant v) {
  const Var ab = wasserstein_rows(a, b, v), ac = wasserstein_rows(a, c, v), bc = wasserstein_rows(b, c, v);
  return nn::weighted_sum({ab, ac, bc}, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
}

// ---------------------------------------------------------------------------
// Total objective

/// Weighted contributions; their sum in declaration order is `total`. `align_distance` is the
/// unscaled mean pairwise modality distance.
struct LossBreakdown {
  double total = 0.0;
  double ce28 = 0.0, ce10 = 0.0, ce3 = 0.0;
  double bce = 0.0;
  double wass28 = 0.0, wass10 = 0.0, wass3 = 0.0;
  double align = 0.0;
  double l2 = 0.0;
  double align_distance = 0.0;

  double sum_of_terms() const { return ce28 + ce10 + ce3 + wass28 + wass10 + wass3 + bce + align + l2; }

  LossBreakdown& operator+=(const LossBreakdown& o) {
    total += o.total;
    ce28 += o.ce28;
    ce10 += o.ce10;
    ce3 += o.ce3;
    bce += o.bce;
    wass28 += o.wass28;
    wass10 += o.wass10;
    wass3 += o.wass3;
    align += o.align;
    l2 += o.l2;
    align_distance += o.align_distance;
    return *this;
  }

  LossBreakdown scaled(double s) const {
    LossBreakdown b = *this;
    for (double* f : {&b.total, &b.ce28, &b.ce10, &b.ce3, &b.bce, &b.wass28, &b.wass10, &b.wass3, &b.align, &b.l2,
                      &b.align_distance})
      *f *= s;
    return b;
  }
};

struct LossResult {
  Var total;
  LossBreakdown breakdown;
};

/// Classification heads: mean over output steps of α·CE + (1−α)·W against the one-hot target;
/// plus BCE on the high-Kp head, λ_align·alignment and the L2 penalty.
inline LossResult total_loss(Tape& tape, const model::ForwardVars& out, const dataset::WindowSample& s,
                             const nn::ParamStore& ps, const LossConfig& cfg) {
  cfg.validate();
  const Var ce28 = cross_entropy_rows(out.dist28, s.labels28);
  const Var ce10 = cross_entropy_rows(out.dist10, s.labels10);
  const Var ce3 = cross_entropy_rows(out.dist3, s.labels3);
  const Var w28 = wasserstein_rows(out.dist28, tape.constant(one_hot_rows(s.labels28, 28)), cfg.variant);
  const Var w10 = wasserstein_rows(out.dist10, tape.constant(one_hot_rows(s.labels10, 10)), cfg.variant);
  const Var w3 = wasserstein_rows(out.dist3, tape.constant(one_hot_rows(s.labels3, 3)), cfg.variant);
  const Var bce = bce_rows(out.p_high, s.label_high);
  const Var align = alignment_loss(out.align[0], out.align[1], out.align[2], cfg.variant);
  const Var l2 = nn::l2_penalty(nn::decayed_weights(tape, ps), cfg.lambda_l2);

  const double a = cfg.alpha, b = 1.0 - cfg.alpha;
  const std::vector<Var> terms = {ce28, ce10, ce3, w28, w10, w3, bce, align, l2};
  const std::vector<double> weights = {a, a, a, b, b, b, 1.0, cfg.lambda_align, 1.0};
  LossResult r;
  r.total = nn::weighted_sum(terms, weights);
  auto& bd = r.breakdown;
  bd.ce28 = a * ce28.value()[0];
  bd.ce10 = a * ce10.value()[0];
  bd.ce3 = a * ce3.value()[0];
  bd.wass28 = b * w28.value()[0];
  bd.wass10 = b * w10.value()[0];
  bd.wass3 = b * w3.value()[0];
  bd.bce = 1.0 * bce.value()[0];
  bd.align = cfg.lambda_align * align.value()[0];
  bd.l2 = 1.0 * l2.value()[0];
  bd.align_distance = align.value()[0];
  bd.total = r.total.value()[0];
  return r;
}

inline const char* breakdown_header() { return "epoch,batch,total,ce28,ce10,ce3,bce,wass28,wass10,wass3,align,l2"; }

inline void write_breakdown_row(std::ostream& os, std::size_t epoch, std::size_t batch, const LossBreakdown& b) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", epoch, batch,
                b.total, b.ce28, b.ce10, b.ce3, b.bce, b.wass28, b.wass10, b.wass3, b.align, b.l2);
  os << buf;
}

}  // namespace kpcast::loss
