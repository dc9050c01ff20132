#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "kpcast/dataset.hpp"
#include "kpcast/error.hpp"
#include "kpcast/loss.hpp"
#include "kpcast/model.hpp"
#include "kpcast/tape.hpp"

namespace kpcast::train {

using nn::GradMap;
using nn::ParamStore;

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 3;
  double lr_floor = 1e-5;
  double val_fraction = 0.1;
  std::uint64_t seed = 42;

  void validate() const {
    if (!(lr > 0.0)) fail(ErrorKind::Config, "train.lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      fail(ErrorKind::Config, "train betas must lie in [0, 1)");
    if (!(eps > 0.0)) fail(ErrorKind::Config, "train.eps must be > 0");
    if (batch_size == 0) fail(ErrorKind::Config, "train.batch_size must be >= 1");
    if (patience < 1) fail(ErrorKind::Config, "train.patience must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail(ErrorKind::Config, "train.val_fraction must lie in (0, 1)");
    if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) fail(ErrorKind::Config, "train.plateau_factor must lie in (0, 1]");
    if (plateau_patience < 1) fail(ErrorKind::Config, "train.plateau_patience must be >= 1");
    if (lr_floor < 0.0) fail(ErrorKind::Config, "train.lr_floor must be >= 0");
  }
};

struct OptimizerState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam. Parameters without a gradient entry are left alone.
inline void adam_step(ParamStore& params, const GradMap& grads, OptimizerState& st, const TrainConfig& cfg,
                      double lr) {
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [path, p] : params.entries()) {
    auto git = grads.find(path);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (g.size() != p.value.size()) fail(ErrorKind::Dimension, "gradient shape mismatch for '" + path + "'");
    auto [mit, m_new] = st.m.try_emplace(path, Tensor(p.value.shape, 0.0));
    auto [vit, v_new] = st.v.try_emplace(path, Tensor(p.value.shape, 0.0));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p.value[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

inline void adam_step(ParamStore& params, const GradMap& grads, OptimizerState& st, const TrainConfig& cfg) {
  adam_step(params, grads, st, cfg, cfg.lr);
}

/// Tracks the best validation loss; `update` reports whether the caller should stop.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when `loss` improved on the best seen so far.
  bool update(double loss) {
    if (loss < best_) {
      best_ = loss;
      stalled_ = 0;
      return true;
    }
    ++stalled_;
    return false;
  }

  bool should_stop() const { return stalled_ >= patience_; }
  double best() const { return best_; }
  std::size_t stalled() const { return stalled_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t stalled_ = 0;
};

/// Multiplies the rate by `factor` after `patience` epochs without improvement, never below `floor`.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor, std::size_t patience, double floor)
      : lr_(lr), factor_(factor), patience_(patience), floor_(floor) {}

  double lr() const { return lr_; }

  void update(bool improved) {
    if (improved) {
      stalled_ = 0;
      return;
    }
    if (++stalled_ >= patience_) {
      lr_ = std::max(lr_ * factor_, std::min(floor_, lr_));
      stalled_ = 0;
    }
  }

 private:
  double lr_, factor_;
  std::size_t patience_;
  double floor_;
  std::size_t stalled_ = 0;
};

/// Chronological split: samples whose t0 falls in the last `val_fraction` of distinct start times
/// go to validation. Returns {train indices, val indices}, each in input order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> chronological_split(
    const std::vector<dataset::WindowSample>& samples, double val_fraction) {
  std::vector<UtcSeconds> starts;
  starts.reserve(samples.size());
  for (const auto& s : samples) starts.push_back(s.t0);
  std::sort(starts.begin(), starts.end());
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  std::size_t n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(starts.size())));
  if (n_val == 0 && starts.size() >= 2) n_val = 1;
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  if (n_val == 0) {
    out.first.resize(samples.size());
    std::iota(out.first.begin(), out.first.end(), std::size_t{0});
    return out;
  }
  const UtcSeconds cut = starts[starts.size() - n_val];
  for (std::size_t i = 0; i < samples.size(); ++i) (samples[i].t0 < cut ? out.first : out.second).push_back(i);
  return out;
}

/// Loss, gradients and breakdown for one sample.
struct SampleGrad {
  loss::LossBreakdown breakdown;
  GradMap grads;
};

inline SampleGrad sample_gradient(const ParamStore& ps, const dataset::WindowSample& s, const model::ModelConfig& mcfg,
                                  const loss::LossConfig& lcfg, std::mt19937_64& rng) {
  nn::Tape tape;
  const auto out = model::forward(tape, ps, s, mcfg, {nn::Mode::Training, &rng});
  const auto res = loss::total_loss(tape, out, s, ps, lcfg);
  tape.backward(res.total);
  return {res.breakdown, tape.named_grads()};
}

/// One Adam step on the mean gradient of `batch`. Reduction runs in batch order.
inline loss::LossBreakdown train_batch(ParamStore& ps, OptimizerState& st, const std::vector<const dataset::WindowSample*>& batch,
                                       const model::ModelConfig& mcfg, const loss::LossConfig& lcfg,
                                       const TrainConfig& tcfg, double lr, std::mt19937_64& rng) {
  if (batch.empty()) fail(ErrorKind::EmptyInput, "empty batch");
  GradMap sum;
  loss::LossBreakdown bd;
  for (const auto* s : batch) {
    auto sg = sample_gradient(ps, *s, mcfg, lcfg, rng);
    bd += sg.breakdown;
    for (auto& [path, g] : sg.grads) {
      auto [it, fresh] = sum.try_emplace(path, std::move(g));
      if (!fresh)
        for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& [path, g] : sum)
    for (auto& x : g.data) x *= inv;
  adam_step(ps, sum, st, tcfg, lr);
  return bd.scaled(inv);
}

struct EvalResult {
  loss::LossBreakdown loss;
  double acc28 = 0.0, acc10 = 0.0, acc3 = 0.0, acc_high = 0.0;
  std::size_t samples = 0;
};

inline std::size_t argmax_row(const Tensor& t, std::size_t r) {
  const auto row = t.row_span(r);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

/// Fraction of rows whose argmax (first maximum on ties) equals the label.
inline double accuracy(const Tensor& dist, const std::vector<int>& labels) {
  if (dist.rows() != labels.size() || labels.empty()) fail(ErrorKind::Dimension, "accuracy: label count mismatch");
  std::size_t hit = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) hit += argmax_row(dist, r) == static_cast<std::size_t>(labels[r]);
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

inline double binary_accuracy(const Tensor& p, const std::vector<int>& labels) {
  if (p.size() != labels.size() || labels.empty()) fail(ErrorKind::Dimension, "binary_accuracy: label count mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += (p[i] >= 0.5 ? 1 : 0) == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Inference-mode loss and per-head accuracy, averaged over samples.
inline EvalResult evaluate(const std::vector<const dataset::WindowSample*>& samples, const ParamStore& ps,
                           const model::ModelConfig& mcfg, const loss::LossConfig& lcfg) {
  EvalResult r;
  if (samples.empty()) return r;
  for (const auto* s : samples) {
    nn::Tape tape(false);
    const auto out = model::forward(tape, ps, *s, mcfg, {});
    r.loss += loss::total_loss(tape, out, *s, ps, lcfg).breakdown;
    r.acc28 += accuracy(out.dist28.value(), s->labels28);
    r.acc10 += accuracy(out.dist10.value(), s->labels10);
    r.acc3 += accuracy(out.dist3.value(), s->labels3);
    r.acc_high += binary_accuracy(out.p_high.value(), s->label_high);
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  r.loss = r.loss.scaled(inv);
  r.acc28 *= inv;
  r.acc10 *= inv;
  r.acc3 *= inv;
  r.acc_high *= inv;
  r.samples = samples.size();
  return r;
}

inline EvalResult evaluate(const std::vector<dataset::WindowSample>& samples, const ParamStore& ps,
                           const model::ModelConfig& mcfg, const loss::LossConfig& lcfg) {
  std::vector<const dataset::WindowSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return evaluate(ptrs, ps, mcfg, lcfg);
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  loss::LossBreakdown train;
  loss::LossBreakdown val;
  bool has_val = false;
  bool improved = false;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

struct TrainCallbacks {
  std::function<void(std::size_t epoch, std::size_t batch, const loss::LossBreakdown&)> on_batch;
  std::function<void(const EpochRecord&, const ParamStore&)> on_improve;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Mini-batch Adam with a chronological validation tail, early stopping and a plateau schedule.
/// Without a validation set (a single distinct start time) the training loss drives both.
inline TrainResult train_loop(const std::vector<dataset::WindowSample>& samples, ParamStore params,
                              const model::ModelConfig& mcfg, const loss::LossConfig& lcfg, const TrainConfig& tcfg,
                              const TrainCallbacks& cb = {}) {
  tcfg.validate();
  lcfg.validate();
  mcfg.validate();
  if (samples.empty()) fail(ErrorKind::Config, "training set is empty");
  auto [train_idx, val_idx] = chronological_split(samples, tcfg.val_fraction);
  if (train_idx.empty()) fail(ErrorKind::Config, "training set is empty after the validation split");
  std::vector<const dataset::WindowSample*> val;
  for (auto i : val_idx) val.push_back(&samples[i]);

  std::mt19937_64 shuffle_rng(tcfg.seed);
  std::mt19937_64 dropout_rng(tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
  OptimizerState opt;
  EarlyStopping stopper(tcfg.patience);
  PlateauSchedule sched(tcfg.lr, tcfg.plateau_factor, tcfg.plateau_patience, tcfg.lr_floor);

  TrainResult res;
  res.params = params;
  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = sched.lr();
    std::size_t batch_no = 0;
    for (std::size_t b = 0; b < order.size(); b += tcfg.batch_size) {
      std::vector<const dataset::WindowSample*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + tcfg.batch_size); ++i) batch.push_back(&samples[order[i]]);
      const auto bd = train_batch(params, opt, batch, mcfg, lcfg, tcfg, sched.lr(), dropout_rng);
      rec.train += bd.scaled(static_cast<double>(batch.size()));
      if (cb.on_batch) cb.on_batch(epoch, ++batch_no, bd);
    }
    rec.train = rec.train.scaled(1.0 / static_cast<double>(order.size()));
    double monitored = rec.train.total;
    if (!val.empty()) {
      rec.val = evaluate(val, params, mcfg, lcfg).loss;
      rec.has_val = true;
      monitored = rec.val.total;
    }
    rec.improved = stopper.update(monitored);
    sched.update(rec.improved);
    if (rec.improved) {
      res.params = params;
      res.best_epoch = epoch;
      if (cb.on_improve) cb.on_improve(rec, params);
    }
    res.history.push_back(rec);
    if (cb.on_epoch) cb.on_epoch(rec);
    if (stopper.should_stop()) {
      res.stopped_early = epoch < tcfg.max_epochs;
      break;
    }
  }
  if (res.best_epoch == 0) res.params = params;
  return res;
}

inline const char* history_header() {
  return "epoch,lr,train_total,train_ce28,train_ce10,train_ce3,train_bce,train_wass28,train_wass10,train_wass3,"
         "train_align,train_l2,train_align_distance,val_total,val_align_distance,improved";
}

inline void write_history_row(std::ostream& os, const EpochRecord& r) {
  char buf[768];
  const auto& t = r.train;
  std::snprintf(buf, sizeof buf,
                "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", r.epoch,
                r.lr, t.total, t.ce28, t.ce10, t.ce3, t.bce, t.wass28, t.wass10, t.wass3, t.align, t.l2,
                t.align_distance, r.has_val ? r.val.total : std::nan(""),
                r.has_val ? r.val.align_distance : std::nan(""), r.improved ? 1 : 0);
  os << buf;
}

}  // namespace kpcast::train
