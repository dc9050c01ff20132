#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kpcast/kpcast.hpp"

namespace kpcast::testkit {

using nn::ParamStore;
using nn::Tape;
using nn::Var;

/// Norm-wise relative error ||a - n|| / max(||a||, ||n||); 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double d = 0.0, na = 0.0, nn_ = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn_ += n[i] * n[i];
  }
  const double den = std::max(std::sqrt(na), std::sqrt(nn_));
  return den == 0.0 ? 0.0 : std::sqrt(d) / den;
}

/// Scalar function of leaf tensors, built on a tape.
using LeafFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Worst relative error between tape gradients and central differences over all inputs.
inline double grad_check(const LeafFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const Var y = f(tape, leaves);
  tape.backward(y);
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t2;
    std::vector<Var> ls;
    for (const auto& x : xs) ls.push_back(t2.leaf(x));
    return f(t2, ls).value()[0];
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> ana = tape.grad(leaves[k]).data, num(inputs[k].size());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto xs = inputs;
      xs[k][i] += h;
      const double fp = eval(xs);
      xs[k][i] -= 2 * h;
      const double fm = eval(xs);
      num[i] = (fp - fm) / (2 * h);
    }
    worst = std::max(worst, relative_error(ana, num));
  }
  return worst;
}

/// Scalar function of a parameter store.
using ParamFn = std::function<Var(Tape&, const ParamStore&)>;

/// Relative error over up to `per_tensor` randomly chosen coordinates of every parameter tensor
/// (all coordinates when the tensor is smaller). Returns the worst tensor.
inline double param_grad_check(const ParamFn& f, ParamStore ps, std::size_t per_tensor, std::uint64_t seed,
                               double h = 1e-5, std::string* worst_path = nullptr) {
  nn::GradMap grads;
  {
    Tape tape;
    const Var y = f(tape, ps);
    tape.backward(y);
    grads = tape.named_grads();
  }
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (auto& [path, p] : ps.entries()) {
    const auto git = grads.find(path);
    if (git == grads.end()) continue;
    std::vector<std::size_t> idx;
    if (p.value.size() <= per_tensor) {
      for (std::size_t i = 0; i < p.value.size(); ++i) idx.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, p.value.size() - 1);
      for (std::size_t i = 0; i < per_tensor; ++i) idx.push_back(pick(rng));
    }
    std::vector<double> ana, num;
    for (auto i : idx) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      double fp, fm;
      {
        Tape t;
        fp = f(t, ps).value()[0];
      }
      p.value[i] = orig - h;
      {
        Tape t;
        fm = f(t, ps).value()[0];
      }
      p.value[i] = orig;
      num.push_back((fp - fm) / (2 * h));
      ana.push_back(git->second[i]);
    }
    const double e = relative_error(ana, num);
    if (e > worst) {
      worst = e;
      if (worst_path) *worst_path = path;
    }
  }
  return worst;
}

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

inline std::vector<double> random_distribution(std::size_t k, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(k);
  double s = 0.0;
  for (auto& v : p) s += (v = e(rng));
  for (auto& v : p) v /= s;
  return p;
}

/// Random linear functional of any tensor, so every output entry gets its own weight.
inline Var probe(Var y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const std::size_t n = y.value().size();
  const Var w = y.tape->constant(random_tensor({n, 1}, rng));
  return nn::sum_all(nn::matmul(nn::reshape(y, {1, n}), w));
}

/// Transformed window with random inputs and random thirds labels, shaped for `c`.
inline dataset::WindowSample random_window(const model::ModelConfig& c, std::mt19937_64& rng) {
  dataset::WindowSample s;
  s.img_in = random_tensor({c.input_steps, c.img_dim}, rng);
  s.sat_in = random_tensor({c.input_steps, c.sat_dim}, rng);
  s.kp_in = random_tensor({c.input_steps, 1}, rng, 0, 1);
  s.transformed = true;
  std::uniform_int_distribution<int> k(0, 27);
  for (std::size_t o = 0; o < c.output_steps; ++o) {
    const double kp = k(rng) / 3.0;
    s.kp_out.push_back(kp);
    s.labels28.push_back(dataset::label28(kp));
    s.labels10.push_back(dataset::label10(kp));
    s.labels3.push_back(dataset::label3(kp, {}));
    s.label_high.push_back(dataset::label_high(kp, {}));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthOptions {
  std::size_t rows = 400;
  std::size_t sat_cols = 2;
  std::size_t img_cols = 3;
  std::uint64_t seed = 1;
  UtcSeconds start = utc_seconds(2024, 1, 1);
  std::size_t regime_min = 150;
  std::size_t regime_max = 250;
  double kp_high = 6.0;
  double kp_low = 2.0;
  double noise = 0.1;
};

/// Three-hour table where Kp is a threshold function of satellite column s0: s0 > 0 gives
/// kp_high, otherwise kp_low. s0 follows piecewise-constant regimes plus noise small enough never
/// to cross zero. Image columns carry a noisy copy of the regime sign.
inline TimeTable synthetic_table(const SynthOptions& o) {
  std::vector<ColumnDesc> cols;
  for (std::size_t j = 0; j < o.sat_cols; ++j) cols.push_back({"s" + std::to_string(j), ""});
  cols.push_back({std::string(ingest::kKpColumn), ""});
  for (std::size_t j = 0; j < o.img_cols; ++j) cols.push_back({ingest::image_column_name(j), ""});
  TimeTable t(cols);
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> len(o.regime_min, o.regime_max);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  bool high = rng() % 2 == 0;
  std::size_t left = len(rng);
  std::vector<double> row(cols.size());
  for (std::size_t r = 0; r < o.rows; ++r) {
    if (left == 0) {
      high = !high;
      left = len(rng);
    }
    --left;
    const double sign = high ? 1.0 : -1.0;
    std::size_t c = 0;
    row[c++] = sign * (1.0 + o.noise * u(rng));
    for (std::size_t j = 1; j < o.sat_cols; ++j) row[c++] = u(rng);
    row[c++] = high ? o.kp_high : o.kp_low;
    for (std::size_t j = 0; j < o.img_cols; ++j) row[c++] = (j % 2 ? -1.0 : 1.0) * sign + o.noise * u(rng) + 0.5 * j;
    t.append_row(o.start + static_cast<UtcSeconds>(r) * kThreeHours, row);
  }
  return t;
}

/// The micro-model used by gradient checks and learning tests.
inline model::ModelConfig micro_model(std::size_t img_dim, std::size_t sat_dim, std::size_t output_steps,
                                      std::uint64_t seed = 7) {
  model::ModelConfig m;
  m.input_steps = 4;
  m.output_steps = output_steps;
  m.img_dim = img_dim;
  m.sat_dim = sat_dim;
  m.kp_dim = 1;
  m.model_dim = 8;
  m.heads = 2;
  m.ff_dim = 16;
  m.align_bins = 5;
  m.dropout = 0.0;
  m.seed = seed;
  return m;
}

/// Raw windows of a table with any output length, then transformed with a transform fitted on
/// the whole table.
struct Prepared {
  features::FeatureTransform ft;
  std::vector<dataset::WindowSample> raw;
  std::vector<dataset::WindowSample> samples;
};

inline Prepared prepare_windows(const TimeTable& t, std::size_t in, std::size_t out, std::size_t stride,
                                std::size_t pca_k, const TimeTable* fit_on = nullptr) {
  Prepared p;
  p.ft = features::fit_transforms(fit_on ? *fit_on : t, pca_k, nullptr);
  dataset::WindowConfig w;
  w.input_steps = in;
  w.output_steps = out;
  p.raw = dataset::make_windows(t, w, dataset::LabelConfig{}, stride, dataset::infer_layout(t));
  for (const auto& s : p.raw) p.samples.push_back(features::transform_sample(p.ft, s));
  return p;
}

}  // namespace kpcast::testkit
