// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//   kpcast_acceptance --cli <kpcast binary> --fixture <data/fixture> --scratch <dir> [--only name]
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "kpcast/kpcast.hpp"
#include "testkit.hpp"

using namespace kpcast;
using nn::Tape;
using nn::Var;
using testkit::grad_check;
using testkit::probe;
using testkit::random_tensor;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kMetricTol = 1e-12;
constexpr double kOpGradTol = 1e-5;
constexpr double kModelGradTol = 1e-4;
constexpr double kReconcileTol = 1e-12;
constexpr double kLossDropMin = 0.5;
constexpr double kAccuracyMin = 0.8;
constexpr double kAlignDropMin = 0.3;
constexpr double kMetricBudget = 10.0;
constexpr double kGradBudget = 120.0;
constexpr double kLeakBudget = 300.0;
constexpr double kLearnBudget = 600.0;
constexpr double kPipelineBudget = 300.0;

struct Args {
  std::string cli, fixture, scratch, only;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome wasserstein_suite() {
  Outcome o;
  Stopwatch sw;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> kdist(2, 40);
  const auto sum = loss::WassersteinVariant::Sum, mean = loss::WassersteinVariant::Mean;
  double worst_tri = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = kdist(rng);
    const loss::DistVector p{testkit::random_distribution(k, rng)}, q{testkit::random_distribution(k, rng)},
        r{testkit::random_distribution(k, rng)};
    const double pq = loss::wasserstein_1d(p, q, sum), qp = loss::wasserstein_1d(q, p, sum);
    const double qr = loss::wasserstein_1d(q, r, sum), pr = loss::wasserstein_1d(p, r, sum);
    o.require(pq >= 0.0 && qr >= 0.0 && pr >= 0.0, "negative distance");
    o.require(pq == qp, "asymmetric");
    o.require(loss::wasserstein_1d(p, p, sum) == 0.0, "d(p,p) != 0");
    o.require(pr <= pq + qr + kMetricTol, "triangle inequality");
    worst_tri = std::max(worst_tri, pr - pq - qr);
  }
  for (std::size_t k = 2; k <= 40; ++k)
    for (std::size_t i = 0; i + 1 < k; ++i) {
      const auto a = loss::DistVector::one_hot(k, i), b = loss::DistVector::one_hot(k, i + 1);
      o.require(loss::wasserstein_1d(a, b, sum) == 1.0, "shifted delta (sum) != 1");
      o.require(std::abs(loss::wasserstein_1d(a, b, mean) - 1.0 / double(k)) <= kMetricTol, "shifted delta (mean) != 1/K");
    }
  o.require(sw.seconds() < kMetricBudget, "over time budget");
  o.detail += " 1000 triples, max(d(p,r)-d(p,q)-d(q,r)) " + fmt("%.3g", worst_tri) + ", " + fmt("%.2f", sw.seconds()) + " s";
  return o;
}

// ---------------------------------------------------------------------------

Outcome gradient_checks() {
  Outcome o;
  Stopwatch sw;
  std::mt19937_64 rng(77);
  using V = std::vector<Var>;
  struct Case {
    const char* name;
    testkit::LeafFn f;
    std::vector<Tensor> in;
  };
  auto pos = [&](std::vector<std::size_t> s) { return random_tensor(std::move(s), rng, 0.2, 1.5); };
  std::vector<Case> cases = {
      {"matmul", [](Tape&, const V& v) { return probe(nn::matmul(v[0], v[1])); }, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}},
      {"add_bias", [](Tape&, const V& v) { return probe(nn::add_bias(v[0], v[1])); }, {random_tensor({3, 4}, rng), random_tensor({4}, rng)}},
      {"dense", [](Tape&, const V& v) { return probe(nn::dense(v[0], v[1], v[2])); },
       {random_tensor({2, 3}, rng), random_tensor({3, 5}, rng), random_tensor({5}, rng)}},
      {"add", [](Tape&, const V& v) { return probe(nn::add(v[0], v[1])); }, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}},
      {"scale", [](Tape&, const V& v) { return probe(nn::scale(v[0], -1.7)); }, {random_tensor({2, 3}, rng)}},
      {"weighted_sum", [](Tape&, const V& v) { return probe(nn::weighted_sum({nn::sum_all(v[0]), nn::sum_all(v[1])}, {0.3, -2.0})); },
       {random_tensor({2, 2}, rng), random_tensor({2, 2}, rng)}},
      {"relu", [](Tape&, const V& v) { return probe(nn::relu(v[0])); }, {pos({3, 3})}},
      {"relu_neg", [](Tape&, const V& v) { return probe(nn::relu(nn::scale(v[0], -1.0))); }, {pos({2, 2})}},
      {"sigmoid", [](Tape&, const V& v) { return probe(nn::sigmoid(v[0])); }, {random_tensor({3, 3}, rng, -4, 4)}},
      {"softmax_rows", [](Tape&, const V& v) { return probe(nn::softmax(v[0], 1)); }, {random_tensor({3, 5}, rng, -3, 3)}},
      {"softmax_cols", [](Tape&, const V& v) { return probe(nn::softmax(v[0], 0)); }, {random_tensor({4, 3}, rng, -3, 3)}},
      {"transpose", [](Tape&, const V& v) { return probe(nn::transpose(v[0])); }, {random_tensor({2, 5}, rng)}},
      {"slice_cols", [](Tape&, const V& v) { return probe(nn::slice_cols(v[0], 1, 4)); }, {random_tensor({3, 6}, rng)}},
      {"concat_cols", [](Tape&, const V& v) { return probe(nn::concat_cols({v[0], v[1]})); },
       {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)}},
      {"reshape", [](Tape&, const V& v) { return probe(nn::reshape(v[0], {4, 3})); }, {random_tensor({2, 6}, rng)}},
      {"global_avg_pool", [](Tape&, const V& v) { return probe(nn::global_avg_pool(v[0])); }, {random_tensor({5, 3}, rng)}},
      {"sum_all", [](Tape&, const V& v) { return nn::sum_all(v[0]); }, {random_tensor({3, 3}, rng)}},
      {"conv1d_k1", [](Tape&, const V& v) { return probe(nn::conv1d_residual(v[0], v[1], v[2])); },
       {random_tensor({5, 3}, rng), random_tensor({1, 3, 3}, rng), random_tensor({3}, rng)}},
      {"conv1d_k3", [](Tape&, const V& v) { return probe(nn::conv1d_residual(v[0], v[1], v[2])); },
       {random_tensor({6, 4}, rng), random_tensor({3, 4, 4}, rng), random_tensor({4}, rng)}},
      {"conv1d_k5", [](Tape&, const V& v) { return probe(nn::conv1d_residual(v[0], v[1], v[2])); },
       {random_tensor({4, 2}, rng), random_tensor({5, 2, 2}, rng), random_tensor({2}, rng)}},
      {"attention",
       [](Tape&, const V& v) { return probe(nn::multi_head_attention(v[0], {v[1], v[2], v[3], v[4]}, 2)); },
       {random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4, 4}, rng),
        random_tensor({4, 4}, rng)}},
      {"dropout",
       [](Tape&, const V& v) {
         std::mt19937_64 mask(5);
         return probe(nn::dropout(v[0], 0.4, nn::Mode::Training, mask));
       },
       {random_tensor({3, 4}, rng)}},
      {"l2_penalty", [](Tape&, const V& v) { return nn::l2_penalty({v[0], v[1]}, 0.3); },
       {random_tensor({2, 3}, rng), random_tensor({4}, rng)}},
      {"positional_encoding", [](Tape&, const V& v) { return probe(nn::add_positional_encoding(v[0])); },
       {random_tensor({5, 4}, rng)}},
      {"cross_entropy_rows", [](Tape&, const V& v) { return loss::cross_entropy_rows(nn::softmax(v[0], 1), {0, 3, 2}); },
       {random_tensor({3, 4}, rng, -2, 2)}},
      {"wasserstein_rows",
       [](Tape&, const V& v) {
         return loss::wasserstein_rows(nn::softmax(v[0], 1), nn::softmax(v[1], 1), loss::WassersteinVariant::Mean);
       },
       {random_tensor({3, 6}, rng, -2, 2), random_tensor({3, 6}, rng, -2, 2)}},
      {"bce_rows", [](Tape&, const V& v) { return loss::bce_rows(nn::sigmoid(v[0]), {1, 0, 1}); },
       {random_tensor({3, 1}, rng, -2, 2)}},
      {"alignment_loss",
       [](Tape&, const V& v) {
         return loss::alignment_loss(nn::softmax(v[0], 1), nn::softmax(v[1], 1), nn::softmax(v[2], 1),
                                     loss::WassersteinVariant::Mean);
       },
       {random_tensor({1, 5}, rng, -2, 2), random_tensor({1, 5}, rng, -2, 2), random_tensor({1, 5}, rng, -2, 2)}},
  };
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& c : cases) {
    const double e = grad_check(c.f, c.in);
    if (e > worst_op) {
      worst_op = e;
      worst_name = c.name;
    }
    o.require(e < kOpGradTol, std::string(c.name) + " relative error " + fmt("%.3g", e));
  }

  auto cfg = testkit::micro_model(3, 2, 3);  // input_steps 4, model_dim 8, K 5
  cfg.align_bins = 5;
  const auto ps = model::init_params(cfg);
  std::mt19937_64 srng(31);
  const auto s = testkit::random_window(cfg, srng);
  loss::LossConfig lc;
  lc.lambda_align = 0.5;
  lc.lambda_l2 = 1e-3;
  std::string worst_path;
  const double e2e = testkit::param_grad_check(
      [&](Tape& t, const nn::ParamStore& p) { return loss::total_loss(t, model::forward(t, p, s, cfg), s, p, lc).total; },
      ps, 12, 5, 1e-5, &worst_path);
  o.require(e2e < kModelGradTol, "end-to-end relative error " + fmt("%.3g", e2e) + " at " + worst_path);
  o.require(sw.seconds() < kGradBudget, "over time budget");
  o.detail += " " + std::to_string(cases.size()) + " ops, worst " + fmt("%.2e", worst_op) + " (" + worst_name +
              "); end-to-end " + fmt("%.2e", e2e) + ", " + fmt("%.1f", sw.seconds()) + " s";
  return o;
}

// ---------------------------------------------------------------------------

Outcome loss_reconciliation() {
  Outcome o;
  std::mt19937_64 rng(5150);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto cfg = testkit::micro_model(4, 3, 24);
  const auto ps = model::init_params(cfg);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int b = 0; b < 40; ++b) {
    loss::LossConfig lc;
    lc.alpha = b == 0 ? 1.0 : (b == 1 ? 0.0 : u(rng));
    lc.lambda_align = u(rng);
    lc.lambda_l2 = 1e-3 * u(rng);
    lc.variant = b % 2 ? loss::WassersteinVariant::Sum : loss::WassersteinVariant::Mean;
    for (int i = 0; i < 4; ++i) {
      const auto s = testkit::random_window(cfg, rng);
      Tape t(false);
      const auto out = model::forward(t, ps, s, cfg);
      const auto r = loss::total_loss(t, out, s, ps, lc);
      const double d = std::abs(r.breakdown.sum_of_terms() - r.breakdown.total);
      worst = std::max(worst, d);
      ++checked;
      o.require(d <= kReconcileTol, "breakdown off by " + fmt("%.3g", d));
      if (lc.alpha == 1.0)
        o.require(r.breakdown.wass28 == 0.0 && r.breakdown.wass10 == 0.0 && r.breakdown.wass3 == 0.0,
                  "alpha=1 leaves a Wasserstein term");
      if (lc.alpha == 0.0)
        o.require(r.breakdown.ce28 == 0.0 && r.breakdown.ce10 == 0.0 && r.breakdown.ce3 == 0.0,
                  "alpha=0 leaves a cross-entropy term");
    }
  }
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + rng() % 27;
    const loss::DistVector d{testkit::random_distribution(k, rng)};
    const std::size_t target = rng() % k;
    loss::LossConfig lc;
    lc.alpha = 1.0;
    o.require(loss::combined_class_loss(d, target, lc) == loss::cross_entropy(d, target), "alpha=1 is not pure CE");
    lc.alpha = 0.0;
    o.require(loss::combined_class_loss(d, target, lc) == loss::wasserstein_1d(d, loss::DistVector::one_hot(k, target), lc.variant),
              "alpha=0 is not pure Wasserstein");
  }
  o.detail += " " + std::to_string(checked) + " samples, worst |sum(terms)-total| " + fmt("%.3g", worst);
  return o;
}

// ---------------------------------------------------------------------------

TimeTable kp_only_table(const std::vector<double>& kp) {
  TimeTable t({{"s0", ""}, {"kp", ""}, {"img_0", ""}});
  for (std::size_t i = 0; i < kp.size(); ++i) {
    const double v[] = {double(i), kp[i], 0.5};
    t.append_row(static_cast<UtcSeconds>(i) * kThreeHours, v);
  }
  return t;
}

Outcome label_window_suite() {
  Outcome o;
  std::mt19937_64 rng(808);
  for (int c = 0; c < 20; ++c) {
    const std::size_t T = 20 + rng() % 200, in = 1 + rng() % 40, out = 1 + rng() % 40, stride = 1 + rng() % 9;
    if (in + out > T) {
      --c;
      continue;
    }
    const auto t = kp_only_table(std::vector<double>(T, 1.0));
    dataset::WindowConfig w;
    w.input_steps = in;
    w.output_steps = out;
    const auto n = dataset::make_windows(t, w, {}, stride, dataset::infer_layout(t)).size();
    o.require(n == (T - in - out) / stride + 1, "window count mismatch for T=" + std::to_string(T));
  }
  const dataset::LabelConfig lc;
  for (int i = 0; i <= 27; ++i) {
    const double kp = i / 3.0;
    const int ten = i / 3;
    const int three = kp < 4.0 - 1e-9 ? 0 : (kp < 5.0 - 1e-9 ? 1 : 2);
    o.require(dataset::label28(kp) == i, "label28 at " + std::to_string(i));
    o.require(dataset::label10(kp) == std::min(ten, 9), "label10 at " + std::to_string(i));
    o.require(dataset::label3(kp, lc) == three, "label3 at " + std::to_string(i));
    o.require(dataset::label_high(kp, lc) == (kp >= 7.0 - 1e-9 ? 1 : 0), "label_high at " + std::to_string(i));
  }
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<dataset::WindowSample> s;
    const std::size_t classes = 2 + rng() % 5;
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t count = 1 + rng() % 12;
      for (std::size_t j = 0; j < count; ++j) {
        dataset::WindowSample w;
        w.t0 = static_cast<UtcSeconds>(s.size()) * kThreeHours;
        w.kp_in = Tensor::matrix(3, 1, double(c + 1) / 3.0);
        s.push_back(w);
      }
    }
    const auto idx = dataset::expand_balance_indices(s, 1000 + trial);
    std::map<int, std::size_t> hist;
    for (auto i : idx) ++hist[dataset::balance_key(s[i])];
    std::size_t lo = idx.size(), hi = 0;
    for (const auto& [k, n] : hist) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    o.require(hist.size() == classes && lo == hi, "balanced histogram is not uniform");
  }
  o.detail += " 20 window cases, 28 thirds, 10 balance draws";
  return o;
}

// ---------------------------------------------------------------------------

struct WalkCase {
  TimeTable table;
  features::FeatureTransform ft;
  forecast::Setup setup;
  nn::ParamStore params;
};

WalkCase thirty_day_case() {
  WalkCase w;
  testkit::SynthOptions so;
  so.rows = 30 * 8;
  so.regime_min = 10;
  so.regime_max = 40;
  so.seed = 30;
  w.table = testkit::synthetic_table(so);
  const auto start = w.table.timestamp(0);
  w.ft = features::fit_transforms(w.table.slice_time(start, start + 15 * kDay), 3, nullptr);
  w.setup.model = testkit::micro_model(3, 2, 24);
  w.setup.forecast.output_steps = 24;
  w.setup.forecast.finetune_epochs = 2;
  w.setup.forecast.finetune_samples = 2;
  w.params = model::init_params(w.setup.model);
  return w;
}

Outcome leakage_fuzz() {
  Outcome o;
  Stopwatch sw;
  auto w = thirty_day_case();
  const auto start = w.table.timestamp(0);
  const UtcSeconds first = start + 18 * kDay, day_d = start + 20 * kDay, last = start + 23 * kDay;
  // rows for days <= D, keyed by (day, horizon, step); scoring gaps are kept separately since
  // perturbing observed Kp after D may legitimately drop a horizon from the report
  using Key = std::tuple<UtcSeconds, int, UtcSeconds>;
  struct Run {
    std::map<Key, std::pair<double, double>> rows;
    std::set<std::pair<UtcSeconds, int>> scoring_gaps;
    nn::ParamStore params_at_d;
  };
  auto run = [&](const TimeTable& t) {
    Run out;
    const auto r = forecast::run_walkforward(w.params, t, w.ft, first, last, w.setup);
    for (const auto& row : r.report.rows)
      if (row.day <= day_d) out.rows[{row.day, row.horizon, row.step_time}] = {row.kp_expected, row.kp_argmax};
    for (const auto& gp : r.report.gaps)
      if (gp.day <= day_d && gp.reason == "observed Kp unavailable") out.scoring_gaps.insert({gp.day, gp.horizon});
    out.params_at_d = forecast::run_walkforward(w.params, t, w.ft, first, day_d, w.setup).params;
    return out;
  };
  const auto base = run(w.table);
  o.require(!base.rows.empty(), "no day-D predictions");
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> g(0.0, 5.0);
  const auto first_after = w.table.rows_before(day_d);
  std::size_t changed_cells = 0, compared = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto t = w.table;
    const std::size_t mode = trial % 3;
    for (std::size_t r = first_after; r < t.rows(); ++r)
      for (std::size_t c = 0; c < t.cols(); ++c) {
        if (mode == 0 || rng() % 3 == 0) {
          if (t.columns()[c].name == ingest::kKpColumn)
            t.value(r, c) = double(rng() % 28) / 3.0;
          else
            t.value(r, c) += g(rng);
          ++changed_cells;
        }
        if (mode == 2 && rng() % 7 == 0) t.set_missing(r, c, true);
      }
    const auto got = run(t);
    const std::string tag = " in trial " + std::to_string(trial);
    o.require(got.params_at_d.bit_equal(base.params_at_d), "fine-tuned parameters at D changed" + tag);
    for (const auto& [k, v] : base.rows) {
      const auto it = got.rows.find(k);
      if (it == got.rows.end()) {
        o.require(got.scoring_gaps.count({std::get<0>(k), std::get<1>(k)}) != 0, "day-D row vanished" + tag);
        continue;
      }
      o.require(it->second == v, "day-D prediction changed" + tag);
      ++compared;
    }
    o.require(got.rows.size() <= base.rows.size(), "extra day-D rows" + tag);
  }
  o.require(sw.seconds() < kLeakBudget, "over time budget");
  o.detail += " 50 trials, " + std::to_string(base.rows.size()) + " day-D rows, " + std::to_string(compared) +
              " compared, " + std::to_string(changed_cells) + " cells perturbed, " + fmt("%.1f", sw.seconds()) + " s";
  return o;
}

// ---------------------------------------------------------------------------

struct SynthTask {
  std::vector<dataset::WindowSample> train, held_out;
  model::ModelConfig cfg;
};

SynthTask synthetic_task(std::uint64_t seed) {
  testkit::SynthOptions so;
  so.rows = 900;
  so.regime_min = 20;
  so.regime_max = 60;
  so.seed = seed;
  const auto t = testkit::synthetic_table(so);
  const auto cut = t.timestamp(720);
  const auto train_rows = t.slice_time(t.timestamp(0), cut);
  const auto test_rows = t.slice_time(cut, t.timestamp(t.rows() - 1) + 1);
  const auto ft = features::fit_transforms(train_rows, 3, nullptr);
  SynthTask task;
  task.cfg = testkit::micro_model(3, 2, 3, seed);
  dataset::WindowConfig w;
  w.input_steps = task.cfg.input_steps;
  w.output_steps = task.cfg.output_steps;
  for (const auto& s : dataset::make_windows(train_rows, w, {}, 2, dataset::infer_layout(t)))
    task.train.push_back(features::transform_sample(ft, s));
  for (const auto& s : dataset::make_windows(test_rows, w, {}, 1, dataset::infer_layout(t)))
    task.held_out.push_back(features::transform_sample(ft, s));
  return task;
}

Outcome learning_sanity() {
  Outcome o;
  Stopwatch sw;
  auto task = synthetic_task(11);
  train::TrainConfig tc;
  tc.max_epochs = 20;
  tc.patience = 20;
  tc.batch_size = 16;
  tc.lr = 5e-3;
  tc.seed = 11;
  const loss::LossConfig lc;
  const double before = train::evaluate(task.train, model::init_params(task.cfg), task.cfg, lc).loss.total;
  const auto res = train::train_loop(task.train, model::init_params(task.cfg), task.cfg, lc, tc);
  double best_train = before;
  for (const auto& r : res.history) best_train = std::min(best_train, r.train.total);
  const double drop = 1.0 - best_train / before;
  const auto held = train::evaluate(task.held_out, res.params, task.cfg, lc);
  o.require(drop >= kLossDropMin, "training loss dropped only " + fmt("%.1f%%", 100 * drop));
  o.require(held.acc3 > kAccuracyMin, "held-out 3-class accuracy " + fmt("%.3f", held.acc3));
  o.require(sw.seconds() < kLearnBudget, "over time budget");
  o.detail += " loss " + fmt("%.3f", before) + " -> " + fmt("%.3f", best_train) + " (" + fmt("%.1f%%", 100 * drop) +
              " drop), held-out acc3 " + fmt("%.3f", held.acc3) + " on " + std::to_string(held.samples) + " windows, " +
              fmt("%.1f", sw.seconds()) + " s";
  return o;
}

Outcome alignment_behavior() {
  Outcome o;
  Stopwatch sw;
  std::string per_seed;
  for (std::uint64_t seed : {101, 202, 303}) {
    auto task = synthetic_task(seed);
    train::TrainConfig tc;
    tc.max_epochs = 20;
    tc.patience = 20;
    tc.batch_size = 16;
    tc.lr = 5e-3;
    tc.seed = seed;
    loss::LossConfig lc;
    lc.lambda_align = 0.5;
    const auto res = train::train_loop(task.train, model::init_params(task.cfg), task.cfg, lc, tc);
    const double d0 = res.history.front().train.align_distance, d1 = res.history.back().train.align_distance;
    const double drop = d0 > 0.0 ? 1.0 - d1 / d0 : 0.0;
    o.require(drop >= kAlignDropMin, "seed " + std::to_string(seed) + ": alignment distance dropped only " +
                                         fmt("%.1f%%", 100 * drop));
    per_seed += " seed " + std::to_string(seed) + ": " + fmt("%.4f", d0) + " -> " + fmt("%.4f", d1) + ";";
  }
  o.detail += per_seed + " " + fmt("%.1f", sw.seconds()) + " s";
  return o;
}

// ---------------------------------------------------------------------------

int run_command(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

struct PipelineRun {
  bool ok = false;
  double seconds = 0.0;
  std::string failed_stage;
};

PipelineRun run_pipeline(const Args& a, const fs::path& work, const fs::path& log) {
  PipelineRun r;
  Stopwatch sw;
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string base = quote(a.cli) + " --config " + quote((fs::path(a.fixture) / "fixture.cfg").string()) +
                           " --seed 42 --set " + quote("run.work_dir=" + work.string());
  for (const char* stage : {"ingest", "prepare", "fit-transforms", "train", "forecast", "report"}) {
    if (run_command(base + " " + stage + " >>" + quote(log.string()) + " 2>&1") != 0) {
      r.failed_stage = stage;
      r.seconds = sw.seconds();
      return r;
    }
  }
  r.ok = true;
  r.seconds = sw.seconds();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> artifacts(const fs::path& work) {
  std::map<std::string, std::string> out;
  for (const char* f : {"report.csv", "model.kpc", "history.csv", "summary.csv"})
    if (fs::exists(work / f)) out[f] = slurp(work / f);
  if (fs::exists(work / "checkpoints"))
    for (const auto& e : fs::directory_iterator(work / "checkpoints"))
      out["checkpoints/" + e.path().filename().string()] = slurp(e.path());
  return out;
}

struct PipelineResults {
  PipelineRun first, second;
  fs::path work_a, work_b;
};

PipelineResults& pipeline(const Args& a) {
  static PipelineResults res;
  static bool done = false;
  if (!done) {
    done = true;
    res.work_a = fs::path(a.scratch) / "run_a";
    res.work_b = fs::path(a.scratch) / "run_b";
    fs::create_directories(a.scratch);
    res.first = run_pipeline(a, res.work_a, fs::path(a.scratch) / "run_a.log");
    res.second = run_pipeline(a, res.work_b, fs::path(a.scratch) / "run_b.log");
  }
  return res;
}

Outcome determinism(const Args& a) {
  Outcome o;
  const auto& p = pipeline(a);
  o.require(p.first.ok && p.second.ok, "pipeline failed at " + p.first.failed_stage + p.second.failed_stage);
  const auto fa = artifacts(p.work_a), fb = artifacts(p.work_b);
  o.require(fa.count("report.csv") && fa.count("model.kpc"), "report or checkpoint missing");
  std::size_t ckpts = 0;
  for (const auto& [name, bytes] : fa) {
    ckpts += name.rfind("checkpoints/", 0) == 0;
    const auto it = fb.find(name);
    o.require(it != fb.end() && it->second == bytes, name + " differs between runs");
  }
  o.require(fa.size() == fb.size(), "artifact sets differ");
  o.detail += " " + std::to_string(fa.size()) + " artifacts compared (" + std::to_string(ckpts) +
              " checkpoint files), all byte-identical";
  return o;
}

Outcome end_to_end(const Args& a) {
  Outcome o;
  const auto& p = pipeline(a);
  o.require(p.first.ok, "stage " + p.first.failed_stage + " exited nonzero (see run_a.log)");
  o.require(p.first.seconds < kPipelineBudget, "took " + fmt("%.1f", p.first.seconds) + " s");
  std::size_t rows = 0;
  if (p.first.ok) rows = forecast::load_report((p.work_a / "report.csv").string()).rows.size();
  o.require(rows > 0, "empty report");
  o.require(fs::exists(p.work_a / "summary.csv") && fs::exists(p.work_a / "plots"), "report outputs missing");
  o.detail += " ingest..report exit 0, " + std::to_string(rows) + " report rows, " + fmt("%.1f", p.first.seconds) + " s";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  Args a;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string k = argv[i], v = argv[i + 1];
    if (k == "--cli") a.cli = v;
    else if (k == "--fixture") a.fixture = v;
    else if (k == "--scratch") a.scratch = v;
    else if (k == "--only") a.only = v;
    else {
      std::cerr << "unknown argument " << k << '\n';
      return 2;
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"wasserstein-metric", wasserstein_suite},
      {"gradient-checks", gradient_checks},
      {"loss-reconciliation", loss_reconciliation},
      {"labels-windows", label_window_suite},
      {"leakage-fuzz", leakage_fuzz},
      {"learning-sanity", learning_sanity},
      {"alignment", alignment_behavior},
      {"determinism", [&] { return determinism(a); }},
      {"end-to-end", [&] { return end_to_end(a); }},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!a.only.empty() && a.only != name) continue;
    if ((name == "determinism" || name == "end-to-end") && (a.cli.empty() || a.fixture.empty() || a.scratch.empty())) {
      std::cout << "FAIL " << name << ": --cli, --fixture and --scratch are required\n";
      ++failed;
      continue;
    }
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ":" << (o.detail.empty() || o.detail[0] == ' ' ? "" : " ")
              << o.detail << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
