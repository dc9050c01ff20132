#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "kpcast/error.hpp"
#include "kpcast/tape.hpp"
#include "kpcast/tensor.hpp"

namespace kpcast::nn {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

inline MapC view(const Tensor& t) {
  return MapC(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline Map view(Tensor& t) {
  return Map(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) fail(ErrorKind::Dimension, std::string(op) + ": expected a matrix, got " + t.shape_str());
}

}  // namespace detail

/// [n x k] * [k x m]
inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_matrix(A, "matmul");
  detail::require_matrix(B, "matmul");
  if (A.cols() != B.rows())
    fail(ErrorKind::Dimension, "matmul: inner dimensions disagree " + A.shape_str() + " x " + B.shape_str());
  Tensor out = Tensor::matrix(A.rows(), B.cols());
  detail::view(out).noalias() = detail::view(A) * detail::view(B);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const auto G = detail::view(g);
    if (Tensor* ga = t.grad_buffer(a)) detail::view(*ga).noalias() += G * detail::view(b.value()).transpose();
    if (Tensor* gb = t.grad_buffer(b)) detail::view(*gb).noalias() += detail::view(a.value()).transpose() * G;
  });
}

/// Adds a bias vector (shape [m] or [1 x m]) to every row of an [n x m] matrix.
inline Var add_bias(Var x, Var b) {
  const Tensor& X = x.value();
  const Tensor& B = b.value();
  detail::require_matrix(X, "add_bias");
  if (B.size() != X.cols())
    fail(ErrorKind::Dimension, "add_bias: bias " + B.shape_str() + " does not match " + X.shape_str());
  Tensor out = X;
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) += B[c];
  return x.tape->record(std::move(out), {x, b}, [x, b](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (Tensor* gb = t.grad_buffer(b))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*gb)[c] += g(r, c);
  });
}

/// xW + b
inline Var dense(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

inline Var add(Var a, Var b) {
  if (!a.value().same_shape(b.value()))
    fail(ErrorKind::Dimension, "add: shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data) v *= s;
  return a.tape->record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (auto& v : ga.data) v *= s;
    t.accumulate(a, ga);
  });
}

/// Weighted sum of scalars: Σ w_i x_i, evaluated left to right.
inline Var weighted_sum(const std::vector<Var>& xs, const std::vector<double>& ws) {
  if (xs.empty() || xs.size() != ws.size()) fail(ErrorKind::Dimension, "weighted_sum: bad arity");
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].value().size() != 1) fail(ErrorKind::Dimension, "weighted_sum expects scalars");
    acc += ws[i] * xs[i].value()[0];
  }
  return xs[0].tape->record(Tensor::scalar(acc), xs, [xs, ws](Tape& t, const Tensor& g) {
    for (std::size_t i = 0; i < xs.size(); ++i) t.accumulate(xs[i], Tensor(xs[i].value().shape, ws[i] * g[0]));
  });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (!(x[i] > 0.0)) ga[i] = 0.0;
    t.accumulate(a, ga);
  });
}

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data) v = stable_sigmoid(v);
  Tensor y = out;
  return a.tape->record(std::move(out), {a}, [a, y](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= y[i] * (1.0 - y[i]);
    t.accumulate(a, ga);
  });
}

/// Max-shifted softmax of a plain vector.
inline std::vector<double> softmax_values(std::span<const double> x) {
  std::vector<double> y(x.size());
  if (x.empty()) return y;
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - m);
    s += y[i];
  }
  for (auto& v : y) v /= s;
  return y;
}

/// Softmax along `axis` of a matrix (axis 1: each row sums to 1; axis 0: each column).
/// Rank-1 inputs are treated as a single row.
inline Var softmax(Var a, int axis = 1) {
  const Tensor& X = a.value();
  if (X.rank() == 1) axis = 1;
  else detail::require_matrix(X, "softmax");
  if (axis != 0 && axis != 1) fail(ErrorKind::Dimension, "softmax: axis must be 0 or 1");
  const std::size_t rows = X.rank() == 1 ? 1 : X.rows(), cols = X.rank() == 1 ? X.size() : X.cols();
  Tensor out = X;
  auto at = [cols](std::size_t r, std::size_t c) { return r * cols + c; };
  const std::size_t lines = axis == 1 ? rows : cols, len = axis == 1 ? cols : rows;
  std::vector<double> buf(len);
  for (std::size_t l = 0; l < lines; ++l) {
    for (std::size_t i = 0; i < len; ++i) buf[i] = X[axis == 1 ? at(l, i) : at(i, l)];
    const auto y = softmax_values(buf);
    for (std::size_t i = 0; i < len; ++i) out[axis == 1 ? at(l, i) : at(i, l)] = y[i];
  }
  Tensor y = out;
  return a.tape->record(std::move(out), {a}, [a, y, axis, lines, len, at](Tape& t, const Tensor& g) {
    Tensor ga(y.shape, 0.0);
    for (std::size_t l = 0; l < lines; ++l) {
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t k = axis == 1 ? at(l, i) : at(i, l);
        dot += g[k] * y[k];
      }
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t k = axis == 1 ? at(l, i) : at(i, l);
        ga[k] = y[k] * (g[k] - dot);
      }
    }
    t.accumulate(a, ga);
  });
}

inline Var transpose(Var a) {
  const Tensor& X = a.value();
  detail::require_matrix(X, "transpose");
  Tensor out = Tensor::matrix(X.cols(), X.rows());
  detail::view(out) = detail::view(X).transpose();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) detail::view(*ga) += detail::view(g).transpose();
  });
}

/// Columns [from, to) of a matrix.
inline Var slice_cols(Var a, std::size_t from, std::size_t to) {
  const Tensor& X = a.value();
  detail::require_matrix(X, "slice_cols");
  if (from > to || to > X.cols()) fail(ErrorKind::Dimension, "slice_cols: bad range");
  Tensor out = Tensor::matrix(X.rows(), to - from);
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = from; c < to; ++c) out(r, c - from) = X(r, c);
  return a.tape->record(std::move(out), {a}, [a, from, to](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = from; c < to; ++c) (*ga)(r, c) += g(r, c - from);
  });
}

/// Concatenation along columns; all parts need the same row count.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::Dimension, "concat_cols: nothing to concatenate");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != rows)
      fail(ErrorKind::Dimension, "concat_cols: row counts differ (" + std::to_string(rows) + " vs " +
                                     std::to_string(p.value().rows()) + ")");
    cols += p.value().cols();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& X = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < X.cols(); ++c) out(r, off + c) = X(r, c);
    off += X.cols();
  }
  return parts[0].tape->record(std::move(out), parts, [parts](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.value().cols();
      if (Tensor* gp = t.grad_buffer(p))
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) (*gp)(r, c) += g(r, off + c);
      off += w;
    }
  });
}

inline Var reshape(Var a, std::vector<std::size_t> shape) {
  if (Tensor::count(shape) != a.value().size())
    fail(ErrorKind::Dimension, "reshape: element count mismatch for " + a.value().shape_str());
  Tensor out(std::move(shape), a.value().data);
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor(a.value().shape, g.data));
  });
}

/// Mean over the time (row) axis: [T x C] -> [1 x C].
inline Var global_avg_pool(Var a) {
  const Tensor& X = a.value();
  detail::require_matrix(X, "global_avg_pool");
  if (X.rows() == 0) fail(ErrorKind::Dimension, "global_avg_pool: empty sequence");
  Tensor out = Tensor::matrix(1, X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t c = 0; c < X.cols(); ++c) out(0, c) += X(r, c);
  const double inv = 1.0 / static_cast<double>(X.rows());
  for (auto& v : out.data) v *= inv;
  return a.tape->record(std::move(out), {a}, [a, inv](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a))
      for (std::size_t r = 0; r < ga->rows(); ++r)
        for (std::size_t c = 0; c < ga->cols(); ++c) (*ga)(r, c) += g(0, c) * inv;
  });
}

inline Var sum_all(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor(a.value().shape, g[0]));
  });
}

/// y = x + conv(x) + b with "same" zero padding; kernels have shape [width, C, C] (tap, in, out).
inline Var conv1d_residual(Var x, Var kernels, Var bias) {
  const Tensor& X = x.value();
  const Tensor& K = kernels.value();
  detail::require_matrix(X, "conv1d_residual");
  const std::size_t T = X.rows(), C = X.cols();
  if (K.rank() != 3 || K.shape[1] != C || K.shape[2] != C)
    fail(ErrorKind::Dimension, "conv1d_residual: kernels " + K.shape_str() + " do not match " + std::to_string(C) +
                                   " channels (residual add needs equal in/out channels)");
  if (bias.value().size() != C) fail(ErrorKind::Dimension, "conv1d_residual: bias width mismatch");
  const std::size_t W = K.shape[0];
  const auto half = static_cast<std::ptrdiff_t>(W / 2);
  Tensor out = X;
  auto Y = detail::view(out);
  const auto Xv = detail::view(X);
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t c = 0; c < C; ++c) out(r, c) += bias.value()[c];
  for (std::size_t w = 0; w < W; ++w) {
    const detail::MapC Kw(K.data.data() + w * C * C, static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(C));
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(w) - half;
    // output row t reads input row t + shift
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(T), static_cast<std::ptrdiff_t>(T) - shift);
    if (hi <= lo) continue;
    Y.middleRows(lo, hi - lo).noalias() += Xv.middleRows(lo + shift, hi - lo) * Kw;
  }
  return x.tape->record(std::move(out), {x, kernels, bias}, [x, kernels, bias, T, C, W, half](Tape& t, const Tensor& g) {
    const auto G = detail::view(g);
    t.accumulate(x, g);
    Tensor* gx = t.grad_buffer(x);
    Tensor* gk = t.grad_buffer(kernels);
    const auto Xv = detail::view(x.value());
    const Tensor& K = kernels.value();
    for (std::size_t w = 0; w < W; ++w) {
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(w) - half;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi =
          std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(T), static_cast<std::ptrdiff_t>(T) - shift);
      if (hi <= lo) continue;
      if (gx) {
        const detail::MapC Kw(K.data.data() + w * C * C, static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(C));
        detail::view(*gx).middleRows(lo + shift, hi - lo).noalias() += G.middleRows(lo, hi - lo) * Kw.transpose();
      }
      if (gk) {
        detail::Map gKw(gk->data.data() + w * C * C, static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(C));
        gKw.noalias() += Xv.middleRows(lo + shift, hi - lo).transpose() * G.middleRows(lo, hi - lo);
      }
    }
    if (Tensor* gb = t.grad_buffer(bias))
      for (std::size_t r = 0; r < T; ++r)
        for (std::size_t c = 0; c < C; ++c) (*gb)[c] += g(r, c);
  });
}

enum class Mode { Training, Inference };

/// Inverted dropout. Inference mode and rate 0 return `x` itself.
inline Var dropout(Var x, double rate, Mode mode, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) fail(ErrorKind::Config, "dropout rate must lie in [0, 1)");
  if (mode == Mode::Inference || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Tensor mask(x.value().shape, 0.0);
  for (auto& m : mask.data) m = keep(rng) ? s : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape->record(std::move(out), {x}, [x, mask](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= mask[i];
    t.accumulate(x, gx);
  });
}

/// λ Σ w² over the given weight tensors.
inline Var l2_penalty(const std::vector<Var>& weights, double lambda) {
  if (weights.empty()) fail(ErrorKind::Dimension, "l2_penalty: no weights");
  double s = 0.0;
  for (const auto& w : weights)
    for (double v : w.value().data) s += v * v;
  return weights[0].tape->record(Tensor::scalar(lambda * s), weights, [weights, lambda](Tape& t, const Tensor& g) {
    for (const auto& w : weights) {
      Tensor gw = w.value();
      for (auto& v : gw.data) v *= 2.0 * lambda * g[0];
      t.accumulate(w, gw);
    }
  });
}

/// Decay-flagged parameters of a store, bound to a tape.
inline std::vector<Var> decayed_weights(Tape& tape, const ParamStore& store) {
  std::vector<Var> ws;
  for (const auto& [path, p] : store.entries())
    if (p.decay) ws.push_back(tape.param(store, path));
  return ws;
}

struct AttentionParams {
  Var wq, wk, wv, wo;
};

struct AttentionResult {
  Var out;
  std::vector<Var> weights;  // one [T x T] matrix per head
};

/// Bidirectional multi-head self-attention: per head softmax(Q Kᵀ / √d_head) V, heads
/// concatenated then projected by Wo. No biases.
inline AttentionResult multi_head_attention_detail(Var x, const AttentionParams& p, std::size_t heads) {
  const Tensor& X = x.value();
  detail::require_matrix(X, "multi_head_attention");
  const std::size_t d = X.cols();
  if (heads == 0 || d % heads != 0)
    fail(ErrorKind::Config, "model dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  for (const Var* w : {&p.wq, &p.wk, &p.wv, &p.wo})
    if (w->value().rank() != 2 || w->value().rows() != d || w->value().cols() != d)
      fail(ErrorKind::Dimension, "attention projection must be " + std::to_string(d) + "x" + std::to_string(d));
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Var q = matmul(x, p.wq), k = matmul(x, p.wk), v = matmul(x, p.wv);
  AttentionResult res;
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Var kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    const Var a = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    res.weights.push_back(a);
    outs.push_back(matmul(a, vh));
  }
  const Var cat = heads == 1 ? outs[0] : concat_cols(outs);
  res.out = matmul(cat, p.wo);
  return res;
}

inline Var multi_head_attention(Var x, const AttentionParams& p, std::size_t heads) {
  return multi_head_attention_detail(x, p, heads).out;
}

/// Adds fixed sinusoidal position codes.
inline Var add_positional_encoding(Var x) {
  const Tensor& X = x.value();
  Tensor pe = Tensor::matrix(X.rows(), X.cols());
  for (std::size_t pos = 0; pos < X.rows(); ++pos)
    for (std::size_t i = 0; i < X.cols(); ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(X.cols()));
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return add(x, x.tape->constant(std::move(pe)));
}

/// He-uniform initialization: U(-√(6/fan_in), √(6/fan_in)).
inline Tensor he_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data) v = u(rng);
  return t;
}

}  // namespace kpcast::nn
