#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kpcast/binio.hpp"
#include "kpcast/error.hpp"
#include "kpcast/tensor.hpp"

namespace kpcast::nn {

/// Trainable tensor plus whether it takes part in the L2 penalty (weights yes, biases no).
struct Param {
  Tensor value;
  bool decay = true;
};

/// All trainable tensors, keyed by stable path names ("img.attn.Wq", "head.b", ...).
class ParamStore {
 public:
  Tensor& add(const std::string& path, Tensor value, bool decay) {
    auto [it, inserted] = params_.emplace(path, Param{std::move(value), decay});
    if (!inserted) fail(ErrorKind::Config, "duplicate parameter path '" + path + "'");
    return it->second.value;
  }

  bool contains(const std::string& path) const { return params_.count(path) != 0; }

  Tensor& at(const std::string& path) { return lookup(path).value; }
  const Tensor& at(const std::string& path) const { return const_cast<ParamStore*>(this)->lookup(path).value; }
  bool decays(const std::string& path) const { return const_cast<ParamStore*>(this)->lookup(path).decay; }

  const std::map<std::string, Param>& entries() const { return params_; }
  std::map<std::string, Param>& entries() { return params_; }

  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [p, v] : params_) n += v.value.size();
    return n;
  }

  bool bit_equal(const ParamStore& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (auto a = params_.begin(), b = o.params_.begin(); a != params_.end(); ++a, ++b)
      if (a->first != b->first || a->second.decay != b->second.decay || !a->second.value.bit_equal(b->second.value))
        return false;
    return true;
  }

 private:
  Param& lookup(const std::string& path) {
    auto it = params_.find(path);
    if (it == params_.end()) fail(ErrorKind::Config, "unknown parameter path '" + path + "'");
    return it->second;
  }

  std::map<std::string, Param> params_;
};

using GradMap = std::map<std::string, Tensor>;

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape; }
};

/// Records the forward computation; `backward` accumulates gradients in reverse order.
///
/// Parameter leaves borrow the store's tensors, so the store must outlive the tape and must not be
/// mutated while the tape is alive.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  /// `track_params = false` makes parameter leaves constants (inference, no backward closures kept).
  explicit Tape(bool track_params = true) : track_params_(track_params) {}

  Var constant(Tensor t) { return push(std::move(t), nullptr, false, {}); }

  /// Tracked leaf owned by the tape (gradient-check inputs).
  Var leaf(Tensor t) { return push(std::move(t), nullptr, true, {}); }

  Var param(const ParamStore& store, const std::string& path) {
    if (auto it = param_ids_.find(path); it != param_ids_.end()) return Var{this, it->second};
    Node n;
    n.borrowed = &store.at(path);
    n.requires_grad = track_params_;
    n.path = path;
    nodes_.push_back(std::move(n));
    const std::size_t id = nodes_.size() - 1;
    param_ids_.emplace(path, id);
    return Var{this, id};
  }

  /// Adds an op result. `fn` receives the output gradient and must call accumulate() on parents.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool rg = false;
    for (const Var& p : parents) {
      check_owner(p);
      rg = rg || nodes_[p.id].requires_grad;
    }
    return push(std::move(value), rg ? std::move(fn) : nullptr, rg, {});
  }

  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
    bool rg = false;
    for (const Var& p : parents) {
      check_owner(p);
      rg = rg || nodes_[p.id].requires_grad;
    }
    return push(std::move(value), rg ? std::move(fn) : nullptr, rg, {});
  }

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.borrowed ? *n.borrowed : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Adds `g` into v's gradient (no-op for untracked nodes).
  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    const Tensor& val = n.borrowed ? *n.borrowed : n.value;
    if (g.size() != val.size())
      fail(ErrorKind::Dimension, "gradient size " + std::to_string(g.size()) + " != value size " +
                                     std::to_string(val.size()));
    if (n.grad.data.empty()) n.grad = Tensor(val.shape, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
  }

  /// Mutable gradient buffer for ops that scatter into it.
  Tensor* grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.data.empty()) n.grad = Tensor((n.borrowed ? *n.borrowed : n.value).shape, 0.0);
    return &n.grad;
  }

  /// Gradient of v after backward(); zeros when nothing flowed into it.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (!n.grad.data.empty()) return n.grad;
    return Tensor(value(v).shape, 0.0);
  }

  /// Seeds d(root)/d(root) = 1; root must hold a single value.
  void backward(Var root) {
    check_owner(root);
    if (value(root).size() != 1) fail(ErrorKind::Dimension, "backward root must be a scalar");
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad = Tensor(value(root).shape, 1.0);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.data.empty()) continue;
      // Copy: the callback may grow grads of earlier nodes but never this one.
      const Tensor g = n.grad;
      n.backward(*this, g);
    }
  }

  /// Gradients keyed by parameter path, for every parameter bound to this tape.
  GradMap named_grads() const {
    GradMap out;
    for (const auto& [path, id] : param_ids_) out.emplace(path, grad(Var{const_cast<Tape*>(this), id}));
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::string path;
  };

  Var push(Tensor value, BackwardFn fn, bool rg, std::string path) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.backward = std::move(fn);
    n.path = std::move(path);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  void check_owner(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) fail(ErrorKind::Validation, "variable does not belong to this tape");
  }

  bool track_params_ = true;
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> param_ids_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// ---------------------------------------------------------------------------
// Checkpoints: "KPCKPT01", u32 record count, then per record: path string, u8 decay flag,
// u32 rank, u64 dims[rank], f64 values[product].

inline constexpr std::string_view kCheckpointMagic = "KPCKPT01";

inline void write_checkpoint(std::ostream& os, const ParamStore& store) {
  binio::write_magic(os, kCheckpointMagic);
  binio::write_u32(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& [path, p] : store.entries()) {
    binio::write_string(os, path);
    os.put(p.decay ? 1 : 0);
    binio::write_u32(os, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape) binio::write_u64(os, d);
    binio::write_f64s(os, p.value.data);
  }
}

inline ParamStore read_checkpoint(std::istream& is) {
  binio::expect_magic(is, kCheckpointMagic);
  ParamStore store;
  const auto n = binio::read_u32(is, "record count");
  for (std::uint32_t i = 0; i < n; ++i) {
    auto path = binio::read_string(is);
    const int decay = is.get();
    if (!is) fail(ErrorKind::Parse, "truncated checkpoint");
    const auto rank = binio::read_u32(is, "rank");
    if (rank > 8) fail(ErrorKind::Parse, "implausible tensor rank in checkpoint");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = binio::read_u64(is, "dim");
    Tensor t(shape, 0.0);
    binio::read_f64s(is, t.data, "parameter values");
    store.add(path, std::move(t), decay != 0);
  }
  return store;
}

inline void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot write " + path);
  write_checkpoint(os, store);
  if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

inline ParamStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot read " + path);
  return read_checkpoint(is);
}

}  // namespace kpcast::nn
