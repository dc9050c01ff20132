#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kpcast/dataset.hpp"
#include "kpcast/error.hpp"
#include "kpcast/nnkernel.hpp"
#include "kpcast/tape.hpp"
#include "kpcast/tensor.hpp"

namespace kpcast::model {

using nn::Mode;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

inline constexpr std::size_t kHeadWidth = 28 + 10 + 3 + 1;

struct ModelConfig {
  std::size_t input_steps = 40;
  std::size_t output_steps = 24;
  std::size_t img_dim = 512;
  std::size_t sat_dim = 26;
  std::size_t kp_dim = 1;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  double dropout = 0.1;
  std::size_t align_bins = 28;
  std::size_t conv_kernel = 3;
  std::uint64_t seed = 42;
  bool positional_encoding = false;

  std::size_t fused_dim() const { return 3 * model_dim; }

  void validate() const {
    if (input_steps == 0 || output_steps == 0) fail(ErrorKind::Config, "step counts must be positive");
    if (img_dim == 0 || sat_dim == 0 || kp_dim == 0) fail(ErrorKind::Config, "input widths must be positive");
    if (model_dim == 0 || heads == 0 || model_dim % heads != 0)
      fail(ErrorKind::Config, "model_dim must be a positive multiple of heads");
    if (fused_dim() % heads != 0) fail(ErrorKind::Config, "3*model_dim must be divisible by heads");
    if (ff_dim == 0 || align_bins < 2) fail(ErrorKind::Config, "ff_dim must be > 0 and align_bins >= 2");
    if (conv_kernel == 0 || conv_kernel % 2 == 0) fail(ErrorKind::Config, "conv_kernel must be odd");
    if (dropout < 0.0 || dropout >= 1.0) fail(ErrorKind::Config, "dropout must lie in [0, 1)");
  }
};

inline std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "input_steps=" << c.input_steps << '\n'
     << "output_steps=" << c.output_steps << '\n'
     << "img_dim=" << c.img_dim << '\n'
     << "sat_dim=" << c.sat_dim << '\n'
     << "kp_dim=" << c.kp_dim << '\n'
     << "model_dim=" << c.model_dim << '\n'
     << "heads=" << c.heads << '\n'
     << "ff_dim=" << c.ff_dim << '\n'
     << "dropout=" << c.dropout << '\n'
     << "align_bins=" << c.align_bins << '\n'
     << "conv_kernel=" << c.conv_kernel << '\n'
     << "seed=" << c.seed << '\n'
     << "positional_encoding=" << (c.positional_encoding ? "true" : "false") << '\n';
  return os.str();
}

/// Applies one key=value pair; returns false for unknown keys.
inline bool set_field(ModelConfig& c, const std::string& key, const std::string& value) {
  auto as_size = [&](std::size_t& f) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(value, &pos);
      if (pos != value.size() || v < 0) throw std::invalid_argument("neg");
      f = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "model." + key + ": expected a non-negative integer, got '" + value + "'");
    }
  };
  if (key == "input_steps") as_size(c.input_steps);
  else if (key == "output_steps") as_size(c.output_steps);
  else if (key == "img_dim") as_size(c.img_dim);
  else if (key == "sat_dim") as_size(c.sat_dim);
  else if (key == "kp_dim") as_size(c.kp_dim);
  else if (key == "model_dim") as_size(c.model_dim);
  else if (key == "heads") as_size(c.heads);
  else if (key == "ff_dim") as_size(c.ff_dim);
  else if (key == "align_bins") as_size(c.align_bins);
  else if (key == "conv_kernel") as_size(c.conv_kernel);
  else if (key == "seed") {
    std::size_t s = 0;
    as_size(s);
    c.seed = s;
  } else if (key == "dropout") {
    try {
      c.dropout = std::stod(value);
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "model.dropout: expected a number, got '" + value + "'");
    }
  } else if (key == "positional_encoding") {
    if (value != "true" && value != "false") fail(ErrorKind::Config, "model.positional_encoding must be true/false");
    c.positional_encoding = value == "true";
  } else {
    return false;
  }
  return true;
}

inline ModelConfig parse_model_config(std::istream& in) {
  ModelConfig c;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = std::string(ingest::trim(line));
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Config, "model config line without '=': " + t);
    const std::string key(ingest::trim(t.substr(0, eq))), val(ingest::trim(t.substr(eq + 1)));
    if (!set_field(c, key, val)) fail(ErrorKind::Config, "unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

inline const std::array<std::string, 3>& branch_names() {
  static const std::array<std::string, 3> names = {"img", "sat", "kp"};
  return names;
}

inline std::size_t branch_input_width(const ModelConfig& c, const std::string& branch) {
  if (branch == "img") return c.img_dim;
  if (branch == "sat") return c.sat_dim;
  if (branch == "kp") return c.kp_dim;
  fail(ErrorKind::Config, "unknown branch '" + branch + "'");
}

/// He-uniform weights and zero biases, deterministic in `cfg.seed`.
inline ParamStore init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ParamStore s;
  const std::size_t D = cfg.model_dim, F = cfg.ff_dim, K = cfg.align_bins, C = cfg.fused_dim();
  auto weight = [&](const std::string& path, std::size_t in, std::size_t out) {
    s.add(path, nn::he_uniform({in, out}, in, rng), true);
  };
  auto bias = [&](const std::string& path, std::size_t n) { s.add(path, Tensor({n}, 0.0), false); };
  for (const auto& b : branch_names()) {
    weight(b + ".in.W", branch_input_width(cfg, b), D);
    bias(b + ".in.b", D);
    for (const char* w : {"Wq", "Wk", "Wv", "Wo"}) weight(b + ".attn." + w, D, D);
    weight(b + ".ff1.W", D, F);
    bias(b + ".ff1.b", F);
    weight(b + ".ff2.W", F, D);
    bias(b + ".ff2.b", D);
    weight(b + ".align.W", D, K);
    bias(b + ".align.b", K);
  }
  s.add("fuse.conv.K", nn::he_uniform({cfg.conv_kernel, C, C}, cfg.conv_kernel * C, rng), true);
  bias("fuse.conv.b", C);
  for (const char* w : {"Wq", "Wk", "Wv", "Wo"}) weight(std::string("fuse.attn.") + w, C, C);
  weight("head.W", 2 * C, cfg.output_steps * kHeadWidth);
  bias("head.b", cfg.output_steps * kHeadWidth);
  return s;
}

/// Dropout randomness and mode for one forward pass.
struct ForwardContext {
  Mode mode = Mode::Inference;
  std::mt19937_64* rng = nullptr;
};

inline Var maybe_dropout(Var x, const ModelConfig& cfg, const ForwardContext& ctx) {
  if (ctx.mode == Mode::Inference || cfg.dropout == 0.0) return x;
  if (!ctx.rng) fail(ErrorKind::Config, "training-mode forward needs a random generator");
  return nn::dropout(x, cfg.dropout, ctx.mode, *ctx.rng);
}

/// Input projection, then attention -> dropout -> residual -> feed-forward -> dropout -> residual.
inline Var encode_modality(Tape& tape, const ParamStore& ps, const std::string& branch, Var x,
                           const ModelConfig& cfg, const ForwardContext& ctx) {
  const std::size_t width = branch_input_width(cfg, branch);
  if (x.value().rank() != 2 || x.value().cols() != width)
    fail(ErrorKind::Dimension, branch + " encoder expects width " + std::to_string(width) + ", got " +
                                   x.value().shape_str());
  auto P = [&](const std::string& name) { return tape.param(ps, branch + "." + name); };
  Var h = nn::dense(x, P("in.W"), P("in.b"));
  if (cfg.positional_encoding) h = nn::add_positional_encoding(h);
  const Var a = nn::multi_head_attention(h, {P("attn.Wq"), P("attn.Wk"), P("attn.Wv"), P("attn.Wo")}, cfg.heads);
  h = nn::add(h, maybe_dropout(a, cfg, ctx));
  const Var f = nn::dense(nn::relu(nn::dense(h, P("ff1.W"), P("ff1.b"))), P("ff2.W"), P("ff2.b"));
  return nn::add(h, maybe_dropout(f, cfg, ctx));
}

/// Time-mean of the encoding through dense + softmax: one distribution over K bins.
inline Var project_alignment(Tape& tape, const ParamStore& ps, const std::string& branch, Var h) {
  return nn::softmax(
      nn::dense(nn::global_avg_pool(h), tape.param(ps, branch + ".align.W"), tape.param(ps, branch + ".align.b")), 1);
}

struct ForwardVars {
  Var logits;  // output_steps x 42, pre-activation
  Var dist28;  // output_steps x 28
  Var dist10;  // output_steps x 10
  Var dist3;   // output_steps x 3
  Var p_high;  // output_steps x 1
  std::array<Var, 3> align;  // img, sat, kp; each 1 x K
};

inline ForwardVars fuse_and_head(Tape& tape, const ParamStore& ps, Var h_img, Var h_sat, Var h_kp,
                                 const ModelConfig& cfg) {
  const std::size_t T = h_img.value().rows();
  if (h_sat.value().rows() != T || h_kp.value().rows() != T)
    fail(ErrorKind::Dimension, "branch step counts disagree: " + h_img.value().shape_str() + ", " +
                                   h_sat.value().shape_str() + ", " + h_kp.value().shape_str());
  const Var cat = nn::concat_cols({h_img, h_sat, h_kp});
  const Var local = nn::global_avg_pool(
      nn::conv1d_residual(cat, tape.param(ps, "fuse.conv.K"), tape.param(ps, "fuse.conv.b")));
  const Var global = nn::global_avg_pool(nn::multi_head_attention(
      cat,
      {tape.param(ps, "fuse.attn.Wq"), tape.param(ps, "fuse.attn.Wk"), tape.param(ps, "fuse.attn.Wv"),
       tape.param(ps, "fuse.attn.Wo")},
      cfg.heads));
  const Var fused = nn::concat_cols({local, global});
  const Var flat = nn::dense(fused, tape.param(ps, "head.W"), tape.param(ps, "head.b"));
  ForwardVars out;
  out.logits = nn::reshape(flat, {cfg.output_steps, kHeadWidth});
  out.dist28 = nn::softmax(nn::slice_cols(out.logits, 0, 28), 1);
  out.dist10 = nn::softmax(nn::slice_cols(out.logits, 28, 38), 1);
  out.dist3 = nn::softmax(nn::slice_cols(out.logits, 38, 41), 1);
  out.p_high = nn::sigmoid(nn::slice_cols(out.logits, 41, 42));
  return out;
}

inline ForwardVars forward(Tape& tape, const ParamStore& ps, const dataset::WindowSample& s, const ModelConfig& cfg,
                           const ForwardContext& ctx = {}) {
  if (s.input_steps() != cfg.input_steps)
    fail(ErrorKind::Dimension, "sample has " + std::to_string(s.input_steps()) + " input steps, model expects " +
                                   std::to_string(cfg.input_steps));
  const std::array<const Tensor*, 3> inputs = {&s.img_in, &s.sat_in, &s.kp_in};
  std::array<Var, 3> enc;
  std::array<Var, 3> align;
  for (std::size_t b = 0; b < 3; ++b) {
    const Var x = tape.constant(*inputs[b]);
    enc[b] = encode_modality(tape, ps, branch_names()[b], x, cfg, ctx);
    align[b] = project_alignment(tape, ps, branch_names()[b], enc[b]);
  }
  ForwardVars out = fuse_and_head(tape, ps, enc[0], enc[1], enc[2], cfg);
  out.align = align;
  return out;
}

/// Plain-value view of a forward pass.
struct ModelOutput {
  Tensor dist28, dist10, dist3, p_high;
  std::array<Tensor, 3> align;
};

inline ModelOutput values(const ForwardVars& v) {
  return {v.dist28.value(), v.dist10.value(), v.dist3.value(), v.p_high.value(),
          {v.align[0].value(), v.align[1].value(), v.align[2].value()}};
}

/// Inference-mode forward.
inline ModelOutput predict(const ParamStore& ps, const dataset::WindowSample& s, const ModelConfig& cfg) {
  Tape tape(false);
  return values(forward(tape, ps, s, cfg, {}));
}

}  // namespace kpcast::model
