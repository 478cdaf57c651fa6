#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lmu/autodiff.hpp"
#include "lmu/blocks.hpp"

namespace lmu {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class Variant { lmu, lmu_global };
enum class Backend { fft, state_space, rk };

inline std::string variant_name(Variant v) { return v == Variant::lmu ? "lmu" : "lmu_global"; }

inline Variant variant_from_name(const std::string& s) {
  if (s == "lmu") return Variant::lmu;
  if (s == "lmu_global") return Variant::lmu_global;
  throw ConfigError("unknown variant '" + s + "' (expected lmu or lmu_global)");
}

struct ModelConfig {
  std::int64_t n = 128;      // sequence length (theta defaults to n)
  std::int64_t vocab = 257;  // byte vocabulary plus separator
  std::int64_t d = 16;
  std::int64_t layers = 2;
  std::int64_t d_prime = 64;  // FFN hidden width, 4d by default
  Variant variant = Variant::lmu;
  LmuConfig lmu = LmuConfig::make(128.0, 16);

  void validate() const {
    if (n < 2) throw ConfigError("ModelConfig: n must be >= 2");
    if (vocab < 2) throw ConfigError("ModelConfig: vocab must be >= 2");
    if (d < 1 || d_prime < 1 || layers < 1) throw ConfigError("ModelConfig: bad dimensions");
    lmu.validate();
  }
};

// Embedding width from a non-embedding parameter budget: the nearest even
// integer to sqrt(N/24), floored at 2.
inline std::int64_t embed_dim_for(std::int64_t target_n) {
  if (target_n < 24)
    throw ConfigError("embed_dim_for: budget must be >= 24, got " + std::to_string(target_n));
  const double d = std::sqrt(static_cast<double>(target_n) / 24.0);
  return std::max<std::int64_t>(2, 2 * std::llround(d / 2.0));
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct LayerParams {
  // Exactly one pre-block is active, selected by the model variant.
  FfnParams<T> pre_ffn;
  GlobalAttentionParams<T> pre_attn;
  ImplicitAttentionParams<T> attn;
  FfnParams<T> post_ffn;
  Tensor<T> norm1_g, norm1_b, norm2_g, norm2_b, norm3_g, norm3_b;
};

template <typename T>
struct ModelParams {
  Tensor<T> tok_emb;  // vocab x d (also the weight-tied LM head)
  Tensor<T> pos_emb;  // n x d
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_g, final_b;
};

// Fixed enumeration order for optimizers, checkpoints and gradient checks.
template <typename T, typename Fn>
void for_each_param(ModelParams<T>& p, Variant variant, Fn&& fn) {
  fn("tok_emb", p.tok_emb);
  fn("pos_emb", p.pos_emb);
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    auto& l = p.layers[li];
    const std::string pre = "layer" + std::to_string(li) + ".";
    if (variant == Variant::lmu) {
      fn(pre + "pre_ffn.W1", l.pre_ffn.W1);
      fn(pre + "pre_ffn.b1", l.pre_ffn.b1);
      fn(pre + "pre_ffn.W2", l.pre_ffn.W2);
      fn(pre + "pre_ffn.b2", l.pre_ffn.b2);
    } else {
      fn(pre + "pre_attn.Wq", l.pre_attn.Wq);
      fn(pre + "pre_attn.Wk", l.pre_attn.Wk);
      fn(pre + "pre_attn.Wv", l.pre_attn.Wv);
      fn(pre + "pre_attn.Wo", l.pre_attn.Wo);
    }
    fn(pre + "attn.L1", l.attn.L1);
    fn(pre + "attn.L2", l.attn.L2);
    fn(pre + "attn.L3", l.attn.L3);
    fn(pre + "attn.p", l.attn.p);
    fn(pre + "post_ffn.W1", l.post_ffn.W1);
    fn(pre + "post_ffn.b1", l.post_ffn.b1);
    fn(pre + "post_ffn.W2", l.post_ffn.W2);
    fn(pre + "post_ffn.b2", l.post_ffn.b2);
    fn(pre + "norm1.g", l.norm1_g);
    fn(pre + "norm1.b", l.norm1_b);
    fn(pre + "norm2.g", l.norm2_g);
    fn(pre + "norm2.b", l.norm2_b);
    fn(pre + "norm3.g", l.norm3_g);
    fn(pre + "norm3.b", l.norm3_b);
  }
  fn("final.g", p.final_g);
  fn("final.b", p.final_b);
}

struct ParamCounts {
  std::int64_t embedding = 0;   // token + position tables (excluded from N)
  std::int64_t pre_blocks = 0;  // FFN or global attention, all layers
  std::int64_t attention = 0;   // implicit attention (3qq' + q'), all layers
  std::int64_t post_ffn = 0;
  std::int64_t norms = 0;
  std::int64_t non_embedding = 0;
  std::int64_t total = 0;
};

// ---------------------------------------------------------------------------
// Model: trainable parameters plus the frozen LMU system (A_bar, B_bar, H are
// not parameters and receive no gradients).
// ---------------------------------------------------------------------------

template <typename T>
struct Model {
  ModelConfig cfg;
  ModelParams<T> params;
  ContinuousSystem<T> csys;
  DiscreteSystem<T> dsys;
  ImpulseResponse<T> imp;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    std::mt19937_64 rng(seed);
    const double sd = 0.02;
    const std::int64_t d = cfg.d, dp = cfg.d_prime;
    m.params.tok_emb = Tensor<T>::randn(Shape{cfg.vocab, d}, rng, sd);
    m.params.pos_emb = Tensor<T>::randn(Shape{cfg.n, d}, rng, sd);
    m.params.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& l : m.params.layers) {
      if (cfg.variant == Variant::lmu)
        l.pre_ffn = FfnParams<T>::init(d, dp, rng, sd);
      else
        l.pre_attn = GlobalAttentionParams<T>::init(d, rng, sd);
      l.attn = ImplicitAttentionParams<T>::init(cfg.lmu.q, cfg.lmu.q_prime, rng, sd);
      l.post_ffn = FfnParams<T>::init(d, dp, rng, sd);
      l.norm1_g = Tensor<T>::full(Shape{d}, T(1));
      l.norm1_b = Tensor<T>(Shape{d});
      l.norm2_g = Tensor<T>::full(Shape{d}, T(1));
      l.norm2_b = Tensor<T>(Shape{d});
      l.norm3_g = Tensor<T>::full(Shape{d}, T(1));
      l.norm3_b = Tensor<T>(Shape{d});
    }
    m.params.final_g = Tensor<T>::full(Shape{d}, T(1));
    m.params.final_b = Tensor<T>(Shape{d});
    m.rebuild_frozen();
    return m;
  }

  void rebuild_frozen() {
    csys = build_continuous<T>(cfg.lmu);
    dsys = discretize_zoh(csys);
    imp = impulse_response(dsys, cfg.n);
  }

  ParamCounts count_params() const {
    ParamCounts c;
    const std::int64_t d = cfg.d, dp = cfg.d_prime;
    const std::int64_t ffn_n = 2 * d * dp + dp + d;
    for (const auto& l : params.layers) {
      c.pre_blocks += (cfg.variant == Variant::lmu) ? ffn_n : l.pre_attn.param_count();
      c.attention += l.attn.param_count();
      c.post_ffn += ffn_n;
      c.norms += 6 * d;
    }
    c.norms += 2 * d;  // final norm
    c.embedding = cfg.vocab * d + cfg.n * d;
    c.non_embedding = c.pre_blocks + c.attention + c.post_ffn + c.norms;
    c.total = c.non_embedding + c.embedding;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Plain (inference) forward pass. Pre-norm residual wiring per layer:
//   h += PreBlock(norm1 h); h += ImplicitAttention(norm2 h); h += FFN(norm3 h)
// then a final norm and the weight-tied projection to logits. The LMU path
// is strictly causal end to end.
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kLayerNormEps = 1e-5;

// Direct path: materialize the memory sequence with the chosen backend and
// apply the attention step at every position.
template <typename T>
Tensor<T> implicit_attention_direct(const Tensor<T>& x, const ImplicitAttentionParams<T>& params,
                                    const Tensor<T>& mem_seq) {
  const std::int64_t n = x.dim(0), d = x.dim(1), q = mem_seq.dim(1);
  Tensor<T> out(Shape{n, d});
  Tensor<T> m_t(Shape{q, d});
  for (std::int64_t t = 0; t < n; ++t) {
    std::copy(mem_seq.data() + t * q * d, mem_seq.data() + (t + 1) * q * d, m_t.data());
    const Tensor<T> row = implicit_attention_step(m_t, params);
    std::copy(row.data(), row.data() + d, out.data() + t * d);
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> forward_plain(const Model<T>& model, const std::vector<std::int32_t>& tokens,
                        Backend backend = Backend::fft) {
  const ModelConfig& cfg = model.cfg;
  if (static_cast<std::int64_t>(tokens.size()) != cfg.n)
    throw InputError("forward: expected " + std::to_string(cfg.n) + " tokens, got " +
                     std::to_string(tokens.size()));
  const std::int64_t n = cfg.n, d = cfg.d;
  const T eps = static_cast<T>(detail::kLayerNormEps);

  Tensor<T> h(Shape{n, d});
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int32_t id = tokens[static_cast<std::size_t>(i)];
    if (id < 0 || id >= cfg.vocab)
      throw InputError("forward: token id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(cfg.vocab) + ")");
    for (std::int64_t j = 0; j < d; ++j)
      h(i, j) = model.params.tok_emb(id, j) + model.params.pos_emb(i, j);
  }

  for (const auto& l : model.params.layers) {
    {
      const Tensor<T> a = layer_norm(h, l.norm1_g, l.norm1_b, eps);
      const Tensor<T> pre =
          (cfg.variant == Variant::lmu) ? ffn(a, l.pre_ffn) : global_causal_attention(a, l.pre_attn);
      h = add(h, pre);
    }
    {
      const Tensor<T> a = layer_norm(h, l.norm2_g, l.norm2_b, eps);
      Tensor<T> att;
      switch (backend) {
        case Backend::fft:
          att = implicit_attention_sequence(a, l.attn, model.imp);
          break;
        case Backend::state_space:
          att = detail::implicit_attention_direct(a, l.attn, run_state_space(model.dsys, a));
          break;
        case Backend::rk:
          att = detail::implicit_attention_direct(a, l.attn, run_rk(model.csys, a, 4));
          break;
      }
      h = add(h, att);
    }
    {
      const Tensor<T> a = layer_norm(h, l.norm3_g, l.norm3_b, eps);
      h = add(h, ffn(a, l.post_ffn));
    }
  }
  const Tensor<T> f = layer_norm(h, model.params.final_g, model.params.final_b, eps);
  return matmul_nt(f, model.params.tok_emb);
}

// ---------------------------------------------------------------------------
// Recording forward pass (FFT/convolution path) for training. The kernel of
// the causal convolution is the frozen impulse response: gradients reach the
// L_i, p and all dense weights but never H, A_bar or B_bar.
// ---------------------------------------------------------------------------

template <typename T>
struct TapeBindings {
  typename Tape<T>::VarId tok_emb, pos_emb, final_g, final_b;
  struct Layer {
    typename Tape<T>::VarId pre[4];
    typename Tape<T>::VarId L1, L2, L3, p;
    typename Tape<T>::VarId post[4];
    typename Tape<T>::VarId n1g, n1b, n2g, n2b, n3g, n3b;
  };
  std::vector<Layer> layers;
};

template <typename T>
typename Tape<T>::VarId forward_tape(Tape<T>& tape, Model<T>& model,
                                     const std::vector<std::int32_t>& tokens,
                                     TapeBindings<T>* bindings_out = nullptr) {
  using VarId = typename Tape<T>::VarId;
  const ModelConfig& cfg = model.cfg;
  if (static_cast<std::int64_t>(tokens.size()) != cfg.n)
    throw InputError("forward: expected " + std::to_string(cfg.n) + " tokens, got " +
                     std::to_string(tokens.size()));
  const T eps = static_cast<T>(detail::kLayerNormEps);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(cfg.d));

  TapeBindings<T> b;
  b.tok_emb = tape.param(model.params.tok_emb);
  b.pos_emb = tape.param(model.params.pos_emb);

  VarId h = tape.add(tape.embed(tokens, b.tok_emb), b.pos_emb);

  auto ffn_tape = [&](VarId x, VarId w1, VarId b1, VarId w2, VarId b2) {
    return tape.add_bias(tape.matmul(tape.gelu(tape.add_bias(tape.matmul(x, w1), b1)), w2), b2);
  };

  for (auto& l : model.params.layers) {
    typename TapeBindings<T>::Layer lb;
    lb.n1g = tape.param(l.norm1_g);
    lb.n1b = tape.param(l.norm1_b);
    lb.n2g = tape.param(l.norm2_g);
    lb.n2b = tape.param(l.norm2_b);
    lb.n3g = tape.param(l.norm3_g);
    lb.n3b = tape.param(l.norm3_b);
    {
      const VarId a = tape.layer_norm(h, lb.n1g, lb.n1b, eps);
      VarId pre;
      if (cfg.variant == Variant::lmu) {
        lb.pre[0] = tape.param(l.pre_ffn.W1);
        lb.pre[1] = tape.param(l.pre_ffn.b1);
        lb.pre[2] = tape.param(l.pre_ffn.W2);
        lb.pre[3] = tape.param(l.pre_ffn.b2);
        pre = ffn_tape(a, lb.pre[0], lb.pre[1], lb.pre[2], lb.pre[3]);
      } else {
        lb.pre[0] = tape.param(l.pre_attn.Wq);
        lb.pre[1] = tape.param(l.pre_attn.Wk);
        lb.pre[2] = tape.param(l.pre_attn.Wv);
        lb.pre[3] = tape.param(l.pre_attn.Wo);
        const VarId qv = tape.matmul(a, lb.pre[0]);
        const VarId kv = tape.matmul(a, lb.pre[1]);
        const VarId vv = tape.matmul(a, lb.pre[2]);
        const VarId att = tape.causal_softmax(tape.scale(tape.matmul_nt(qv, kv), inv_sqrt_d));
        pre = tape.matmul(tape.matmul(att, vv), lb.pre[3]);
      }
      h = tape.add(h, pre);
    }
    {
      const VarId a = tape.layer_norm(h, lb.n2g, lb.n2b, eps);
      const VarId mem = tape.causal_conv(a, &model.imp.kernel());
      lb.L1 = tape.param(l.attn.L1);
      lb.L2 = tape.param(l.attn.L2);
      lb.L3 = tape.param(l.attn.L3);
      lb.p = tape.param(l.attn.p);
      const VarId qv = tape.gelu(tape.lmat_bcast(lb.L1, mem));
      const VarId kv = tape.gelu(tape.lmat_bcast(lb.L2, mem));
      const VarId vv = tape.gelu(tape.lmat_bcast(lb.L3, mem));
      const VarId att = tape.softmax_lastdim(tape.bmm_nt(qv, kv));
      const VarId m_prime = tape.bmm(att, vv);
      h = tape.add(h, tape.rowvec_bcast(lb.p, m_prime));
    }
    {
      const VarId a = tape.layer_norm(h, lb.n3g, lb.n3b, eps);
      lb.post[0] = tape.param(l.post_ffn.W1);
      lb.post[1] = tape.param(l.post_ffn.b1);
      lb.post[2] = tape.param(l.post_ffn.W2);
      lb.post[3] = tape.param(l.post_ffn.b2);
      h = tape.add(h, ffn_tape(a, lb.post[0], lb.post[1], lb.post[2], lb.post[3]));
    }
    b.layers.push_back(lb);
  }
  b.final_g = tape.param(model.params.final_g);
  b.final_b = tape.param(model.params.final_b);
  const VarId f = tape.layer_norm(h, b.final_g, b.final_b, eps);
  const VarId logits = tape.matmul_nt(f, b.tok_emb);
  if (bindings_out) *bindings_out = b;
  return logits;
}

// ---------------------------------------------------------------------------
// Cross-entropy in nats: sequence mean plus the per-position vector.
// ---------------------------------------------------------------------------

template <typename T>
struct TokenLoss {
  T mean = T(0);
  std::vector<T> per_position;
};

template <typename T>
TokenLoss<T> per_token_loss(const Tensor<T>& logits, const std::vector<std::int32_t>& targets,
                            const std::vector<std::uint8_t>* mask = nullptr) {
  const std::int64_t n = logits.dim(0), v = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != n)
    throw ShapeError("per_token_loss: one target per logit row required");
  TokenLoss<T> out;
  out.per_position.assign(static_cast<std::size_t>(n), T(0));
  T total = T(0);
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (mask && !(*mask)[static_cast<std::size_t>(i)]) continue;
    const std::int32_t tgt = targets[static_cast<std::size_t>(i)];
    if (tgt < 0 || tgt >= v) throw InputError("per_token_loss: target id out of range");
    const T* xi = logits.data() + i * v;
    T mx = xi[0];
    for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, xi[j]);
    T sum = T(0);
    for (std::int64_t j = 0; j < v; ++j) sum += std::exp(xi[j] - mx);
    const T loss = std::log(sum) - (xi[tgt] - mx);
    out.per_position[static_cast<std::size_t>(i)] = loss;
    total += loss;
    ++count;
  }
  if (count == 0) throw InputError("per_token_loss: no unmasked positions");
  out.mean = total / T(count);
  flop_counter().add_real(count * (2 * v + 2));
  return out;
}

}  // namespace lmu
