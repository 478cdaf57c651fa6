#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "lmu/fft.hpp"
#include "lmu/ops.hpp"

namespace lmu {

namespace detail {

// out = a^T b for a [m x k], b [m x p] -> [k x p]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  const std::int64_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != m) throw ShapeError("matmul_tn: row mismatch");
  Tensor<T> c(Shape{k, p});
  for (std::int64_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    const T* brow = b.data() + i * p;
    for (std::int64_t l = 0; l < k; ++l) {
      const T v = arow[l];
      T* crow = c.data() + l * p;
      for (std::int64_t j = 0; j < p; ++j) crow[j] += v * brow[j];
    }
  }
  flop_counter().add_real(2 * m * k * p);
  return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reverse-mode tape. Each operation appends a node holding its value and a
// backward closure; creation order is a topological order, so backward()
// replays closures in reverse. Gradient accumulation is fixed-order, making
// gradients deterministic for a given seed and data order.
// ---------------------------------------------------------------------------

template <typename T>
class Tape {
 public:
  using VarId = std::int32_t;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf bound to an external parameter tensor: after backward(), the node
  // gradient is accumulated into the tensor's own grad storage.
  VarId param(Tensor<T>& t) {
    const VarId id = push(t, true);
    nodes_[static_cast<std::size_t>(id)].bound = &t;
    param_ids_.push_back(id);
    return id;
  }

  VarId constant(Tensor<T> t) { return push(std::move(t), false); }

  const Tensor<T>& value(VarId id) const { return node(id).val; }
  const Tensor<T>& grad_of(VarId id) const { return node(id).grad; }
  std::size_t size() const { return nodes_.size(); }

  // Parameter nodes in bind order; bound_of pairs them with their tensors.
  const std::vector<VarId>& param_ids() const { return param_ids_; }
  Tensor<T>* bound_of(VarId id) const { return node(id).bound; }

  // -- elementwise / shape ops ------------------------------------------

  VarId add(VarId a, VarId b) {
    check_same_shape(value(a), value(b), "tape add");
    Tensor<T> out = lmu::add(value(a), value(b));
    return make(std::move(out), {a, b}, [this, a, b](const Tensor<T>& g) {
      accum(a, g.raw());
      accum(b, g.raw());
    });
  }

  VarId add_bias(VarId x, VarId bias) {
    Tensor<T> out = lmu::add_bias(value(x), value(bias));
    const std::int64_t d = value(bias).size();
    return make(std::move(out), {x, bias}, [this, x, bias, d](const Tensor<T>& g) {
      accum(x, g.raw());
      auto& gb = grad(bias);
      const std::int64_t rows = g.size() / d;
      for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
    });
  }

  VarId scale(VarId a, T s) {
    Tensor<T> out = lmu::scale(value(a), s);
    return make(std::move(out), {a}, [this, a, s](const Tensor<T>& g) {
      auto& ga = grad(a);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
  }

  VarId gelu(VarId a) {
    Tensor<T> out = lmu::gelu(value(a));
    return make(std::move(out), {a}, [this, a](const Tensor<T>& g) {
      auto& ga = grad(a);
      const Tensor<T>& x = value(a);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += gelu_grad_scalar(x[i]) * g[i];
    });
  }

  // -- matrix products ----------------------------------------------------

  VarId matmul(VarId a, VarId b) {
    Tensor<T> out = lmu::matmul(value(a), value(b));
    return make(std::move(out), {a, b}, [this, a, b](const Tensor<T>& g) {
      accum_tensor(a, lmu::matmul_nt(g, value(b)));
      accum_tensor(b, detail::matmul_tn(value(a), g));
    });
  }

  // out = a b^T with b given [p x k]
  VarId matmul_nt(VarId a, VarId b) {
    Tensor<T> out = lmu::matmul_nt(value(a), value(b));
    return make(std::move(out), {a, b}, [this, a, b](const Tensor<T>& g) {
      accum_tensor(a, lmu::matmul(g, value(b)));
      accum_tensor(b, detail::matmul_tn(g, value(a)));
    });
  }

  // Batched product over the leading axis: [B,r,s] x [B,s,c] -> [B,r,c]
  VarId bmm(VarId a, VarId b) {
    const Tensor<T>&av = value(a), &bv = value(b);
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1))
      throw ShapeError("bmm: incompatible shapes " + shape_str(av.shape()) + " x " +
                       shape_str(bv.shape()));
    const std::int64_t bs = av.dim(0), r = av.dim(1), s = av.dim(2), c = bv.dim(2);
    Tensor<T> out(Shape{bs, r, c});
    for (std::int64_t t = 0; t < bs; ++t)
      slice_mm(av.data() + t * r * s, bv.data() + t * s * c, out.data() + t * r * c, r, s, c);
    flop_counter().add_real(2 * bs * r * s * c);
    return make(std::move(out), {a, b}, [this, a, b, bs, r, s, c](const Tensor<T>& g) {
      auto& ga = grad(a);
      auto& gb = grad(b);
      const Tensor<T>&av2 = value(a), &bv2 = value(b);
      for (std::int64_t t = 0; t < bs; ++t) {
        // dA = dC B^T ; dB = A^T dC
        slice_mm_nt(g.data() + t * r * c, bv2.data() + t * s * c, ga.data() + t * r * s, r, c, s);
        slice_mm_tn(av2.data() + t * r * s, g.data() + t * r * c, gb.data() + t * s * c, r, s, c);
      }
    });
  }

  // Batched a b^T: [B,r,k] x [B,s,k] -> [B,r,s]
  VarId bmm_nt(VarId a, VarId b) {
    const Tensor<T>&av = value(a), &bv = value(b);
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2))
      throw ShapeError("bmm_nt: incompatible shapes " + shape_str(av.shape()) + " x " +
                       shape_str(bv.shape()));
    const std::int64_t bs = av.dim(0), r = av.dim(1), k = av.dim(2), s = bv.dim(1);
    Tensor<T> out(Shape{bs, r, s});
    for (std::int64_t t = 0; t < bs; ++t)
      slice_mm_nt(av.data() + t * r * k, bv.data() + t * s * k, out.data() + t * r * s, r, k, s);
    flop_counter().add_real(2 * bs * r * k * s);
    return make(std::move(out), {a, b}, [this, a, b, bs, r, k, s](const Tensor<T>& g) {
      auto& ga = grad(a);
      auto& gb = grad(b);
      const Tensor<T>&av2 = value(a), &bv2 = value(b);
      for (std::int64_t t = 0; t < bs; ++t) {
        // dA = dC B ; dB = dC^T A
        slice_mm(g.data() + t * r * s, bv2.data() + t * s * k, ga.data() + t * r * k, r, s, k);
        slice_mm_tn(g.data() + t * r * s, av2.data() + t * r * k, gb.data() + t * s * k, r, s, k);
      }
    });
  }

  // Fixed-shape left factor broadcast over the batch: [r,q] x [B,q,d] -> [B,r,d]
  VarId lmat_bcast(VarId l, VarId m) {
    const Tensor<T>&lv = value(l), &mv = value(m);
    if (lv.rank() != 2 || mv.rank() != 3 || lv.dim(1) != mv.dim(1))
      throw ShapeError("lmat_bcast: incompatible shapes " + shape_str(lv.shape()) + " x " +
                       shape_str(mv.shape()));
    const std::int64_t bs = mv.dim(0), r = lv.dim(0), q = lv.dim(1), d = mv.dim(2);
    Tensor<T> out(Shape{bs, r, d});
    for (std::int64_t t = 0; t < bs; ++t)
      slice_mm(lv.data(), mv.data() + t * q * d, out.data() + t * r * d, r, q, d);
    flop_counter().add_real(2 * bs * r * q * d);
    return make(std::move(out), {l, m}, [this, l, m, bs, r, q, d](const Tensor<T>& g) {
      auto& gl = grad(l);
      auto& gm = grad(m);
      const Tensor<T>&lv2 = value(l), &mv2 = value(m);
      for (std::int64_t t = 0; t < bs; ++t) {
        slice_mm_nt(g.data() + t * r * d, mv2.data() + t * q * d, gl.data(), r, d, q);
        slice_mm_tn(lv2.data(), g.data() + t * r * d, gm.data() + t * q * d, r, q, d);
      }
    });
  }

  // out[b,c] = sum_j p[j] m[b,j,c] for p [r], m [B,r,d]
  VarId rowvec_bcast(VarId p, VarId m) {
    const Tensor<T>&pv = value(p), &mv = value(m);
    if (pv.rank() != 1 || mv.rank() != 3 || pv.size() != mv.dim(1))
      throw ShapeError("rowvec_bcast: incompatible shapes");
    const std::int64_t bs = mv.dim(0), r = mv.dim(1), d = mv.dim(2);
    Tensor<T> out(Shape{bs, d});
    for (std::int64_t t = 0; t < bs; ++t)
      for (std::int64_t j = 0; j < r; ++j) {
        const T w = pv[j];
        const T* src = mv.data() + (t * r + j) * d;
        T* dst = out.data() + t * d;
        for (std::int64_t c = 0; c < d; ++c) dst[c] += w * src[c];
      }
    flop_counter().add_real(2 * bs * r * d);
    return make(std::move(out), {p, m}, [this, p, m, bs, r, d](const Tensor<T>& g) {
      auto& gp = grad(p);
      auto& gm = grad(m);
      const Tensor<T>&pv2 = value(p), &mv2 = value(m);
      for (std::int64_t t = 0; t < bs; ++t)
        for (std::int64_t j = 0; j < r; ++j) {
          const T* grow = g.data() + t * d;
          const T* mrow = mv2.data() + (t * r + j) * d;
          T* gmrow = gm.data() + (t * r + j) * d;
          T acc = T(0);
          for (std::int64_t c = 0; c < d; ++c) {
            acc += grow[c] * mrow[c];
            gmrow[c] += pv2[j] * grow[c];
          }
          gp[j] += acc;
        }
    });
  }

  // -- normalization / attention ------------------------------------------

  VarId layer_norm(VarId x, VarId gain, VarId bias, T eps) {
    const Tensor<T>& xv = value(x);
    const std::int64_t d = xv.dim(xv.rank() - 1);
    const std::int64_t rows = xv.size() / d;
    Tensor<T> out(xv.shape());
    std::vector<T> xhat(static_cast<std::size_t>(xv.size()));
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    const Tensor<T>&gv = value(gain), &bv = value(bias);
    for (std::int64_t i = 0; i < rows; ++i) {
      const T* xi = xv.data() + i * d;
      T mean = T(0);
      for (std::int64_t j = 0; j < d; ++j) mean += xi[j];
      mean /= T(d);
      T var = T(0);
      for (std::int64_t j = 0; j < d; ++j) {
        const T c = xi[j] - mean;
        var += c * c;
      }
      var /= T(d);
      const T inv = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(i)] = inv;
      for (std::int64_t j = 0; j < d; ++j) {
        const T xh = (xi[j] - mean) * inv;
        xhat[static_cast<std::size_t>(i * d + j)] = xh;
        out[i * d + j] = xh * gv[j] + bv[j];
      }
    }
    flop_counter().add_real(rows * (8 * d + 2));
    return make(std::move(out), {x, gain, bias},
                [this, x, gain, bias, d, rows, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](const Tensor<T>& g) {
                  auto& gx = grad(x);
                  auto& gg = grad(gain);
                  auto& gb = grad(bias);
                  const Tensor<T>& gv2 = value(gain);
                  std::vector<T> dy(static_cast<std::size_t>(d));
                  for (std::int64_t i = 0; i < rows; ++i) {
                    const T* grow = g.data() + i * d;
                    const T* xh = xhat.data() + i * d;
                    T sum_dy = T(0), sum_dy_xh = T(0);
                    for (std::int64_t j = 0; j < d; ++j) {
                      dy[static_cast<std::size_t>(j)] = grow[j] * gv2[j];
                      sum_dy += dy[static_cast<std::size_t>(j)];
                      sum_dy_xh += dy[static_cast<std::size_t>(j)] * xh[j];
                      gg[j] += grow[j] * xh[j];
                      gb[j] += grow[j];
                    }
                    const T inv = inv_std[static_cast<std::size_t>(i)];
                    const T mean_dy = sum_dy / T(d);
                    const T mean_dy_xh = sum_dy_xh / T(d);
                    for (std::int64_t j = 0; j < d; ++j)
                      gx[i * d + j] += inv * (dy[static_cast<std::size_t>(j)] - mean_dy - xh[j] * mean_dy_xh);
                  }
                });
  }

  // Softmax over the last axis of any rank (rows of length c).
  VarId softmax_lastdim(VarId a) {
    const Tensor<T>& av = value(a);
    const std::int64_t c = av.dim(av.rank() - 1);
    const std::int64_t rows = av.size() / c;
    Tensor<T> out(av.shape());
    for (std::int64_t i = 0; i < rows; ++i) {
      const T* xi = av.data() + i * c;
      T* yi = out.data() + i * c;
      T mx = xi[0];
      for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
      T sum = T(0);
      for (std::int64_t j = 0; j < c; ++j) {
        yi[j] = std::exp(xi[j] - mx);
        sum += yi[j];
      }
      for (std::int64_t j = 0; j < c; ++j) yi[j] /= sum;
    }
    flop_counter().add_real(rows * (3 * c - 1));
    const VarId id = make(std::move(out), {a}, nullptr);
    node(id).back = [this, a, id, c, rows](const Tensor<T>& g) {
      auto& ga = grad(a);
      const Tensor<T>& y = value(id);
      for (std::int64_t i = 0; i < rows; ++i) {
        const T* yi = y.data() + i * c;
        const T* gi = g.data() + i * c;
        T dot = T(0);
        for (std::int64_t j = 0; j < c; ++j) dot += yi[j] * gi[j];
        for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] += yi[j] * (gi[j] - dot);
      }
    };
    return id;
  }

  // Softmax over the causal prefix of each row of an [n x n] score matrix;
  // entries above the diagonal are forced to zero probability.
  VarId causal_softmax(VarId a) {
    const Tensor<T>& av = value(a);
    if (av.rank() != 2 || av.dim(0) != av.dim(1))
      throw ShapeError("causal_softmax: square matrix expected");
    const std::int64_t n = av.dim(0);
    Tensor<T> out(av.shape());
    for (std::int64_t t = 0; t < n; ++t) {
      const std::int64_t span = t + 1;
      const T* xi = av.data() + t * n;
      T* yi = out.data() + t * n;
      T mx = xi[0];
      for (std::int64_t j = 1; j < span; ++j) mx = std::max(mx, xi[j]);
      T sum = T(0);
      for (std::int64_t j = 0; j < span; ++j) {
        yi[j] = std::exp(xi[j] - mx);
        sum += yi[j];
      }
      for (std::int64_t j = 0; j < span; ++j) yi[j] /= sum;
    }
    flop_counter().add_real(3 * n * (n + 1) / 2);
    const VarId id = make(std::move(out), {a}, nullptr);
    node(id).back = [this, a, id, n](const Tensor<T>& g) {
      auto& ga = grad(a);
      const Tensor<T>& y = value(id);
      for (std::int64_t t = 0; t < n; ++t) {
        const std::int64_t span = t + 1;
        const T* yi = y.data() + t * n;
        const T* gi = g.data() + t * n;
        T dot = T(0);
        for (std::int64_t j = 0; j < span; ++j) dot += yi[j] * gi[j];
        for (std::int64_t j = 0; j < span; ++j) ga[t * n + j] += yi[j] * (gi[j] - dot);
      }
    };
    return id;
  }

  // -- structured ops -------------------------------------------------------

  // Causal convolution with a fixed (frozen) kernel bank: gradients flow to
  // the input only, never into the kernel.
  VarId causal_conv(VarId x, const ConvKernel<T>* kernel) {
    Tensor<T> out = kernel->apply(value(x));
    return make(std::move(out), {x}, [this, x, kernel](const Tensor<T>& g) {
      accum_tensor(x, kernel->input_grad(g));
    });
  }

  // Row gather: out[i] = table[ids[i]].
  VarId embed(const std::vector<std::int32_t>& ids, VarId table) {
    const Tensor<T>& tv = value(table);
    const std::int64_t d = tv.dim(1);
    const std::int64_t n = static_cast<std::int64_t>(ids.size());
    Tensor<T> out(Shape{n, d});
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int32_t id = ids[static_cast<std::size_t>(i)];
      if (id < 0 || id >= tv.dim(0))
        throw InputError("embed: token id " + std::to_string(id) + " out of range [0, " +
                         std::to_string(tv.dim(0)) + ")");
      std::copy(tv.data() + id * d, tv.data() + (id + 1) * d, out.data() + i * d);
    }
    return make(std::move(out), {table}, [this, table, ids, n, d](const Tensor<T>& g) {
      auto& gt = grad(table);
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t id = ids[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < d; ++j) gt[id * d + j] += g[i * d + j];
      }
    });
  }

  // Mean cross-entropy (nats) of next-token logits over unmasked positions.
  // per_position, when given, receives every position's loss (0 where masked).
  VarId cross_entropy(VarId logits, const std::vector<std::int32_t>& targets,
                      const std::vector<std::uint8_t>& mask, std::vector<T>* per_position = nullptr) {
    const Tensor<T>& lv = value(logits);
    const std::int64_t n = lv.dim(0), v = lv.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != n || mask.size() != targets.size())
      throw ShapeError("cross_entropy: targets/mask must have one entry per row");
    Tensor<T> probs(lv.shape());
    std::int64_t count = 0;
    T total = T(0);
    if (per_position) per_position->assign(static_cast<std::size_t>(n), T(0));
    for (std::int64_t i = 0; i < n; ++i) {
      const T* xi = lv.data() + i * v;
      T* pi = probs.data() + i * v;
      T mx = xi[0];
      for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, xi[j]);
      T sum = T(0);
      for (std::int64_t j = 0; j < v; ++j) {
        pi[j] = std::exp(xi[j] - mx);
        sum += pi[j];
      }
      const T inv = T(1) / sum;
      for (std::int64_t j = 0; j < v; ++j) pi[j] *= inv;
      if (!mask[static_cast<std::size_t>(i)]) continue;
      const std::int32_t tgt = targets[static_cast<std::size_t>(i)];
      if (tgt < 0 || tgt >= v) throw InputError("cross_entropy: target out of range");
      const T loss = std::log(sum) - (xi[tgt] - mx);
      total += loss;
      ++count;
      if (per_position) (*per_position)[static_cast<std::size_t>(i)] = loss;
    }
    if (count == 0) throw InputError("cross_entropy: no unmasked positions");
    Tensor<T> out(Shape{1});
    out[0] = total / T(count);
    flop_counter().add_real(n * (3 * v + 2));
    return make(std::move(out), {logits},
                [this, logits, targets, mask, probs = std::move(probs), count, n, v](const Tensor<T>& g) {
                  auto& gl = grad(logits);
                  const T w = g[0] / T(count);
                  for (std::int64_t i = 0; i < n; ++i) {
                    if (!mask[static_cast<std::size_t>(i)]) continue;
                    const T* pi = probs.data() + i * v;
                    for (std::int64_t j = 0; j < v; ++j) gl[i * v + j] += w * pi[j];
                    gl[i * v + targets[static_cast<std::size_t>(i)]] -= w;
                  }
                });
  }

  // -- backward -------------------------------------------------------------

  // Replays the backward closures in reverse creation order. When
  // write_bound is false the gradients stay on the tape (read them through
  // param_ids/grad_of), which keeps concurrent per-item tapes race-free.
  void backward(VarId loss, bool write_bound = true) {
    if (nodes_.empty()) throw StateError("backward: tape is empty");
    if (loss < 0 || static_cast<std::size_t>(loss) >= nodes_.size())
      throw StateError("backward: unknown loss variable");
    Node& ln = node(loss);
    if (ln.val.size() != 1) throw StateError("backward: loss must be scalar");
    grad(loss)[0] = T(1);
    for (std::int64_t i = loss; i >= 0; --i) {
      Node& nd = nodes_[static_cast<std::size_t>(i)];
      if (nd.needs && nd.back) nd.back(nd.grad);
    }
    if (!write_bound) return;
    for (auto& nd : nodes_) {
      if (nd.bound) {
        nd.bound->ensure_grad();
        auto& dst = nd.bound->grad();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += nd.grad.raw()[i];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool needs = false;
    std::function<void(const Tensor<T>&)> back;
    Tensor<T>* bound = nullptr;
  };

  Node& node(VarId id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(VarId id) const { return nodes_[static_cast<std::size_t>(id)]; }

  VarId push(Tensor<T> val, bool needs) {
    Node nd;
    nd.needs = needs;
    if (needs) nd.grad = Tensor<T>(val.shape());
    nd.val = std::move(val);
    nodes_.push_back(std::move(nd));
    return static_cast<VarId>(nodes_.size() - 1);
  }

  VarId make(Tensor<T> val, std::initializer_list<VarId> inputs,
             std::function<void(const Tensor<T>&)> back) {
    bool needs = false;
    for (VarId in : inputs) needs = needs || node(in).needs;
    const VarId id = push(std::move(val), needs);
    if (needs) node(id).back = std::move(back);
    return id;
  }

  // Allocated on first touch, so closures may accumulate into constants
  // (the values are simply never read back).
  std::vector<T>& grad(VarId id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.val.shape());
    return n.grad.raw();
  }

  void accum(VarId id, const std::vector<T>& g) {
    auto& dst = grad(id);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }

  void accum_tensor(VarId id, const Tensor<T>& g) { accum(id, g.raw()); }

  // c += a b (raw row-major slices)
  static void slice_mm(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t p) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t l = 0; l < k; ++l) {
        const T v = a[i * k + l];
        const T* brow = b + l * p;
        T* crow = c + i * p;
        for (std::int64_t j = 0; j < p; ++j) crow[j] += v * brow[j];
      }
  }
  // c += a b^T for a [m x k], b [p x k]
  static void slice_mm_nt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t p) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < p; ++j) {
        T acc = T(0);
        for (std::int64_t l = 0; l < k; ++l) acc += a[i * k + l] * b[j * k + l];
        c[i * p + j] += acc;
      }
  }
  // c += a^T b for a [m x k], b [m x p]
  static void slice_mm_tn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t p) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t l = 0; l < k; ++l) {
        const T v = a[i * k + l];
        const T* brow = b + i * p;
        T* crow = c + l * p;
        for (std::int64_t j = 0; j < p; ++j) crow[j] += v * brow[j];
      }
  }

  std::vector<Node> nodes_;
  std::vector<VarId> param_ids_;
};

}  // namespace lmu
