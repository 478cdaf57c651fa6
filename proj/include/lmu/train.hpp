#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "lmu/checkpoint.hpp"
#include "lmu/corpus.hpp"
#include "lmu/model.hpp"

namespace lmu {

// ---------------------------------------------------------------------------
// Optimizer: Adam with the conventional defaults (beta1 = 0.9, beta2 = 0.999,
// eps = 1e-8) and bias correction.
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;  // aligned with for_each_param order
  std::int64_t t = 0;

  static AdamState init(ModelParams<T>& params, Variant variant) {
    AdamState s;
    for_each_param(params, variant, [&](const std::string&, Tensor<T>& p) {
      s.m.emplace_back(p.shape());
      s.v.emplace_back(p.shape());
    });
    return s;
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One Adam update from the gradients stored on the parameter tensors.
template <typename T>
void adam_step(ModelParams<T>& params, Variant variant, AdamState<T>& state, double lr) {
  state.t += 1;
  const T b1 = static_cast<T>(kAdamBeta1), b2 = static_cast<T>(kAdamBeta2);
  const T corr1 = static_cast<T>(1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t)));
  const T corr2 = static_cast<T>(1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t)));
  const T eps = static_cast<T>(kAdamEps);
  const T step_size = static_cast<T>(lr);
  std::size_t idx = 0;
  for_each_param(params, variant, [&](const std::string&, Tensor<T>& p) {
    if (!p.has_grad()) throw StateError("adam_step: parameter gradient missing");
    auto& g = p.grad();
    auto& m = state.m[idx].raw();
    auto& v = state.v[idx].raw();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / corr1;
      const T vhat = v[i] / corr2;
      p[static_cast<std::int64_t>(i)] -= step_size * mhat / (std::sqrt(vhat) + eps);
    }
    ++idx;
  });
}

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup to the peak, then cosine decay to
// zero at the final step; the plateau controller scales the result.
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::int64_t batch = 16;
  std::int64_t steps = 2000;
  std::int64_t warmup = 100;
  double peak_lr = 3e-4;
  double plateau_factor = 0.5;
  std::int64_t plateau_patience = 3;
  double plateau_min_delta = 1e-3;
  std::int64_t eval_interval = 50;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (batch < 1 || steps < 1) throw ConfigError("TrainConfig: batch and steps must be >= 1");
    if (warmup >= steps) throw ConfigError("TrainConfig: warmup must be below total steps");
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
      throw ConfigError("TrainConfig: plateau factor must lie in (0, 1)");
    if (eval_interval < 1) throw ConfigError("TrainConfig: eval interval must be >= 1");
    if (threads < 1) throw ConfigError("TrainConfig: threads must be >= 1");
  }
};

inline double lr_at(std::int64_t step, const TrainConfig& cfg, double plateau_scale = 1.0) {
  double lr;
  if (step < cfg.warmup) {
    lr = cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup);
  } else {
    const double progress =
        static_cast<double>(step - cfg.warmup) / static_cast<double>(cfg.steps - cfg.warmup);
    lr = cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return lr * plateau_scale;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct HistoryRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double train_nats = 0.0;
  double val_nats = 0.0;
};

struct TrainResult {
  std::vector<HistoryRow> history;                   // one row per eval
  std::vector<std::vector<double>> val_per_position; // one vector per eval
  double final_val_nats = 0.0;
};

inline void write_history_csv(std::ostream& os, const TrainResult& result) {
  os << "step,lr,train_nats,val_nats\n";
  for (const auto& row : result.history)
    os << row.step << ',' << row.lr << ',' << row.train_nats << ',' << row.val_nats << '\n';
}

inline void write_per_position_csv(std::ostream& os, const TrainResult& result,
                                   const std::vector<HistoryRow>& history) {
  os << "eval_step,position,loss_nats\n";
  for (std::size_t e = 0; e < result.val_per_position.size(); ++e)
    for (std::size_t p = 0; p < result.val_per_position[e].size(); ++p)
      os << history[e].step << ',' << p + 1 << ',' << result.val_per_position[e][p] << '\n';
}

namespace detail {

// Next-token targets: position j predicts token j+1, so the final row and
// rows whose target is padding are masked.
inline void shift_targets(const std::vector<std::int32_t>& seq, const std::vector<std::uint8_t>& mask,
                          std::vector<std::int32_t>& targets, std::vector<std::uint8_t>& tmask) {
  const std::size_t n = seq.size();
  targets.assign(n, 0);
  tmask.assign(n, 0);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    targets[j] = seq[j + 1];
    tmask[j] = mask[j + 1];
  }
}

}  // namespace detail

// Mean next-token loss of a model over a set of packed sequences; per_pos,
// when given, receives the per-position mean (index j = predicting token
// j+2 of the sequence, 0-based row j of the logits).
template <typename T>
double evaluate_corpus(Model<T>& model, const PackedCorpus& corpus,
                       const std::vector<std::int64_t>* indices = nullptr,
                       std::vector<double>* per_pos = nullptr) {
  const std::int64_t n = model.cfg.n;
  if (corpus.n != n)
    throw ConfigError("evaluate: corpus packed at n = " + std::to_string(corpus.n) +
                      " but model expects n = " + std::to_string(n));
  std::vector<double> sum(static_cast<std::size_t>(n), 0.0);
  std::vector<std::int64_t> cnt(static_cast<std::size_t>(n), 0);
  std::vector<std::int32_t> targets;
  std::vector<std::uint8_t> tmask;
  double total = 0.0;
  std::int64_t total_cnt = 0;
  const std::int64_t count = indices ? static_cast<std::int64_t>(indices->size())
                                     : corpus.sequence_count();
  for (std::int64_t k = 0; k < count; ++k) {
    const std::int64_t idx = indices ? (*indices)[static_cast<std::size_t>(k)] : k;
    const auto& seq = corpus.sequences[static_cast<std::size_t>(idx)];
    const auto& mask = corpus.masks[static_cast<std::size_t>(idx)];
    detail::shift_targets(seq, mask, targets, tmask);
    Tape<T> tape;
    const auto logits = forward_tape(tape, model, seq);
    std::vector<T> pos;
    tape.cross_entropy(logits, targets, tmask, &pos);
    for (std::int64_t j = 0; j < n; ++j) {
      if (!tmask[static_cast<std::size_t>(j)]) continue;
      sum[static_cast<std::size_t>(j)] += static_cast<double>(pos[static_cast<std::size_t>(j)]);
      cnt[static_cast<std::size_t>(j)] += 1;
      total += static_cast<double>(pos[static_cast<std::size_t>(j)]);
      ++total_cnt;
    }
  }
  if (per_pos) {
    per_pos->assign(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t j = 0; j < n; ++j)
      if (cnt[static_cast<std::size_t>(j)] > 0)
        (*per_pos)[static_cast<std::size_t>(j)] =
            sum[static_cast<std::size_t>(j)] / static_cast<double>(cnt[static_cast<std::size_t>(j)]);
  }
  return total_cnt ? total / static_cast<double>(total_cnt) : 0.0;
}

template <typename T>
class Trainer {
 public:
  Trainer(Model<T> model, TrainConfig cfg) : model_(std::move(model)), cfg_(cfg) {
    cfg_.validate();
    opt_ = AdamState<T>::init(model_.params, model_.cfg.variant);
    model_.imp.kernel();  // build the convolution spectra before any threading
  }

  Model<T>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t step() const { return step_; }

  // Runs until cfg.steps (or until_step, if given, for interrupt/resume),
  // evaluating every eval_interval steps. Aborts with a diagnostic if the
  // batch loss is non-finite or exceeds twice the initial loss for 100
  // consecutive steps.
  TrainResult run(const PackedCorpus& corpus, std::int64_t until_step = -1) {
    if (corpus.n != model_.cfg.n)
      throw ConfigError("train: corpus packed at n = " + std::to_string(corpus.n) +
                        " but model expects n = " + std::to_string(model_.cfg.n));
    split_corpus(corpus);
    TrainResult result;
    std::vector<ItemGrad> items(static_cast<std::size_t>(cfg_.batch));
    const std::int64_t stop = (until_step < 0) ? cfg_.steps : std::min(until_step, cfg_.steps);

    while (step_ < stop) {
      ++step_;
      const double lr = lr_at(step_, cfg_, plateau_scale_);
      const auto batch = sample_batch(step_);
      const double train_loss = batch_grads(corpus, batch, items);
      reduce_and_apply(items, lr);

      if (initial_loss_ < 0.0 && std::isfinite(train_loss)) initial_loss_ = train_loss;
      const bool diverged_now =
          !std::isfinite(train_loss) || (initial_loss_ >= 0.0 && train_loss > 2.0 * initial_loss_);
      diverged_ = diverged_now ? diverged_ + 1 : 0;
      if (diverged_ >= 100)
        throw NumericError("training diverged: loss " + std::to_string(train_loss) +
                           " above twice the initial loss " + std::to_string(initial_loss_) +
                           " for 100 consecutive steps (step " + std::to_string(step_) + ")");

      if (step_ % cfg_.eval_interval == 0 || step_ == cfg_.steps) {
        std::vector<double> per_pos;
        const double val_loss = evaluate(corpus, &per_pos);
        result.history.push_back({step_, lr, train_loss, val_loss});
        result.val_per_position.push_back(std::move(per_pos));
        result.final_val_nats = val_loss;
        if (val_loss < best_val_ - cfg_.plateau_min_delta) {
          best_val_ = val_loss;
          stall_ = 0;
        } else if (++stall_ >= cfg_.plateau_patience) {
          plateau_scale_ *= cfg_.plateau_factor;
          stall_ = 0;
        }
      }
    }
    return result;
  }

  // Mean loss over the held-out split of the training corpus.
  double evaluate(const PackedCorpus& corpus, std::vector<double>* per_pos = nullptr) {
    split_corpus(corpus);
    return evaluate_corpus(model_, corpus, &val_idx_, per_pos);
  }

  // Full trainer state: parameters, Adam moments and scheduler scalars, so a
  // resumed run reproduces the uninterrupted loss history exactly.
  void save(const std::string& path) {
    std::vector<std::pair<std::string, Tensor<T>>> extra;
    std::size_t idx = 0;
    for_each_param(model_.params, model_.cfg.variant, [&](const std::string& name, Tensor<T>&) {
      extra.emplace_back("adam.m." + name, opt_.m[idx]);
      extra.emplace_back("adam.v." + name, opt_.v[idx]);
      ++idx;
    });
    auto scalar = [&](const std::string& name, double v) {
      extra.emplace_back(name, Tensor<T>(Shape{1}, {static_cast<T>(v)}));
    };
    scalar("trainer.step", static_cast<double>(step_));
    scalar("trainer.adam_t", static_cast<double>(opt_.t));
    scalar("trainer.plateau_scale", plateau_scale_);
    scalar("trainer.best_val", best_val_);
    scalar("trainer.stall", static_cast<double>(stall_));
    scalar("trainer.initial_loss", initial_loss_);
    scalar("trainer.diverged", static_cast<double>(diverged_));
    std::vector<std::pair<std::string, const Tensor<T>*>> ptrs;
    for (auto& [name, t] : extra) ptrs.emplace_back(name, &t);
    save_model(path, model_, ptrs);
  }

  static Trainer load(const std::string& path, TrainConfig cfg) {
    std::vector<std::pair<std::string, Tensor<T>>> extra;
    Model<T> model = load_model<T>(path, &extra);
    Trainer tr(std::move(model), cfg);
    auto find = [&](const std::string& name) -> Tensor<T>* {
      for (auto& [n, t] : extra)
        if (n == name) return &t;
      return nullptr;
    };
    std::size_t idx = 0;
    bool has_opt = true;
    for_each_param(tr.model_.params, tr.model_.cfg.variant, [&](const std::string& name, Tensor<T>&) {
      Tensor<T>* m = find("adam.m." + name);
      Tensor<T>* v = find("adam.v." + name);
      if (m && v) {
        tr.opt_.m[idx] = *m;
        tr.opt_.v[idx] = *v;
      } else {
        has_opt = false;
      }
      ++idx;
    });
    auto scalar = [&](const std::string& name, double fallback) {
      Tensor<T>* t = find(name);
      return t ? static_cast<double>((*t)[0]) : fallback;
    };
    if (has_opt) {
      tr.step_ = static_cast<std::int64_t>(scalar("trainer.step", 0));
      tr.opt_.t = static_cast<std::int64_t>(scalar("trainer.adam_t", 0));
      tr.plateau_scale_ = scalar("trainer.plateau_scale", 1.0);
      tr.best_val_ = scalar("trainer.best_val", std::numeric_limits<double>::infinity());
      tr.stall_ = static_cast<std::int64_t>(scalar("trainer.stall", 0));
      tr.initial_loss_ = scalar("trainer.initial_loss", -1.0);
      tr.diverged_ = static_cast<std::int64_t>(scalar("trainer.diverged", 0));
    }
    return tr;
  }

 private:
  struct ItemGrad {
    double loss = 0.0;
    std::vector<Tensor<T>*> bounds;     // parameter tensor each slot feeds
    std::vector<std::vector<T>> grads;  // aligned with bounds
  };

  // Deterministic split: shuffled by the seed, ~val_fraction held out.
  void split_corpus(const PackedCorpus& corpus) {
    if (!train_idx_.empty() || !val_idx_.empty()) return;
    const std::int64_t count = corpus.sequence_count();
    if (count == 0) throw ConfigError("train: corpus is empty");
    std::vector<std::int64_t> order(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(cfg_.seed ^ 0xC0FFEE5EEDULL);
    std::shuffle(order.begin(), order.end(), rng);
    std::int64_t val_count =
        std::max<std::int64_t>(1, std::llround(cfg_.val_fraction * static_cast<double>(count)));
    if (val_count >= count) val_count = std::max<std::int64_t>(1, count / 2);
    val_idx_.assign(order.begin(), order.begin() + val_count);
    train_idx_.assign(order.begin() + val_count, order.end());
    if (train_idx_.empty()) train_idx_ = val_idx_;
  }

  // Stateless batch sampling: the draw depends only on (seed, step), so a
  // resumed run sees the same data order without serializing RNG state.
  std::vector<std::int64_t> sample_batch(std::int64_t step) const {
    std::mt19937_64 rng(cfg_.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(step));
    std::uniform_int_distribution<std::size_t> pick(0, train_idx_.size() - 1);
    std::vector<std::int64_t> batch(static_cast<std::size_t>(cfg_.batch));
    for (auto& b : batch) b = train_idx_[pick(rng)];
    return batch;
  }

  // Per-item forward/backward on private tapes; the shared model is read-only
  // here. Returns the batch mean loss (item order, thread-count independent).
  double batch_grads(const PackedCorpus& corpus, const std::vector<std::int64_t>& batch,
                     std::vector<ItemGrad>& items) {
    const auto process = [&](std::size_t i) {
      const auto& seq = corpus.sequences[static_cast<std::size_t>(batch[i])];
      const auto& mask = corpus.masks[static_cast<std::size_t>(batch[i])];
      std::vector<std::int32_t> targets;
      std::vector<std::uint8_t> tmask;
      detail::shift_targets(seq, mask, targets, tmask);
      Tape<T> tape;
      const auto logits = forward_tape(tape, model_, seq);
      const auto loss = tape.cross_entropy(logits, targets, tmask);
      tape.backward(loss, /*write_bound=*/false);
      ItemGrad& item = items[i];
      item.loss = static_cast<double>(tape.value(loss)[0]);
      item.bounds.clear();
      item.grads.clear();
      for (auto id : tape.param_ids()) {
        item.bounds.push_back(tape.bound_of(id));
        item.grads.push_back(tape.grad_of(id).raw());
      }
    };

    const std::size_t count = items.size();
    const int workers = static_cast<int>(std::min<std::size_t>(count, static_cast<std::size_t>(cfg_.threads)));
    if (workers <= 1) {
      for (std::size_t i = 0; i < count; ++i) process(i);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t i = static_cast<std::size_t>(w); i < count; i += static_cast<std::size_t>(workers))
            process(i);
        });
      for (auto& th : pool) th.join();
    }

    double mean_loss = 0.0;
    for (std::size_t i = 0; i < count; ++i) mean_loss += items[i].loss;
    return mean_loss / static_cast<double>(count);
  }

  // Gradients reduce in item order into the tensors each tape slot was bound
  // to: bitwise identical for any thread count.
  void reduce_and_apply(std::vector<ItemGrad>& items, double lr) {
    for_each_param(model_.params, model_.cfg.variant, [&](const std::string&, Tensor<T>& t) {
      t.ensure_grad();
      t.zero_grad();
    });
    for (const auto& item : items) {
      for (std::size_t k = 0; k < item.bounds.size(); ++k) {
        auto& dst = item.bounds[k]->grad();
        const auto& src = item.grads[k];
        if (dst.size() != src.size()) throw StateError("train: gradient shape mismatch");
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
    const T inv = T(1) / static_cast<T>(items.size());
    for_each_param(model_.params, model_.cfg.variant,
                   [&](const std::string&, Tensor<T>& t) {
                     for (auto& g : t.grad()) g *= inv;
                   });
    adam_step(model_.params, model_.cfg.variant, opt_, lr);
  }

  Model<T> model_;
  TrainConfig cfg_;
  AdamState<T> opt_;
  std::int64_t step_ = 0;
  double plateau_scale_ = 1.0;
  double best_val_ = std::numeric_limits<double>::infinity();
  std::int64_t stall_ = 0;
  double initial_loss_ = -1.0;
  std::int64_t diverged_ = 0;
  std::vector<std::int64_t> train_idx_, val_idx_;
};

// ---------------------------------------------------------------------------
// Gradient verification: central finite differences against the tape
// gradients, reported per parameter tensor. 64-bit mode only.
// ---------------------------------------------------------------------------

struct FdReport {
  struct Row {
    std::string name;
    double rel_err;
  };
  std::vector<Row> rows;
  double max_rel_err = 0.0;
};

template <typename T>
FdReport finite_diff_check(Model<T>& model, const std::vector<std::int32_t>& tokens,
                           const std::vector<std::int32_t>& targets,
                           const std::vector<std::uint8_t>& mask, double eps = 1e-5) {
  static_assert(std::is_same_v<T, double>, "finite differences require 64-bit mode");
  for_each_param(model.params, model.cfg.variant, [](const std::string&, Tensor<T>& t) {
    t.ensure_grad();
    t.zero_grad();
  });
  {
    Tape<T> tape;
    const auto logits = forward_tape(tape, model, tokens);
    const auto loss = tape.cross_entropy(logits, targets, mask);
    tape.backward(loss);
  }
  const auto loss_value = [&]() {
    Tape<T> tape;
    const auto logits = forward_tape(tape, model, tokens);
    const auto loss = tape.cross_entropy(logits, targets, mask);
    return static_cast<double>(tape.value(loss)[0]);
  };

  FdReport report;
  for_each_param(model.params, model.cfg.variant, [&](const std::string& name, Tensor<T>& t) {
    double max_abs_fd = 0.0, max_abs_diff = 0.0;
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const T saved = t[i];
      t[i] = saved + static_cast<T>(eps);
      const double up = loss_value();
      t[i] = saved - static_cast<T>(eps);
      const double down = loss_value();
      t[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      max_abs_fd = std::max(max_abs_fd, std::abs(fd));
      max_abs_diff = std::max(max_abs_diff, std::abs(fd - static_cast<double>(t.grad()[static_cast<std::size_t>(i)])));
    }
    const double rel = max_abs_diff / std::max(max_abs_fd, 1e-8);
    report.rows.push_back({name, rel});
    report.max_rel_err = std::max(report.max_rel_err, rel);
  });
  return report;
}

}  // namespace lmu
