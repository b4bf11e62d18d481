#ifndef AAMULET_TRAINING_HPP_
#define AAMULET_TRAINING_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "aamulet/data_io.hpp"
#include "aamulet/network.hpp"
#include "aamulet/rng.hpp"
#include "aamulet/tensor.hpp"

namespace aamulet {

// Per-level loss weights; empty means all 1.
struct LossConfig {
  std::vector<double> alpha;

  std::vector<double> resolve(int levels) const {
    if (alpha.empty()) return std::vector<double>(levels, 1.0);
    if (int(alpha.size()) != levels)
      throw ConfigError("loss.alpha must list " + std::to_string(levels) +
                        " weights, got " + std::to_string(alpha.size()));
    for (double a : alpha)
      if (!(a >= 0)) throw ConfigError("loss.alpha entries must be >= 0");
    return alpha;
  }
};

struct OptimConfig {
  // Toy-scale default; the full-scale recipe this follows uses 1e-8 against
  // unnormalized backbone gradients, which stalls at this model size.
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 8;
  double lr_decay_factor = 0.9;
  int max_iters = 500;
  int checkpoint_interval = 100;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("optim.lr must be > 0");
    if (momentum < 0 || momentum >= 1)
      throw ConfigError("optim.momentum must lie in [0,1)");
    if (weight_decay < 0) throw ConfigError("optim.weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
    if (lr_decay_factor <= 0 || lr_decay_factor > 1)
      throw ConfigError("optim.lr_decay_factor must lie in (0,1]");
    if (max_iters < 0) throw ConfigError("optim.max_iters must be >= 0");
    if (checkpoint_interval < 1)
      throw ConfigError("optim.checkpoint_interval must be >= 1");
  }
};

struct AugmentSpec {
  bool mirror = true;
  std::vector<int> rotations = {0, 90, 180, 270};
  double crop_min = 0.8;
  double crop_max = 1.0;

  void validate() const {
    for (int r : rotations)
      if (r != 0 && r != 90 && r != 180 && r != 270)
        throw ConfigError("augment.rotations entries must be one of "
                          "0/90/180/270");
    if (!(crop_min > 0) || crop_min > crop_max || crop_max > 1.0)
      throw ConfigError("augment.crop range must satisfy 0 < min <= max <= 1");
  }
};

struct ClassBalance {
  double beta = 0;            // background fraction |Y-|/|Y|
  double one_minus_beta = 0;  // foreground fraction
  bool degenerate = false;    // all-background or all-foreground mask
};

// Class-balancing weights from a binary mask (any batch size; counts pool
// over the whole tensor).
template <typename S>
ClassBalance class_balance(const Tensor<S>& mask) {
  std::int64_t fg = 0;
  for (S v : mask.data()) {
    if (v == S(1))
      ++fg;
    else if (v != S(0))
      throw SpecError("class_balance: mask values must be exactly 0 or 1");
  }
  const std::int64_t total = mask.numel();
  ClassBalance cb;
  cb.one_minus_beta = double(fg) / double(total);
  cb.beta = double(total - fg) / double(total);
  cb.degenerate = fg == 0 || fg == total;
  return cb;
}

// Class-balanced softmax cross-entropy over 2-channel logits, summed over
// all pixels, with one balancing weight per batch sample. Computed through
// log-sum-exp so saturated logits stay finite.
template <typename S>
Tensor<S> balanced_ce(const Tensor<S>& logits, const Tensor<S>& mask,
                      const std::vector<double>& beta_per_sample) {
  const Shape ls = logits.shape();
  const Shape ms = mask.shape();
  if (ls.c != 2)
    throw ShapeError("level_loss: logits must have 2 channels, got " +
                     ls.str());
  if (ms.c != 1 || ms.n != ls.n || ms.h != ls.h || ms.w != ls.w)
    throw ShapeError("level_loss: mask dims " + ms.str() +
                     " do not pair with logits " + ls.str());
  if (int(beta_per_sample.size()) != ls.n)
    throw ArityError("level_loss: need one beta per batch sample");

  const std::int64_t plane = std::int64_t(ls.h) * ls.w;
  auto softplus = [](double t) {
    return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
  };
  double acc = 0;
  for (int n = 0; n < ls.n; ++n) {
    const double beta = beta_per_sample[n];
    const S* s0 = logits.data().data() + std::int64_t(n) * 2 * plane;
    const S* s1 = s0 + plane;
    const S* y = mask.data().data() + std::int64_t(n) * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double d = double(s0[i]) - double(s1[i]);
      if (y[i] == S(1))
        acc += beta * softplus(d);  // -log p1
      else
        acc += (1 - beta) * softplus(-d);  // -log p0
    }
  }

  auto ln = logits.node();
  auto mn = mask.node();
  auto backward = [ln, mn, beta_per_sample, plane](detail::Node<S>& out) {
    if (!ln->requires_grad) return;
    const S g = out.grad[0];
    const Shape& ls2 = ln->shape;
    for (int n = 0; n < ls2.n; ++n) {
      const double beta = beta_per_sample[n];
      const std::int64_t off = std::int64_t(n) * 2 * plane;
      const S* s0 = ln->value.data() + off;
      const S* s1 = s0 + plane;
      S* g0 = ln->grad.data() + off;
      S* g1 = g0 + plane;
      const S* y = mn->value.data() + std::int64_t(n) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double d = double(s0[i]) - double(s1[i]);
        // p0 = sigmoid(d), p1 = sigmoid(-d)
        const double p0 = d >= 0 ? 1.0 / (1.0 + std::exp(-d))
                                 : std::exp(d) / (1.0 + std::exp(d));
        const double p1 = 1.0 - p0;
        if (y[i] == S(1)) {
          g0[i] += S(double(g) * beta * p0);
          g1[i] -= S(double(g) * beta * p0);
        } else {
          g0[i] -= S(double(g) * (1 - beta) * p1);
          g1[i] += S(double(g) * (1 - beta) * p1);
        }
      }
    }
  };
  return detail::record<S>(Shape{1, 1, 1, 1}, std::vector<S>{S(acc)},
                           {logits, mask}, std::move(backward));
}

// Loss of one level for a single balancing weight (per-image form).
template <typename S>
Tensor<S> level_loss(const Tensor<S>& s_l, const Tensor<S>& mask,
                     double beta) {
  return balanced_ce(s_l, mask, std::vector<double>(s_l.shape().n, beta));
}

// Deeply-supervised total: the alpha-weighted sum of per-level losses (no
// fused term), averaged over the batch. Balancing weights come from each
// sample's own mask.
template <typename S>
Tensor<S> total_loss(const ForwardTraceT<S>& trace, const Tensor<S>& mask,
                     const LossConfig& cfg) {
  const int L = int(trace.logits.size());
  const std::vector<double> alpha = cfg.resolve(L);
  const Shape ms = mask.shape();
  std::vector<double> betas(ms.n);
  const std::int64_t plane = std::int64_t(ms.h) * ms.w;
  for (int n = 0; n < ms.n; ++n) {
    std::int64_t fg = 0;
    const S* y = mask.data().data() + std::int64_t(n) * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      if (y[i] == S(1))
        ++fg;
      else if (y[i] != S(0))
        throw SpecError("total_loss: mask values must be exactly 0 or 1");
    }
    betas[n] = double(plane - fg) / double(plane);
  }
  Tensor<S> total;
  for (int l = 0; l < L; ++l) {
    if (alpha[l] == 0) continue;
    auto term = scale(balanced_ce(trace.logits[l], mask, betas),
                      alpha[l] / double(ms.n));
    total = total.valid() ? add_broadcast(total, term) : term;
  }
  if (!total.valid()) total = Tensor<S>(Shape{1, 1, 1, 1}, S(0));
  return total;
}

// One SGD step with momentum and decoupled-from-bias weight decay:
// v <- m*v - lr*(grad + wd*w); w <- w + v. Biases and BN parameters are
// exempt from decay. Throws DivergedError on a non-finite gradient.
template <typename S>
void sgd_step(ParameterStoreT<S>& store, const OptimConfig& optim,
              double lr) {
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    const std::vector<S>& g = e.value.grad();
    std::vector<S>& w = e.value.mutable_data();
    std::vector<S>& v = e.momentum.mutable_data();
    const double wd = e.decay ? optim.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!std::isfinite(double(g[i])))
        throw DivergedError("non-finite gradient in parameter " + e.name);
      v[i] = S(optim.momentum * double(v[i]) -
               lr * (double(g[i]) + wd * double(w[i])));
      w[i] += v[i];
    }
  }
}

// Random mirror / rotation / crop applied identically to image and mask;
// the image is resized back to its original size bilinearly, the mask by
// nearest neighbour and re-binarized.
ImageSample augment(const ImageSample& sample, const AugmentSpec& spec,
                    Rng& rng);

struct TrainRow {
  std::int64_t iter = 0;
  double loss_raw = 0;        // batch mean of per-image pixel sums
  double loss_per_pixel = 0;  // loss_raw / (H*W)
  double lr = 0;              // learning rate used for this step
};

struct TrainJob {
  std::vector<ImageSample> dataset;
  NetworkConfig network;
  LossConfig loss;
  OptimConfig optim;
  AugmentSpec augment;
  std::uint64_t seed = 42;
  std::string out_dir;            // empty: keep everything in memory
  std::string resume_checkpoint;  // empty: fresh Xavier init
};

struct TrainResult {
  std::vector<TrainRow> rows;
  ParameterStore store;
  NetworkConfig network;
  bool diverged = false;
  std::int64_t final_iter = 0;
  std::string final_checkpoint;  // set when out_dir was given
};

TrainResult train(const TrainJob& job);

}  // namespace aamulet

#endif  // AAMULET_TRAINING_HPP_
