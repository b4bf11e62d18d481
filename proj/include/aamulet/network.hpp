#ifndef AAMULET_NETWORK_HPP_
#define AAMULET_NETWORK_HPP_

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aamulet/batchnorm.hpp"
#include "aamulet/conv.hpp"
#include "aamulet/ops.hpp"
#include "aamulet/rng.hpp"
#include "aamulet/tensor.hpp"

namespace aamulet {

enum class AttentionDirection { top_down, bottom_up };

// Full architecture description. Level l (1-based) taps the backbone at
// stride 2^(l-1); every aggregated map is carried at full input resolution.
struct NetworkConfig {
  int levels = 5;
  int input_h = 64;
  int input_w = 64;
  std::vector<int> backbone_channels = {16, 32, 64, 64, 64};
  int agg_width = 16;  // channels of every aggregated feature map
  int attention_kernel = 3;
  int prediction_kernel = 1;
  bool pyramid = true;
  bool attention_enabled = true;
  bool aggregation_enabled = true;
  AttentionDirection attention_direction = AttentionDirection::top_down;
  int stage_depth = 2;  // convs per backbone stage

  int stride_at(int level) const { return 1 << (level - 1); }

  // Attention maps stacked into level l's attention conv.
  int attention_stack(int level) const {
    if (attention_direction == AttentionDirection::top_down) {
      const int above = levels - level;
      return pyramid ? above : std::min(1, above);
    }
    const int below = level - 1;
    return pyramid ? below : std::min(1, below);
  }

  // Whether the aggregation concat at l < levels includes the attention map
  // from the level above. Bottom-up attention is computed after aggregation,
  // so it cannot feed it.
  bool attention_in_aggregation() const {
    return attention_enabled &&
           attention_direction == AttentionDirection::top_down;
  }

  void validate() const {
    if (levels < 2)
      throw ConfigError("network.levels must be >= 2, got " +
                        std::to_string(levels));
    if (int(backbone_channels.size()) != levels)
      throw ConfigError("network.backbone_channels must list " +
                        std::to_string(levels) + " entries, got " +
                        std::to_string(backbone_channels.size()));
    for (int ch : backbone_channels)
      if (ch < 1) throw ConfigError("network.backbone_channels must be positive");
    const int top_stride = stride_at(levels);
    if (input_h < top_stride || input_w < top_stride ||
        input_h % top_stride != 0 || input_w % top_stride != 0)
      throw ConfigError("network.input_hw must be divisible by the top-level "
                        "stride " + std::to_string(top_stride));
    if (agg_width < 1) throw ConfigError("network.agg_width must be positive");
    if (attention_kernel < 1 || attention_kernel % 2 == 0)
      throw ConfigError("network.attention_kernel must be odd");
    if (prediction_kernel != 1)
      throw ConfigError("network.prediction_kernel must be 1");
    if (stage_depth < 1)
      throw ConfigError("network.stage_depth must be positive");
  }
};

// Named collection of tensors: trainable weights with momentum buffers plus
// non-trainable state (batch-norm running stats). Order is the construction
// order and is what the checkpoint file serializes.
template <typename S>
class ParameterStoreT {
 public:
  struct Entry {
    std::string name;
    Tensor<S> value;
    Tensor<S> momentum;  // valid only when trainable
    bool trainable = true;
    bool decay = true;  // weight decay applies (biases and BN params do not)
  };

  void add(const std::string& name, Tensor<S> value, bool trainable,
           bool decay) {
    if (index_.count(name))
      throw CheckError("parameter store: duplicate name " + name);
    Entry e;
    e.name = name;
    e.value = std::move(value);
    if (trainable) {
      e.value.set_requires_grad(true);
      e.momentum = Tensor<S>(e.value.shape());
    }
    e.trainable = trainable;
    e.decay = decay;
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw CheckError("parameter store: no entry named " + name);
    return entries_[it->second].value;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw CheckError("parameter store: no entry named " + name);
    return entries_[it->second].value;
  }

  Entry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw CheckError("parameter store: no entry named " + name);
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<Tensor<S>> trainable_tensors() const {
    std::vector<Tensor<S>> out;
    for (const auto& e : entries_)
      if (e.trainable) out.push_back(e.value);
    return out;
  }

  std::int64_t trainable_count() const {
    std::int64_t total = 0;
    for (const auto& e : entries_)
      if (e.trainable) total += e.value.numel();
    return total;
  }

  void zero_grads() {
    for (auto& e : entries_)
      if (e.trainable) e.value.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

using ParameterStore = ParameterStoreT<float>;

// Everything one forward pass produces, per level (index l-1): side feature
// f, aggregated feature g, attention map a, prediction logits s, and the
// final saliency map (foreground softmax channel of the level-1 logits).
template <typename S>
struct ForwardTraceT {
  std::vector<Tensor<S>> side;
  std::vector<Tensor<S>> agg;
  std::vector<Tensor<S>> att;
  std::vector<Tensor<S>> logits;
  Tensor<S> saliency;
};

using ForwardTrace = ForwardTraceT<float>;

namespace detail {

template <typename S>
Tensor<S> xavier_conv(Rng& rng, int out_c, int in_c, int kh, int kw) {
  const double fan_in = double(in_c) * kh * kw;
  const double fan_out = double(out_c) * kh * kw;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Shape s{out_c, in_c, kh, kw};
  std::vector<S> v(std::size_t(s.numel()));
  for (auto& x : v) x = S(rng.uniform(-bound, bound));
  return Tensor<S>(s, std::move(v));
}

inline int aggregation_concat_channels(const NetworkConfig& cfg, int level) {
  if (level == cfg.levels) return cfg.agg_width;
  return 2 * cfg.agg_width + (cfg.attention_in_aggregation() ? 1 : 0);
}

}  // namespace detail

// Xavier-initialized parameter store for the given architecture. Weights are
// drawn uniform in +-sqrt(6/(fan_in+fan_out)) from a single seeded stream in
// construction order; biases are zero, BN scale 1 / shift 0.
template <typename S>
ParameterStoreT<S> init_params_t(const NetworkConfig& cfg,
                                 std::uint64_t seed) {
  cfg.validate();
  ParameterStoreT<S> store;
  Rng rng(Rng::stream_seed(seed, 0xA11Cu));
  auto bn_pack = [&](const std::string& prefix, int c) {
    store.add(prefix + ".g", Tensor<S>(Shape{1, c, 1, 1}, S(1)), true, false);
    store.add(prefix + ".b", Tensor<S>(Shape{1, c, 1, 1}, S(0)), true, false);
    store.add(prefix + ".rm", Tensor<S>(Shape{1, c, 1, 1}, S(0)), false, false);
    store.add(prefix + ".rv", Tensor<S>(Shape{1, c, 1, 1}, S(1)), false, false);
  };

  int in_c = 3;
  for (int k = 1; k <= cfg.levels; ++k) {
    const int ch = cfg.backbone_channels[k - 1];
    for (int i = 1; i <= cfg.stage_depth; ++i) {
      const int ic = i == 1 ? in_c : ch;
      store.add("backbone.s" + std::to_string(k) + ".c" + std::to_string(i) +
                    ".w",
                detail::xavier_conv<S>(rng, ch, ic, 3, 3), true, true);
      bn_pack("backbone.s" + std::to_string(k) + ".bn" + std::to_string(i),
              ch);
    }
    in_c = ch;
  }

  const int d = cfg.agg_width;
  for (int l = 1; l <= cfg.levels; ++l) {
    const std::string pre = "agg" + std::to_string(l);
    store.add(pre + ".wr.w",
              detail::xavier_conv<S>(rng, d, cfg.backbone_channels[l - 1], 3, 3),
              true, true);
    if (l > 1) {
      const int s = cfg.stride_at(l);
      store.add(pre + ".wu.w", detail::xavier_conv<S>(rng, d, d, 2 * s, 2 * s),
                true, true);
    }
    if (cfg.aggregation_enabled) {
      store.add(pre + ".wf.w",
                detail::xavier_conv<S>(
                    rng, d, detail::aggregation_concat_channels(cfg, l), 3, 3),
                true, true);
      bn_pack(pre + ".bn", d);
    }
  }

  if (cfg.attention_enabled) {
    for (int l = 1; l <= cfg.levels; ++l) {
      const std::string pre = "att" + std::to_string(l);
      const int in_ch = d + cfg.attention_stack(l);
      store.add(pre + ".w",
                detail::xavier_conv<S>(rng, 1, in_ch, cfg.attention_kernel,
                                       cfg.attention_kernel),
                true, true);
      store.add(pre + ".b", Tensor<S>(Shape{1, 1, 1, 1}, S(0)), true, false);
    }
  }

  for (int l = 1; l <= cfg.levels; ++l) {
    const std::string pre = "pred" + std::to_string(l);
    int in_ch;
    if (cfg.attention_enabled)
      in_ch = l == cfg.levels ? 1 : 2;
    else
      in_ch = d;
    store.add(pre + ".w", detail::xavier_conv<S>(rng, 2, in_ch, 1, 1), true,
              true);
    store.add(pre + ".b", Tensor<S>(Shape{1, 2, 1, 1}, S(0)), true, false);
  }
  return store;
}

inline ParameterStore init_params(const NetworkConfig& cfg,
                                  std::uint64_t seed) {
  return init_params_t<float>(cfg, seed);
}

namespace detail {

template <typename S>
Tensor<S> bn_relu(const Tensor<S>& x, ParameterStoreT<S>& store,
                  const std::string& prefix, BnMode mode) {
  return relu(batchnorm(x, store.at(prefix + ".g"), store.at(prefix + ".b"),
                        store.at(prefix + ".rm"), store.at(prefix + ".rv"),
                        mode));
}

// Reduce a side feature to d channels and upsample it to input resolution
// (identity at stride 1).
template <typename S>
Tensor<S> reduce_upsample(const Tensor<S>& f_l, ParameterStoreT<S>& store,
                          int l, const NetworkConfig& cfg) {
  const std::string pre = "agg" + std::to_string(l);
  const int d = cfg.agg_width;
  auto r = conv2d(f_l, store.at(pre + ".wr.w"),
                  ConvSpec::conv(f_l.shape().c, d, 3, 1, 1));
  if (l == 1) return r;
  const int s = cfg.stride_at(l);
  return conv2d(r, store.at(pre + ".wu.w"),
                ConvSpec::deconv(d, d, 2 * s, s, s / 2));
}

}  // namespace detail

// One aggregation level: reduce + upsample the side feature, concatenate the
// carried aggregate and attention map from the level above, fuse back to d
// channels, then BN + ReLU. At l = levels the concatenation degenerates to
// the upsampled feature alone.
template <typename S>
Tensor<S> aggregate_level(const Tensor<S>& f_l,
                          const std::optional<Tensor<S>>& g_above,
                          const std::optional<Tensor<S>>& a_above,
                          ParameterStoreT<S>& store, int l,
                          const NetworkConfig& cfg, BnMode mode) {
  if (!cfg.aggregation_enabled)
    throw CheckError("aggregate_level called with aggregation disabled");
  const bool top = l == cfg.levels;
  if (top != !g_above.has_value())
    throw ArityError("aggregate_level: g_above must be present iff l < L");
  const bool want_att = !top && cfg.attention_in_aggregation();
  if (want_att != a_above.has_value())
    throw ArityError(
        "aggregate_level: a_above presence does not match the configuration");

  auto u = detail::reduce_upsample(f_l, store, l, cfg);
  Tensor<S> cat = u;
  if (!top) {
    std::vector<Tensor<S>> parts{u, *g_above};
    if (a_above) parts.push_back(*a_above);
    cat = concat(parts);
  }
  const std::string pre = "agg" + std::to_string(l);
  auto fused = conv2d(cat, store.at(pre + ".wf.w"),
                      ConvSpec::conv(cat.shape().c, cfg.agg_width, 3, 1, 1));
  return detail::bn_relu(fused, store, pre + ".bn", mode);
}

// Contextual attention for one level: a sigmoid-activated convolution over
// the aggregated feature concatenated with the stack of already-computed
// attention maps (the full pyramid or just the neighbouring one).
template <typename S>
Tensor<S> attention_level(const Tensor<S>& g_l,
                          const std::vector<Tensor<S>>& a_stack,
                          ParameterStoreT<S>& store, int l,
                          const NetworkConfig& cfg) {
  if (!cfg.attention_enabled)
    throw CheckError("attention_level called with attention disabled");
  const int want = cfg.attention_stack(l);
  if (int(a_stack.size()) != want)
    throw ArityError("attention_level: level " + std::to_string(l) +
                     " expects " + std::to_string(want) +
                     " stacked attention maps, got " +
                     std::to_string(a_stack.size()));
  std::vector<Tensor<S>> parts{g_l};
  parts.insert(parts.end(), a_stack.begin(), a_stack.end());
  auto in = parts.size() == 1 ? g_l : concat(parts);
  const std::string pre = "att" + std::to_string(l);
  const int k = cfg.attention_kernel;
  auto logits = conv2d(in, store.at(pre + ".w"), store.at(pre + ".b"),
                       ConvSpec::conv(in.shape().c, 1, k, 1, k / 2));
  return sigmoid(logits);
}

// Recursive prediction for one level. The two 1-channel attention maps are
// broadcast-added onto both channels of the 2-channel logits from above;
// the top level classifies its attention map alone.
template <typename S>
Tensor<S> predict_level(const Tensor<S>& a_l,
                        const std::optional<Tensor<S>>& a_above,
                        const std::optional<Tensor<S>>& s_above,
                        ParameterStoreT<S>& store, int l, int levels) {
  const bool top = l == levels;
  if (top != (!a_above.has_value() && !s_above.has_value()))
    throw ArityError(
        "predict_level: a_above/s_above must both be present iff l < L");
  if (!top && (a_above.has_value() != s_above.has_value()))
    throw ArityError("predict_level: a_above and s_above must come together");
  const std::string pre = "pred" + std::to_string(l);
  Tensor<S> in;
  if (top) {
    in = a_l;
  } else {
    auto a_sum = add_broadcast(a_l, *a_above);
    in = add_broadcast(*s_above, a_sum);
  }
  return conv2d(in, store.at(pre + ".w"), store.at(pre + ".b"),
                ConvSpec::conv(in.shape().c, 2, 1, 1, 0));
}

// Per-level classifier used when attention is disabled: a 1x1 binary
// classifier directly on the (upsampled or aggregated) feature map.
template <typename S>
Tensor<S> predict_direct(const Tensor<S>& feat, ParameterStoreT<S>& store,
                         int l) {
  const std::string pre = "pred" + std::to_string(l);
  return conv2d(feat, store.at(pre + ".w"), store.at(pre + ".b"),
                ConvSpec::conv(feat.shape().c, 2, 1, 1, 0));
}

// Multi-level feature extraction: stage = [conv3x3 -> BN -> ReLU] x depth,
// tap, then 2x2 max pool before the next stage (no pool after the last).
template <typename S>
std::vector<Tensor<S>> backbone_forward(const Tensor<S>& x,
                                        ParameterStoreT<S>& store,
                                        const NetworkConfig& cfg,
                                        BnMode mode) {
  const Shape s = x.shape();
  if (s.c != 3 || s.h != cfg.input_h || s.w != cfg.input_w)
    throw ShapeError("backbone: input must be (n,3," +
                     std::to_string(cfg.input_h) + "," +
                     std::to_string(cfg.input_w) + "), got " + s.str());
  std::vector<Tensor<S>> taps;
  taps.reserve(cfg.levels);
  Tensor<S> cur = x;
  for (int k = 1; k <= cfg.levels; ++k) {
    const int ch = cfg.backbone_channels[k - 1];
    for (int i = 1; i <= cfg.stage_depth; ++i) {
      const std::string base =
          "backbone.s" + std::to_string(k) + ".c" + std::to_string(i);
      cur = conv2d(cur, store.at(base + ".w"),
                   ConvSpec::conv(cur.shape().c, ch, 3, 1, 1));
      cur = detail::bn_relu(
          cur, store, "backbone.s" + std::to_string(k) + ".bn" +
                          std::to_string(i),
          mode);
    }
    taps.push_back(cur);
    if (k < cfg.levels) cur = maxpool2(cur);
  }
  return taps;
}

// Full forward pass. Levels run top-down through aggregation, attention and
// recursive prediction; with bottom-up attention the attention pass runs
// low-to-high between aggregation and prediction. The final saliency map is
// the foreground softmax channel of the level-1 logits.
template <typename S>
ForwardTraceT<S> forward(const Tensor<S>& x, ParameterStoreT<S>& store,
                         const NetworkConfig& cfg, BnMode mode) {
  cfg.validate();
  const int L = cfg.levels;
  ForwardTraceT<S> trace;
  trace.side = backbone_forward(x, store, cfg, mode);
  trace.agg.resize(L);
  trace.logits.resize(L);
  if (cfg.attention_enabled) trace.att.resize(L);

  if (!cfg.aggregation_enabled) {
    // Side features only: reduce + upsample each level, classify directly.
    for (int l = 1; l <= L; ++l) {
      auto u = detail::reduce_upsample(trace.side[l - 1], store, l, cfg);
      trace.agg[l - 1] = u;
      trace.logits[l - 1] = predict_direct(u, store, l);
    }
  } else if (!cfg.attention_enabled) {
    for (int l = L; l >= 1; --l) {
      std::optional<Tensor<S>> g_above;
      if (l < L) g_above = trace.agg[l];
      trace.agg[l - 1] = aggregate_level(trace.side[l - 1], g_above,
                                         std::optional<Tensor<S>>(), store,
                                         l, cfg, mode);
      trace.logits[l - 1] = predict_direct(trace.agg[l - 1], store, l);
    }
  } else if (cfg.attention_direction == AttentionDirection::top_down) {
    std::vector<Tensor<S>> stack;  // a^L .. a^{l+1}, newest last
    for (int l = L; l >= 1; --l) {
      std::optional<Tensor<S>> g_above, a_above, s_above;
      if (l < L) {
        g_above = trace.agg[l];
        a_above = trace.att[l];
        s_above = trace.logits[l];
      }
      trace.agg[l - 1] = aggregate_level(trace.side[l - 1], g_above, a_above,
                                         store, l, cfg, mode);
      std::vector<Tensor<S>> use;
      if (l < L) {
        if (cfg.pyramid)
          use.assign(stack.rbegin(), stack.rend());  // a^{l+1} first
        else
          use.push_back(stack.back());
      }
      trace.att[l - 1] = attention_level(trace.agg[l - 1], use, store, l, cfg);
      trace.logits[l - 1] =
          predict_level(trace.att[l - 1], a_above, s_above, store, l, L);
      stack.push_back(trace.att[l - 1]);
    }
  } else {
    // Bottom-up attention: aggregate top-down without attention inputs,
    // attend low-to-high, then predict top-down.
    for (int l = L; l >= 1; --l) {
      std::optional<Tensor<S>> g_above;
      if (l < L) g_above = trace.agg[l];
      trace.agg[l - 1] = aggregate_level(trace.side[l - 1], g_above,
                                         std::optional<Tensor<S>>(), store,
                                         l, cfg, mode);
    }
    std::vector<Tensor<S>> stack;  // a^1 .. a^{l-1}, newest last
    for (int l = 1; l <= L; ++l) {
      std::vector<Tensor<S>> use;
      if (l > 1) {
        if (cfg.pyramid)
          use.assign(stack.rbegin(), stack.rend());
        else
          use.push_back(stack.back());
      }
      trace.att[l - 1] = attention_level(trace.agg[l - 1], use, store, l, cfg);
      stack.push_back(trace.att[l - 1]);
    }
    for (int l = L; l >= 1; --l) {
      std::optional<Tensor<S>> a_above, s_above;
      if (l < L) {
        a_above = trace.att[l];
        s_above = trace.logits[l];
      }
      trace.logits[l - 1] =
          predict_level(trace.att[l - 1], a_above, s_above, store, l, L);
    }
  }

  trace.saliency = slice_channels_value(softmax_channels(trace.logits[0]), 1, 1);
  return trace;
}

}  // namespace aamulet

#endif  // AAMULET_NETWORK_HPP_
