#ifndef AAMULET_OPS_HPP_
#define AAMULET_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "aamulet/tensor.hpp"

namespace aamulet {

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  std::vector<S> y(x.data().size());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
  auto xn = x.node();
  return detail::record<S>(
      x.shape(), std::move(y), {x}, [xn](detail::Node<S>& out) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < out.grad.size(); ++i)
          if (xn->value[i] > S(0)) xn->grad[i] += out.grad[i];
      });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  std::vector<S> y(x.data().size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const S v = x.data()[i];
    if (v >= S(0)) {
      y[i] = S(1) / (S(1) + std::exp(-v));
    } else {
      const S e = std::exp(v);
      y[i] = e / (S(1) + e);
    }
  }
  auto xn = x.node();
  return detail::record<S>(
      x.shape(), std::move(y), {x}, [xn](detail::Node<S>& out) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
          const S s = out.value[i];
          xn->grad[i] += out.grad[i] * s * (S(1) - s);
        }
      });
}

// Concatenation along the channel axis; inputs must agree on (n, h, w).
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw ArityError("concat: needs at least one input");
  const Shape s0 = xs[0].shape();
  int channels = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw ShapeError("concat: inputs disagree on (n,h,w): " + s0.str() +
                       " vs " + s.str());
    channels += s.c;
  }
  const Shape out_shape{s0.n, channels, s0.h, s0.w};
  const std::int64_t plane = std::int64_t(s0.h) * s0.w;
  std::vector<S> y(std::size_t(out_shape.numel()));
  for (int n = 0; n < s0.n; ++n) {
    std::int64_t off = std::int64_t(n) * channels * plane;
    for (const auto& x : xs) {
      const std::int64_t sz = std::int64_t(x.shape().c) * plane;
      const S* src = x.data().data() + std::int64_t(n) * sz;
      std::copy(src, src + sz, y.data() + off);
      off += sz;
    }
  }
  std::vector<std::shared_ptr<detail::Node<S>>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node());
  return detail::record<S>(
      out_shape, std::move(y), xs,
      [nodes, plane, channels](detail::Node<S>& out) {
        for (int n = 0; n < out.shape.n; ++n) {
          std::int64_t off = std::int64_t(n) * channels * plane;
          for (auto& xn : nodes) {
            const std::int64_t sz = std::int64_t(xn->shape.c) * plane;
            if (xn->requires_grad) {
              S* dst = xn->grad.data() + std::int64_t(n) * sz;
              const S* src = out.grad.data() + off;
              for (std::int64_t i = 0; i < sz; ++i) dst[i] += src[i];
            }
            off += sz;
          }
        }
      });
}

// Elementwise addition. Either both shapes are equal, or b has one channel
// and is broadcast across all of a's channels.
template <typename S>
Tensor<S> add_broadcast(const Tensor<S>& a, const Tensor<S>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const bool equal = sa == sb;
  const bool bcast =
      sb.c == 1 && sb.n == sa.n && sb.h == sa.h && sb.w == sa.w && sa.c >= 1;
  if (!equal && !bcast)
    throw ShapeError("add_broadcast: incompatible dims " + sa.str() + " and " +
                     sb.str());
  const std::int64_t plane = std::int64_t(sa.h) * sa.w;
  std::vector<S> y(a.data());
  if (equal) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.data()[i];
  } else {
    for (int n = 0; n < sa.n; ++n) {
      const S* bp = b.data().data() + std::int64_t(n) * plane;
      for (int c = 0; c < sa.c; ++c) {
        S* yp = y.data() + (std::int64_t(n) * sa.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) yp[i] += bp[i];
      }
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::record<S>(
      sa, std::move(y), {a, b}, [an, bn, equal, plane](detail::Node<S>& out) {
        if (an->requires_grad)
          for (std::size_t i = 0; i < out.grad.size(); ++i)
            an->grad[i] += out.grad[i];
        if (!bn->requires_grad) return;
        if (equal) {
          for (std::size_t i = 0; i < out.grad.size(); ++i)
            bn->grad[i] += out.grad[i];
        } else {
          const Shape& sa2 = out.shape;
          for (int n = 0; n < sa2.n; ++n) {
            S* bg = bn->grad.data() + std::int64_t(n) * plane;
            for (int c = 0; c < sa2.c; ++c) {
              const S* g = out.grad.data() + (std::int64_t(n) * sa2.c + c) * plane;
              for (std::int64_t i = 0; i < plane; ++i) bg[i] += g[i];
            }
          }
        }
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, double k) {
  std::vector<S> y(x.data().size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = S(k) * x.data()[i];
  auto xn = x.node();
  return detail::record<S>(
      x.shape(), std::move(y), {x}, [xn, k](detail::Node<S>& out) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < out.grad.size(); ++i)
          xn->grad[i] += S(k) * out.grad[i];
      });
}

// 2x2 max pooling with stride 2. The subgradient is routed to the first
// maximal element of each window.
template <typename S>
Tensor<S> maxpool2(const Tensor<S>& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError("maxpool2: height/width must be even, got " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  std::vector<S> y(std::size_t(os.numel()));
  std::vector<std::int64_t> argmax(y.size());
  const S* xp = x.data().data();
  std::int64_t o = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::int64_t base = (std::int64_t(n) * s.c + c) * s.h * s.w;
      for (int i = 0; i < os.h; ++i)
        for (int j = 0; j < os.w; ++j) {
          std::int64_t best = base + std::int64_t(2 * i) * s.w + 2 * j;
          S bv = xp[best];
          const std::int64_t cand[3] = {best + 1, best + s.w, best + s.w + 1};
          for (std::int64_t idx : cand)
            if (xp[idx] > bv) {
              bv = xp[idx];
              best = idx;
            }
          y[o] = bv;
          argmax[o] = best;
          ++o;
        }
    }
  auto xn = x.node();
  return detail::record<S>(
      os, std::move(y), {x},
      [xn, argmax = std::move(argmax)](detail::Node<S>& out) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < out.grad.size(); ++i)
          xn->grad[argmax[i]] += out.grad[i];
      });
}

// Per-pixel softmax over exactly two channels; outputs sum to 1 per pixel.
template <typename S>
Tensor<S> softmax_channels(const Tensor<S>& x) {
  const Shape s = x.shape();
  if (s.c != 2)
    throw ShapeError("softmax_channels: channel axis must be 2, got " +
                     s.str());
  const std::int64_t plane = std::int64_t(s.h) * s.w;
  std::vector<S> y(x.data().size());
  for (int n = 0; n < s.n; ++n) {
    const S* x0 = x.data().data() + std::int64_t(n) * 2 * plane;
    const S* x1 = x0 + plane;
    S* y0 = y.data() + std::int64_t(n) * 2 * plane;
    S* y1 = y0 + plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      const S m = std::max(x0[i], x1[i]);
      const S e0 = std::exp(x0[i] - m);
      const S e1 = std::exp(x1[i] - m);
      const S z = e0 + e1;
      y0[i] = e0 / z;
      y1[i] = e1 / z;
    }
  }
  auto xn = x.node();
  return detail::record<S>(
      s, std::move(y), {x}, [xn, plane](detail::Node<S>& out) {
        if (!xn->requires_grad) return;
        const Shape& s2 = out.shape;
        for (int n = 0; n < s2.n; ++n) {
          const std::int64_t base = std::int64_t(n) * 2 * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const S p0 = out.value[base + i];
            const S p1 = out.value[base + plane + i];
            const S g0 = out.grad[base + i];
            const S g1 = out.grad[base + plane + i];
            const S dot = g0 * p0 + g1 * p1;
            xn->grad[base + i] += p0 * (g0 - dot);
            xn->grad[base + plane + i] += p1 * (g1 - dot);
          }
        }
      });
}

// Sum of all elements, as a (1,1,1,1) scalar.
template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  double acc = 0;
  for (S v : x.data()) acc += double(v);
  auto xn = x.node();
  return detail::record<S>(
      Shape{1, 1, 1, 1}, std::vector<S>{S(acc)}, {x},
      [xn](detail::Node<S>& out) {
        if (!xn->requires_grad) return;
        for (auto& g : xn->grad) g += out.grad[0];
      });
}

// Extracts a contiguous channel range as a plain value (no recording);
// used to read prediction maps out of a trace.
template <typename S>
Tensor<S> slice_channels_value(const Tensor<S>& x, int from, int count) {
  const Shape s = x.shape();
  if (from < 0 || count < 1 || from + count > s.c)
    throw ShapeError("slice_channels: range [" + std::to_string(from) + "," +
                     std::to_string(from + count) + ") out of " +
                     std::to_string(s.c) + " channels");
  const Shape os{s.n, count, s.h, s.w};
  const std::int64_t plane = std::int64_t(s.h) * s.w;
  std::vector<S> y(std::size_t(os.numel()));
  for (int n = 0; n < s.n; ++n) {
    const S* src = x.data().data() + (std::int64_t(n) * s.c + from) * plane;
    std::copy(src, src + std::int64_t(count) * plane,
              y.data() + std::int64_t(n) * count * plane);
  }
  return Tensor<S>(os, std::move(y));
}

// Bilinear resize with half-pixel centers. Not differentiable; used only in
// preprocessing and postprocessing, never inside a recorded graph.
template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& x, int oh, int ow) {
  const Shape s = x.shape();
  if (oh < 1 || ow < 1)
    throw ShapeError("resize_bilinear: target dims must be positive");
  const Shape os{s.n, s.c, oh, ow};
  std::vector<S> y(std::size_t(os.numel()));
  const double sy = double(s.h) / oh;
  const double sx = double(s.w) / ow;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const S* src = x.data().data() + (std::int64_t(n) * s.c + c) * s.h * s.w;
      S* dst = y.data() + (std::int64_t(n) * os.c + c) * std::int64_t(oh) * ow;
      for (int i = 0; i < oh; ++i) {
        const double fy = (i + 0.5) * sy - 0.5;
        int y0 = int(std::floor(fy));
        const double wy = fy - y0;
        const int y1 = std::min(std::max(y0 + 1, 0), s.h - 1);
        y0 = std::min(std::max(y0, 0), s.h - 1);
        for (int j = 0; j < ow; ++j) {
          const double fx = (j + 0.5) * sx - 0.5;
          int x0 = int(std::floor(fx));
          const double wx = fx - x0;
          const int x1 = std::min(std::max(x0 + 1, 0), s.w - 1);
          x0 = std::min(std::max(x0, 0), s.w - 1);
          const double v0 = (1 - wx) * src[y0 * s.w + x0] + wx * src[y0 * s.w + x1];
          const double v1 = (1 - wx) * src[y1 * s.w + x0] + wx * src[y1 * s.w + x1];
          dst[i * std::int64_t(ow) + j] = S((1 - wy) * v0 + wy * v1);
        }
      }
    }
  return Tensor<S>(os, std::move(y));
}

// Nearest-neighbour resize; used for masks so values stay binary.
template <typename S>
Tensor<S> resize_nearest(const Tensor<S>& x, int oh, int ow) {
  const Shape s = x.shape();
  if (oh < 1 || ow < 1)
    throw ShapeError("resize_nearest: target dims must be positive");
  const Shape os{s.n, s.c, oh, ow};
  std::vector<S> y(std::size_t(os.numel()));
  const double sy = double(s.h) / oh;
  const double sx = double(s.w) / ow;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const S* src = x.data().data() + (std::int64_t(n) * s.c + c) * s.h * s.w;
      S* dst = y.data() + (std::int64_t(n) * os.c + c) * std::int64_t(oh) * ow;
      for (int i = 0; i < oh; ++i) {
        const int yi = std::min(std::max(int(std::floor((i + 0.5) * sy)), 0), s.h - 1);
        for (int j = 0; j < ow; ++j) {
          const int xj = std::min(std::max(int(std::floor((j + 0.5) * sx)), 0), s.w - 1);
          dst[i * std::int64_t(ow) + j] = src[yi * s.w + xj];
        }
      }
    }
  return Tensor<S>(os, std::move(y));
}

}  // namespace aamulet

#endif  // AAMULET_OPS_HPP_
