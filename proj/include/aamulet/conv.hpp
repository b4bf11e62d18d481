#ifndef AAMULET_CONV_HPP_
#define AAMULET_CONV_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "aamulet/tensor.hpp"

namespace aamulet {

// Geometry of a (possibly transposed) 2D convolution. Weights are stored as
// (out_channels, in_channels, kh, kw) in both modes.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int padding = 0;
  bool transposed = false;

  static ConvSpec conv(int in_c, int out_c, int k, int stride = 1,
                       int pad = 0) {
    return ConvSpec{in_c, out_c, k, k, stride, pad, false};
  }
  // Stride-s upsampling deconvolution; kernel 2s with pad s/2 maps h to s*h
  // exactly for even s.
  static ConvSpec deconv(int in_c, int out_c, int k, int stride, int pad) {
    return ConvSpec{in_c, out_c, k, k, stride, pad, true};
  }
};

namespace detail {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C (+)= A * B with row-major raw buffers. a: m x k, b: k x n, c: m x n.
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, Eigen::Index m, Eigen::Index k,
             Eigen::Index n, bool accumulate) {
  Eigen::Map<const MatRM<S>> ma(a, m, k), mb(b, k, n);
  Eigen::Map<MatRM<S>> mc(c, m, n);
  if (accumulate)
    mc.noalias() += ma * mb;
  else
    mc.noalias() = ma * mb;
}

// C (+)= A * B^T. a: m x k, b: n x k, c: m x n.
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, Eigen::Index m, Eigen::Index k,
             Eigen::Index n, bool accumulate) {
  Eigen::Map<const MatRM<S>> ma(a, m, k), mb(b, n, k);
  Eigen::Map<MatRM<S>> mc(c, m, n);
  if (accumulate)
    mc.noalias() += ma * mb.transpose();
  else
    mc.noalias() = ma * mb.transpose();
}

// C (+)= A^T * B. a: k x m, b: k x n, c: m x n.
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, Eigen::Index m, Eigen::Index k,
             Eigen::Index n, bool accumulate) {
  Eigen::Map<const MatRM<S>> ma(a, k, m), mb(b, k, n);
  Eigen::Map<MatRM<S>> mc(c, m, n);
  if (accumulate)
    mc.noalias() += ma.transpose() * mb;
  else
    mc.noalias() = ma.transpose() * mb;
}

// Unfolds one (c, h, w) image into a (c*kh*kw) x (oh*ow) column matrix with
// zero padding; row index is (ci*kh + ki)*kw + kj.
template <typename S>
void im2col(const S* img, int c, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, S* cols) {
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        S* row = cols + (std::int64_t(ci) * kh * kw + ki * kw + kj) *
                            std::int64_t(oh) * ow;
        for (int i = 0; i < oh; ++i) {
          const int y = i * stride - pad + ki;
          if (y < 0 || y >= h) {
            for (int j = 0; j < ow; ++j) row[std::int64_t(i) * ow + j] = S(0);
            continue;
          }
          const S* src = img + (std::int64_t(ci) * h + y) * w;
          for (int j = 0; j < ow; ++j) {
            const int x = j * stride - pad + kj;
            row[std::int64_t(i) * ow + j] =
                (x >= 0 && x < w) ? src[x] : S(0);
          }
        }
      }
}

// Adjoint of im2col: scatter-adds columns back into the (c, h, w) image.
template <typename S>
void col2im(const S* cols, int c, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, S* img) {
  for (int ci = 0; ci < c; ++ci)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const S* row = cols + (std::int64_t(ci) * kh * kw + ki * kw + kj) *
                                  std::int64_t(oh) * ow;
        for (int i = 0; i < oh; ++i) {
          const int y = i * stride - pad + ki;
          if (y < 0 || y >= h) continue;
          S* dst = img + (std::int64_t(ci) * h + y) * w;
          for (int j = 0; j < ow; ++j) {
            const int x = j * stride - pad + kj;
            if (x >= 0 && x < w) dst[x] += row[std::int64_t(i) * ow + j];
          }
        }
      }
}

// Permutes (oc, ic, kh, kw) weights into the (oc*kh*kw) x ic matrix used by
// the transposed-convolution GEMMs.
template <typename S>
std::vector<S> permute_deconv_weight(const std::vector<S>& w, int oc, int ic,
                                     int kh, int kw) {
  std::vector<S> wp(w.size());
  for (int o = 0; o < oc; ++o)
    for (int i = 0; i < ic; ++i)
      for (int k = 0; k < kh * kw; ++k)
        wp[(std::int64_t(o) * kh * kw + k) * ic + i] =
            w[(std::int64_t(o) * ic + i) * kh * kw + k];
  return wp;
}

template <typename S>
void unpermute_deconv_weight(const std::vector<S>& wp, int oc, int ic, int kh,
                             int kw, std::vector<S>& w) {
  for (int o = 0; o < oc; ++o)
    for (int i = 0; i < ic; ++i)
      for (int k = 0; k < kh * kw; ++k)
        w[(std::int64_t(o) * ic + i) * kh * kw + k] +=
            wp[(std::int64_t(o) * kh * kw + k) * ic + i];
}

inline void check_conv_args(const Shape& x, const Shape& w, const Shape* b,
                            const ConvSpec& spec) {
  if (w.n != spec.out_channels)
    throw ShapeError("conv2d: weight axis 0 (out_channels) is " +
                     std::to_string(w.n) + ", spec says " +
                     std::to_string(spec.out_channels));
  if (w.c != spec.in_channels)
    throw ShapeError("conv2d: weight axis 1 (in_channels) is " +
                     std::to_string(w.c) + ", spec says " +
                     std::to_string(spec.in_channels));
  if (w.h != spec.kernel_h || w.w != spec.kernel_w)
    throw ShapeError("conv2d: weight kernel axes are (" +
                     std::to_string(w.h) + "," + std::to_string(w.w) +
                     "), spec says (" + std::to_string(spec.kernel_h) + "," +
                     std::to_string(spec.kernel_w) + ")");
  if (x.c != spec.in_channels)
    throw ShapeError("conv2d: input channel axis is " + std::to_string(x.c) +
                     ", spec says " + std::to_string(spec.in_channels));
  if (b && !(b->n == 1 && b->c == spec.out_channels && b->h == 1 && b->w == 1))
    throw ShapeError("conv2d: bias must be (1," +
                     std::to_string(spec.out_channels) + ",1,1), got " +
                     b->str());
  if (spec.stride < 1 || spec.padding < 0 || spec.kernel_h < 1 ||
      spec.kernel_w < 1)
    throw SpecError("conv2d: invalid geometry (stride " +
                    std::to_string(spec.stride) + ", pad " +
                    std::to_string(spec.padding) + ")");
}

inline std::pair<int, int> conv_output_hw(const Shape& x,
                                          const ConvSpec& spec) {
  if (!spec.transposed) {
    const int num_h = x.h + 2 * spec.padding - spec.kernel_h;
    const int num_w = x.w + 2 * spec.padding - spec.kernel_w;
    if (num_h < 0 || num_w < 0 || num_h % spec.stride != 0 ||
        num_w % spec.stride != 0)
      throw SpecError("conv2d: non-integral output size for input " + x.str() +
                      " with kernel (" + std::to_string(spec.kernel_h) + "," +
                      std::to_string(spec.kernel_w) + "), stride " +
                      std::to_string(spec.stride) + ", pad " +
                      std::to_string(spec.padding));
    return {num_h / spec.stride + 1, num_w / spec.stride + 1};
  }
  const int oh = (x.h - 1) * spec.stride - 2 * spec.padding + spec.kernel_h;
  const int ow = (x.w - 1) * spec.stride - 2 * spec.padding + spec.kernel_w;
  if (oh < 1 || ow < 1)
    throw SpecError("conv2d: transposed output size is non-positive for " +
                    x.str());
  return {oh, ow};
}

}  // namespace detail

// Cross-correlation with zero padding (spec.transposed = false) or its
// transpose (true). Forward output size: (h + 2*pad - kh)/stride + 1;
// transposed: (h - 1)*stride - 2*pad + kh. Gradients are produced for the
// input, the weight and the bias.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight,
                 const Tensor<S>* bias, const ConvSpec& spec) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  detail::check_conv_args(xs, ws, bias ? &bias->shape() : nullptr, spec);
  const auto [oh, ow] = detail::conv_output_hw(xs, spec);
  const int oc = spec.out_channels;
  const int ic = spec.in_channels;
  const int kh = spec.kernel_h;
  const int kw = spec.kernel_w;
  const Shape os{xs.n, oc, oh, ow};

  std::vector<S> y(std::size_t(os.numel()), S(0));
  const std::int64_t kdim = std::int64_t(ic) * kh * kw;

  if (!spec.transposed) {
    const std::int64_t patches = std::int64_t(oh) * ow;
    std::vector<S> cols(std::size_t(kdim * patches));
    for (int n = 0; n < xs.n; ++n) {
      const S* img = x.data().data() + std::int64_t(n) * ic * xs.h * xs.w;
      detail::im2col(img, ic, xs.h, xs.w, kh, kw, spec.stride, spec.padding,
                     oh, ow, cols.data());
      S* out = y.data() + std::int64_t(n) * oc * patches;
      detail::gemm_nn(weight.data().data(), cols.data(), out, oc, kdim,
                      patches, false);
    }
  } else {
    // col2im(Wp * x): the mirror convolution maps the output grid back onto
    // the input grid, so its im2col geometry uses (oh, ow) as the image.
    const std::int64_t patches = std::int64_t(xs.h) * xs.w;
    const std::int64_t kdim_t = std::int64_t(oc) * kh * kw;
    std::vector<S> wp =
        detail::permute_deconv_weight(weight.data(), oc, ic, kh, kw);
    std::vector<S> cols(std::size_t(kdim_t * patches));
    for (int n = 0; n < xs.n; ++n) {
      const S* img = x.data().data() + std::int64_t(n) * ic * patches;
      detail::gemm_nn(wp.data(), img, cols.data(), kdim_t, ic, patches, false);
      S* out = y.data() + std::int64_t(n) * oc * std::int64_t(oh) * ow;
      detail::col2im(cols.data(), oc, oh, ow, kh, kw, spec.stride,
                     spec.padding, xs.h, xs.w, out);
    }
  }
  if (bias) {
    const std::int64_t plane = std::int64_t(oh) * ow;
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < oc; ++c) {
        const S bv = bias->data()[c];
        S* out = y.data() + (std::int64_t(n) * oc + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) out[i] += bv;
      }
  }

  auto xn = x.node();
  auto wn = weight.node();
  std::vector<Tensor<S>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  auto bn = bias ? bias->node() : nullptr;
  const Shape xshape = xs;
  auto backward = [xn, wn, bn, spec, xshape, oh, ow](detail::Node<S>& out) {
    const int oc2 = spec.out_channels;
    const int ic2 = spec.in_channels;
    const int kh2 = spec.kernel_h;
    const int kw2 = spec.kernel_w;
    const std::int64_t kdim2 = std::int64_t(ic2) * kh2 * kw2;
    if (bn && bn->requires_grad) {
      const std::int64_t plane = std::int64_t(oh) * ow;
      for (int n = 0; n < xshape.n; ++n)
        for (int c = 0; c < oc2; ++c) {
          const S* g = out.grad.data() + (std::int64_t(n) * oc2 + c) * plane;
          double acc = 0;
          for (std::int64_t i = 0; i < plane; ++i) acc += double(g[i]);
          bn->grad[c] += S(acc);
        }
    }
    if (!spec.transposed) {
      const std::int64_t patches = std::int64_t(oh) * ow;
      std::vector<S> cols(std::size_t(kdim2 * patches));
      std::vector<S> dcols;
      if (xn->requires_grad) dcols.resize(std::size_t(kdim2 * patches));
      for (int n = 0; n < xshape.n; ++n) {
        const S* g = out.grad.data() + std::int64_t(n) * oc2 * patches;
        if (wn->requires_grad) {
          const S* img =
              xn->value.data() + std::int64_t(n) * ic2 * xshape.h * xshape.w;
          detail::im2col(img, ic2, xshape.h, xshape.w, kh2, kw2, spec.stride,
                         spec.padding, oh, ow, cols.data());
          detail::gemm_nt(g, cols.data(), wn->grad.data(), oc2, patches,
                          kdim2, true);
        }
        if (xn->requires_grad) {
          detail::gemm_tn(wn->value.data(), g, dcols.data(), kdim2, oc2,
                          patches, false);
          S* dx = xn->grad.data() + std::int64_t(n) * ic2 * xshape.h * xshape.w;
          detail::col2im(dcols.data(), ic2, xshape.h, xshape.w, kh2, kw2,
                         spec.stride, spec.padding, oh, ow, dx);
        }
      }
    } else {
      const std::int64_t patches = std::int64_t(xshape.h) * xshape.w;
      const std::int64_t kdim_t = std::int64_t(oc2) * kh2 * kw2;
      std::vector<S> dcols(std::size_t(kdim_t * patches));
      std::vector<S> wp;
      if (xn->requires_grad)
        wp = detail::permute_deconv_weight(wn->value, oc2, ic2, kh2, kw2);
      std::vector<S> dwp;
      if (wn->requires_grad) dwp.assign(std::size_t(kdim_t * ic2), S(0));
      for (int n = 0; n < xshape.n; ++n) {
        const S* g = out.grad.data() + std::int64_t(n) * oc2 *
                                           std::int64_t(oh) * ow;
        detail::im2col(g, oc2, oh, ow, kh2, kw2, spec.stride, spec.padding,
                       xshape.h, xshape.w, dcols.data());
        if (xn->requires_grad) {
          S* dx = xn->grad.data() + std::int64_t(n) * ic2 * patches;
          detail::gemm_tn(wp.data(), dcols.data(), dx, ic2, kdim_t, patches,
                          true);
        }
        if (wn->requires_grad) {
          const S* img = xn->value.data() + std::int64_t(n) * ic2 * patches;
          detail::gemm_nt(dcols.data(), img, dwp.data(), kdim_t, patches, ic2,
                          true);
        }
      }
      if (wn->requires_grad)
        detail::unpermute_deconv_weight(dwp, oc2, ic2, kh2, kw2, wn->grad);
    }
  };
  return detail::record<S>(os, std::move(y), std::move(inputs),
                           std::move(backward));
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight,
                 const Tensor<S>& bias, const ConvSpec& spec) {
  return conv2d(x, weight, &bias, spec);
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight,
                 const ConvSpec& spec) {
  return conv2d(x, weight, static_cast<const Tensor<S>*>(nullptr), spec);
}

}  // namespace aamulet

#endif  // AAMULET_CONV_HPP_
