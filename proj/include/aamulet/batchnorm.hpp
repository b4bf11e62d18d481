#ifndef AAMULET_BATCHNORM_HPP_
#define AAMULET_BATCHNORM_HPP_

#include <cmath>
#include <cstdint>
#include <vector>

#include "aamulet/tensor.hpp"

namespace aamulet {

enum class BnMode { train, infer };

// Batch normalization over (n, h, w) per channel. Train mode normalizes with
// batch statistics and updates the running stats in place by exponential
// moving average; infer mode normalizes with the running stats. gamma, beta,
// running_mean and running_var are (1, c, 1, 1).
template <typename S>
Tensor<S> batchnorm(const Tensor<S>& x, const Tensor<S>& gamma,
                    const Tensor<S>& beta, Tensor<S>& running_mean,
                    Tensor<S>& running_var, BnMode mode,
                    double momentum = 0.9, double eps = 1e-5) {
  const Shape s = x.shape();
  auto check_param = [&](const Tensor<S>& t, const char* name) {
    const Shape& p = t.shape();
    if (!(p.n == 1 && p.c == s.c && p.h == 1 && p.w == 1))
      throw ShapeError(std::string("batchnorm: ") + name + " must be (1," +
                       std::to_string(s.c) + ",1,1), got " + p.str());
  };
  check_param(gamma, "gamma");
  check_param(beta, "beta");
  check_param(running_mean, "running_mean");
  check_param(running_var, "running_var");

  const std::int64_t plane = std::int64_t(s.h) * s.w;
  const std::int64_t m = std::int64_t(s.n) * plane;  // elements per channel
  if (mode == BnMode::train && m < 2)
    throw SpecError("batchnorm: train mode needs at least 2 elements per "
                    "channel, got " + std::to_string(m));

  std::vector<double> mean(s.c), istd(s.c);
  if (mode == BnMode::train) {
    for (int c = 0; c < s.c; ++c) {
      double acc = 0;
      for (int n = 0; n < s.n; ++n) {
        const S* p = x.data().data() + (std::int64_t(n) * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += double(p[i]);
      }
      const double mu = acc / double(m);
      double vacc = 0;
      for (int n = 0; n < s.n; ++n) {
        const S* p = x.data().data() + (std::int64_t(n) * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = double(p[i]) - mu;
          vacc += d * d;
        }
      }
      const double var = vacc / double(m);
      mean[c] = mu;
      istd[c] = 1.0 / std::sqrt(var + eps);
      running_mean.mutable_data()[c] =
          S(momentum * double(running_mean.data()[c]) + (1 - momentum) * mu);
      running_var.mutable_data()[c] =
          S(momentum * double(running_var.data()[c]) + (1 - momentum) * var);
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      mean[c] = double(running_mean.data()[c]);
      istd[c] = 1.0 / std::sqrt(double(running_var.data()[c]) + eps);
    }
  }

  std::vector<S> y(x.data().size());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const S* p = x.data().data() + (std::int64_t(n) * s.c + c) * plane;
      S* q = y.data() + (std::int64_t(n) * s.c + c) * plane;
      const S g = gamma.data()[c];
      const S b = beta.data()[c];
      const S mu = S(mean[c]);
      const S is = S(istd[c]);
      for (std::int64_t i = 0; i < plane; ++i)
        q[i] = g * ((p[i] - mu) * is) + b;
    }

  auto xn = x.node();
  auto gn = gamma.node();
  auto btn = beta.node();
  const bool train = mode == BnMode::train;
  auto backward = [xn, gn, btn, mean, istd, plane, m,
                   train](detail::Node<S>& out) {
    const Shape& s2 = out.shape;
    for (int c = 0; c < s2.c; ++c) {
      const S mu = S(mean[c]);
      const S is = S(istd[c]);
      // dgamma = sum(dy * xhat), dbeta = sum(dy), computed per channel.
      double dg = 0, db = 0;
      for (int n = 0; n < s2.n; ++n) {
        const std::int64_t off = (std::int64_t(n) * s2.c + c) * plane;
        const S* gom = out.grad.data() + off;
        const S* xv = xn->value.data() + off;
        for (std::int64_t i = 0; i < plane; ++i) {
          db += double(gom[i]);
          dg += double(gom[i]) * double((xv[i] - mu) * is);
        }
      }
      if (gn->requires_grad) gn->grad[c] += S(dg);
      if (btn->requires_grad) btn->grad[c] += S(db);
      if (!xn->requires_grad) continue;
      const S g = gn->value[c];
      if (train) {
        // dx = gamma*istd/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
        const S k = g * is / S(double(m));
        for (int n = 0; n < s2.n; ++n) {
          const std::int64_t off = (std::int64_t(n) * s2.c + c) * plane;
          const S* gom = out.grad.data() + off;
          const S* xv = xn->value.data() + off;
          S* dx = xn->grad.data() + off;
          for (std::int64_t i = 0; i < plane; ++i) {
            const S xhat = (xv[i] - mu) * is;
            dx[i] += k * (S(double(m)) * gom[i] - S(db) - xhat * S(dg));
          }
        }
      } else {
        const S k = g * is;
        for (int n = 0; n < s2.n; ++n) {
          const std::int64_t off = (std::int64_t(n) * s2.c + c) * plane;
          const S* gom = out.grad.data() + off;
          S* dx = xn->grad.data() + off;
          for (std::int64_t i = 0; i < plane; ++i) dx[i] += k * gom[i];
        }
      }
    }
  };
  return detail::record<S>(s, std::move(y), {x, gamma, beta},
                           std::move(backward));
}

}  // namespace aamulet

#endif  // AAMULET_BATCHNORM_HPP_
