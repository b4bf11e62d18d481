#ifndef AAMULET_GRADCHECK_HPP_
#define AAMULET_GRADCHECK_HPP_

#include <cmath>
#include <functional>
#include <vector>

#include "aamulet/tensor.hpp"

namespace aamulet {

// Central finite-difference validation of the recorded backward pass.
// f rebuilds the scalar-valued graph from the current parameter values on
// every call; checking runs at 64-bit precision. Returns the max over all
// parameter entries of |analytic - central| / max(1, |central|).
inline double grad_check(const std::function<Tensor<double>()>& f,
                         std::vector<Tensor<double>> params,
                         double h = 1e-4) {
  if (h < 1e-6 || h > 1e-3)
    throw CheckError("grad_check: step must lie in [1e-6, 1e-3]");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor<double> loss = f();
  if (!std::isfinite(loss.item()))
    throw CheckError("grad_check: non-finite function value");
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  double max_err = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& values = params[pi].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double fp = f().item();
      values[i] = saved - h;
      const double fm = f().item();
      values[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw CheckError("grad_check: non-finite function value at offset " +
                         std::to_string(i));
      const double central = (fp - fm) / (2 * h);
      const double err = std::abs(analytic[pi][i] - central) /
                         std::max(1.0, std::abs(central));
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

}  // namespace aamulet

#endif  // AAMULET_GRADCHECK_HPP_
