#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "cparr/tensor.hpp"

namespace cparr {

// Central-difference check of analytic gradients.
//
// `loss` must recompute the scalar loss from the current contents of the
// wiggled tensors. `wiggled` lists every tensor the check perturbs (parameters
// and/or inputs) and `analytic` the matching analytic gradients, same order.
// Returns the maximum relative error over all entries.
//
// When max_checks_per_tensor is nonzero, large tensors are probed on an
// evenly strided subset of entries instead of exhaustively; chain-rule bugs
// are dense, so the strided probe keeps wide layers checkable in seconds.
inline double finite_diff_check(const std::function<double()>& loss,
                                const std::vector<Tensor*>& wiggled,
                                const std::vector<const Tensor*>& analytic,
                                double h = 1e-5,
                                std::size_t max_checks_per_tensor = 0) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");
  if (wiggled.size() != analytic.size()) {
    throw std::invalid_argument("finite_diff_check: tensor/gradient count mismatch");
  }
  double max_rel = 0.0;
  for (std::size_t t = 0; t < wiggled.size(); ++t) {
    Tensor& ten = *wiggled[t];
    const Tensor& grad = *analytic[t];
    if (!ten.same_shape(grad)) {
      throw std::invalid_argument("finite_diff_check: gradient shape mismatch");
    }
    std::size_t step = 1;
    if (max_checks_per_tensor != 0 && ten.size() > max_checks_per_tensor) {
      step = (ten.size() + max_checks_per_tensor - 1) / max_checks_per_tensor;
    }
    for (std::size_t i = 0; i < ten.size(); i += step) {
      const double saved = ten.data[i];
      ten.data[i] = saved + h;
      const double up = loss();
      ten.data[i] = saved - h;
      const double down = loss();
      ten.data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grad.data[i];
      // The 1e-6 floor keeps roundoff noise on exactly-zero gradients
      // (dead ReLU paths) from registering as relative error.
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace cparr
