#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cparr/rng.hpp"
#include "cparr/tensor.hpp"

namespace cparr {

inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline void init_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

struct DenseParams {
  Tensor weights;  // {in_dim, out_dim}
  Tensor bias;     // {out_dim}

  std::size_t in_dim() const { return weights.shape[0]; }
  std::size_t out_dim() const { return weights.shape[1]; }

  static DenseParams init(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
    DenseParams p;
    p.weights = Tensor({in_dim, out_dim});
    p.bias = Tensor({out_dim});
    init_uniform(p.weights, glorot_bound(in_dim, out_dim), rng);
    return p;
  }

  static DenseParams zeros(std::size_t in_dim, std::size_t out_dim) {
    DenseParams p;
    p.weights = Tensor({in_dim, out_dim});
    p.bias = Tensor({out_dim});
    return p;
  }
};

// y = x W + b over a batch; x shape {n, in_dim}, result {n, out_dim}.
inline Tensor dense_apply(const DenseParams& p, const Tensor& x) {
  if (x.shape.size() != 2 || x.shape[1] != p.in_dim()) {
    throw std::invalid_argument("dense_apply: input dim mismatch");
  }
  const std::size_t n = x.shape[0], in = p.in_dim(), out = p.out_dim();
  Tensor y({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    double* yi = &y.data[i * out];
    for (std::size_t j = 0; j < out; ++j) yi[j] = p.bias.data[j];
    const double* xi = &x.data[i * in];
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xi[k];
      const double* wk = &p.weights.data[k * out];
      for (std::size_t j = 0; j < out; ++j) yi[j] += xv * wk[j];
    }
  }
  return y;
}

struct DenseGrads {
  Tensor d_weights;
  Tensor d_bias;
  Tensor d_input;
};

inline DenseGrads dense_grad(const DenseParams& p, const Tensor& x, const Tensor& dy) {
  if (x.shape.size() != 2 || dy.shape.size() != 2 || x.shape[0] != dy.shape[0] ||
      x.shape[1] != p.in_dim() || dy.shape[1] != p.out_dim()) {
    throw std::invalid_argument("dense_grad: shape mismatch");
  }
  const std::size_t n = x.shape[0], in = p.in_dim(), out = p.out_dim();
  DenseGrads g;
  g.d_weights = Tensor({in, out});
  g.d_bias = Tensor({out});
  g.d_input = Tensor({n, in});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = &x.data[i * in];
    const double* dyi = &dy.data[i * out];
    double* dxi = &g.d_input.data[i * in];
    for (std::size_t j = 0; j < out; ++j) g.d_bias.data[j] += dyi[j];
    for (std::size_t k = 0; k < in; ++k) {
      const double* wk = &p.weights.data[k * out];
      double* dwk = &g.d_weights.data[k * out];
      double acc = 0.0;
      const double xv = xi[k];
      for (std::size_t j = 0; j < out; ++j) {
        dwk[j] += xv * dyi[j];
        acc += wk[j] * dyi[j];
      }
      dxi[k] = acc;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2-D convolution (cross-correlation), stride 1, same zero padding
// ---------------------------------------------------------------------------

struct ConvParams {
  Tensor kernels;  // {k, k, in_ch, out_ch}
  Tensor bias;     // {out_ch}

  std::size_t kernel() const { return kernels.shape[0]; }
  std::size_t in_ch() const { return kernels.shape[2]; }
  std::size_t out_ch() const { return kernels.shape[3]; }

  static ConvParams init(std::size_t k, std::size_t in_ch, std::size_t out_ch, Rng& rng) {
    if (k % 2 == 0) throw std::invalid_argument("ConvParams: kernel size must be odd");
    ConvParams p;
    p.kernels = Tensor({k, k, in_ch, out_ch});
    p.bias = Tensor({out_ch});
    init_uniform(p.kernels, glorot_bound(k * k * in_ch, k * k * out_ch), rng);
    return p;
  }

  static ConvParams zeros(std::size_t k, std::size_t in_ch, std::size_t out_ch) {
    ConvParams p;
    p.kernels = Tensor({k, k, in_ch, out_ch});
    p.bias = Tensor({out_ch});
    return p;
  }
};

// x shape {H, W, in_ch}, result {H, W, out_ch}.
inline Tensor conv2d_apply(const ConvParams& p, const Tensor& x) {
  if (x.shape.size() != 3 || x.shape[2] != p.in_ch()) {
    throw std::invalid_argument("conv2d_apply: channel mismatch");
  }
  const std::size_t h = x.shape[0], w = x.shape[1];
  const std::size_t k = p.kernel(), ic = p.in_ch(), oc = p.out_ch();
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  Tensor y({h, w, oc});
  for (std::size_t yy = 0; yy < h; ++yy) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      double* out = &y.data[(yy * w + xx) * oc];
      for (std::size_t j = 0; j < oc; ++j) out[j] = p.bias.data[j];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(yy + ky) - half;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx + kx) - half;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* xin = &x.data[(static_cast<std::size_t>(iy) * w +
                                       static_cast<std::size_t>(ix)) * ic];
          const double* kbase = &p.kernels.data[((ky * k + kx) * ic) * oc];
          for (std::size_t c = 0; c < ic; ++c) {
            const double xv = xin[c];
            const double* kc = kbase + c * oc;
            for (std::size_t j = 0; j < oc; ++j) out[j] += xv * kc[j];
          }
        }
      }
    }
  }
  return y;
}

struct ConvGrads {
  Tensor d_kernels;
  Tensor d_bias;
  Tensor d_input;
};

inline ConvGrads conv2d_grad(const ConvParams& p, const Tensor& x, const Tensor& dy) {
  if (x.shape.size() != 3 || dy.shape.size() != 3 || x.shape[0] != dy.shape[0] ||
      x.shape[1] != dy.shape[1] || x.shape[2] != p.in_ch() || dy.shape[2] != p.out_ch()) {
    throw std::invalid_argument("conv2d_grad: shape mismatch");
  }
  const std::size_t h = x.shape[0], w = x.shape[1];
  const std::size_t k = p.kernel(), ic = p.in_ch(), oc = p.out_ch();
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  ConvGrads g;
  g.d_kernels = Tensor({k, k, ic, oc});
  g.d_bias = Tensor({oc});
  g.d_input = Tensor({h, w, ic});
  for (std::size_t yy = 0; yy < h; ++yy) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      const double* dout = &dy.data[(yy * w + xx) * oc];
      for (std::size_t j = 0; j < oc; ++j) g.d_bias.data[j] += dout[j];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(yy + ky) - half;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx + kx) - half;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t in_off = (static_cast<std::size_t>(iy) * w +
                                      static_cast<std::size_t>(ix)) * ic;
          const double* xin = &x.data[in_off];
          double* dxin = &g.d_input.data[in_off];
          const std::size_t koff = ((ky * k + kx) * ic) * oc;
          for (std::size_t c = 0; c < ic; ++c) {
            const double* kc = &p.kernels.data[koff + c * oc];
            double* dkc = &g.d_kernels.data[koff + c * oc];
            const double xv = xin[c];
            double acc = 0.0;
            for (std::size_t j = 0; j < oc; ++j) {
              dkc[j] += xv * dout[j];
              acc += kc[j] * dout[j];
            }
            dxin[c] += acc;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

// dx given the layer input x
inline Tensor relu_grad(const Tensor& x, const Tensor& dy) {
  if (!x.same_shape(dy)) throw std::invalid_argument("relu_grad: shape mismatch");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (x.data[i] <= 0.0) dx.data[i] = 0.0;
  }
  return dx;
}

inline double sigmoid_scalar(double z) {
  double v;
  if (z >= 0.0) {
    v = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    v = e / (1.0 + e);
  }
  // Keep strictly inside (0,1): deep saturation would otherwise round to an
  // exact 0 or 1 and break the open-interval confidence contract.
  constexpr double kHi = 0x1.fffffffffffffp-1;  // largest double below 1
  return std::clamp(v, std::numeric_limits<double>::min(), kHi);
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = sigmoid_scalar(v);
  return y;
}

inline Tensor sigmoid_grad(const Tensor& y, const Tensor& dy) {
  if (!y.same_shape(dy)) throw std::invalid_argument("sigmoid_grad: shape mismatch");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx.data[i] *= y.data[i] * (1.0 - y.data[i]);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d loss / d first argument
};

// Mean elementwise sigmoid cross-entropy against {0,1} targets, computed in
// the stable logit form: max(z,0) - z*t + log(1 + exp(-|z|)).
inline LossResult sigmoid_ce_loss(const Tensor& logits, const Tensor& targets) {
  if (!logits.same_shape(targets)) throw std::invalid_argument("sigmoid_ce_loss: shape mismatch");
  if (logits.size() == 0) throw std::invalid_argument("sigmoid_ce_loss: empty input");
  for (double t : targets.data) {
    if (t != 0.0 && t != 1.0) throw std::invalid_argument("sigmoid_ce_loss: target not in {0,1}");
  }
  LossResult r;
  r.grad = Tensor::zeros_like(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits.data[i];
    const double t = targets.data[i];
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    r.grad.data[i] = (sigmoid_scalar(z) - t) * inv_n;
  }
  r.value = total * inv_n;
  return r;
}

// Smooth-L1 over N 4-vectors with the 1/(4N) normalization:
// f(d) = 0.5 d^2 for d < 1, d - 0.5 otherwise.
inline LossResult smooth_l1_loss(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt) || pred.shape.size() != 2 || pred.shape[1] != 4) {
    throw std::invalid_argument("smooth_l1_loss: expected matching {N,4} tensors");
  }
  const std::size_t n = pred.shape[0];
  if (n == 0) throw std::invalid_argument("smooth_l1_loss: no positive samples");
  LossResult r;
  r.grad = Tensor::zeros_like(pred);
  const double norm = 1.0 / (4.0 * static_cast<double>(n));
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double diff = pred.data[i] - gt.data[i];
    const double d = std::abs(diff);
    if (d < 1.0) {
      total += 0.5 * d * d;
      r.grad.data[i] = diff * norm;
    } else {
      total += d - 0.5;
      r.grad.data[i] = (diff > 0.0 ? 1.0 : -1.0) * norm;
    }
  }
  r.value = total * norm;
  return r;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::size_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static AdamState create(const std::vector<Tensor*>& params, double lr = 1e-4) {
    AdamState s;
    s.lr = lr;
    s.first_moment.reserve(params.size());
    s.second_moment.reserve(params.size());
    for (const Tensor* p : params) {
      s.first_moment.push_back(Tensor(p->shape));
      s.second_moment.push_back(Tensor(p->shape));
    }
    return s;
  }
};

inline void adam_step(AdamState& state, const std::vector<Tensor*>& params,
                      const std::vector<Tensor>& grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p];
    const Tensor& g = grads[p];
    if (!theta.same_shape(g)) throw std::invalid_argument("adam_step: gradient shape mismatch");
    if (!g.all_finite()) throw std::runtime_error("adam_step: non-finite gradient");
    Tensor& m = state.first_moment[p];
    Tensor& v = state.second_moment[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g.data[i];
      v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
      const double m_hat = m.data[i] / bc1;
      const double v_hat = v.data[i] / bc2;
      theta.data[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace cparr
