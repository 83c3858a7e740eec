#pragma once

// Layer kernels as pure functions. Every forward has a matching backward that
// returns exact gradients of the forward contract; layers.hpp wraps them with
// cached state.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "traitlens/nn/tensor.hpp"

namespace traitlens::nn {

enum class Mode { Train, Infer };

template <typename Real>
struct GradientBundle {
  Tensor<Real> input_grad;
  std::vector<std::pair<std::string, Tensor<Real>>> parameter_grads;

  const Tensor<Real>& param(std::string_view name) const;
};

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct PoolGeometry {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

template <typename Real>
struct BatchNormStats {
  Tensor<Real> running_mean;  // [C]
  Tensor<Real> running_var;   // [C]

  static BatchNormStats identity(std::size_t channels) {
    return {Tensor<Real>({channels}, Real{0}), Tensor<Real>({channels}, Real{1})};
  }
};

template <typename Real>
struct BatchNormCache {
  Mode mode = Mode::Train;
  Shape input_shape;
  Tensor<Real> normalized;  // x-hat, same shape as input
  std::vector<double> inv_std;
};

// Cross-correlation, zero padding. input [N,C,H,W], weights [K,C,R,R], bias [K] or empty.
template <typename Real>
Tensor<Real> conv2d_forward(const Tensor<Real>& input, const Tensor<Real>& weights,
                            std::span<const Real> bias, ConvGeometry geometry);

// parameter_grads: "weight" and, when with_bias, "bias".
template <typename Real>
GradientBundle<Real> conv2d_backward(const Tensor<Real>& input, const Tensor<Real>& weights,
                                     const Tensor<Real>& upstream, ConvGeometry geometry,
                                     bool with_bias);

// input [N, ...] is flattened to [N, D]; weights [O, D]; bias [O].
template <typename Real>
Tensor<Real> fully_connected_forward(const Tensor<Real>& input, const Tensor<Real>& weights,
                                     const Tensor<Real>& bias);
template <typename Real>
GradientBundle<Real> fully_connected_backward(const Tensor<Real>& input,
                                              const Tensor<Real>& weights,
                                              const Tensor<Real>& upstream);

template <typename Real>
Tensor<Real> relu_forward(const Tensor<Real>& input);
// Gradient passes only where input > 0; exactly 0 gets no gradient.
template <typename Real>
Tensor<Real> relu_backward(const Tensor<Real>& input, const Tensor<Real>& upstream);

// argmax receives, per output element, the flat input index of the first
// maximal element in row-major window scan order.
template <typename Real>
Tensor<Real> maxpool_forward(const Tensor<Real>& input, PoolGeometry geometry,
                             std::vector<std::size_t>* argmax);
template <typename Real>
Tensor<Real> maxpool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                              const Tensor<Real>& upstream);

// [N,C,H,W] -> [N,C]
template <typename Real>
Tensor<Real> global_avg_pool_forward(const Tensor<Real>& input);
template <typename Real>
Tensor<Real> global_avg_pool_backward(const Shape& input_shape, const Tensor<Real>& upstream);

// Per-channel normalization of [N,C,H,W] or [N,C]. Train mode uses the biased
// batch variance and updates the running statistics; Infer mode reads them.
template <typename Real>
Tensor<Real> batchnorm_forward(const Tensor<Real>& input, const Tensor<Real>& gamma,
                               const Tensor<Real>& beta, Mode mode, BatchNormStats<Real>& stats,
                               BatchNormOptions options, BatchNormCache<Real>* cache);
// parameter_grads: "gamma", "beta".
template <typename Real>
GradientBundle<Real> batchnorm_backward(const BatchNormCache<Real>& cache,
                                        const Tensor<Real>& gamma, const Tensor<Real>& upstream);

// Inverted dropout: Train zeroes with probability p and scales survivors by
// 1/(1-p); Infer is the identity. mask (optional) receives the multipliers.
template <typename Real>
Tensor<Real> dropout_forward(const Tensor<Real>& input, double p, Mode mode, std::mt19937_64& rng,
                             Tensor<Real>* mask);
template <typename Real>
Tensor<Real> dropout_backward(const Tensor<Real>& mask, const Tensor<Real>& upstream);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

}  // namespace traitlens::nn
