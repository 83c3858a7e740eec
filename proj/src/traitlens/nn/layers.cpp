#include "traitlens/nn/layers.hpp"

namespace traitlens::nn {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::FullyConnected: return "FullyConnected";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::Dropout: return "Dropout";
    case LayerKind::ResidualAdd: return "ResidualAdd";
    case LayerKind::Sequential: return "Sequential";
  }
  return "?";
}

namespace {

template <typename Real>
void take_grad(Parameter<Real>& p, GradientBundle<Real>& bundle, std::string_view key) {
  for (auto& [name, t] : bundle.parameter_grads) {
    if (name == key) {
      p.grad = std::move(t);
      return;
    }
  }
}

}  // namespace

// Conv2D

template <typename Real>
Conv2D<Real>::Conv2D(std::string name, std::size_t in_channels, std::size_t out_channels,
                     std::size_t kernel, ConvGeometry geometry, bool with_bias)
    : Layer<Real>(name),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      geometry_(geometry) {
  if (with_bias) bias_.emplace(name + ".bias", Shape{out_channels});
}

template <typename Real>
Tensor<Real> Conv2D<Real>::forward(const Tensor<Real>& input, const ForwardContext& ctx) {
  input_ = input;
  std::span<const Real> b;
  if (bias_) b = bias_->value.data();
  Tensor<Real> out = conv2d_forward(input, weight_.value, b, geometry_);
  if (ctx.ops) {
    const auto& w = weight_.value.shape();
    ctx.ops->multiply_adds += out.size() * w[1] * w[2] * w[3];
    ctx.ops->conv_calls += 1;
  }
  return out;
}

template <typename Real>
Tensor<Real> Conv2D<Real>::backward(const Tensor<Real>& upstream) {
  auto g = conv2d_backward(input_, weight_.value, upstream, geometry_, bias_.has_value());
  take_grad(weight_, g, "weight");
  if (bias_) take_grad(*bias_, g, "bias");
  return std::move(g.input_grad);
}

template <typename Real>
void Conv2D<Real>::collect_parameters(std::vector<Parameter<Real>*>& out) {
  out.push_back(&weight_);
  if (bias_) out.push_back(&*bias_);
}

// FullyConnected

template <typename Real>
FullyConnected<Real>::FullyConnected(std::string name, std::size_t in_features,
                                     std::size_t out_features)
    : Layer<Real>(name),
      weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {}

template <typename Real>
Tensor<Real> FullyConnected<Real>::forward(const Tensor<Real>& input, const ForwardContext& ctx) {
  input_ = input;
  if (ctx.ops) ctx.ops->multiply_adds += input.dim(0) * weight_.value.size();
  return fully_connected_forward(input, weight_.value, bias_.value);
}

template <typename Real>
Tensor<Real> FullyConnected<Real>::backward(const Tensor<Real>& upstream) {
  auto g = fully_connected_backward(input_, weight_.value, upstream);
  take_grad(weight_, g, "weight");
  take_grad(bias_, g, "bias");
  return std::move(g.input_grad);
}

template <typename Real>
void FullyConnected<Real>::collect_parameters(std::vector<Parameter<Real>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ReLU, pooling

template <typename Real>
Tensor<Real> ReLU<Real>::forward(const Tensor<Real>& input, const ForwardContext&) {
  input_ = input;
  return relu_forward(input);
}

template <typename Real>
Tensor<Real> ReLU<Real>::backward(const Tensor<Real>& upstream) {
  return relu_backward(input_, upstream);
}

template <typename Real>
Tensor<Real> MaxPool<Real>::forward(const Tensor<Real>& input, const ForwardContext&) {
  input_shape_ = input.shape();
  return maxpool_forward(input, geometry_, &argmax_);
}

template <typename Real>
Tensor<Real> MaxPool<Real>::backward(const Tensor<Real>& upstream) {
  return maxpool_backward(input_shape_, argmax_, upstream);
}

template <typename Real>
Tensor<Real> GlobalAvgPool<Real>::forward(const Tensor<Real>& input, const ForwardContext&) {
  input_shape_ = input.shape();
  return global_avg_pool_forward(input);
}

template <typename Real>
Tensor<Real> GlobalAvgPool<Real>::backward(const Tensor<Real>& upstream) {
  return global_avg_pool_backward(input_shape_, upstream);
}

// BatchNorm

template <typename Real>
BatchNorm<Real>::BatchNorm(std::string name, std::size_t channels, BatchNormOptions options)
    : Layer<Real>(name),
      gamma_(name + ".gamma", {channels}, Real{1}),
      beta_(name + ".beta", {channels}, Real{0}),
      stats_(BatchNormStats<Real>::identity(channels)),
      options_(options) {}

template <typename Real>
Tensor<Real> BatchNorm<Real>::forward(const Tensor<Real>& input, const ForwardContext& ctx) {
  return batchnorm_forward(input, gamma_.value, beta_.value, ctx.mode, stats_, options_, &cache_);
}

template <typename Real>
Tensor<Real> BatchNorm<Real>::backward(const Tensor<Real>& upstream) {
  auto g = batchnorm_backward(cache_, gamma_.value, upstream);
  take_grad(gamma_, g, "gamma");
  take_grad(beta_, g, "beta");
  return std::move(g.input_grad);
}

template <typename Real>
void BatchNorm<Real>::collect_parameters(std::vector<Parameter<Real>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

template <typename Real>
void BatchNorm<Real>::collect_buffers(std::vector<NamedBuffer<Real>>& out) {
  out.push_back({this->name() + ".running_mean", &stats_.running_mean});
  out.push_back({this->name() + ".running_var", &stats_.running_var});
}

// Dropout

template <typename Real>
Dropout<Real>::Dropout(std::string name, double p) : Layer<Real>(std::move(name)), p_(0) {
  set_probability(p);
}

template <typename Real>
void Dropout<Real>::set_probability(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  p_ = p;
}

template <typename Real>
Tensor<Real> Dropout<Real>::forward(const Tensor<Real>& input, const ForwardContext& ctx) {
  if (ctx.mode == Mode::Train && !ctx.rng) {
    throw std::logic_error("dropout: Train mode requires an rng in the forward context");
  }
  std::mt19937_64 unused;
  return dropout_forward(input, p_, ctx.mode, ctx.rng ? *ctx.rng : unused, &mask_);
}

template <typename Real>
Tensor<Real> Dropout<Real>::backward(const Tensor<Real>& upstream) {
  return dropout_backward(mask_, upstream);
}

// Sequential

template <typename Real>
Tensor<Real> Sequential<Real>::forward(const Tensor<Real>& input, const ForwardContext& ctx) {
  if (layers_.empty()) return input;
  Tensor<Real> x = layers_.front()->forward(input, ctx);
  for (std::size_t i = 1; i < layers_.size(); ++i) x = layers_[i]->forward(x, ctx);
  return x;
}

template <typename Real>
Tensor<Real> Sequential<Real>::backward(const Tensor<Real>& upstream) {
  if (layers_.empty()) return upstream;
  Tensor<Real> g = layers_.back()->backward(upstream);
  for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

template <typename Real>
void Sequential<Real>::collect_parameters(std::vector<Parameter<Real>*>& out) {
  for (auto& l : layers_) l->collect_parameters(out);
}

template <typename Real>
void Sequential<Real>::collect_buffers(std::vector<NamedBuffer<Real>>& out) {
  for (auto& l : layers_) l->collect_buffers(out);
}

// ResidualBlock

template <typename Real>
ResidualBlock<Real>::ResidualBlock(const std::string& name, std::size_t in_channels,
                                   std::size_t out_channels, std::size_t stride,
                                   BatchNormOptions options)
    : Layer<Real>(name), branch_(name + ".branch") {
  branch_.template emplace<Conv2D<Real>>(name + ".conv1", in_channels, out_channels, 3,
                                         ConvGeometry{stride, 1}, false);
  branch_.template emplace<BatchNorm<Real>>(name + ".bn1", out_channels, options);
  branch_.template emplace<ReLU<Real>>(name + ".relu1");
  branch_.template emplace<Conv2D<Real>>(name + ".conv2", out_channels, out_channels, 3,
                                         ConvGeometry{1, 1}, false);
  branch_.template emplace<BatchNorm<Real>>(name + ".bn2", out_channels, options);
  if (stride != 1 || in_channels != out_channels) {
    projection_ = std::make_unique<Sequential<Real>>(name + ".shortcut");
    projection_->template emplace<Conv2D<Real>>(name + ".shortcut.conv", in_channels,
                                                out_channels, 1, ConvGeometry{stride, 0}, false);
    projection_->template emplace<BatchNorm<Real>>(name + ".shortcut.bn", out_channels, options);
  }
}

template <typename Real>
Tensor<Real> ResidualBlock<Real>::forward(const Tensor<Real>& input, const ForwardContext& ctx) {
  Tensor<Real> branch = branch_.forward(input, ctx);
  sum_ = projection_ ? add(branch, projection_->forward(input, ctx)) : add(branch, input);
  return relu_forward(sum_);
}

template <typename Real>
Tensor<Real> ResidualBlock<Real>::backward(const Tensor<Real>& upstream) {
  Tensor<Real> g = relu_backward(sum_, upstream);
  Tensor<Real> through_branch = branch_.backward(g);
  if (projection_) return add(through_branch, projection_->backward(g));
  return add(through_branch, g);
}

template <typename Real>
void ResidualBlock<Real>::collect_parameters(std::vector<Parameter<Real>*>& out) {
  branch_.collect_parameters(out);
  if (projection_) projection_->collect_parameters(out);
}

template <typename Real>
void ResidualBlock<Real>::collect_buffers(std::vector<NamedBuffer<Real>>& out) {
  branch_.collect_buffers(out);
  if (projection_) projection_->collect_buffers(out);
}

#define TRAITLENS_INSTANTIATE_LAYERS(R) \
  template class Conv2D<R>;             \
  template class FullyConnected<R>;     \
  template class ReLU<R>;               \
  template class MaxPool<R>;            \
  template class GlobalAvgPool<R>;      \
  template class BatchNorm<R>;          \
  template class Dropout<R>;            \
  template class Sequential<R>;         \
  template class ResidualBlock<R>;

TRAITLENS_INSTANTIATE_LAYERS(float)
TRAITLENS_INSTANTIATE_LAYERS(double)

#undef TRAITLENS_INSTANTIATE_LAYERS

}  // namespace traitlens::nn
