#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "traitlens/nn/kernels.hpp"

namespace traitlens::nn {

enum class LayerKind {
  Conv2D,
  FullyConnected,
  ReLU,
  MaxPool,
  GlobalAvgPool,
  BatchNorm,
  Dropout,
  ResidualAdd,
  Sequential,
};

const char* to_string(LayerKind kind);

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;

  Parameter(std::string n, Shape shape, Real fill = Real{0})
      : name(std::move(n)), value(shape, fill), grad(std::move(shape)) {}
};

template <typename Real>
struct NamedBuffer {
  std::string name;
  Tensor<Real>* tensor;
};

// Instrumentation for compute accounting; multiply_adds counts conv and FC MACs.
struct OpCounter {
  std::uint64_t multiply_adds = 0;
  std::uint64_t conv_calls = 0;
};

struct ForwardContext {
  Mode mode = Mode::Infer;
  std::mt19937_64* rng = nullptr;  // required by Dropout in Train mode
  OpCounter* ops = nullptr;
};

// One computation stage with its own parameters. forward caches what
// backward needs; backward overwrites (not accumulates) parameter grads.
template <typename Real>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }
  virtual LayerKind kind() const = 0;
  virtual Tensor<Real> forward(const Tensor<Real>& input, const ForwardContext& ctx) = 0;
  virtual Tensor<Real> backward(const Tensor<Real>& upstream) = 0;
  virtual void collect_parameters(std::vector<Parameter<Real>*>&) {}
  virtual void collect_buffers(std::vector<NamedBuffer<Real>>&) {}

  std::vector<Parameter<Real>*> parameters() {
    std::vector<Parameter<Real>*> out;
    collect_parameters(out);
    return out;
  }

 private:
  std::string name_;
};

template <typename Real>
class Conv2D final : public Layer<Real> {
 public:
  Conv2D(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         ConvGeometry geometry, bool with_bias);
  LayerKind kind() const override { return LayerKind::Conv2D; }
  Tensor<Real> forward(const Tensor<Real>& input, const ForwardContext& ctx) override;
  Tensor<Real> backward(const Tensor<Real>& upstream) override;
  void collect_parameters(std::vector<Parameter<Real>*>& out) override;

  Parameter<Real>& weight() { return weight_; }
  Parameter<Real>* bias() { return bias_ ? &*bias_ : nullptr; }
  ConvGeometry geometry() const { return geometry_; }

 private:
  Parameter<Real> weight_;
  std::optional<Parameter<Real>> bias_;
  ConvGeometry geometry_;
  Tensor<Real> input_;
};

template <typename Real>
class FullyConnected final : public Layer<Real> {
 public:
  FullyConnected(std::string name, std::size_t in_features, std::size_t out_features);
  LayerKind kind() const override { return LayerKind::FullyConnected; }
  Tensor<Real> forward(const Tensor<Real>& input, const ForwardContext& ctx) override;
  Tensor<Real> backward(const Tensor<Real>& upstream) override;
  void collect_parameters(std::vector<Parameter<Real>*>& out) override;

  Parameter<Real>& weight() { return weight_; }
  Parameter<Real>& bias() { return bias_; }
  std::size_t in_features() const { return weight_.value.dim(1); }
  std::size_t out_features() const { return weight_.value.dim(0); }

 private:
  Parameter<Real> weight_;
  Parameter<Real> bias_;
  Tensor<Real> input_;
};

template <typename Real>
class ReLU final : public Layer<Real> {
 public:
  using Layer<Real>::Layer;
  LayerKind kind() const override { return LayerKind::ReLU; }
  Tensor<Real> forward(const Tensor<Real>& input, const ForwardContext& ctx) override;
  Tensor<Real> backward(const Tensor<Real>& upstream) override;

 private:
  Tensor<Real> input_;
};

template <typename Real>
class MaxPool final : public Layer<Real> {
 public:
  MaxPool(std::string name, PoolGeometry geometry) : Layer<Real>(std::move(name)), geometry_(geometry) {}
  LayerKind kind() const override { return LayerKind::MaxPool; }
  Tensor<Real> forward(const Tensor<Real>& input, const ForwardContext& ctx) override;
  Tensor<Real> backward(const Tensor<Real>& upstream) override;

 private:
  PoolGeometry geometry_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename Real>
class GlobalAvgPool final : public Layer<Real> {
 public:
  using Layer<Real>::Layer;
  LayerKind kind() const override { return LayerKind::GlobalAvgPool; }
  Tensor<Real> forward(const Tensor<Real>& input, const ForwardContext& ctx) override;
  Tensor<Real> backward(const Tensor<Real>& upstream) override;

 private:
  Shape input_shape_;
};

template <typename Real>
class BatchNorm final : public Layer<Real> {
 public:
  BatchNorm(std::string name, std::size_t channels, BatchNormOptions options = {});
  LayerKind kind() const override { return LayerKind::BatchNorm; }
  Tensor<Real> forward(const Tensor<Real>& input, const ForwardContext& ctx) override;
  Tensor<Real> backward(const Tensor<Real>& upstream) override;
  void collect_parameters(std::vector<Parameter<Real>*>& out) override;
  void collect_buffers(std::vector<NamedBuffer<Real>>& out) override;

  BatchNormStats<Real>& stats() { return stats_; }

 private:
  Parameter<Real> gamma_;
  Parameter<Real> beta_;
  BatchNormStats<Real> stats_;
  BatchNormOptions options_;
  BatchNormCache<Real> cache_;
};

template <typename Real>
class Dropout final : public Layer<Real> {
 public:
  Dropout(std::string name, double p);
  LayerKind kind() const override { return LayerKind::Dropout; }
  Tensor<Real> forward(const Tensor<Real>& input, const ForwardContext& ctx) override;
  Tensor<Real> backward(const Tensor<Real>& upstream) override;

  double probability() const { return p_; }
  void set_probability(double p);

 private:
  double p_;
  Tensor<Real> mask_;
};

// Runs children in order.
template <typename Real>
class Sequential final : public Layer<Real> {
 public:
  using Layer<Real>::Layer;
  LayerKind kind() const override { return LayerKind::Sequential; }

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<Real> forward(const Tensor<Real>& input, const ForwardContext& ctx) override;
  Tensor<Real> backward(const Tensor<Real>& upstream) override;
  void collect_parameters(std::vector<Parameter<Real>*>& out) override;
  void collect_buffers(std::vector<NamedBuffer<Real>>& out) override;

  const std::vector<std::unique_ptr<Layer<Real>>>& layers() const { return layers_; }

 private:
  std::vector<std::unique_ptr<Layer<Real>>> layers_;
};

// Basic residual block: relu(bn(conv(relu(bn(conv(x))))) + shortcut(x)).
// The shortcut is the identity, or a strided 1x1 conv + batch norm when the
// shape changes.
template <typename Real>
class ResidualBlock final : public Layer<Real> {
 public:
  ResidualBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                std::size_t stride, BatchNormOptions options = {});
  LayerKind kind() const override { return LayerKind::ResidualAdd; }
  Tensor<Real> forward(const Tensor<Real>& input, const ForwardContext& ctx) override;
  Tensor<Real> backward(const Tensor<Real>& upstream) override;
  void collect_parameters(std::vector<Parameter<Real>*>& out) override;
  void collect_buffers(std::vector<NamedBuffer<Real>>& out) override;

  bool has_projection() const { return static_cast<bool>(projection_); }

 private:
  Sequential<Real> branch_;
  std::unique_ptr<Sequential<Real>> projection_;
  Tensor<Real> sum_;
};

}  // namespace traitlens::nn
