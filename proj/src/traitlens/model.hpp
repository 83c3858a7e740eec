#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "traitlens/nn/layers.hpp"
#include "traitlens/nn/serialize.hpp"
#include "traitlens/ontology.hpp"

namespace traitlens {

enum class ArchitectureKind { MiniAlex, MiniResNet };
const char* arch_name(ArchitectureKind k);  // "mini-alex" / "mini-resnet"
std::optional<ArchitectureKind> parse_arch(std::string_view s);

// Layer widths of the two backbones.
//  MiniAlex: five 3x3 convs with max pooling after conv 1, 2 and 5, then two
//  fully-connected layers with dropout; the feature is the last FC output.
//  MiniResNet: 3x3 stem conv, stages of basic residual blocks (the first block
//  of every stage after the first has stride 2), batch norm after every conv,
//  global average pooling; the feature is the pooled vector.
struct ArchitectureSpec {
  ArchitectureKind kind = ArchitectureKind::MiniResNet;
  std::size_t input_size = 32;
  std::vector<std::size_t> conv_channels;   // MiniAlex, 5 entries
  std::vector<std::size_t> fc_units;        // MiniAlex, 2 entries
  std::size_t stem_channels = 0;            // MiniResNet
  std::vector<std::size_t> stage_channels;  // MiniResNet
  std::size_t blocks_per_stage = 0;         // MiniResNet

  static ArchitectureSpec mini_alex(std::size_t input_size = 32);
  static ArchitectureSpec mini_resnet(std::size_t input_size = 32);

  std::size_t feature_dim() const;
  void validate() const;
  std::string to_json() const;  // canonical key order
  static ArchitectureSpec from_json(const std::string& json);

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

enum class HeadMode { Independent, AllInOne, Auxiliary };

// Independent(trait): one two-way head. AllInOne: five two-way heads in trait
// order. Auxiliary(n): one n-way head, used for pretraining.
struct HeadConfig {
  HeadMode mode = HeadMode::AllInOne;
  Trait trait = Trait::O;       // Independent only
  std::size_t aux_classes = 10;  // Auxiliary only

  static HeadConfig all_in_one() { return {HeadMode::AllInOne, Trait::O, 10}; }
  static HeadConfig independent(Trait t) { return {HeadMode::Independent, t, 10}; }
  static HeadConfig auxiliary(std::size_t classes) { return {HeadMode::Auxiliary, Trait::O, classes}; }

  std::size_t head_count() const { return mode == HeadMode::AllInOne ? kNumTraits : 1; }
  std::size_t classes_per_head() const { return mode == HeadMode::Auxiliary ? aux_classes : 2; }
  // Head serving a trait, if any.
  std::optional<std::size_t> head_for(Trait t) const;
  std::string head_name(std::size_t head) const;  // "O".."N" or "aux"
  std::string to_json() const;
  static HeadConfig from_json(const std::string& json);

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

enum class ParamGroup { Backbone, Heads };

// Class encoding used by every two-way head.
struct Label {
  Trait trait;
  int class_index;  // 0 = High, 1 = Low
};

// Counts of backbone and head evaluations; backbone MACs come from the conv and
// FC layers inside the backbone.
struct ForwardStats {
  std::uint64_t backbone_passes = 0;
  std::uint64_t head_passes = 0;
  nn::OpCounter backbone_ops;
  nn::OpCounter head_ops;
};

template <typename Real>
struct NetworkOutput {
  nn::Tensor<Real> features;               // [N, feature_dim]
  std::vector<nn::Tensor<Real>> logits;    // one [N, classes] per head
};

// Backbone plus linear heads. Not thread-safe: forward caches
// activations for backward.
template <typename Real>
class Network {
 public:
  Network(ArchitectureSpec spec, HeadConfig heads);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const ArchitectureSpec& spec() const { return spec_; }
  const HeadConfig& head_config() const { return heads_; }
  std::size_t feature_dim() const { return spec_.feature_dim(); }

  NetworkOutput<Real> forward(const nn::Tensor<Real>& batch, const nn::ForwardContext& ctx);
  nn::Tensor<Real> features(const nn::Tensor<Real>& batch, const nn::ForwardContext& ctx);
  nn::Tensor<Real> head_logits(std::size_t head, const nn::Tensor<Real>& features);

  // Upstream gradients per head ([N, classes] each, zeros for unused heads).
  // Must follow the forward of the same batch. Parameter grads are overwritten.
  void backward(const std::vector<nn::Tensor<Real>>& logit_grads);

  // All trainable tensors: backbone in layer order, then heads.
  std::vector<nn::Parameter<Real>*> parameters();
  std::vector<nn::Parameter<Real>*> parameters(ParamGroup group);
  // Running statistics and other non-trainable state.
  std::vector<nn::NamedBuffer<Real>> buffers();
  nn::Parameter<Real>& parameter(const std::string& name);

  nn::FullyConnected<Real>& head(std::size_t i) { return *head_layers_.at(i); }
  void set_dropout(double p);
  std::size_t parameter_count();

  ForwardStats& stats() { return stats_; }

 private:
  ArchitectureSpec spec_;
  HeadConfig heads_;
  std::unique_ptr<nn::Sequential<Real>> backbone_;
  std::vector<std::unique_ptr<nn::FullyConnected<Real>>> head_layers_;
  ForwardStats stats_;
};

// He-initialized network: conv/FC weights ~ N(0, 2/fan_in), biases 0,
// batch-norm gamma 1 and beta 0. Deterministic in init_seed.
template <typename Real>
Network<Real> build_network(const ArchitectureSpec& spec, const HeadConfig& heads,
                            std::uint64_t init_seed);

// Closed-form trainable parameter count from the declared layer shapes.
std::size_t expected_parameter_count(const ArchitectureSpec& spec, const HeadConfig& heads);

// Softmax over one logit vector, shifted by the max for stability.
std::vector<double> softmax(std::span<const double> logits);
std::array<double, 2> softmax(double o0, double o1);

inline constexpr double kLossProbabilityFloor = 1e-12;

// -ln p_l with p_l floored at 1e-12.
double logistic_loss(std::span<const double> probabilities, int class_index);

struct MaskedLoss {
  double total = 0.0;
  std::array<double, kNumTraits> per_head{};
  // d total / d logits per head, [classes] each; all zeros for inactive heads.
  std::array<std::array<double, 2>, kNumTraits> logit_grads{};
};

// Masked all-in-one loss for one sample: only the head of the label's trait
// contributes -ln p_l; the others contribute 0 and receive zero gradient.
MaskedLoss masked_loss(std::span<const std::array<double, 2>> per_head_logits, Label label);

// Batch objective: mean over samples of -ln p_label on the sample's own head;
// every other head receives zero gradient for that sample. With heads = trait
// indices this is the masked all-in-one loss averaged over a batch.
template <typename Real>
struct BatchLoss {
  double mean_loss = 0.0;
  std::vector<nn::Tensor<Real>> logit_grads;  // per head, [N, classes]
  std::vector<int> predictions;               // argmax on the sample's head
};

template <typename Real>
BatchLoss<Real> batch_loss(const NetworkOutput<Real>& output, std::span<const int> heads,
                           std::span<const int> labels);

// Per-group learning-rate multipliers: heads x10 when finetuning, else x1.
struct GroupLearningRates {
  double backbone = 1.0;
  double heads = 1.0;
  double for_group(ParamGroup g) const { return g == ParamGroup::Backbone ? backbone : heads; }
};
GroupLearningRates finetune_groups(bool finetune);

// Checkpoint: magic, version, canonical JSON descriptor, then named tensors.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ArchitectureMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

template <typename Real>
void save_checkpoint(Network<Real>& network, const std::filesystem::path& path);

template <typename Real>
Network<Real> load_checkpoint(const std::filesystem::path& path);

// Finetune path: backbone tensors from the checkpoint, freshly initialized
// heads. The checkpoint's architecture must equal `expected`.
template <typename Real>
Network<Real> load_backbone(const std::filesystem::path& path, const ArchitectureSpec& expected,
                            const HeadConfig& heads, std::uint64_t head_seed);

struct CheckpointInfo {
  ArchitectureSpec spec;
  HeadConfig heads;
  nn::ScalarType scalar;
};
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace traitlens
