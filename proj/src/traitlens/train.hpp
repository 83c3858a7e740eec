#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "traitlens/corpus.hpp"
#include "traitlens/errors.hpp"
#include "traitlens/model.hpp"

namespace traitlens {

enum class TrainMode { Scratch, Finetune };
const char* train_mode_name(TrainMode m);

struct TrainConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double dropout_p = 0.5;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  TrainMode mode = TrainMode::Scratch;
  std::uint64_t seed = 1;
  bool evaluate_test = true;  // center-view test accuracy after every epoch

  // lr 0.01 scratch / 0.001 finetune, batch 128 MiniAlex / 32 MiniResNet,
  // 30 scratch / 10 finetune epochs.
  static TrainConfig defaults(ArchitectureKind arch, TrainMode mode);
  void validate() const;  // throws ConfigError
};

// In-memory task: images plus, per sample, the head it trains and its class.
// `group` selects the accuracy bucket (trait index, or 0 for the auxiliary task).
struct TrainingSet {
  std::vector<Image> images;
  std::vector<std::uint64_t> ids;
  std::vector<int> heads;
  std::vector<int> labels;
  std::vector<int> groups;
  std::vector<Split> splits;
  std::vector<std::string> group_names;
  MeanImage mean_image;
  std::size_t crop_size = 32;

  std::size_t size() const { return images.size(); }
  std::vector<std::size_t> indices(Split s) const;
};

// Trait task for a head configuration. Independent(t) keeps only trait-t
// samples (both poles); AllInOne routes each sample to its trait's head.
TrainingSet make_trait_set(const CorpusManifest& manifest, std::vector<Image> images,
                           const HeadConfig& heads);
TrainingSet make_auxiliary_set(LabeledImages data, std::size_t crop_size);

// Classical momentum with L2 folded into the gradient:
//   g' = g + wd*theta;  v = momentum*v - lr*g';  theta = theta + v.
template <typename Real>
void sgd_momentum_step(std::span<Real> theta, std::span<const Real> grad, std::span<Real> velocity,
                       double lr, double momentum, double weight_decay);

template <typename Real>
class SgdMomentum {
 public:
  SgdMomentum(Network<Real>& network, double base_lr, GroupLearningRates groups, double momentum,
              double weight_decay);
  void step();
  void reset_velocity();
  double lr_for(ParamGroup g) const { return base_lr_ * groups_.for_group(g); }
  // L2 norms of the current gradients, per group.
  std::pair<double, double> gradient_norms() const;

 private:
  struct Slot {
    nn::Parameter<Real>* param;
    ParamGroup group;
    nn::Tensor<Real> velocity;
  };
  std::vector<Slot> slots_;
  double base_lr_;
  GroupLearningRates groups_;
  double momentum_;
  double weight_decay_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::vector<double> train_accuracy;  // per group, NaN when the group has no samples
  std::vector<double> test_accuracy;   // empty when test evaluation is off
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<std::string> group_names;
  std::size_t iterations_per_epoch = 0;
  std::vector<double> iteration_loss;
  std::vector<EpochRecord> epochs;
};

// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

template <typename Real>
TrainHistory train(Network<Real>& network, const TrainingSet& data, const TrainConfig& config,
                   const EpochCallback& on_epoch = {});

// Logits of the center view for the listed samples, Infer mode, one
// [count, classes] tensor per head.
template <typename Real>
std::vector<nn::Tensor<Real>> center_view_logits(Network<Real>& network,
                                                 std::span<const Image* const> images,
                                                 const MeanImage& mean, std::size_t crop_size,
                                                 std::size_t batch_size = 64);

// Per-group accuracy of the center-view argmax over one split.
template <typename Real>
std::vector<double> split_accuracy(Network<Real>& network, const TrainingSet& data, Split split);

// history.csv (iter,loss) and accuracy.csv (epoch,trait,split,accuracy).
void write_history(const TrainHistory& history, const std::filesystem::path& dir);

// Trains an auxiliary-head network on the texture task and saves it.
struct PretrainResult {
  TrainHistory history;
  double test_accuracy = 0.0;
};
PretrainResult pretrain_auxiliary(const ArchitectureSpec& spec, const AuxiliaryConfig& aux,
                                  const TrainConfig& config, const std::filesystem::path& checkpoint);

}  // namespace traitlens
