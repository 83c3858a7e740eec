#include "traitlens/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "traitlens/parallel.hpp"
#include "traitlens/random.hpp"

namespace traitlens {

const char* train_mode_name(TrainMode m) { return m == TrainMode::Scratch ? "scratch" : "finetune"; }

TrainConfig TrainConfig::defaults(ArchitectureKind arch, TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.base_lr = mode == TrainMode::Scratch ? 0.01 : 0.001;
  c.epochs = mode == TrainMode::Scratch ? 30 : 10;
  c.batch_size = arch == ArchitectureKind::MiniAlex ? 128 : 32;
  return c;
}

void TrainConfig::validate() const {
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight decay must be >= 0");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2 (batch norm)");
}

std::vector<std::size_t> TrainingSet::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(i);
  }
  return out;
}

TrainingSet make_trait_set(const CorpusManifest& manifest, std::vector<Image> images,
                           const HeadConfig& heads) {
  if (images.size() != manifest.samples.size()) {
    throw std::invalid_argument("make_trait_set: images must align with the manifest");
  }
  if (heads.mode == HeadMode::Auxiliary) throw std::invalid_argument("make_trait_set: trait heads required");
  TrainingSet set;
  for (Trait t : kTraits) set.group_names.emplace_back(1, trait_letter(t));
  set.mean_image = manifest.mean_image;
  set.crop_size = manifest.generator.crop_size;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const Sample& s = manifest.samples[i];
    const auto head = heads.head_for(s.trait);
    if (!head) continue;
    set.images.push_back(std::move(images[i]));
    set.ids.push_back(s.sample_id);
    set.heads.push_back(static_cast<int>(*head));
    set.labels.push_back(static_cast<int>(s.polarity));
    set.groups.push_back(static_cast<int>(s.trait));
    set.splits.push_back(s.split);
  }
  return set;
}

TrainingSet make_auxiliary_set(LabeledImages data, std::size_t crop_size) {
  TrainingSet set;
  set.group_names = {"aux"};
  set.mean_image = std::move(data.mean_image);
  set.crop_size = crop_size;
  set.images = std::move(data.images);
  set.labels = std::move(data.labels);
  set.splits = std::move(data.splits);
  set.ids.resize(set.images.size());
  std::iota(set.ids.begin(), set.ids.end(), std::uint64_t{0});
  set.heads.assign(set.images.size(), 0);
  set.groups.assign(set.images.size(), 0);
  return set;
}

template <typename Real>
void sgd_momentum_step(std::span<Real> theta, std::span<const Real> grad, std::span<Real> velocity,
                       double lr, double momentum, double weight_decay) {
  if (grad.size() != theta.size() || velocity.size() != theta.size()) {
    throw nn::ShapeError("sgd_momentum_step: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = static_cast<double>(grad[i]) + weight_decay * static_cast<double>(theta[i]);
    const double v = momentum * static_cast<double>(velocity[i]) - lr * g;
    velocity[i] = static_cast<Real>(v);
    theta[i] = static_cast<Real>(static_cast<double>(theta[i]) + v);
  }
}

template <typename Real>
SgdMomentum<Real>::SgdMomentum(Network<Real>& network, double base_lr, GroupLearningRates groups,
                               double momentum, double weight_decay)
    : base_lr_(base_lr), groups_(groups), momentum_(momentum), weight_decay_(weight_decay) {
  for (ParamGroup g : {ParamGroup::Backbone, ParamGroup::Heads}) {
    for (auto* p : network.parameters(g)) slots_.push_back({p, g, nn::Tensor<Real>(p->value.shape())});
  }
}

template <typename Real>
void SgdMomentum<Real>::step() {
  for (auto& s : slots_) {
    sgd_momentum_step<Real>(s.param->value.data(), s.param->grad.data(), s.velocity.data(),
                            lr_for(s.group), momentum_, weight_decay_);
  }
}

template <typename Real>
void SgdMomentum<Real>::reset_velocity() {
  for (auto& s : slots_) s.velocity.fill(Real{0});
}

template <typename Real>
std::pair<double, double> SgdMomentum<Real>::gradient_norms() const {
  double sq[2] = {0, 0};
  for (const auto& s : slots_) {
    double& acc = sq[s.group == ParamGroup::Backbone ? 0 : 1];
    for (Real g : s.param->grad.data()) acc += static_cast<double>(g) * g;
  }
  return {std::sqrt(sq[0]), std::sqrt(sq[1])};
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> ratios(const std::vector<std::size_t>& correct, const std::vector<std::size_t>& total) {
  std::vector<double> out(total.size(), kNaN);
  for (std::size_t g = 0; g < total.size(); ++g) {
    if (total[g] > 0) out[g] = static_cast<double>(correct[g]) / static_cast<double>(total[g]);
  }
  return out;
}

// Batches of ceil(N / B); a trailing batch of one sample is merged into the
// previous one because batch norm needs at least two.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t b) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t start = 0; start < n; start += b) out.emplace_back(start, std::min(n, start + b));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = n;
    out.pop_back();
  }
  return out;
}

}  // namespace

template <typename Real>
std::vector<nn::Tensor<Real>> center_view_logits(Network<Real>& network,
                                                 std::span<const Image* const> images,
                                                 const MeanImage& mean, std::size_t crop_size,
                                                 std::size_t batch_size) {
  const HeadConfig& hc = network.head_config();
  const std::size_t classes = hc.classes_per_head();
  std::vector<nn::Tensor<Real>> out;
  for (std::size_t h = 0; h < hc.head_count(); ++h) out.emplace_back(nn::Shape{images.size(), classes});
  if (crop_size != network.spec().input_size) {
    throw nn::ShapeError("crop size " + std::to_string(crop_size) + " does not match network input " +
                         std::to_string(network.spec().input_size));
  }
  const std::size_t view = Image::kChannels * crop_size * crop_size;
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t m = std::min(batch_size, images.size() - start);
    nn::Tensor<Real> batch({m, Image::kChannels, crop_size, crop_size});
    parallel_for(m, [&](std::size_t i) {
      const Image& img = *images[start + i];
      render_view(img, mean, crop_size, center_view(img.width, crop_size), batch.ptr() + i * view);
    });
    nn::ForwardContext ctx;
    ctx.mode = nn::Mode::Infer;
    auto res = network.forward(batch, ctx);
    for (std::size_t h = 0; h < res.logits.size(); ++h) {
      std::copy_n(res.logits[h].ptr(), m * classes, out[h].ptr() + start * classes);
    }
  }
  return out;
}

template <typename Real>
std::vector<double> split_accuracy(Network<Real>& network, const TrainingSet& data, Split split) {
  const auto idx = data.indices(split);
  std::vector<const Image*> ptrs;
  for (auto i : idx) ptrs.push_back(&data.images[i]);
  auto logits = center_view_logits(network, std::span<const Image* const>(ptrs), data.mean_image, data.crop_size);
  std::vector<std::size_t> correct(data.group_names.size(), 0), total(data.group_names.size(), 0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const std::size_t i = idx[r];
    const auto& lg = logits[static_cast<std::size_t>(data.heads[i])];
    const std::size_t c = lg.dim(1);
    const Real* row = lg.ptr() + r * c;
    // First maximum wins, so exact ties go to class 0.
    const auto pred = static_cast<int>(std::max_element(row, row + c) - row);
    const auto g = static_cast<std::size_t>(data.groups[i]);
    ++total[g];
    if (pred == data.labels[i]) ++correct[g];
  }
  return ratios(correct, total);
}

template <typename Real>
TrainHistory train(Network<Real>& network, const TrainingSet& data, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
  config.validate();
  if (data.crop_size != network.spec().input_size) {
    throw ConfigError("crop size " + std::to_string(data.crop_size) + " does not match network input " +
                      std::to_string(network.spec().input_size));
  }
  const auto train_idx = data.indices(Split::Train);
  if (train_idx.size() < 2) throw ConfigError("training split needs at least two samples");
  for (auto i : train_idx) {
    if (static_cast<std::size_t>(data.heads[i]) >= network.head_config().head_count()) {
      throw ConfigError("training set routes a sample to a head the network does not have");
    }
  }

  network.set_dropout(config.dropout_p);
  SgdMomentum<Real> optimizer(network, config.base_lr, finetune_groups(config.mode == TrainMode::Finetune),
                              config.momentum, config.weight_decay);
  const auto ranges = batch_ranges(train_idx.size(), config.batch_size);
  const std::size_t crop = data.crop_size;
  const std::size_t view = Image::kChannels * crop * crop;
  const std::size_t groups = data.group_names.size();

  TrainHistory history;
  history.group_names = data.group_names;
  history.iterations_per_epoch = ranges.size();

  std::vector<std::size_t> order(train_idx);
  std::size_t iteration = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    order = train_idx;
    auto shuffle_rng = derive_rng({config.seed, epoch}, "shuffle");
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<std::size_t> correct(groups, 0), total(groups, 0);
    double loss_sum = 0.0;
    for (std::size_t it = 0; it < ranges.size(); ++it, ++iteration) {
      const auto [begin, end] = ranges[it];
      const std::size_t m = end - begin;
      nn::Tensor<Real> batch({m, Image::kChannels, crop, crop});
      std::vector<int> heads(m), labels(m);
      parallel_for(m, [&](std::size_t slot) {
        const std::size_t i = order[begin + slot];
        auto rng = derive_rng({config.seed, epoch, it, slot}, "augment");
        const Image& img = data.images[i];
        render_view(img, data.mean_image, crop, random_view(img.width, crop, rng), batch.ptr() + slot * view);
        heads[slot] = data.heads[i];
        labels[slot] = data.labels[i];
      });

      auto dropout_rng = derive_rng({config.seed, epoch, it}, "dropout");
      nn::ForwardContext ctx;
      ctx.mode = nn::Mode::Train;
      ctx.rng = &dropout_rng;
      auto output = network.forward(batch, ctx);
      auto loss = batch_loss(output, std::span<const int>(heads), std::span<const int>(labels));
      network.backward(loss.logit_grads);
      const auto [gb, gh] = optimizer.gradient_norms();
      if (!std::isfinite(loss.mean_loss) || !std::isfinite(gb) || !std::isfinite(gh)) {
        std::ostringstream msg;
        msg << "non-finite training state at iteration " << iteration << " (epoch " << epoch << "): loss "
            << loss.mean_loss << ", lr backbone " << optimizer.lr_for(ParamGroup::Backbone) << " heads "
            << optimizer.lr_for(ParamGroup::Heads) << ", gradient norm backbone " << gb << " heads " << gh;
        throw NumericalError(msg.str());
      }
      optimizer.step();

      history.iteration_loss.push_back(loss.mean_loss);
      loss_sum += loss.mean_loss;
      for (std::size_t slot = 0; slot < m; ++slot) {
        const auto g = static_cast<std::size_t>(data.groups[order[begin + slot]]);
        ++total[g];
        if (loss.predictions[slot] == labels[slot]) ++correct[g];
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(ranges.size());
    rec.train_accuracy = ratios(correct, total);
    if (config.evaluate_test && !data.indices(Split::Test).empty()) {
      rec.test_accuracy = split_accuracy(network, data, Split::Test);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);
    if (on_epoch && !on_epoch(rec)) break;
  }
  return history;
}

void write_history(const TrainHistory& history, const std::filesystem::path& dir) {
  auto open = [&](const char* name) {
    std::ofstream os(dir / name, std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / name).string());
    return os;
  };
  char buf[64];
  {
    auto os = open("history.csv");
    os << "iter,loss\n";
    for (std::size_t i = 0; i < history.iteration_loss.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.10g", history.iteration_loss[i]);
      os << i << ',' << buf << '\n';
    }
  }
  auto os = open("accuracy.csv");
  os << "epoch,trait,split,accuracy\n";
  for (const auto& rec : history.epochs) {
    auto emit = [&](const std::vector<double>& acc, const char* split) {
      for (std::size_t g = 0; g < acc.size(); ++g) {
        if (std::isnan(acc[g])) continue;
        std::snprintf(buf, sizeof buf, "%.10g", acc[g]);
        os << rec.epoch << ',' << history.group_names.at(g) << ',' << split << ',' << buf << '\n';
      }
    };
    emit(rec.train_accuracy, "train");
    emit(rec.test_accuracy, "test");
  }
  if (!os) throw IoError("failed writing accuracy.csv");
}

PretrainResult pretrain_auxiliary(const ArchitectureSpec& spec, const AuxiliaryConfig& aux,
                                  const TrainConfig& config, const std::filesystem::path& checkpoint) {
  aux.validate();
  config.validate();
  auto data = make_auxiliary_set(generate_auxiliary_corpus(aux), aux.crop_size);
  auto net = build_network<float>(spec, HeadConfig::auxiliary(kNumTextures), config.seed);
  PretrainResult result;
  result.history = train(net, data, config);
  result.test_accuracy = split_accuracy(net, data, Split::Test).at(0);
  save_checkpoint(net, checkpoint);
  return result;
}

#define TRAITLENS_INSTANTIATE(Real)                                                                  \
  template void sgd_momentum_step(std::span<Real>, std::span<const Real>, std::span<Real>, double,  \
                                  double, double);                                                   \
  template class SgdMomentum<Real>;                                                                  \
  template TrainHistory train(Network<Real>&, const TrainingSet&, const TrainConfig&,               \
                              const EpochCallback&);                                                 \
  template std::vector<nn::Tensor<Real>> center_view_logits(Network<Real>&,                         \
                                                            std::span<const Image* const>,          \
                                                            const MeanImage&, std::size_t,          \
                                                            std::size_t);                            \
  template std::vector<double> split_accuracy(Network<Real>&, const TrainingSet&, Split);

TRAITLENS_INSTANTIATE(float)
TRAITLENS_INSTANTIATE(double)

}  // namespace traitlens
