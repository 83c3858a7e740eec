#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "traitlens/train.hpp"

using namespace traitlens;
using nn::Tensor;

namespace {

ArchitectureSpec small_resnet() {
  ArchitectureSpec s;
  s.kind = ArchitectureKind::MiniResNet;
  s.input_size = 16;
  s.stem_channels = 4;
  s.stage_channels = {4, 8};
  s.blocks_per_stage = 1;
  return s;
}

GeneratorConfig small_corpus_config() {
  GeneratorConfig g;
  g.images_per_word = 3;
  g.image_size = 20;
  g.crop_size = 16;
  g.noise_std = 4;
  return g;
}

// One small corpus shared by the cases below.
const CorpusManifest& small_corpus() {
  static const CorpusManifest m = generate_corpus(builtin_ontology(), small_corpus_config(),
                                                  testutil::scratch_dir("train-corpus"));
  return m;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.evaluate_test = false;
  return c;
}

std::vector<Tensor<double>> snapshot(Network<double>& net) {
  std::vector<Tensor<double>> out;
  for (auto* p : net.parameters()) out.push_back(p->value);
  return out;
}

struct ThreadEnv {
  explicit ThreadEnv(const char* n) { setenv("TRAITLENS_THREADS", n, 1); }
  ~ThreadEnv() { unsetenv("TRAITLENS_THREADS"); }
};

}  // namespace

TEST_CASE("momentum recurrence reference values") {
  std::vector<double> theta{0.0}, grad{1.0}, velocity{0.0};
  sgd_momentum_step<double>(theta, grad, velocity, 0.01, 0.9, 0.0);
  CHECK(velocity[0] == doctest::Approx(-0.01).epsilon(1e-15));
  CHECK(theta[0] == doctest::Approx(-0.01).epsilon(1e-15));
  sgd_momentum_step<double>(theta, grad, velocity, 0.01, 0.9, 0.0);
  CHECK(velocity[0] == doctest::Approx(-0.019).epsilon(1e-15));
  CHECK(theta[0] == doctest::Approx(-0.029).epsilon(1e-15));

  std::vector<double> w{2.0}, zero{0.0}, v{0.0};
  sgd_momentum_step<double>(w, zero, v, 1.0, 0.0, 0.0005);
  CHECK(w[0] == doctest::Approx(2.0 - 0.001).epsilon(1e-15));

  std::vector<double> bad{1.0, 2.0};
  CHECK_THROWS_AS(sgd_momentum_step<double>(bad, grad, velocity, 0.1, 0.9, 0.0), nn::ShapeError);
}

TEST_CASE("momentum recurrence matches an independent unrolled oracle") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> d(0, 1);
  const double lr = 0.03, mu = 0.7, wd = 0.01;
  std::vector<double> theta(20), velocity(20, 0.0), oracle_theta, oracle_v(20, 0.0);
  for (auto& t : theta) t = d(rng);
  oracle_theta = theta;
  for (int step = 0; step < 15; ++step) {
    std::vector<double> g(20);
    for (auto& x : g) x = d(rng);
    sgd_momentum_step<double>(theta, g, velocity, lr, mu, wd);
    for (std::size_t i = 0; i < 20; ++i) {
      oracle_v[i] = mu * oracle_v[i] - lr * (g[i] + wd * oracle_theta[i]);
      oracle_theta[i] += oracle_v[i];
    }
  }
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(theta[i] == doctest::Approx(oracle_theta[i]).epsilon(1e-13));
    CHECK(velocity[i] == doctest::Approx(oracle_v[i]).epsilon(1e-13));
  }
}

TEST_CASE("zero momentum and decay is plain gradient descent") {
  std::vector<double> theta{0.3, -1.7, 4.0}, grad{0.5, 2.0, -0.25}, velocity(3, 0.0);
  const auto before = theta;
  sgd_momentum_step<double>(theta, grad, velocity, 0.1, 0.0, 0.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(theta[i] == before[i] - 0.1 * grad[i]);
}

TEST_CASE("optimizer applies group learning rates and keeps per-parameter velocity") {
  auto net = build_network<double>(small_resnet(), HeadConfig::all_in_one(), 1);
  for (auto* p : net.parameters()) p->grad.fill(1.0);
  const auto before = snapshot(net);
  SgdMomentum<double> opt(net, 0.001, finetune_groups(true), 0.9, 0.0);
  CHECK(opt.lr_for(ParamGroup::Heads) == doctest::Approx(0.01));
  opt.step();
  auto params = net.parameters();
  const std::size_t backbone = net.parameters(ParamGroup::Backbone).size();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double expected = i < backbone ? -0.001 : -0.01;
    for (std::size_t k = 0; k < params[i]->value.size(); ++k) {
      CHECK(params[i]->value[k] - before[i][k] == doctest::Approx(expected).epsilon(1e-9));
    }
  }
  // second step carries momentum: the step grows to 1.9x
  const auto mid = snapshot(net);
  opt.step();
  CHECK(params[0]->value[0] - mid[0][0] == doctest::Approx(-0.0019).epsilon(1e-9));
  // after a reset the step is back to a single lr
  const auto late = snapshot(net);
  opt.reset_velocity();
  opt.step();
  CHECK(params[0]->value[0] - late[0][0] == doctest::Approx(-0.001).epsilon(1e-9));
  std::size_t backbone_count = 0, head_count = 0;
  for (auto* p : net.parameters(ParamGroup::Backbone)) backbone_count += p->value.size();
  for (auto* p : net.parameters(ParamGroup::Heads)) head_count += p->value.size();
  const auto [gb, gh] = opt.gradient_norms();
  CHECK(gb * gb == doctest::Approx(static_cast<double>(backbone_count)));
  CHECK(gh * gh == doctest::Approx(static_cast<double>(head_count)));
}

TEST_CASE("task construction") {
  const auto& m = small_corpus();
  const auto images = load_images(m);
  const auto all = make_trait_set(m, images, HeadConfig::all_in_one());
  CHECK(all.size() == m.samples.size());
  CHECK(all.group_names == std::vector<std::string>{"O", "C", "E", "A", "N"});
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(all.heads[i] == static_cast<int>(m.samples[i].trait));
    CHECK(all.groups[i] == all.heads[i]);
    CHECK(all.labels[i] == (m.samples[i].polarity == Polarity::High ? 0 : 1));
    CHECK(all.splits[i] == m.samples[i].split);
    CHECK(all.ids[i] == m.samples[i].sample_id);
  }
  const auto only_a = make_trait_set(m, images, HeadConfig::independent(Trait::A));
  CHECK(only_a.size() == m.samples.size() / 5);
  for (std::size_t i = 0; i < only_a.size(); ++i) CHECK(only_a.heads[i] == 0);
  for (std::size_t i = 0; i < only_a.size(); ++i) CHECK(only_a.groups[i] == static_cast<int>(Trait::A));
  CHECK(only_a.group_names == all.group_names);
  CHECK(only_a.mean_image == m.mean_image);
}

TEST_CASE("training is deterministic across runs and thread counts") {
  const auto& m = small_corpus();
  const auto data = make_trait_set(m, load_images(m), HeadConfig::all_in_one());
  auto run = [&](const char* threads, std::uint64_t seed) {
    ThreadEnv env(threads);
    auto net = build_network<double>(small_resnet(), HeadConfig::all_in_one(), 3);
    auto cfg = quick_config();
    cfg.seed = seed;
    const auto h = train(net, data, cfg);
    return std::pair{snapshot(net), h.iteration_loss};
  };
  const auto a = run("1", 1);
  const auto b = run("1", 1);
  const auto c = run("3", 1);
  const auto d = run("1", 2);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first == c.first);
  CHECK_FALSE(a.first == d.first);
}

TEST_CASE("history lengths follow epochs and batches") {
  const auto& m = small_corpus();
  const auto data = make_trait_set(m, load_images(m), HeadConfig::all_in_one());
  const std::size_t n_train = data.indices(Split::Train).size();
  REQUIRE(n_train == 220);
  auto net = build_network<float>(small_resnet(), HeadConfig::all_in_one(), 1);
  auto cfg = quick_config();
  cfg.batch_size = 32;
  cfg.evaluate_test = true;
  std::vector<std::size_t> seen;
  const auto h = train(net, data, cfg, [&](const EpochRecord& r) {
    seen.push_back(r.epoch);
    return true;
  });
  CHECK(h.iterations_per_epoch == (n_train + 31) / 32);
  CHECK(h.iteration_loss.size() == cfg.epochs * h.iterations_per_epoch);
  CHECK(seen == std::vector<std::size_t>{1, 2});
  for (const auto& e : h.epochs) {
    CHECK(e.train_accuracy.size() == 5);
    CHECK(e.test_accuracy.size() == 5);
    CHECK(e.seconds >= 0.0);
  }

  SUBCASE("the callback can stop training early") {
    auto net2 = build_network<float>(small_resnet(), HeadConfig::all_in_one(), 1);
    cfg.epochs = 5;
    const auto h2 = train(net2, data, cfg, [](const EpochRecord& r) { return r.epoch < 2; });
    CHECK(h2.epochs.size() == 2);
  }

  SUBCASE("history files") {
    const auto dir = testutil::scratch_dir("train-history");
    write_history(h, dir);
    std::ifstream is(dir / "history.csv");
    std::string line;
    std::getline(is, line);
    CHECK(line == "iter,loss");
    std::size_t rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == h.iteration_loss.size());
    std::ifstream acc(dir / "accuracy.csv");
    std::getline(acc, line);
    CHECK(line == "epoch,trait,split,accuracy");
    rows = 0;
    while (std::getline(acc, line)) ++rows;
    CHECK(rows == 2 * 5 * 2);
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto& m = small_corpus();
  const auto data = make_trait_set(m, load_images(m), HeadConfig::all_in_one());
  auto net = build_network<double>(small_resnet(), HeadConfig::all_in_one(), 5);
  const auto before = snapshot(net);
  auto cfg = quick_config();
  cfg.base_lr = 0.0;
  train(net, data, cfg);
  CHECK(snapshot(net) == before);
}

TEST_CASE("an epoch of E samples leaves the other heads bitwise constant") {
  const auto& m = small_corpus();
  auto data = make_trait_set(m, load_images(m), HeadConfig::all_in_one());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.heads[i] != static_cast<int>(Trait::E)) data.splits[i] = Split::Test;
  }
  auto net = build_network<double>(small_resnet(), HeadConfig::all_in_one(), 6);
  std::vector<Tensor<double>> heads_before;
  for (std::size_t h = 0; h < kNumTraits; ++h) heads_before.push_back(net.head(h).weight().value);
  const auto backbone_before = net.parameters(ParamGroup::Backbone)[0]->value;
  auto cfg = quick_config();
  cfg.epochs = 1;
  // Decay would shrink every head regardless of the data, so it is off here.
  cfg.weight_decay = 0.0;
  train(net, data, cfg);
  for (std::size_t h = 0; h < kNumTraits; ++h) {
    CAPTURE(h);
    if (kTraits[h] == Trait::E) {
      CHECK_FALSE(net.head(h).weight().value == heads_before[h]);
    } else {
      CHECK(net.head(h).weight().value == heads_before[h]);
      CHECK(net.head(h).bias().value == Tensor<double>(net.head(h).bias().value.shape()));
    }
  }
  CHECK_FALSE(net.parameters(ParamGroup::Backbone)[0]->value == backbone_before);
}

TEST_CASE("loss falls on a strongly planted corpus") {
  const auto& m = small_corpus();
  const auto data = make_trait_set(m, load_images(m), HeadConfig::all_in_one());
  for (std::uint64_t seed : {1, 2}) {
    auto net = build_network<float>(small_resnet(), HeadConfig::all_in_one(), seed);
    auto cfg = quick_config();
    cfg.epochs = 4;
    cfg.seed = seed;
    const auto h = train(net, data, cfg);
    CHECK(h.epochs.back().mean_loss < h.epochs.front().mean_loss);
  }
}

TEST_CASE("divergence is reported with a diagnostic") {
  const auto& m = small_corpus();
  const auto data = make_trait_set(m, load_images(m), HeadConfig::all_in_one());
  auto net = build_network<float>(small_resnet(), HeadConfig::all_in_one(), 1);
  auto cfg = quick_config();
  cfg.base_lr = 1e30;
  try {
    train(net, data, cfg);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    const std::string what = e.what();
    CHECK(what.find("iteration") != std::string::npos);
    CHECK(what.find("lr") != std::string::npos);
    CHECK(what.find("gradient norm") != std::string::npos);
  }
}

TEST_CASE("configuration checks") {
  CHECK(TrainConfig::defaults(ArchitectureKind::MiniAlex, TrainMode::Scratch).batch_size == 128);
  CHECK(TrainConfig::defaults(ArchitectureKind::MiniResNet, TrainMode::Scratch).batch_size == 32);
  const auto ft = TrainConfig::defaults(ArchitectureKind::MiniResNet, TrainMode::Finetune);
  CHECK(ft.base_lr == 0.001);
  CHECK(ft.epochs == 10);
  CHECK(ft.momentum == 0.9);
  CHECK(ft.weight_decay == 0.0005);
  CHECK(ft.dropout_p == 0.5);
  CHECK(TrainConfig::defaults(ArchitectureKind::MiniAlex, TrainMode::Scratch).epochs == 30);

  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](TrainConfig& c) { c.batch_size = 1; });
  bad([](TrainConfig& c) { c.momentum = 1.0; });
  bad([](TrainConfig& c) { c.weight_decay = -1; });
  bad([](TrainConfig& c) { c.base_lr = -0.1; });
  bad([](TrainConfig& c) { c.dropout_p = 1.0; });

  const auto& m = small_corpus();
  const auto data = make_trait_set(m, load_images(m), HeadConfig::all_in_one());
  auto wrong = build_network<float>(ArchitectureSpec::mini_resnet(), HeadConfig::all_in_one(), 1);
  CHECK_THROWS_AS(train(wrong, data, quick_config()), ConfigError);
  auto single = build_network<float>(small_resnet(), HeadConfig::independent(Trait::O), 1);
  CHECK_THROWS_AS(train(single, data, quick_config()), ConfigError);
}

TEST_CASE("center-view logits match a direct forward pass") {
  const auto& m = small_corpus();
  const auto images = load_images(m);
  auto net = build_network<double>(small_resnet(), HeadConfig::all_in_one(), 2);
  std::vector<const Image*> ptrs;
  for (std::size_t i = 0; i < 70; ++i) ptrs.push_back(&images[i]);
  const auto logits = center_view_logits(net, std::span<const Image* const>(ptrs), m.mean_image, 16, 32);
  Tensor<double> batch({70, 3, 16, 16});
  for (std::size_t i = 0; i < 70; ++i) {
    const auto v = center_eval_view<double>(images[i], m.mean_image, 16);
    std::copy(v.data().begin(), v.data().end(), batch.ptr() + i * 3 * 16 * 16);
  }
  const auto direct = net.forward(batch, nn::ForwardContext{});
  REQUIRE(logits.size() == 5);
  for (std::size_t h = 0; h < 5; ++h) CHECK(testutil::max_abs_diff(logits[h], direct.logits[h]) < 1e-12);
}

TEST_CASE("auxiliary pretraining produces a transferable backbone") {
  const auto dir = testutil::scratch_dir("train-pretrain");
  AuxiliaryConfig aux;
  aux.images_per_class = 10;
  aux.image_size = 20;
  aux.crop_size = 16;
  auto cfg = quick_config();
  cfg.epochs = 1;
  const auto r = pretrain_auxiliary(small_resnet(), aux, cfg, dir / "aux.ckpt");
  CHECK(r.history.epochs.size() == 1);
  CHECK(r.test_accuracy >= 0.0);
  CHECK(r.test_accuracy <= 1.0);
  const auto info = read_checkpoint_info(dir / "aux.ckpt");
  CHECK(info.heads == HeadConfig::auxiliary(10));
  auto ft = load_backbone<float>(dir / "aux.ckpt", small_resnet(), HeadConfig::all_in_one(), 1);
  CHECK(ft.head_config() == HeadConfig::all_in_one());
  CHECK_THROWS_AS(load_backbone<float>(dir / "aux.ckpt", ArchitectureSpec::mini_alex(16), HeadConfig::all_in_one(), 1),
                  ArchitectureMismatch);
}
