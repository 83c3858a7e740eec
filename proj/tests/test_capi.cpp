#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_files.hpp"
#include "traitlens/traitlens.h"

namespace fs = std::filesystem;

namespace {

struct CorpusHandle {
  tl_corpus* ptr = nullptr;
  ~CorpusHandle() { tl_corpus_free(ptr); }
};
struct NetHandle {
  tl_network* ptr = nullptr;
  ~NetHandle() { tl_network_free(ptr); }
};

// 330 images: 3 per word, two for training.
const fs::path& small_corpus_dir() {
  static const fs::path dir = [] {
    const auto d = testutil::scratch_dir("capi-corpus");
    tl_generator_config g;
    tl_generator_config_default(&g);
    g.images_per_word = 3;
    tl_corpus* c = nullptr;
    REQUIRE(tl_corpus_generate(&g, d.string().c_str(), &c) == TL_OK);
    tl_corpus_free(c);
    return d;
  }();
  return dir;
}

std::string last_error() { return tl_last_error(); }

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::string(tl_status_name(TL_OK)) == "ok");
  CHECK(std::string(tl_status_name(TL_INCOMPATIBLE)) == "incompatible");
  CHECK(std::strlen(tl_version()) > 0);
}

TEST_CASE("generator configuration") {
  tl_generator_config g;
  tl_generator_config_default(&g);
  CHECK(g.images_per_word == 20);
  CHECK(g.image_size == 36);
  CHECK(g.crop_size == 32);
  CHECK(g.signal_strength == 1.0);
  CHECK(g.noise_std == 8.0);
  CHECK(g.seed == 7);
  CHECK(g.train_fraction == 0.8);
  CHECK(tl_generator_config_validate(&g) == TL_OK);
  g.crop_size = 40;
  CHECK(tl_generator_config_validate(&g) == TL_INVALID_ARGUMENT);
  CHECK(last_error().find("crop_size") != std::string::npos);

  const auto dir = testutil::scratch_dir("capi-bad") / "out";
  tl_corpus* c = nullptr;
  CHECK(tl_corpus_generate(&g, dir.string().c_str(), &c) == TL_INVALID_ARGUMENT);
  CHECK(c == nullptr);
  CHECK_FALSE(fs::exists(dir));
  CHECK(tl_generator_config_validate(nullptr) == TL_INVALID_ARGUMENT);
}

TEST_CASE("corpus handles") {
  CorpusHandle c;
  REQUIRE(tl_corpus_open(small_corpus_dir().string().c_str(), &c.ptr) == TL_OK);
  CHECK(tl_corpus_sample_count(c.ptr, TL_SPLIT_ALL) == 330);
  CHECK(tl_corpus_sample_count(c.ptr, TL_SPLIT_TRAIN) == 220);
  CHECK(tl_corpus_sample_count(c.ptr, TL_SPLIT_TEST) == 110);
  tl_generator_config g;
  REQUIRE(tl_corpus_generator(c.ptr, &g) == TL_OK);
  CHECK(g.images_per_word == 3);
  CHECK(g.seed == 7);

  tl_corpus* missing = nullptr;
  CHECK(tl_corpus_open((small_corpus_dir() / "nope").string().c_str(), &missing) == TL_IO_ERROR);
  CHECK(missing == nullptr);
  CHECK_FALSE(last_error().empty());
  CHECK(tl_corpus_open(nullptr, &missing) == TL_INVALID_ARGUMENT);
}

TEST_CASE("network handles") {
  NetHandle net;
  REQUIRE(tl_network_build(TL_ARCH_MINI_RESNET, TL_HEADS_ALL_IN_ONE, 0, 0, 1, &net.ptr) == TL_OK);
  CHECK(tl_network_parameter_count(net.ptr) == 175258);

  size_t needed = 0;
  char tiny[8];
  CHECK(tl_network_describe(net.ptr, tiny, sizeof tiny, &needed) == TL_OK);
  CHECK(std::strlen(tiny) == 7);
  std::vector<char> buf(needed);
  CHECK(tl_network_describe(net.ptr, buf.data(), buf.size(), &needed) == TL_OK);
  const std::string desc(buf.data());
  CHECK(desc.size() + 1 == needed);
  CHECK(desc.find("\"mini-resnet\"") != std::string::npos);
  CHECK(desc.find("\"all-in-one\"") != std::string::npos);

  tl_heads heads;
  int trait = -1;
  CHECK(tl_network_heads(net.ptr, &heads, &trait) == TL_OK);
  CHECK(heads == TL_HEADS_ALL_IN_ONE);

  NetHandle alex;
  REQUIRE(tl_network_build(TL_ARCH_MINI_ALEX, TL_HEADS_INDEPENDENT, 3, 0, 1, &alex.ptr) == TL_OK);
  CHECK(tl_network_heads(alex.ptr, &heads, &trait) == TL_OK);
  CHECK(heads == TL_HEADS_INDEPENDENT);
  CHECK(trait == 3);

  tl_network* bad = nullptr;
  CHECK(tl_network_build(TL_ARCH_MINI_ALEX, TL_HEADS_INDEPENDENT, 7, 0, 1, &bad) == TL_INVALID_ARGUMENT);
  CHECK(tl_network_build(TL_ARCH_MINI_ALEX, TL_HEADS_AUXILIARY, 0, 1, 1, &bad) == TL_INVALID_ARGUMENT);
  CHECK(tl_network_build(static_cast<tl_arch>(9), TL_HEADS_ALL_IN_ONE, 0, 0, 1, &bad) == TL_INVALID_ARGUMENT);
  CHECK(bad == nullptr);
}

TEST_CASE("checkpoint round trip and mismatch reporting") {
  const auto dir = testutil::scratch_dir("capi-ckpt");
  const auto a = (dir / "a.ckpt").string(), b = (dir / "b.ckpt").string();
  NetHandle net;
  REQUIRE(tl_network_build(TL_ARCH_MINI_RESNET, TL_HEADS_ALL_IN_ONE, 0, 0, 5, &net.ptr) == TL_OK);
  REQUIRE(tl_network_save(net.ptr, a.c_str()) == TL_OK);
  NetHandle back;
  REQUIRE(tl_network_load(a.c_str(), &back.ptr) == TL_OK);
  REQUIRE(tl_network_save(back.ptr, b.c_str()) == TL_OK);
  CHECK(testutil::read_bytes(a) == testutil::read_bytes(b));

  NetHandle ft;
  CHECK(tl_network_load_backbone(a.c_str(), TL_ARCH_MINI_RESNET, TL_HEADS_INDEPENDENT, 2, 3, &ft.ptr) == TL_OK);
  tl_network* wrong = nullptr;
  CHECK(tl_network_load_backbone(a.c_str(), TL_ARCH_MINI_ALEX, TL_HEADS_ALL_IN_ONE, 0, 3, &wrong) == TL_INCOMPATIBLE);
  CHECK(last_error().find("mini-alex") != std::string::npos);
  CHECK(last_error().find("mini-resnet") != std::string::npos);

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK(tl_network_load((dir / "junk.ckpt").string().c_str(), &wrong) == TL_IO_ERROR);
  CHECK(tl_network_load((dir / "absent.ckpt").string().c_str(), &wrong) == TL_IO_ERROR);
  CHECK(wrong == nullptr);
}

TEST_CASE("training, evaluation and inspection") {
  CorpusHandle c;
  REQUIRE(tl_corpus_open(small_corpus_dir().string().c_str(), &c.ptr) == TL_OK);
  NetHandle net;
  REQUIRE(tl_network_build(TL_ARCH_MINI_RESNET, TL_HEADS_ALL_IN_ONE, 0, 0, 1, &net.ptr) == TL_OK);

  tl_train_config cfg;
  tl_train_config_default(TL_ARCH_MINI_RESNET, 0, &cfg);
  CHECK(cfg.base_lr == 0.01);
  CHECK(cfg.momentum == 0.9);
  CHECK(cfg.weight_decay == 0.0005);
  CHECK(cfg.dropout_p == 0.5);
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.epochs == 30);
  tl_train_config ft_cfg;
  tl_train_config_default(TL_ARCH_MINI_ALEX, 1, &ft_cfg);
  CHECK(ft_cfg.base_lr == 0.001);
  CHECK(ft_cfg.batch_size == 128);
  CHECK(ft_cfg.epochs == 10);

  cfg.epochs = 3;
  struct Seen {
    std::vector<uint32_t> epochs;
    std::vector<double> first_accuracy;
  } seen;
  auto cb = [](uint32_t epoch, double loss, const double* acc, void* user) -> int {
    auto* s = static_cast<Seen*>(user);
    s->epochs.push_back(epoch);
    CHECK(std::isfinite(loss));
    REQUIRE(acc != nullptr);
    if (s->first_accuracy.empty()) s->first_accuracy.assign(acc, acc + TL_NUM_TRAITS);
    return epoch < 2;
  };
  const auto hist = testutil::scratch_dir("capi-history");
  REQUIRE(tl_train(net.ptr, c.ptr, &cfg, hist.string().c_str(), cb, &seen) == TL_OK);
  CHECK(seen.epochs == std::vector<uint32_t>{1, 2});
  for (double a : seen.first_accuracy) CHECK((a >= 0.0 && a <= 1.0));
  CHECK(fs::exists(hist / "history.csv"));
  CHECK(fs::exists(hist / "accuracy.csv"));

  SUBCASE("evaluation writes the report") {
    const auto out = testutil::scratch_dir("capi-eval");
    tl_metrics m;
    tl_network* nets[] = {net.ptr};
    REQUIRE(tl_evaluate(nets, 1, c.ptr, out.string().c_str(), R"({"command":"eval"})", &m) == TL_OK);
    double mean = 0;
    for (int t = 0; t < TL_NUM_TRAITS; ++t) {
      CHECK(m.test_samples[t] == 22);
      CHECK((m.accuracy[t] >= 0 && m.accuracy[t] <= 1));
      CHECK((m.auc[t] >= 0 && m.auc[t] <= 1));
      mean += m.accuracy[t] / TL_NUM_TRAITS;
    }
    CHECK(m.average_accuracy == doctest::Approx(mean).epsilon(1e-12));
    for (const char* f : {"metrics.json", "roc_O.csv", "pr_N.csv", "curves.svg"}) CHECK(fs::exists(out / f));
    CHECK(tl_evaluate(nets, 2, c.ptr, nullptr, nullptr, &m) == TL_INVALID_ARGUMENT);
  }

  SUBCASE("evaluation of independent networks") {
    std::vector<NetHandle> singles(5);
    std::vector<tl_network*> ptrs;
    for (int t = 0; t < 5; ++t) {
      REQUIRE(tl_network_build(TL_ARCH_MINI_RESNET, TL_HEADS_INDEPENDENT, t, 0, 1, &singles[t].ptr) == TL_OK);
      ptrs.push_back(singles[t].ptr);
    }
    tl_metrics m;
    CHECK(tl_evaluate(ptrs.data(), 5, c.ptr, nullptr, nullptr, &m) == TL_OK);
    ptrs[4] = ptrs[0];
    CHECK(tl_evaluate(ptrs.data(), 5, c.ptr, nullptr, nullptr, &m) == TL_INCOMPATIBLE);
    tl_network* one[] = {singles[0].ptr};
    CHECK(tl_evaluate(one, 1, c.ptr, nullptr, nullptr, &m) == TL_INCOMPATIBLE);
  }

  SUBCASE("max activations") {
    std::vector<uint64_t> ids(10);
    std::vector<double> scores(10);
    REQUIRE(tl_max_activations(net.ptr, c.ptr, 2, 0, 10, ids.data(), scores.data()) == TL_OK);
    for (int i = 1; i < 10; ++i) CHECK(scores[i] <= scores[i - 1]);
    std::vector<uint64_t> many(200);
    std::vector<double> many_scores(200);
    CHECK(tl_max_activations(net.ptr, c.ptr, 2, 0, 200, many.data(), many_scores.data()) == TL_INVALID_ARGUMENT);
    CHECK(tl_max_activations(net.ptr, c.ptr, 2, 3, 10, ids.data(), scores.data()) == TL_INVALID_ARGUMENT);
  }

  SUBCASE("features") {
    size_t dim = 0;
    CHECK(tl_extract_features(net.ptr, c.ptr, 5, nullptr, 0, &dim) == TL_OK);
    CHECK(dim == 64);
    std::vector<double> f(64), g(64);
    CHECK(tl_extract_features(net.ptr, c.ptr, 5, f.data(), f.size(), &dim) == TL_OK);
    CHECK(tl_extract_features(net.ptr, c.ptr, 5, g.data(), g.size(), &dim) == TL_OK);
    CHECK(f == g);
    CHECK(tl_extract_features(net.ptr, c.ptr, 5, f.data(), 3, &dim) == TL_INVALID_ARGUMENT);
    CHECK(tl_extract_features(net.ptr, c.ptr, 99999, f.data(), f.size(), &dim) == TL_INVALID_ARGUMENT);
  }

  SUBCASE("projection") {
    const auto out = testutil::scratch_dir("capi-tsne");
    tl_tsne_config t;
    tl_tsne_config_default(&t);
    CHECK(t.perplexity == 30.0);
    CHECK(t.iterations == 1000);
    t.iterations = 200;
    const int traits[] = {0, 4};
    size_t points = 0;
    double kl = -1;
    REQUIRE(tl_tsne_project(net.ptr, c.ptr, traits, 2, 20, &t, (out / "e.csv").string().c_str(),
                            (out / "e.json").string().c_str(), &points, &kl) == TL_OK);
    CHECK(points == 80);
    CHECK(kl >= 0);
    CHECK(fs::exists(out / "e.json"));
  }
}

TEST_CASE("mismatched corpus and network are reported with both descriptors") {
  const auto dir = testutil::scratch_dir("capi-crop24");
  tl_generator_config g;
  tl_generator_config_default(&g);
  g.images_per_word = 3;
  g.image_size = 28;
  g.crop_size = 24;
  CorpusHandle c;
  REQUIRE(tl_corpus_generate(&g, dir.string().c_str(), &c.ptr) == TL_OK);
  NetHandle net;
  REQUIRE(tl_network_build(TL_ARCH_MINI_RESNET, TL_HEADS_ALL_IN_ONE, 0, 0, 1, &net.ptr) == TL_OK);
  tl_train_config cfg;
  tl_train_config_default(TL_ARCH_MINI_RESNET, 0, &cfg);
  CHECK(tl_train(net.ptr, c.ptr, &cfg, nullptr, nullptr, nullptr) == TL_INCOMPATIBLE);
  const auto msg = last_error();
  CHECK(msg.find("\"input_size\":32") != std::string::npos);
  CHECK(msg.find("24") != std::string::npos);
  tl_metrics m;
  tl_network* nets[] = {net.ptr};
  CHECK(tl_evaluate(nets, 1, c.ptr, nullptr, nullptr, &m) == TL_INCOMPATIBLE);
}

TEST_CASE("training rejects bad settings without touching the network") {
  CorpusHandle c;
  REQUIRE(tl_corpus_open(small_corpus_dir().string().c_str(), &c.ptr) == TL_OK);
  NetHandle net;
  REQUIRE(tl_network_build(TL_ARCH_MINI_RESNET, TL_HEADS_AUXILIARY, 0, 10, 1, &net.ptr) == TL_OK);
  tl_train_config cfg;
  tl_train_config_default(TL_ARCH_MINI_RESNET, 0, &cfg);
  CHECK(tl_train(net.ptr, c.ptr, &cfg, nullptr, nullptr, nullptr) == TL_INVALID_ARGUMENT);
  cfg.batch_size = 1;
  CHECK(tl_train_config_validate(&cfg) == TL_INVALID_ARGUMENT);
  cfg.batch_size = 32;
  cfg.momentum = 1.5;
  CHECK(tl_train_config_validate(&cfg) == TL_INVALID_ARGUMENT);

  tl_auxiliary_config aux;
  tl_auxiliary_config_default(&aux);
  CHECK(aux.images_per_class == 300);
  CHECK(aux.seed == 11);
  CHECK(tl_auxiliary_config_validate(&aux) == TL_OK);
  aux.train_fraction = 0;
  CHECK(tl_auxiliary_config_validate(&aux) == TL_INVALID_ARGUMENT);
}

TEST_CASE("auxiliary pretraining through the C interface") {
  const auto dir = testutil::scratch_dir("capi-pretrain");
  tl_auxiliary_config aux;
  tl_auxiliary_config_default(&aux);
  aux.images_per_class = 8;
  tl_train_config cfg;
  tl_train_config_default(TL_ARCH_MINI_RESNET, 0, &cfg);
  cfg.epochs = 1;
  double acc = -1;
  const auto ckpt = (dir / "aux.ckpt").string();
  REQUIRE(tl_pretrain_auxiliary(TL_ARCH_MINI_RESNET, &aux, &cfg, ckpt.c_str(), dir.string().c_str(), &acc) == TL_OK);
  CHECK((acc >= 0 && acc <= 1));
  CHECK(fs::exists(dir / "history.csv"));
  NetHandle ft;
  CHECK(tl_network_load_backbone(ckpt.c_str(), TL_ARCH_MINI_RESNET, TL_HEADS_ALL_IN_ONE, 0, 1, &ft.ptr) == TL_OK);
}
