#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "traitlens/eval.hpp"
#include "traitlens/train.hpp"
#include "traitlens/tsne.hpp"

using namespace traitlens;

namespace {

FeatureMatrix gaussian_features(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  FeatureMatrix m{n, d, std::vector<double>(n * d)};
  for (auto& v : m.values) v = g(rng);
  return m;
}

// Three 16-D clusters, 50 points each, centres 10 apart.
std::pair<FeatureMatrix, std::vector<int>> three_clusters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  FeatureMatrix m{150, 16, std::vector<double>(150 * 16)};
  std::vector<int> labels;
  for (std::size_t i = 0; i < 150; ++i) {
    const int c = static_cast<int>(i / 50);
    labels.push_back(c);
    for (std::size_t k = 0; k < 16; ++k) m.values[i * 16 + k] = g(rng) + (k == static_cast<std::size_t>(c) ? 10.0 : 0.0);
  }
  return {m, labels};
}

// Fraction of points whose nearest class centroid (in 2-D) is their own.
double centroid_purity(const Embedding2D& e, const std::vector<int>& labels, int classes) {
  std::vector<std::array<double, 3>> acc(classes, {0, 0, 0});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    acc[labels[i]][0] += e.points[i][0];
    acc[labels[i]][1] += e.points[i][1];
    acc[labels[i]][2] += 1;
  }
  std::size_t good = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int best = 0;
    double best_d = INFINITY;
    for (int c = 0; c < classes; ++c) {
      const double dx = e.points[i][0] - acc[c][0] / acc[c][2], dy = e.points[i][1] - acc[c][1] / acc[c][2];
      if (dx * dx + dy * dy < best_d) {
        best_d = dx * dx + dy * dy;
        best = c;
      }
    }
    good += best == labels[i];
  }
  return static_cast<double>(good) / static_cast<double>(labels.size());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

// Training accuracy of a logistic regression on standardized 2-D points.
double logistic_probe(const std::vector<std::array<double, 2>>& pts, const std::vector<int>& y) {
  const double n = static_cast<double>(pts.size());
  std::array<double, 2> mean{0, 0}, sd{0, 0};
  for (const auto& p : pts) for (int k = 0; k < 2; ++k) mean[k] += p[k] / n;
  for (const auto& p : pts) for (int k = 0; k < 2; ++k) sd[k] += (p[k] - mean[k]) * (p[k] - mean[k]) / n;
  for (auto& s : sd) s = std::sqrt(s) + 1e-12;
  double w0 = 0, w1 = 0, b = 0;
  for (int it = 0; it < 5000; ++it) {
    double g0 = 0, g1 = 0, gb = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double x0 = (pts[i][0] - mean[0]) / sd[0], x1 = (pts[i][1] - mean[1]) / sd[1];
      const double p = 1 / (1 + std::exp(-(w0 * x0 + w1 * x1 + b)));
      g0 += (p - y[i]) * x0 / n;
      g1 += (p - y[i]) * x1 / n;
      gb += (p - y[i]) / n;
    }
    w0 -= 0.5 * g0;
    w1 -= 0.5 * g1;
    b -= 0.5 * gb;
  }
  std::size_t good = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double x0 = (pts[i][0] - mean[0]) / sd[0], x1 = (pts[i][1] - mean[1]) / sd[1];
    good += ((w0 * x0 + w1 * x1 + b) > 0 ? 1 : 0) == y[i];
  }
  return static_cast<double>(good) / n;
}

TsneOptions short_run(std::uint64_t seed = 1) {
  TsneOptions o;
  o.perplexity = 20;
  o.iterations = 500;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("equidistant points give uniform rows") {
  // standard basis vectors of R^4 are pairwise sqrt(2) apart
  FeatureMatrix m{4, 4, std::vector<double>(16, 0.0)};
  for (std::size_t i = 0; i < 4; ++i) m.values[i * 4 + i] = 1.0;
  const auto c = conditional_affinities(m, 2.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(c.conditional[i * 4 + j] == doctest::Approx(i == j ? 0.0 : 1.0 / 3.0).epsilon(1e-12));
    }
    CHECK(std::exp2(c.entropy_bits[i]) == doctest::Approx(3.0).epsilon(1e-9));
  }
}

TEST_CASE("bandwidths reproduce the target perplexity") {
  for (double perplexity : {5.0, 30.0}) {
    const auto m = gaussian_features(120, 10, 3);
    const auto c = conditional_affinities(m, perplexity);
    for (std::size_t i = 0; i < m.rows; ++i) {
      // recompute the row from sigma alone
      std::vector<double> row(m.rows, 0.0);
      double z = 0;
      for (std::size_t j = 0; j < m.rows; ++j) {
        if (j == i) continue;
        double d2 = 0;
        for (std::size_t k = 0; k < m.cols; ++k) d2 += std::pow(m.row(i)[k] - m.row(j)[k], 2);
        row[j] = std::exp(-d2 / (2 * c.sigma[i] * c.sigma[i]));
        z += row[j];
      }
      double h = 0, sum = 0;
      for (std::size_t j = 0; j < m.rows; ++j) {
        const double p = row[j] / z;
        CHECK(std::abs(p - c.conditional[i * m.rows + j]) < 1e-9);
        sum += c.conditional[i * m.rows + j];
        if (p > 0) h -= p * std::log2(p);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(std::abs(h - std::log2(perplexity)) < 1e-4);
      CHECK(c.conditional[i * m.rows + i] == 0.0);
    }
  }
}

TEST_CASE("joint affinities are a symmetric distribution") {
  const auto m = gaussian_features(60, 5, 9);
  const auto c = conditional_affinities(m, 10.0);
  const auto p = joint_affinities(c);
  const std::size_t n = p.n;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(p.joint[i * n + i] == 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(p.joint[i * n + j] >= 0.0);
      CHECK(p.joint[i * n + j] == p.joint[j * n + i]);
      CHECK(p.joint[i * n + j] ==
            doctest::Approx((c.conditional[i * n + j] + c.conditional[j * n + i]) / (2.0 * n)).epsilon(1e-14));
      total += p.joint[i * n + j];
    }
  }
  CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("invalid inputs are rejected") {
  CHECK_THROWS_AS(conditional_affinities(gaussian_features(30, 3, 1), 30.0), std::invalid_argument);
  CHECK_THROWS_AS(conditional_affinities(FeatureMatrix{40, 0, {}}, 5.0), std::invalid_argument);
  auto bad = gaussian_features(40, 3, 1);
  bad.values[5] = NAN;
  CHECK_THROWS_AS(conditional_affinities(bad, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(FeatureMatrix::from_rows({{1.0, 2.0}, {1.0}}), std::invalid_argument);
}

TEST_CASE("planted clusters separate in the embedding") {
  const auto [m, labels] = three_clusters(5);
  TsneOptions o;
  o.perplexity = 30;
  o.seed = 3;
  const auto e = tsne_embed(m, o);
  CHECK(e.points.size() == 150);
  CHECK(e.iterations == 1000);
  for (const auto& p : e.points) CHECK((std::isfinite(p[0]) && std::isfinite(p[1])));
  CHECK(centroid_purity(e, labels, 3) >= 0.95);

  SUBCASE("divergence trace") {
    REQUIRE(e.kl_trace.size() == 1000);
    for (double kl : e.kl_trace) CHECK(kl >= 0.0);
    const std::vector<double> at_switch(e.kl_trace.begin() + 250, e.kl_trace.begin() + 300);
    const std::vector<double> at_end(e.kl_trace.end() - 50, e.kl_trace.end());
    CHECK(median(at_end) <= median(at_switch));
    CHECK(e.kl_divergence == doctest::Approx(e.kl_trace.back()));
  }
}

TEST_CASE("embedding is deterministic in its seed") {
  const auto m = gaussian_features(80, 6, 4);
  const auto a = tsne_embed(m, short_run(7));
  const auto b = tsne_embed(m, short_run(7));
  const auto c = tsne_embed(m, short_run(8));
  CHECK(a.points == b.points);
  CHECK(a.kl_trace == b.kl_trace);
  CHECK_FALSE(a.points == c.points);

  setenv("TRAITLENS_THREADS", "3", 1);
  const auto d = tsne_embed(m, short_run(7));
  unsetenv("TRAITLENS_THREADS");
  CHECK(a.points == d.points);
}

TEST_CASE("embedding is equivariant under row permutation") {
  const auto m = gaussian_features(70, 6, 12);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1e-4);
  std::vector<std::array<double, 2>> init(70);
  for (auto& p : init) p = {g(rng), g(rng)};
  std::vector<std::size_t> perm(70);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  FeatureMatrix pm{70, 6, std::vector<double>(70 * 6)};
  std::vector<std::array<double, 2>> pinit(70);
  for (std::size_t i = 0; i < 70; ++i) {
    std::copy(m.row(perm[i]), m.row(perm[i]) + 6, pm.values.begin() + i * 6);
    pinit[i] = init[perm[i]];
  }
  TsneOptions o;
  o.perplexity = 20;
  const auto a = tsne_embed(m, o, std::span<const std::array<double, 2>>(init));
  const auto b = tsne_embed(pm, o, std::span<const std::array<double, 2>>(pinit));
  // sums are order-free, so the match is exact over the whole run
  for (std::size_t i = 0; i < 70; ++i) CHECK(b.points[i] == a.points[perm[i]]);
  CHECK(a.kl_trace == b.kl_trace);
}

TEST_CASE("projection of the most activating images") {
  GeneratorConfig g;
  g.image_size = 20;
  g.crop_size = 16;
  const auto manifest = generate_corpus(builtin_ontology(), g, testutil::scratch_dir("tsne-corpus"));
  const auto images = load_images(manifest);
  ArchitectureSpec spec;
  spec.kind = ArchitectureKind::MiniResNet;
  spec.input_size = 16;
  spec.stem_channels = 8;
  spec.stage_channels = {8, 16};
  spec.blocks_per_stage = 1;
  auto net = build_network<float>(spec, HeadConfig::all_in_one(), 1);
  auto cfg = TrainConfig::defaults(ArchitectureKind::MiniResNet, TrainMode::Scratch);
  cfg.epochs = 3;
  cfg.evaluate_test = false;
  train(net, make_trait_set(manifest, images, HeadConfig::all_in_one()), cfg);

  const std::array<Trait, 1> traits{Trait::E};
  const auto proj = project_traits(net, manifest, images, traits, 50, short_run(3));
  REQUIRE(proj.samples.size() == 100);
  CHECK(proj.embedding.points.size() == 100);
  const auto high = max_activating_samples(net, manifest, images, Trait::E, Polarity::High, 50);
  const auto low = max_activating_samples(net, manifest, images, Trait::E, Polarity::Low, 50);
  std::vector<int> pole;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& s = proj.samples[i];
    const auto& expected = i < 50 ? high[i] : low[i - 50];
    CHECK(s.sample_id == expected.sample_id);
    CHECK(s.trait == Trait::E);
    CHECK(s.polarity == (i < 50 ? Polarity::High : Polarity::Low));
    CHECK(s.x == proj.embedding.points[i][0]);
    CHECK(s.y == proj.embedding.points[i][1]);
    pole.push_back(i < 50 ? 1 : 0);
  }
  CHECK(logistic_probe(proj.embedding.points, pole) >= 0.9);

  const auto dir = testutil::scratch_dir("tsne-files");
  write_embedding(proj, short_run(3), dir / "embedding.csv", dir / "embedding.json");
  std::ifstream csv(dir / "embedding.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "sample_id,x,y,trait,polarity");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 100);
  const auto meta = testutil::read_bytes(dir / "embedding.json");
  CHECK(meta.find("\"perplexity\": 20") != std::string::npos);
  CHECK(meta.find("\"final_kl_divergence\"") != std::string::npos);
}
