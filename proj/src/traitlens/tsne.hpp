#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "traitlens/corpus.hpp"
#include "traitlens/model.hpp"

namespace traitlens {

// Row-major N x D feature matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  static FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows);
  const double* row(std::size_t i) const { return values.data() + i * cols; }
};

// Conditional neighbour distributions p_{j|i}, one Gaussian bandwidth per row.
struct ConditionalAffinities {
  std::size_t n = 0;
  std::vector<double> conditional;   // n x n, rows sum to 1, zero diagonal
  std::vector<double> sigma;         // per-row bandwidth
  std::vector<double> entropy_bits;  // per-row entropy, log base 2
};

struct AffinityMatrix {
  std::size_t n = 0;
  std::vector<double> joint;  // symmetric, zero diagonal, total mass 1
  std::vector<double> sigma;
};

inline constexpr double kPerplexityTolerance = 1e-5;
inline constexpr int kPerplexitySearchSteps = 50;

// Bandwidths by bisection so that 2^H(P_i) matches the perplexity.
// Requires N > perplexity + 1.
ConditionalAffinities conditional_affinities(const FeatureMatrix& features, double perplexity);
// p_ij = (p_{j|i} + p_{i|j}) / 2N
AffinityMatrix joint_affinities(const ConditionalAffinities& c);

struct TsneOptions {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  double min_gain = 0.01;
  double init_std = 1e-4;
  std::uint64_t seed = 1;
};

struct Embedding2D {
  std::vector<std::array<double, 2>> points;
  double kl_divergence = 0.0;  // against the unexaggerated affinities
  std::size_t iterations = 0;
  std::vector<double> kl_trace;  // one entry per iteration
};

// Exact t-SNE with a Student-t kernel. Never sees labels. `initial` replaces
// the seeded Gaussian initialization when given.
Embedding2D tsne_embed(const FeatureMatrix& features, const TsneOptions& options,
                       std::optional<std::span<const std::array<double, 2>>> initial = std::nullopt);

// One projected sample with the list it was selected from.
struct ProjectedSample {
  std::uint64_t sample_id = 0;
  Trait trait = Trait::O;
  Polarity polarity = Polarity::High;
  double x = 0.0;
  double y = 0.0;
};

struct TraitProjection {
  Embedding2D embedding;
  std::vector<ProjectedSample> samples;  // aligned with embedding.points
};

// The top `per_pole` Test images for High and for Low of each listed trait,
// embedded together from their penultimate features. Labels are attached
// after the embedding is computed.
template <typename Real>
TraitProjection project_traits(Network<Real>& network, const CorpusManifest& manifest,
                               std::span<const Image> images, std::span<const Trait> traits,
                               std::size_t per_pole, const TsneOptions& options);

// embedding.csv (sample_id,x,y,trait,polarity) and a metadata JSON with the
// options and final divergence.
void write_embedding(const TraitProjection& projection, const TsneOptions& options,
                     const std::filesystem::path& csv_path, const std::filesystem::path& meta_path);

}  // namespace traitlens
