#include "traitlens/tsne.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "traitlens/errors.hpp"
#include "traitlens/eval.hpp"
#include "traitlens/random.hpp"

namespace traitlens {

FeatureMatrix FeatureMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  FeatureMatrix m;
  m.rows = rows.size();
  m.cols = rows.empty() ? 0 : rows.front().size();
  m.values.reserve(m.rows * m.cols);
  for (const auto& r : rows) {
    if (r.size() != m.cols) throw std::invalid_argument("feature rows differ in length");
    m.values.insert(m.values.end(), r.begin(), r.end());
  }
  return m;
}

namespace {

// Sum that does not depend on the order of its terms: each term is placed on a
// 128-bit fixed-point grid scaled to the largest magnitude and the integers are
// added exactly. Bits more than ~2^-110 below the largest term are dropped.
// Permuting the input rows therefore permutes the embedding bitwise.
double order_free_sum(std::span<const double> terms) {
  double peak = 0.0;
  for (double t : terms) {
    if (!std::isfinite(t)) return std::accumulate(terms.begin(), terms.end(), 0.0);
    peak = std::max(peak, std::abs(t));
  }
  if (peak == 0.0) return 0.0;
  int exponent = 0;
  std::frexp(peak, &exponent);  // peak < 2^exponent
  const int shift = 124 - static_cast<int>(std::bit_width(terms.size())) - exponent;
  __int128 acc = 0;
  if (shift > -1000 && shift < 1000) {
    const double scale = std::ldexp(1.0, shift);
    for (double t : terms) acc += static_cast<__int128>(t * scale);
  } else {
    for (double t : terms) acc += static_cast<__int128>(std::ldexp(t, shift));
  }
  return std::ldexp(static_cast<double>(acc), -shift);
}

std::vector<double> squared_distances(const FeatureMatrix& f) {
  const std::size_t n = f.rows;
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < f.cols; ++k) {
        const double diff = f.row(i)[k] - f.row(j)[k];
        s += diff * diff;
      }
      d[i * n + j] = d[j * n + i] = s;
    }
  }
  return d;
}

// Fills row (excluding `self`) with exp(-beta * (d - dmin)) / Z and returns the
// entropy in nats. `scratch` holds n terms.
double gaussian_row(const double* d, std::size_t n, std::size_t self, double beta, double dmin, double* row,
                    std::vector<double>& scratch) {
  for (std::size_t j = 0; j < n; ++j) row[j] = j == self ? 0.0 : std::exp(-beta * (d[j] - dmin));
  const double z = order_free_sum(std::span<const double>(row, n));
  for (std::size_t j = 0; j < n; ++j) {
    row[j] /= z;
    scratch[j] = j == self ? 0.0 : (d[j] - dmin) * row[j];
  }
  return std::log(z) + beta * order_free_sum(scratch);
}

}  // namespace

ConditionalAffinities conditional_affinities(const FeatureMatrix& features, double perplexity) {
  const std::size_t n = features.rows;
  if (features.cols == 0) throw std::invalid_argument("t-SNE needs at least one feature dimension");
  if (!(perplexity > 0.0)) throw std::invalid_argument("perplexity must be positive");
  if (!(static_cast<double>(n) > perplexity + 1.0)) {
    throw std::invalid_argument("t-SNE needs more than perplexity + 1 points (" + std::to_string(n) +
                                " given for perplexity " + std::to_string(perplexity) + ")");
  }
  for (double v : features.values) {
    if (!std::isfinite(v)) throw std::invalid_argument("t-SNE features must be finite");
  }
  const auto d = squared_distances(features);
  const double target_bits = std::log2(perplexity);

  ConditionalAffinities out;
  out.n = n;
  out.conditional.assign(n * n, 0.0);
  out.sigma.resize(n);
  out.entropy_bits.resize(n);
  std::vector<double> scratch(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* di = d.data() + i * n;
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dmin = std::min(dmin, di[j]);
    }
    const double dsum = order_free_sum(std::span<const double>(di, n));  // diagonal is 0
    const double spread = dsum / static_cast<double>(n - 1) - dmin;
    double beta = spread > 0.0 ? 1.0 / spread : 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double* row = out.conditional.data() + i * n;
    double bits = gaussian_row(di, n, i, beta, dmin, row, scratch) / std::log(2.0);
    for (int step = 0; step < kPerplexitySearchSteps && std::abs(bits - target_bits) >= kPerplexityTolerance;
         ++step) {
      if (bits > target_bits) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      bits = gaussian_row(di, n, i, beta, dmin, row, scratch) / std::log(2.0);
    }
    out.entropy_bits[i] = bits;
    out.sigma[i] = std::sqrt(1.0 / (2.0 * beta));
  }
  return out;
}

AffinityMatrix joint_affinities(const ConditionalAffinities& c) {
  AffinityMatrix p;
  p.n = c.n;
  p.sigma = c.sigma;
  p.joint.assign(c.n * c.n, 0.0);
  const double denom = 2.0 * static_cast<double>(c.n);
  for (std::size_t i = 0; i < c.n; ++i) {
    for (std::size_t j = 0; j < c.n; ++j) {
      p.joint[i * c.n + j] = (c.conditional[i * c.n + j] + c.conditional[j * c.n + i]) / denom;
    }
  }
  return p;
}

namespace {

// Student-t kernel values and the KL divergence of P against Q for the current
// layout. num is filled with 1 / (1 + |y_i - y_j|^2); scratch holds n*n terms.
double kernel_and_kl(const std::vector<std::array<double, 2>>& y, const std::vector<double>& p,
                     std::vector<double>& num, std::vector<double>& scratch, double& z) {
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) {
    num[i * n + i] = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
      num[i * n + j] = num[j * n + i] = 1.0 / (1.0 + dx * dx + dy * dy);
    }
  }
  z = order_free_sum(num);
  for (std::size_t k = 0; k < n * n; ++k) {
    scratch[k] = p[k] > 0.0 ? p[k] * std::log(p[k] / std::max(num[k] / z, 1e-300)) : 0.0;
  }
  return order_free_sum(scratch);
}

}  // namespace

Embedding2D tsne_embed(const FeatureMatrix& features, const TsneOptions& options,
                       std::optional<std::span<const std::array<double, 2>>> initial) {
  if (!(options.learning_rate > 0.0) || options.min_gain <= 0.0 || options.init_std < 0.0) {
    throw std::invalid_argument("t-SNE: learning rate and minimum gain must be positive");
  }
  const auto affinities = joint_affinities(conditional_affinities(features, options.perplexity));
  const std::size_t n = features.rows;
  const auto& p = affinities.joint;

  std::vector<std::array<double, 2>> y(n);
  if (initial) {
    if (initial->size() != n) throw std::invalid_argument("t-SNE: initial layout has the wrong point count");
    std::copy(initial->begin(), initial->end(), y.begin());
  } else {
    auto rng = derive_rng({options.seed}, "tsne-init");
    std::normal_distribution<double> normal(0.0, options.init_std);
    for (auto& pt : y) {
      pt[0] = normal(rng);
      pt[1] = normal(rng);
    }
  }

  std::vector<std::array<double, 2>> update(n, {0.0, 0.0}), gains(n, {1.0, 1.0}), grad(n);
  std::vector<double> num(n * n), scratch(n * n), gx(n), gy(n), coords(n);
  Embedding2D out;
  out.kl_trace.reserve(options.iterations);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    const double exaggeration = it < options.exaggeration_iterations ? options.early_exaggeration : 1.0;
    const double momentum = it < options.momentum_switch ? options.initial_momentum : options.final_momentum;
    double z = 0.0;
    out.kl_trace.push_back(kernel_and_kl(y, p, num, scratch, z));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double v = num[i * n + j];
        const double m = j == i ? 0.0 : (exaggeration * p[i * n + j] - v / z) * v;
        gx[j] = m * (y[i][0] - y[j][0]);
        gy[j] = m * (y[i][1] - y[j][1]);
      }
      grad[i] = {4.0 * order_free_sum(gx), 4.0 * order_free_sum(gy)};
      if (!std::isfinite(grad[i][0]) || !std::isfinite(grad[i][1])) {
        throw NumericalError("t-SNE gradient became non-finite at iteration " + std::to_string(it) +
                             " (point " + std::to_string(i) + ")");
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 2; ++d) {
        const bool same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
        gains[i][d] = same_sign ? gains[i][d] * 0.8 : gains[i][d] + 0.2;
        gains[i][d] = std::max(gains[i][d], options.min_gain);
        update[i][d] = momentum * update[i][d] - options.learning_rate * gains[i][d] * grad[i][d];
        y[i][d] += update[i][d];
      }
    }
    for (int d = 0; d < 2; ++d) {
      for (std::size_t i = 0; i < n; ++i) coords[i] = y[i][d];
      const double mean = order_free_sum(coords) / static_cast<double>(n);
      for (auto& pt : y) pt[d] -= mean;
    }
  }
  double z = 0.0;
  out.kl_divergence = kernel_and_kl(y, p, num, scratch, z);
  out.iterations = options.iterations;
  out.points = std::move(y);
  return out;
}

template <typename Real>
TraitProjection project_traits(Network<Real>& network, const CorpusManifest& manifest,
                               std::span<const Image> images, std::span<const Trait> traits,
                               std::size_t per_pole, const TsneOptions& options) {
  std::unordered_map<std::uint64_t, std::size_t> by_id;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) by_id.emplace(manifest.samples[i].sample_id, i);

  TraitProjection proj;
  std::vector<const Image*> selected;
  for (Trait t : traits) {
    for (Polarity pol : kPolarities) {
      for (const auto& a : max_activating_samples(network, manifest, images, t, pol, per_pole)) {
        selected.push_back(&images[by_id.at(a.sample_id)]);
        proj.samples.push_back({a.sample_id, t, pol, 0.0, 0.0});
      }
    }
  }
  const auto features = FeatureMatrix::from_rows(
      extract_features(network, std::span<const Image* const>(selected), manifest.mean_image,
                       manifest.generator.crop_size));
  proj.embedding = tsne_embed(features, options);
  for (std::size_t i = 0; i < proj.samples.size(); ++i) {
    proj.samples[i].x = proj.embedding.points[i][0];
    proj.samples[i].y = proj.embedding.points[i][1];
  }
  return proj;
}

void write_embedding(const TraitProjection& projection, const TsneOptions& options,
                     const std::filesystem::path& csv_path, const std::filesystem::path& meta_path) {
  {
    std::ofstream os(csv_path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + csv_path.string());
    os << "sample_id,x,y,trait,polarity\n";
    char buf[96];
    for (const auto& s : projection.samples) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", s.x, s.y);
      os << s.sample_id << ',' << buf << ',' << trait_letter(s.trait) << ',' << polarity_name(s.polarity) << '\n';
    }
    if (!os) throw IoError("failed writing " + csv_path.string());
  }
  nlohmann::ordered_json j;
  j["points"] = projection.samples.size();
  j["perplexity"] = options.perplexity;
  j["iterations"] = options.iterations;
  j["learning_rate"] = options.learning_rate;
  j["early_exaggeration"] = options.early_exaggeration;
  j["exaggeration_iterations"] = options.exaggeration_iterations;
  j["initial_momentum"] = options.initial_momentum;
  j["final_momentum"] = options.final_momentum;
  j["momentum_switch"] = options.momentum_switch;
  j["min_gain"] = options.min_gain;
  j["init_std"] = options.init_std;
  j["seed"] = options.seed;
  j["final_kl_divergence"] = projection.embedding.kl_divergence;
  std::ofstream os(meta_path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + meta_path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing " + meta_path.string());
}

template TraitProjection project_traits(Network<float>&, const CorpusManifest&, std::span<const Image>,
                                        std::span<const Trait>, std::size_t, const TsneOptions&);
template TraitProjection project_traits(Network<double>&, const CorpusManifest&, std::span<const Image>,
                                        std::span<const Trait>, std::size_t, const TsneOptions&);

}  // namespace traitlens
