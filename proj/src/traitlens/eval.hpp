#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "traitlens/corpus.hpp"
#include "traitlens/model.hpp"

namespace traitlens {

// score = softmax probability of High on the trait's head.
struct ScoredSample {
  std::uint64_t sample_id = 0;
  Trait trait = Trait::O;
  int true_class = 0;  // 0 = High, 1 = Low
  double score = 0.0;
};

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
  double threshold = 0.0;
};

struct RocCurve {
  std::vector<CurvePoint> points;  // (false positive rate, true positive rate)
  double auc = 0.0;
};

struct PrCurve {
  std::vector<CurvePoint> points;  // (recall, precision), one per ranked sample
  double ap = 0.0;
};

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thresholds at every distinct score, highest first, starting from (0,0).
// The area uses integer trapezoid numerators, so it equals the Mann-Whitney
// statistic (ties count one half) exactly. Throws MetricError unless both
// classes are present.
RocCurve roc_curve(std::span<const ScoredSample> scored);

// Non-interpolated average precision over the list ranked by descending score,
// ties by ascending sample_id. Positives are class High. Throws MetricError
// without positives.
PrCurve pr_curve(std::span<const ScoredSample> scored);

// Sorted by descending score, ties by ascending sample_id.
std::vector<ScoredSample> ranked(std::span<const ScoredSample> scored);

// Predicted class of a score: High when score >= 0.5 (ties go to class 0).
inline int predicted_class(double score) { return score >= 0.5 ? 0 : 1; }

struct TraitMetrics {
  Trait trait = Trait::O;
  std::size_t test_samples = 0;
  double accuracy = 0.0;  // fraction in [0, 1]
  RocCurve roc;
  PrCurve pr;
};

struct EvalReport {
  std::vector<TraitMetrics> traits;  // trait order O, C, E, A, N
  double average_accuracy = 0.0;     // arithmetic mean of the five
};

// Per-trait accuracy of predicted_class against true_class. Throws
// MetricError when a trait has no samples.
std::array<double, kNumTraits> accuracy_per_trait(std::span<const ScoredSample> scored);
EvalReport evaluate(std::span<const ScoredSample> scored);

// Center-view scores of every sample of `split` whose trait has a head in the
// network. images align with manifest.samples.
template <typename Real>
std::vector<ScoredSample> score_samples(Network<Real>& network, const CorpusManifest& manifest,
                                        std::span<const Image> images, Split split = Split::Test);

struct Activation {
  std::uint64_t sample_id = 0;
  double score = 0.0;
};

// Every Test image scored on the probability of `polarity` at the trait's
// head; the k best, descending, ties by ascending sample_id.
template <typename Real>
std::vector<Activation> max_activating_samples(Network<Real>& network, const CorpusManifest& manifest,
                                               std::span<const Image> images, Trait trait,
                                               Polarity polarity, std::size_t k);

// Penultimate activations (the vector the heads read) of center views, one
// row per image.
template <typename Real>
std::vector<std::vector<double>> extract_features(Network<Real>& network,
                                                  std::span<const Image* const> images,
                                                  const MeanImage& mean, std::size_t crop_size);

// metrics.json; `config_json` is embedded verbatim as the "config" member.
void write_metrics_json(const EvalReport& report, const std::string& config_json,
                        const std::filesystem::path& path);
// roc_<T>.csv and pr_<T>.csv for every trait.
void write_curve_csvs(const EvalReport& report, const std::filesystem::path& dir);
void write_curves_svg(const EvalReport& report, const std::filesystem::path& path);

}  // namespace traitlens
