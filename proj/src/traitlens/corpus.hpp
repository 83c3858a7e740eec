#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "traitlens/image.hpp"
#include "traitlens/nn/tensor.hpp"
#include "traitlens/ontology.hpp"

namespace traitlens {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Planted-signal corpus parameters. Intensities are on the 0..255 scale.
struct GeneratorConfig {
  std::uint32_t images_per_word = 20;
  std::uint32_t image_size = 36;
  std::uint32_t crop_size = 32;
  double signal_strength = 1.0;  // in [0, 1]
  double noise_std = 8.0;
  std::uint64_t seed = 7;
  double train_fraction = 0.8;

  void validate() const;  // throws ConfigError
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

enum class Split { Train, Test };
const char* split_name(Split s);

struct Sample {
  std::uint64_t sample_id = 0;
  std::string file;  // relative to the corpus root
  std::string word;
  Trait trait = Trait::O;
  Polarity polarity = Polarity::High;
  Split split = Split::Train;

  TraitClass trait_class() const { return {trait, polarity}; }
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct CorpusManifest {
  std::filesystem::path root;
  GeneratorConfig generator;
  std::uint64_t split_seed = 0;
  std::vector<Sample> samples;
  MeanImage mean_image;  // over the Train split

  std::size_t count(Split s) const;
  std::filesystem::path image_path(const Sample& s) const { return root / s.file; }
};

// Amplitudes of the generator's image components, in intensity units.
struct PatternAmplitudes {
  static constexpr double kSignal = 40.0;      // class texture at signal_strength 1
  static constexpr double kWord = 24.0;        // slot sub-pattern
  static constexpr double kConfounder = 16.0;  // upper bound of the random confounder
};

inline constexpr int kNumTextures = 10;

// Texture t in [-1, 1] at (possibly fractional) pixel (y, x) of a size x size
// image. Ontology class c carries texture c; the auxiliary task uses all ten.
double texture_value(int texture, double y, double x, std::size_t size);

// One generated sample image. entry_index is the position in the ontology;
// its class fixes the texture and its slot the word sub-pattern. Fully
// determined by (config.seed, class, word, index).
Image render_corpus_image(const GeneratorConfig& config, const TraitOntology& ontology,
                          std::size_t entry_index, std::uint32_t index);

// Writes images/NNNNNN.ppm, manifest.jsonl and corpus.json under out_dir.
// The split is stratified per word with seed derived from config.seed.
CorpusManifest generate_corpus(const TraitOntology& ontology, const GeneratorConfig& config,
                               const std::filesystem::path& out_dir);

// Reassigns Train/Test per (trait, polarity, word) group: each group gets
// floor(fraction * n) train samples. The mean image is recomputed.
CorpusManifest split_corpus(const CorpusManifest& manifest, double train_fraction,
                            std::uint64_t seed);

MeanImage compute_mean_image(const CorpusManifest& manifest);
MeanImage compute_mean_image(std::span<const Image> images);

// Reads manifest.jsonl + corpus.json from a corpus directory.
CorpusManifest load_corpus(const std::filesystem::path& dir);
void write_manifest(const CorpusManifest& manifest);

// Images aligned with manifest.samples.
std::vector<Image> load_images(const CorpusManifest& manifest);

// Crop placement for one network input.
struct CropView {
  std::size_t top = 0;
  std::size_t left = 0;
  bool mirror = false;
  friend bool operator==(const CropView&, const CropView&) = default;
};

// Mirror with probability 1/2, offsets uniform in [0, image_size - crop_size].
CropView random_view(std::size_t image_size, std::size_t crop_size, std::mt19937_64& rng);
CropView center_view(std::size_t image_size, std::size_t crop_size);

// Writes the mean-subtracted crop as planar [3, crop, crop] (CHW) into out.
template <typename Real>
void render_view(const Image& image, const MeanImage& mean, std::size_t crop_size, CropView view,
                 Real* out);

// Training view: random mirror and crop, mean-subtracted. Shape [3, crop, crop].
template <typename Real>
nn::Tensor<Real> augment(const Image& image, const MeanImage& mean, std::size_t crop_size,
                         std::mt19937_64& rng);

// Deterministic evaluation view: centered crop, no mirror.
template <typename Real>
nn::Tensor<Real> center_eval_view(const Image& image, const MeanImage& mean,
                                  std::size_t crop_size);

// Auxiliary pretraining task: ten texture classes rendered with random phase,
// random colour and clutter, standing in for a large generic image dataset.
struct AuxiliaryConfig {
  std::uint32_t images_per_class = 300;
  std::uint32_t image_size = 36;
  std::uint32_t crop_size = 32;
  double noise_std = 8.0;
  std::uint64_t seed = 11;
  double train_fraction = 0.8;

  void validate() const;
};

struct LabeledImages {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<Split> splits;
  MeanImage mean_image;  // over the Train split
};

Image render_auxiliary_image(const AuxiliaryConfig& config, int texture, std::uint32_t index);
LabeledImages generate_auxiliary_corpus(const AuxiliaryConfig& config);

}  // namespace traitlens
