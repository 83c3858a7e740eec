#include "traitlens/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "traitlens/parallel.hpp"
#include "traitlens/random.hpp"

namespace traitlens {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

void GeneratorConfig::validate() const {
  if (images_per_word < 1) throw ConfigError("images_per_word must be at least 1");
  if (image_size < 1 || image_size > 4096) throw ConfigError("image_size out of range");
  if (crop_size < 1 || crop_size > image_size) {
    throw ConfigError("crop_size must lie in [1, image_size]");
  }
  if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) {
    throw ConfigError("signal_strength must lie in [0, 1]");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("noise_std must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
}

const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

std::size_t CorpusManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [s](const Sample& x) { return x.split == s; }));
}

double texture_value(int texture, double y, double x, std::size_t size) {
  constexpr double tau = 2 * std::numbers::pi;
  const double c = static_cast<double>(size) / 2.0 - 0.5;
  const double u = x - c, v = y - c;
  const double r = std::hypot(u, v);
  switch (texture) {
    case 0: return std::sin(tau * y / 6.0);
    case 1: return std::sin(tau * x / 6.0);
    case 2: return std::sin(tau * y / 12.0);
    case 3: return std::sin(tau * x / 12.0);
    case 4: return std::sin(tau * x / 8.0) * std::sin(tau * y / 8.0);
    case 5: return std::cos(tau * r / 7.0);
    case 6: return (std::cos(tau * x / 9.0) + 1) * (std::cos(tau * y / 9.0) + 1) / 2.0 - 1.0;
    case 7: return std::sin(tau * (x + y) / 10.0);
    case 8: return std::sin(5.0 * std::atan2(v, u));
    case 9: return std::cos(std::numbers::pi * std::min(r, 2.0 * c) / c);
    default: throw std::out_of_range("texture index out of range");
  }
}

namespace {

struct SlotPattern {
  double cy, cx, sigma;
  double color[3];
};

// The eleven word sub-patterns. Slot k is shared by the k-th word of every
// class, so the sub-patterns carry no class information.
std::vector<SlotPattern> slot_patterns(std::uint64_t seed, std::size_t size) {
  std::vector<SlotPattern> out;
  for (int k = 0; k < kWordsPerClass; ++k) {
    auto rng = derive_rng({seed, static_cast<std::uint64_t>(k)}, "slot-pattern");
    std::uniform_real_distribution<double> pos(0.2 * size, 0.8 * size);
    std::uniform_real_distribution<double> sig(size / 8.0, size / 4.0);
    std::uniform_real_distribution<double> col(-1.0, 1.0);
    SlotPattern p{pos(rng), pos(rng), sig(rng), {col(rng), col(rng), col(rng)}};
    out.push_back(p);
  }
  return out;
}

std::uint8_t to_pixel(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::string image_file_name(std::uint64_t id) {
  std::ostringstream os;
  os << "images/" << std::setw(6) << std::setfill('0') << id << ".ppm";
  return os.str();
}

ojson generator_json(const GeneratorConfig& g) {
  return ojson{{"images_per_word", g.images_per_word}, {"image_size", g.image_size},
               {"crop_size", g.crop_size},             {"signal_strength", g.signal_strength},
               {"noise_std", g.noise_std},             {"seed", g.seed},
               {"train_fraction", g.train_fraction}};
}

GeneratorConfig generator_from_json(const ojson& j) {
  GeneratorConfig g;
  g.images_per_word = j.at("images_per_word").get<std::uint32_t>();
  g.image_size = j.at("image_size").get<std::uint32_t>();
  g.crop_size = j.at("crop_size").get<std::uint32_t>();
  g.signal_strength = j.at("signal_strength").get<double>();
  g.noise_std = j.at("noise_std").get<double>();
  g.seed = j.at("seed").get<std::uint64_t>();
  g.train_fraction = j.at("train_fraction").get<double>();
  return g;
}

ojson sample_json(const Sample& s) {
  return ojson{{"sample_id", s.sample_id},
               {"file", s.file},
               {"word", s.word},
               {"trait", std::string(1, trait_letter(s.trait))},
               {"polarity", polarity_name(s.polarity)},
               {"split", split_name(s.split)}};
}

Sample sample_from_json(const ojson& j) {
  Sample s;
  s.sample_id = j.at("sample_id").get<std::uint64_t>();
  s.file = j.at("file").get<std::string>();
  s.word = j.at("word").get<std::string>();
  auto t = parse_trait(j.at("trait").get<std::string>());
  auto p = parse_polarity(j.at("polarity").get<std::string>());
  const auto split = j.at("split").get<std::string>();
  if (!t || !p || (split != "train" && split != "test")) {
    throw IoError("manifest: bad trait/polarity/split for sample " + std::to_string(s.sample_id));
  }
  s.trait = *t;
  s.polarity = *p;
  s.split = split == "train" ? Split::Train : Split::Test;
  return s;
}

void assign_split(std::vector<Sample>& samples, double train_fraction, std::uint64_t seed) {
  // Group by (trait, polarity, word) in first-appearance order.
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::tuple<int, std::string>> keys;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto key = std::make_tuple(samples[i].trait_class().index(), samples[i].word);
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      groups.emplace_back();
      it = keys.end() - 1;
    }
    groups[static_cast<std::size_t>(it - keys.begin())].push_back(i);
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& members = groups[g];
    auto rng = derive_rng({seed, static_cast<std::uint64_t>(std::get<0>(keys[g]))},
                          std::get<1>(keys[g]));
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(
        std::floor(train_fraction * static_cast<double>(members.size()) + 1e-9));
    for (std::size_t k = 0; k < members.size(); ++k) {
      samples[members[k]].split = k < n_train ? Split::Train : Split::Test;
    }
  }
}

}  // namespace

Image render_corpus_image(const GeneratorConfig& config, const TraitOntology& ontology,
                          std::size_t entry_index, std::uint32_t index) {
  const TraitWord& entry = ontology.entries().at(entry_index);
  const int cls = entry.trait_class().index();
  const std::size_t size = config.image_size;
  const SlotPattern slot =
      slot_patterns(config.seed, size)[static_cast<std::size_t>(ontology.slot_of(entry_index))];

  auto rng = derive_rng({config.seed, static_cast<std::uint64_t>(cls), index}, entry.word);
  std::uniform_int_distribution<int> pick_texture(0, kNumTextures - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int confounder = pick_texture(rng);
  const double confounder_amp = PatternAmplitudes::kConfounder * unit(rng);
  const double signal_amp = PatternAmplitudes::kSignal * config.signal_strength;

  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      const double grey = 128.0 + signal_amp * texture_value(cls, fy, fx, size) +
                          confounder_amp * texture_value(confounder, fy, fx, size);
      const double d2 = (fy - slot.cy) * (fy - slot.cy) + (fx - slot.cx) * (fx - slot.cx);
      const double bump = PatternAmplitudes::kWord * std::exp(-d2 / (2 * slot.sigma * slot.sigma));
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        img.at(y, x, c) = to_pixel(grey + bump * slot.color[c] + config.noise_std * noise(rng));
      }
    }
  }
  return img;
}

CorpusManifest generate_corpus(const TraitOntology& ontology, const GeneratorConfig& config,
                               const fs::path& out_dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  CorpusManifest manifest;
  manifest.root = out_dir;
  manifest.generator = config;
  manifest.split_seed = derive_seed({config.seed}, "split");
  const std::size_t per_word = config.images_per_word;
  manifest.samples.resize(ontology.size() * per_word);
  for (std::size_t e = 0; e < ontology.size(); ++e) {
    const TraitWord& entry = ontology.entries()[e];
    for (std::size_t i = 0; i < per_word; ++i) {
      Sample& s = manifest.samples[e * per_word + i];
      s.sample_id = e * per_word + i;
      s.file = image_file_name(s.sample_id);
      s.word = entry.word;
      s.trait = entry.trait;
      s.polarity = entry.polarity;
    }
  }

  std::atomic<std::size_t> written{0};
  try {
    parallel_for(ontology.size(), [&](std::size_t e) {
      for (std::uint32_t i = 0; i < per_word; ++i) {
        const Sample& s = manifest.samples[e * per_word + i];
        write_ppm(out_dir / s.file, render_corpus_image(config, ontology, e, i));
        ++written;
      }
    });
  } catch (const IoError& err) {
    throw IoError(std::string(err.what()) + " (" + std::to_string(written.load()) + " of " +
                  std::to_string(manifest.samples.size()) + " images written to " +
                  out_dir.string() + "; manifest not written)");
  }

  assign_split(manifest.samples, config.train_fraction, manifest.split_seed);
  manifest.mean_image = compute_mean_image(manifest);
  write_manifest(manifest);
  return manifest;
}

CorpusManifest split_corpus(const CorpusManifest& manifest, double train_fraction,
                            std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  CorpusManifest out = manifest;
  out.generator.train_fraction = train_fraction;
  out.split_seed = seed;
  assign_split(out.samples, train_fraction, seed);
  out.mean_image = compute_mean_image(out);
  return out;
}

MeanImage compute_mean_image(std::span<const Image> images) {
  if (images.empty()) throw ConfigError("mean image needs at least one training image");
  const std::size_t w = images.front().width, h = images.front().height;
  std::vector<std::uint64_t> sums(w * h * Image::kChannels, 0);
  for (const Image& img : images) {
    if (img.width != w || img.height != h) throw ConfigError("mean image: inconsistent image sizes");
    for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += img.pixels[i];
  }
  MeanImage mean{w, h, std::vector<double>(sums.size())};
  const double n = static_cast<double>(images.size());
  for (std::size_t i = 0; i < sums.size(); ++i) mean.values[i] = static_cast<double>(sums[i]) / n;
  return mean;
}

MeanImage compute_mean_image(const CorpusManifest& manifest) {
  std::vector<Image> train;
  for (const Sample& s : manifest.samples) {
    if (s.split == Split::Train) train.push_back(read_ppm(manifest.image_path(s)));
  }
  if (train.empty()) throw ConfigError("mean image: the Train split is empty");
  return compute_mean_image(train);
}

void write_manifest(const CorpusManifest& manifest) {
  {
    std::ofstream os(manifest.root / "manifest.jsonl", std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + (manifest.root / "manifest.jsonl").string());
    for (const Sample& s : manifest.samples) os << sample_json(s).dump() << '\n';
    if (!os) throw IoError("failed writing manifest.jsonl");
  }
  ojson meta{{"format", "traitlens-corpus"},
             {"version", 1},
             {"generator", generator_json(manifest.generator)},
             {"split_seed", manifest.split_seed},
             {"sample_count", manifest.samples.size()},
             {"mean_image",
              {{"width", manifest.mean_image.width},
               {"height", manifest.mean_image.height},
               {"channels", Image::kChannels},
               {"values", manifest.mean_image.values}}}};
  std::ofstream os(manifest.root / "corpus.json", std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + (manifest.root / "corpus.json").string());
  os << meta.dump(2) << '\n';
  if (!os) throw IoError("failed writing corpus.json");
}

CorpusManifest load_corpus(const fs::path& dir) {
  CorpusManifest m;
  m.root = dir;
  std::ifstream meta_in(dir / "corpus.json");
  if (!meta_in) throw IoError("cannot open " + (dir / "corpus.json").string());
  try {
    const ojson meta = ojson::parse(meta_in);
    if (meta.at("format") != "traitlens-corpus" || meta.at("version") != 1) {
      throw IoError((dir / "corpus.json").string() + ": unsupported corpus format");
    }
    m.generator = generator_from_json(meta.at("generator"));
    m.split_seed = meta.at("split_seed").get<std::uint64_t>();
    const auto& mean = meta.at("mean_image");
    m.mean_image.width = mean.at("width").get<std::size_t>();
    m.mean_image.height = mean.at("height").get<std::size_t>();
    m.mean_image.values = mean.at("values").get<std::vector<double>>();
    if (m.mean_image.values.size() != m.mean_image.width * m.mean_image.height * Image::kChannels) {
      throw IoError("corpus.json: mean image size mismatch");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "corpus.json").string() + ": " + e.what());
  }

  std::ifstream lines(dir / "manifest.jsonl");
  if (!lines) throw IoError("cannot open " + (dir / "manifest.jsonl").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      m.samples.push_back(sample_from_json(ojson::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

std::vector<Image> load_images(const CorpusManifest& manifest) {
  std::vector<Image> out(manifest.samples.size());
  parallel_for(out.size(), [&](std::size_t i) {
    out[i] = read_ppm(manifest.image_path(manifest.samples[i]));
  });
  for (const Image& img : out) {
    if (img.width != manifest.generator.image_size || img.height != manifest.generator.image_size) {
      throw IoError("corpus image size differs from generator image_size");
    }
  }
  return out;
}

CropView random_view(std::size_t image_size, std::size_t crop_size, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<std::size_t> offset(0, image_size - crop_size);
  CropView v;
  v.mirror = coin(rng);
  v.top = offset(rng);
  v.left = offset(rng);
  return v;
}

CropView center_view(std::size_t image_size, std::size_t crop_size) {
  const std::size_t off = (image_size - crop_size) / 2;
  return {off, off, false};
}

template <typename Real>
void render_view(const Image& image, const MeanImage& mean, std::size_t crop, CropView view,
                 Real* out) {
  if (crop > image.width || crop > image.height || view.top + crop > image.height ||
      view.left + crop > image.width) {
    throw ConfigError("crop view exceeds the image");
  }
  if (mean.width != image.width || mean.height != image.height) {
    throw ConfigError("mean image size differs from the image");
  }
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    for (std::size_t i = 0; i < crop; ++i) {
      const std::size_t y = view.top + i;
      for (std::size_t j = 0; j < crop; ++j) {
        const std::size_t x = view.left + (view.mirror ? crop - 1 - j : j);
        out[(c * crop + i) * crop + j] = static_cast<Real>(image.at(y, x, c) - mean.at(y, x, c));
      }
    }
  }
}

template <typename Real>
nn::Tensor<Real> augment(const Image& image, const MeanImage& mean, std::size_t crop_size,
                         std::mt19937_64& rng) {
  if (crop_size > image.width) throw ConfigError("crop_size exceeds the image size");
  nn::Tensor<Real> out({Image::kChannels, crop_size, crop_size});
  render_view(image, mean, crop_size, random_view(image.width, crop_size, rng), out.ptr());
  return out;
}

template <typename Real>
nn::Tensor<Real> center_eval_view(const Image& image, const MeanImage& mean,
                                  std::size_t crop_size) {
  if (crop_size > image.width) throw ConfigError("crop_size exceeds the image size");
  nn::Tensor<Real> out({Image::kChannels, crop_size, crop_size});
  render_view(image, mean, crop_size, center_view(image.width, crop_size), out.ptr());
  return out;
}

void AuxiliaryConfig::validate() const {
  if (images_per_class < 2) throw ConfigError("auxiliary images_per_class must be at least 2");
  if (crop_size < 1 || crop_size > image_size) {
    throw ConfigError("auxiliary crop_size must lie in [1, image_size]");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("auxiliary noise_std must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("auxiliary train_fraction must lie in (0, 1)");
  }
}

Image render_auxiliary_image(const AuxiliaryConfig& config, int texture, std::uint32_t index) {
  const std::size_t size = config.image_size;
  auto rng = derive_rng({config.seed, static_cast<std::uint64_t>(texture), index}, "auxiliary");
  std::uniform_real_distribution<double> phase(0.0, 12.0);
  std::uniform_real_distribution<double> tint(0.3, 1.0);
  std::uniform_real_distribution<double> signed_unit(-1.0, 1.0);
  std::uniform_real_distribution<double> pos(0.2 * size, 0.8 * size);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double dy = phase(rng), dx = phase(rng);
  const double color[3] = {tint(rng), tint(rng), tint(rng)};
  const double by = pos(rng), bx = pos(rng), sigma = size / 6.0;
  const double bump_color[3] = {signed_unit(rng), signed_unit(rng), signed_unit(rng)};

  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      const double t = PatternAmplitudes::kSignal * texture_value(texture, fy + dy, fx + dx, size);
      const double d2 = (fy - by) * (fy - by) + (fx - bx) * (fx - bx);
      const double bump = PatternAmplitudes::kWord * std::exp(-d2 / (2 * sigma * sigma));
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        img.at(y, x, c) =
            to_pixel(128.0 + t * color[c] + bump * bump_color[c] + config.noise_std * noise(rng));
      }
    }
  }
  return img;
}

LabeledImages generate_auxiliary_corpus(const AuxiliaryConfig& config) {
  config.validate();
  LabeledImages out;
  const std::size_t per_class = config.images_per_class;
  const std::size_t n = per_class * kNumTextures;
  out.images.resize(n);
  out.labels.resize(n);
  out.splits.resize(n);
  parallel_for(kNumTextures, [&](std::size_t cls) {
    for (std::size_t i = 0; i < per_class; ++i) {
      out.images[cls * per_class + i] =
          render_auxiliary_image(config, static_cast<int>(cls), static_cast<std::uint32_t>(i));
      out.labels[cls * per_class + i] = static_cast<int>(cls);
    }
  });
  const auto n_train = static_cast<std::size_t>(
      std::floor(config.train_fraction * static_cast<double>(per_class) + 1e-9));
  std::vector<Image> train;
  for (std::size_t cls = 0; cls < kNumTextures; ++cls) {
    for (std::size_t i = 0; i < per_class; ++i) {
      // Images within a class are i.i.d., so the first n_train form a random split.
      out.splits[cls * per_class + i] = i < n_train ? Split::Train : Split::Test;
      if (i < n_train) train.push_back(out.images[cls * per_class + i]);
    }
  }
  out.mean_image = compute_mean_image(train);
  return out;
}

template void render_view(const Image&, const MeanImage&, std::size_t, CropView, float*);
template void render_view(const Image&, const MeanImage&, std::size_t, CropView, double*);
template nn::Tensor<float> augment(const Image&, const MeanImage&, std::size_t, std::mt19937_64&);
template nn::Tensor<double> augment(const Image&, const MeanImage&, std::size_t, std::mt19937_64&);
template nn::Tensor<float> center_eval_view(const Image&, const MeanImage&, std::size_t);
template nn::Tensor<double> center_eval_view(const Image&, const MeanImage&, std::size_t);

}  // namespace traitlens
