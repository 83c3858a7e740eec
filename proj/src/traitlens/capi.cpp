#include "traitlens/traitlens.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <mutex>
#include <optional>
#include <string>

#include "traitlens/corpus.hpp"
#include "traitlens/errors.hpp"
#include "traitlens/eval.hpp"
#include "traitlens/model.hpp"
#include "traitlens/train.hpp"
#include "traitlens/tsne.hpp"

using namespace traitlens;

struct tl_corpus {
  CorpusManifest manifest;
  mutable std::mutex mutex;
  mutable std::optional<std::vector<Image>> images;

  const std::vector<Image>& loaded() const {
    std::lock_guard lock(mutex);
    if (!images) images = load_images(manifest);
    return *images;
  }
};

struct tl_network {
  Network<float> net;
};

namespace {

constexpr std::size_t kTraitCount = kNumTraits;

thread_local std::string g_last_error;

class Incompatible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

tl_status fail(tl_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
tl_status guarded(F&& body) {
  try {
    body();
    return TL_OK;
  } catch (const ArchitectureMismatch& e) {
    return fail(TL_INCOMPATIBLE, e.what());
  } catch (const Incompatible& e) {
    return fail(TL_INCOMPATIBLE, e.what());
  } catch (const CheckpointError& e) {
    return fail(TL_IO_ERROR, e.what());
  } catch (const IoError& e) {
    return fail(TL_IO_ERROR, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(TL_IO_ERROR, e.what());
  } catch (const NumericalError& e) {
    return fail(TL_NUMERICAL_ERROR, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(TL_INVALID_ARGUMENT, e.what());
  } catch (const std::out_of_range& e) {
    return fail(TL_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(TL_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(TL_INTERNAL, e.what());
  } catch (...) {
    return fail(TL_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

ArchitectureSpec arch_spec(tl_arch arch) {
  switch (arch) {
    case TL_ARCH_MINI_ALEX: return ArchitectureSpec::mini_alex();
    case TL_ARCH_MINI_RESNET: return ArchitectureSpec::mini_resnet();
  }
  throw std::invalid_argument("unknown architecture");
}

Trait trait_arg(int t) {
  require(t >= 0 && t < kNumTraits, "trait must be 0..4");
  return kTraits[static_cast<std::size_t>(t)];
}

HeadConfig head_config(tl_heads heads, int trait, uint32_t aux_classes) {
  switch (heads) {
    case TL_HEADS_ALL_IN_ONE: return HeadConfig::all_in_one();
    case TL_HEADS_INDEPENDENT: return HeadConfig::independent(trait_arg(trait));
    case TL_HEADS_AUXILIARY:
      require(aux_classes >= 2, "auxiliary head needs at least 2 classes");
      return HeadConfig::auxiliary(aux_classes);
  }
  throw std::invalid_argument("unknown head mode");
}

GeneratorConfig generator_from(const tl_generator_config& c) {
  GeneratorConfig g;
  g.images_per_word = c.images_per_word;
  g.image_size = c.image_size;
  g.crop_size = c.crop_size;
  g.signal_strength = c.signal_strength;
  g.noise_std = c.noise_std;
  g.seed = c.seed;
  g.train_fraction = c.train_fraction;
  return g;
}

void generator_to(const GeneratorConfig& g, tl_generator_config* c) {
  c->images_per_word = g.images_per_word;
  c->image_size = g.image_size;
  c->crop_size = g.crop_size;
  c->signal_strength = g.signal_strength;
  c->noise_std = g.noise_std;
  c->seed = g.seed;
  c->train_fraction = g.train_fraction;
}

TrainConfig train_from(const tl_train_config& c) {
  TrainConfig t;
  t.base_lr = c.base_lr;
  t.momentum = c.momentum;
  t.weight_decay = c.weight_decay;
  t.dropout_p = c.dropout_p;
  t.batch_size = c.batch_size;
  t.epochs = c.epochs;
  t.mode = c.finetune ? TrainMode::Finetune : TrainMode::Scratch;
  t.seed = c.seed;
  t.evaluate_test = c.evaluate_test != 0;
  return t;
}

AuxiliaryConfig auxiliary_from(const tl_auxiliary_config& c) {
  AuxiliaryConfig a;
  a.images_per_class = c.images_per_class;
  a.image_size = c.image_size;
  a.crop_size = c.crop_size;
  a.noise_std = c.noise_std;
  a.seed = c.seed;
  a.train_fraction = c.train_fraction;
  return a;
}

void check_input_size(const tl_network* net, const tl_corpus* corpus) {
  const auto& spec = net->net.spec();
  const auto crop = corpus->manifest.generator.crop_size;
  if (spec.input_size != crop) {
    throw Incompatible("network " + spec.to_json() + " expects " + std::to_string(spec.input_size) +
                       "px inputs but the corpus crop size is " + std::to_string(crop) +
                       " (generator seed " + std::to_string(corpus->manifest.generator.seed) + ")");
  }
}

}  // namespace

extern "C" {

const char* tl_last_error(void) { return g_last_error.c_str(); }

const char* tl_status_name(tl_status s) {
  switch (s) {
    case TL_OK: return "ok";
    case TL_INVALID_ARGUMENT: return "invalid argument";
    case TL_IO_ERROR: return "I/O error";
    case TL_NUMERICAL_ERROR: return "numerical error";
    case TL_INCOMPATIBLE: return "incompatible";
    case TL_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* tl_version(void) { return "1.0.0"; }

void tl_generator_config_default(tl_generator_config* cfg) {
  if (cfg) generator_to(GeneratorConfig{}, cfg);
}

tl_status tl_generator_config_validate(const tl_generator_config* cfg) {
  return guarded([&] {
    require(cfg != nullptr, "null argument");
    generator_from(*cfg).validate();
  });
}

tl_status tl_corpus_generate(const tl_generator_config* cfg, const char* out_dir, tl_corpus** out) {
  return guarded([&] {
    require(cfg && out_dir && out, "null argument");
    auto c = std::make_unique<tl_corpus>();
    c->manifest = generate_corpus(builtin_ontology(), generator_from(*cfg), out_dir);
    *out = c.release();
  });
}

tl_status tl_corpus_open(const char* dir, tl_corpus** out) {
  return guarded([&] {
    require(dir && out, "null argument");
    auto c = std::make_unique<tl_corpus>();
    c->manifest = load_corpus(dir);
    *out = c.release();
  });
}

size_t tl_corpus_sample_count(const tl_corpus* corpus, tl_split split) {
  if (!corpus) return 0;
  if (split == TL_SPLIT_ALL) return corpus->manifest.samples.size();
  return corpus->manifest.count(split == TL_SPLIT_TRAIN ? Split::Train : Split::Test);
}

tl_status tl_corpus_generator(const tl_corpus* corpus, tl_generator_config* out) {
  return guarded([&] {
    require(corpus && out, "null argument");
    generator_to(corpus->manifest.generator, out);
  });
}

void tl_corpus_free(tl_corpus* corpus) { delete corpus; }

tl_status tl_network_build(tl_arch arch, tl_heads heads, int trait, uint32_t aux_classes, uint64_t seed,
                           tl_network** out) {
  return guarded([&] {
    require(out != nullptr, "null argument");
    *out = new tl_network{build_network<float>(arch_spec(arch), head_config(heads, trait, aux_classes), seed)};
  });
}

tl_status tl_network_load(const char* path, tl_network** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new tl_network{load_checkpoint<float>(path)};
  });
}

tl_status tl_network_load_backbone(const char* path, tl_arch arch, tl_heads heads, int trait, uint64_t head_seed,
                                   tl_network** out) {
  return guarded([&] {
    require(path && out, "null argument");
    require(heads != TL_HEADS_AUXILIARY, "finetuning targets trait heads");
    *out = new tl_network{load_backbone<float>(path, arch_spec(arch), head_config(heads, trait, 0), head_seed)};
  });
}

tl_status tl_network_save(tl_network* net, const char* path) {
  return guarded([&] {
    require(net && path, "null argument");
    save_checkpoint(net->net, path);
  });
}

tl_status tl_network_describe(const tl_network* net, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require(net != nullptr, "null argument");
    const std::string s = "{\"architecture\":" + net->net.spec().to_json() +
                          ",\"heads\":" + net->net.head_config().to_json() + "}";
    if (needed) *needed = s.size() + 1;
    if (buf && cap > 0) {
      const std::size_t n = std::min(cap - 1, s.size());
      std::memcpy(buf, s.data(), n);
      buf[n] = '\0';
    }
  });
}

tl_status tl_network_heads(const tl_network* net, tl_heads* heads, int* trait) {
  return guarded([&] {
    require(net != nullptr, "null argument");
    const auto& hc = net->net.head_config();
    if (heads) {
      *heads = hc.mode == HeadMode::AllInOne      ? TL_HEADS_ALL_IN_ONE
               : hc.mode == HeadMode::Independent ? TL_HEADS_INDEPENDENT
                                                  : TL_HEADS_AUXILIARY;
    }
    if (trait) *trait = hc.mode == HeadMode::Independent ? static_cast<int>(hc.trait) : -1;
  });
}

size_t tl_network_parameter_count(tl_network* net) { return net ? net->net.parameter_count() : 0; }

void tl_network_free(tl_network* net) { delete net; }

void tl_train_config_default(tl_arch arch, int finetune, tl_train_config* cfg) {
  if (!cfg) return;
  const auto t = TrainConfig::defaults(
      arch == TL_ARCH_MINI_ALEX ? ArchitectureKind::MiniAlex : ArchitectureKind::MiniResNet,
      finetune ? TrainMode::Finetune : TrainMode::Scratch);
  cfg->base_lr = t.base_lr;
  cfg->momentum = t.momentum;
  cfg->weight_decay = t.weight_decay;
  cfg->dropout_p = t.dropout_p;
  cfg->batch_size = static_cast<uint32_t>(t.batch_size);
  cfg->epochs = static_cast<uint32_t>(t.epochs);
  cfg->finetune = finetune ? 1 : 0;
  cfg->seed = t.seed;
  cfg->evaluate_test = t.evaluate_test ? 1 : 0;
}

tl_status tl_train_config_validate(const tl_train_config* cfg) {
  return guarded([&] {
    require(cfg != nullptr, "null argument");
    train_from(*cfg).validate();
  });
}

tl_status tl_train(tl_network* net, const tl_corpus* corpus, const tl_train_config* cfg, const char* history_dir,
                   tl_epoch_callback on_epoch, void* user) {
  return guarded([&] {
    require(net && corpus && cfg, "null argument");
    require(net->net.head_config().mode != HeadMode::Auxiliary, "auxiliary networks train via pretrain");
    check_input_size(net, corpus);
    const TrainConfig config = train_from(*cfg);
    config.validate();
    auto data = make_trait_set(corpus->manifest, corpus->loaded(), net->net.head_config());
    EpochCallback cb;
    if (on_epoch) {
      cb = [&](const EpochRecord& rec) {
        double acc[kTraitCount];
        for (std::size_t t = 0; t < kTraitCount; ++t) {
          acc[t] = t < rec.test_accuracy.size() ? rec.test_accuracy[t] : std::numeric_limits<double>::quiet_NaN();
        }
        return on_epoch(static_cast<uint32_t>(rec.epoch), rec.mean_loss, rec.test_accuracy.empty() ? nullptr : acc,
                        user) != 0;
      };
    }
    const auto history = train(net->net, data, config, cb);
    if (history_dir) write_history(history, history_dir);
  });
}

void tl_auxiliary_config_default(tl_auxiliary_config* cfg) {
  if (!cfg) return;
  const AuxiliaryConfig a;
  cfg->images_per_class = a.images_per_class;
  cfg->image_size = a.image_size;
  cfg->crop_size = a.crop_size;
  cfg->noise_std = a.noise_std;
  cfg->seed = a.seed;
  cfg->train_fraction = a.train_fraction;
}

tl_status tl_auxiliary_config_validate(const tl_auxiliary_config* cfg) {
  return guarded([&] {
    require(cfg != nullptr, "null argument");
    auxiliary_from(*cfg).validate();
  });
}

tl_status tl_pretrain_auxiliary(tl_arch arch, const tl_auxiliary_config* aux, const tl_train_config* cfg,
                                const char* checkpoint, const char* history_dir, double* test_accuracy) {
  return guarded([&] {
    require(aux && cfg && checkpoint, "null argument");
    const auto result = pretrain_auxiliary(arch_spec(arch), auxiliary_from(*aux), train_from(*cfg), checkpoint);
    if (history_dir) write_history(result.history, history_dir);
    if (test_accuracy) *test_accuracy = result.test_accuracy;
  });
}

tl_status tl_evaluate(tl_network* const* nets, size_t count, const tl_corpus* corpus, const char* out_dir,
                      const char* config_json, tl_metrics* out) {
  return guarded([&] {
    require(nets && corpus && (count == 1 || count == kTraitCount), "pass one all-in-one or five independent networks");
    std::array<bool, kTraitCount> covered{};
    for (size_t i = 0; i < count; ++i) {
      require(nets[i] != nullptr, "null network");
      check_input_size(nets[i], corpus);
      const auto& hc = nets[i]->net.head_config();
      if (count == 1 && hc.mode != HeadMode::AllInOne) {
        throw Incompatible("a single network must be all-in-one, got " + hc.to_json());
      }
      if (count == kTraitCount) {
        if (hc.mode != HeadMode::Independent) throw Incompatible("expected independent networks, got " + hc.to_json());
        auto& c = covered[static_cast<std::size_t>(hc.trait)];
        if (c) throw Incompatible(std::string("two networks for trait ") + trait_letter(hc.trait));
        c = true;
      }
    }
    const auto& images = corpus->loaded();
    std::vector<ScoredSample> scored;
    for (size_t i = 0; i < count; ++i) {
      auto part = score_samples(nets[i]->net, corpus->manifest, std::span<const Image>(images));
      scored.insert(scored.end(), part.begin(), part.end());
    }
    const auto report = evaluate(scored);
    if (out) {
      for (std::size_t t = 0; t < kTraitCount; ++t) {
        out->accuracy[t] = report.traits[t].accuracy;
        out->auc[t] = report.traits[t].roc.auc;
        out->ap[t] = report.traits[t].pr.ap;
        out->test_samples[t] = report.traits[t].test_samples;
      }
      out->average_accuracy = report.average_accuracy;
    }
    if (out_dir) {
      const std::filesystem::path dir(out_dir);
      std::filesystem::create_directories(dir);
      write_metrics_json(report, config_json ? config_json : "", dir / "metrics.json");
      write_curve_csvs(report, dir);
      write_curves_svg(report, dir / "curves.svg");
    }
  });
}

tl_status tl_max_activations(tl_network* net, const tl_corpus* corpus, int trait, int polarity, size_t k,
                             uint64_t* sample_ids, double* scores) {
  return guarded([&] {
    require(net && corpus, "null argument");
    require(polarity == 0 || polarity == 1, "polarity must be 0 (high) or 1 (low)");
    require(k == 0 || (sample_ids && scores), "output arrays required");
    check_input_size(net, corpus);
    const auto top = max_activating_samples(net->net, corpus->manifest, std::span<const Image>(corpus->loaded()),
                                            trait_arg(trait), kPolarities[static_cast<std::size_t>(polarity)], k);
    for (std::size_t i = 0; i < top.size(); ++i) {
      sample_ids[i] = top[i].sample_id;
      scores[i] = top[i].score;
    }
  });
}

tl_status tl_extract_features(tl_network* net, const tl_corpus* corpus, uint64_t sample_id, double* out,
                              size_t cap, size_t* dim) {
  return guarded([&] {
    require(net && corpus, "null argument");
    check_input_size(net, corpus);
    const auto& samples = corpus->manifest.samples;
    std::size_t idx = samples.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].sample_id == sample_id) idx = i;
    }
    require(idx < samples.size(), "unknown sample id");
    const Image* img = &corpus->loaded()[idx];
    const auto f = extract_features(net->net, std::span<const Image* const>(&img, 1), corpus->manifest.mean_image,
                                    corpus->manifest.generator.crop_size);
    if (dim) *dim = f[0].size();
    require(out == nullptr || cap >= f[0].size(), "feature buffer too small");
    if (out) std::copy(f[0].begin(), f[0].end(), out);
  });
}

void tl_tsne_config_default(tl_tsne_config* cfg) {
  if (!cfg) return;
  const TsneOptions o;
  cfg->perplexity = o.perplexity;
  cfg->iterations = static_cast<uint32_t>(o.iterations);
  cfg->learning_rate = o.learning_rate;
  cfg->seed = o.seed;
}

tl_status tl_tsne_project(tl_network* net, const tl_corpus* corpus, const int* traits, size_t trait_count,
                          size_t per_pole, const tl_tsne_config* cfg, const char* csv_path, const char* meta_path,
                          size_t* points, double* final_kl) {
  return guarded([&] {
    require(net && corpus && traits && cfg && trait_count > 0, "null argument");
    check_input_size(net, corpus);
    std::vector<Trait> ts;
    for (size_t i = 0; i < trait_count; ++i) ts.push_back(trait_arg(traits[i]));
    TsneOptions o;
    o.perplexity = cfg->perplexity;
    o.iterations = cfg->iterations;
    o.learning_rate = cfg->learning_rate;
    o.seed = cfg->seed;
    const auto proj = project_traits(net->net, corpus->manifest, std::span<const Image>(corpus->loaded()),
                                     std::span<const Trait>(ts), per_pole, o);
    if (csv_path && meta_path) write_embedding(proj, o, csv_path, meta_path);
    if (points) *points = proj.samples.size();
    if (final_kl) *final_kl = proj.embedding.kl_divergence;
  });
}

}  // extern "C"
