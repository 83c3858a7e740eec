// traitlens command-line driver. Talks to the library only through the C API.
#include <traitlens/traitlens.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitInternal = 4;

const char* const kTraitLetters[TL_NUM_TRAITS] = {"O", "C", "E", "A", "N"};

struct Failure {
  int code;
  std::string message;
};

int exit_code(tl_status s) {
  switch (s) {
    case TL_OK: return kExitOk;
    case TL_INVALID_ARGUMENT:
    case TL_INCOMPATIBLE: return kExitUsage;
    case TL_IO_ERROR: return kExitIo;
    case TL_NUMERICAL_ERROR: return kExitNumerical;
    default: return kExitInternal;
  }
}

void check(tl_status s, const std::string& what) {
  if (s != TL_OK) throw Failure{exit_code(s), what + ": " + tl_last_error()};
}

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{kExitUsage, msg}; }

int parse_trait(const std::string& s) {
  static const std::map<std::string, int> names = {
      {"o", 0}, {"openness", 0},          {"c", 1}, {"conscientiousness", 1}, {"e", 2},
      {"extraversion", 2},                {"a", 3}, {"agreeableness", 3},     {"n", 4},
      {"neuroticism", 4}};
  std::string lower;
  for (char ch : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  const auto it = names.find(lower);
  if (it == names.end()) usage_error("unknown trait '" + s + "' (expected O, C, E, A or N)");
  return it->second;
}

tl_arch parse_arch(const std::string& s) {
  if (s == "mini-alex") return TL_ARCH_MINI_ALEX;
  if (s == "mini-resnet") return TL_ARCH_MINI_RESNET;
  usage_error("unknown architecture '" + s + "' (expected mini-alex or mini-resnet)");
}

// Effective configuration of one run, echoed as a config file section that the
// --config option reads back, and as JSON inside metrics.json.
class ConfigEcho {
 public:
  using Value = std::variant<std::string, double, long long, bool, std::vector<std::string>>;

  explicit ConfigEcho(std::string section) : section_(std::move(section)) {}
  void set(const std::string& key, Value v) { entries_.emplace_back(key, std::move(v)); }

  std::string toml() const {
    std::string out = "# effective configuration; replay with: traitlens --config <this file> " + section_ + "\n";
    out += "[" + section_ + "]\n";
    for (const auto& [key, value] : entries_) out += key + " = " + render(value) + "\n";
    return out;
  }

  nlohmann::ordered_json json() const {
    nlohmann::ordered_json j;
    j["command"] = section_;
    for (const auto& [key, value] : entries_) {
      std::visit([&](const auto& v) { j[key] = v; }, value);
    }
    return j;
  }

  void write(const fs::path& dir) const {
    const fs::path path = dir / "config.toml";
    std::ofstream os(path, std::ios::binary);
    os << toml();
    if (!os) throw Failure{kExitIo, "cannot write " + path.string()};
  }

 private:
  static std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
      if (ch == '"' || ch == '\\') out.push_back('\\');
      out.push_back(ch);
    }
    return out + "\"";
  }

  static std::string render(const Value& v) {
    if (const auto* s = std::get_if<std::string>(&v)) return quote(*s);
    if (const auto* d = std::get_if<double>(&v)) {
      // shortest form that reads back to the same double
      char buf[40];
      for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, *d);
        if (std::strtod(buf, nullptr) == *d) break;
      }
      std::string out = buf;
      if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
      return out;
    }
    if (const auto* i = std::get_if<long long>(&v)) return std::to_string(*i);
    if (const auto* b = std::get_if<bool>(&v)) return *b ? "true" : "false";
    std::string out = "[";
    const auto& list = std::get<std::vector<std::string>>(v);
    for (std::size_t i = 0; i < list.size(); ++i) out += (i ? ", " : "") + quote(list[i]);
    return out + "]";
  }

  std::string section_;
  std::vector<std::pair<std::string, Value>> entries_;
};

void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{kExitIo, "cannot create " + dir.string() + ": " + ec.message()};
}

struct CorpusHandle {
  std::unique_ptr<tl_corpus, decltype(&tl_corpus_free)> ptr{nullptr, &tl_corpus_free};
  tl_corpus* get() const { return ptr.get(); }
};

struct NetHandle {
  std::unique_ptr<tl_network, decltype(&tl_network_free)> ptr{nullptr, &tl_network_free};
  tl_network* get() const { return ptr.get(); }
};

CorpusHandle open_corpus(const std::string& dir) {
  tl_corpus* c = nullptr;
  check(tl_corpus_open(dir.c_str(), &c), "opening corpus " + dir);
  CorpusHandle h;
  h.ptr.reset(c);
  return h;
}

NetHandle open_model(const std::string& path) {
  tl_network* n = nullptr;
  check(tl_network_load(path.c_str(), &n), "loading " + path);
  NetHandle h;
  h.ptr.reset(n);
  return h;
}

// ---- gen-corpus ----

struct GenArgs {
  std::string out;
  tl_generator_config cfg{};
};

void add_gen(CLI::App& app, GenArgs& a) {
  tl_generator_config_default(&a.cfg);
  auto* sub = app.add_subcommand("gen-corpus", "Generate a planted-signal image corpus");
  sub->add_option("--out", a.out, "Output directory");
  sub->add_option("--images-per-word", a.cfg.images_per_word, "Images per (trait, polarity, word)")->capture_default_str();
  sub->add_option("--signal", a.cfg.signal_strength, "Class texture strength (0 = no signal)")->capture_default_str();
  sub->add_option("--noise", a.cfg.noise_std, "Gaussian pixel noise std")->capture_default_str();
  sub->add_option("--seed", a.cfg.seed, "Generator seed")->capture_default_str();
  sub->add_option("--image-size", a.cfg.image_size, "Stored image side")->capture_default_str();
  sub->add_option("--crop-size", a.cfg.crop_size, "Network input side")->capture_default_str();
  sub->add_option("--train-fraction", a.cfg.train_fraction, "Train share per (class, word)")->capture_default_str();
}

int run_gen(const GenArgs& a) {
  if (a.out.empty()) usage_error("gen-corpus: --out is required");
  check(tl_generator_config_validate(&a.cfg), "invalid generator settings");
  ConfigEcho echo("gen-corpus");
  echo.set("out", a.out);
  echo.set("images-per-word", static_cast<long long>(a.cfg.images_per_word));
  echo.set("signal", a.cfg.signal_strength);
  echo.set("noise", a.cfg.noise_std);
  echo.set("seed", static_cast<long long>(a.cfg.seed));
  echo.set("image-size", static_cast<long long>(a.cfg.image_size));
  echo.set("crop-size", static_cast<long long>(a.cfg.crop_size));
  echo.set("train-fraction", a.cfg.train_fraction);

  tl_corpus* c = nullptr;
  check(tl_corpus_generate(&a.cfg, a.out.c_str(), &c), "generating corpus");
  CorpusHandle h;
  h.ptr.reset(c);
  echo.write(a.out);
  std::printf("corpus %s: %zu images (%zu train, %zu test)\n", a.out.c_str(),
              tl_corpus_sample_count(c, TL_SPLIT_ALL), tl_corpus_sample_count(c, TL_SPLIT_TRAIN),
              tl_corpus_sample_count(c, TL_SPLIT_TEST));
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string corpus, out = ".", arch = "mini-resnet", heads = "all-in-one", mode = "scratch", pretrained, trait;
  std::optional<double> lr, momentum, weight_decay, dropout;
  std::optional<uint32_t> batch_size, epochs;
  uint64_t seed = 1;
  bool no_test_eval = false;
};

void add_hyper(CLI::App* sub, std::optional<double>& lr, std::optional<double>& momentum,
               std::optional<double>& wd, std::optional<double>& dropout, std::optional<uint32_t>& batch,
               std::optional<uint32_t>& epochs) {
  sub->add_option("--lr", lr, "Base learning rate (0.01 scratch, 0.001 finetune)");
  sub->add_option("--momentum", momentum, "SGD momentum (0.9)");
  sub->add_option("--weight-decay", wd, "L2 weight decay (0.0005)");
  sub->add_option("--dropout", dropout, "Dropout probability (0.5)");
  sub->add_option("--batch-size", batch, "Batch size (128 mini-alex, 32 mini-resnet)");
  sub->add_option("--epochs", epochs, "Epochs (30 scratch, 10 finetune)");
}

tl_train_config effective_train(tl_arch arch, bool finetune, const std::optional<double>& lr,
                                const std::optional<double>& momentum, const std::optional<double>& wd,
                                const std::optional<double>& dropout, const std::optional<uint32_t>& batch,
                                const std::optional<uint32_t>& epochs, uint64_t seed, bool test_eval) {
  tl_train_config cfg;
  tl_train_config_default(arch, finetune ? 1 : 0, &cfg);
  if (lr) cfg.base_lr = *lr;
  if (momentum) cfg.momentum = *momentum;
  if (wd) cfg.weight_decay = *wd;
  if (dropout) cfg.dropout_p = *dropout;
  if (batch) cfg.batch_size = *batch;
  if (epochs) cfg.epochs = *epochs;
  cfg.seed = seed;
  cfg.evaluate_test = test_eval ? 1 : 0;
  check(tl_train_config_validate(&cfg), "invalid training settings");
  return cfg;
}

void echo_train(ConfigEcho& echo, const tl_train_config& cfg) {
  echo.set("lr", cfg.base_lr);
  echo.set("momentum", cfg.momentum);
  echo.set("weight-decay", cfg.weight_decay);
  echo.set("dropout", cfg.dropout_p);
  echo.set("batch-size", static_cast<long long>(cfg.batch_size));
  echo.set("epochs", static_cast<long long>(cfg.epochs));
  echo.set("seed", static_cast<long long>(cfg.seed));
  echo.set("no-test-eval", cfg.evaluate_test == 0);
}

void add_train(CLI::App& app, TrainArgs& a) {
  auto* sub = app.add_subcommand("train", "Train trait classifiers on a corpus");
  sub->add_option("--corpus", a.corpus, "Corpus directory");
  sub->add_option("--out", a.out, "Output directory")->capture_default_str();
  sub->add_option("--arch", a.arch, "mini-alex or mini-resnet")->capture_default_str();
  sub->add_option("--heads", a.heads, "all-in-one or independent")->capture_default_str();
  sub->add_option("--mode", a.mode, "scratch or finetune")->capture_default_str();
  sub->add_option("--pretrained", a.pretrained, "Checkpoint whose backbone finetuning starts from");
  sub->add_option("--trait", a.trait, "Trait for an independent model (all five when omitted)");
  add_hyper(sub, a.lr, a.momentum, a.weight_decay, a.dropout, a.batch_size, a.epochs);
  sub->add_option("--seed", a.seed, "Initialization and data-order seed")->capture_default_str();
  sub->add_flag("--no-test-eval", a.no_test_eval, "Skip per-epoch test accuracy");
}

int on_epoch(uint32_t epoch, double loss, const double* acc, void*) {
  std::printf("epoch %u  loss %.4f", epoch, loss);
  if (acc) {
    std::printf("  test");
    for (int t = 0; t < TL_NUM_TRAITS; ++t) {
      if (!std::isnan(acc[t])) std::printf(" %s=%.3f", kTraitLetters[t], acc[t]);
    }
  }
  std::printf("\n");
  std::fflush(stdout);
  return 1;
}

int run_train(const TrainArgs& a) {
  if (a.corpus.empty()) usage_error("train: --corpus is required");
  const tl_arch arch = parse_arch(a.arch);
  if (a.heads != "all-in-one" && a.heads != "independent") usage_error("--heads must be all-in-one or independent");
  if (a.mode != "scratch" && a.mode != "finetune") usage_error("--mode must be scratch or finetune");
  const bool finetune = a.mode == "finetune";
  if (finetune && a.pretrained.empty()) usage_error("--mode finetune requires --pretrained");
  if (!finetune && !a.pretrained.empty()) usage_error("--pretrained only applies to --mode finetune");
  const bool independent = a.heads == "independent";
  if (!independent && !a.trait.empty()) usage_error("--trait only applies to --heads independent");
  const tl_train_config cfg = effective_train(arch, finetune, a.lr, a.momentum, a.weight_decay, a.dropout,
                                              a.batch_size, a.epochs, a.seed, !a.no_test_eval);
  std::vector<int> traits;
  if (independent) {
    if (a.trait.empty()) {
      for (int t = 0; t < TL_NUM_TRAITS; ++t) traits.push_back(t);
    } else {
      traits.push_back(parse_trait(a.trait));
    }
  } else {
    traits.push_back(-1);
  }

  ConfigEcho echo("train");
  echo.set("corpus", a.corpus);
  echo.set("out", a.out);
  echo.set("arch", a.arch);
  echo.set("heads", a.heads);
  echo.set("mode", a.mode);
  if (finetune) echo.set("pretrained", a.pretrained);
  if (!a.trait.empty()) echo.set("trait", std::string(kTraitLetters[traits[0]]));
  echo_train(echo, cfg);

  const CorpusHandle corpus = open_corpus(a.corpus);
  const tl_heads heads = independent ? TL_HEADS_INDEPENDENT : TL_HEADS_ALL_IN_ONE;
  std::vector<NetHandle> nets;
  for (int t : traits) {
    tl_network* n = nullptr;
    if (finetune) {
      check(tl_network_load_backbone(a.pretrained.c_str(), arch, heads, t, a.seed, &n),
            "loading pretrained backbone " + a.pretrained);
    } else {
      check(tl_network_build(arch, heads, t, 0, a.seed, &n), "building network");
    }
    NetHandle h;
    h.ptr.reset(n);
    nets.push_back(std::move(h));
  }

  prepare_out(a.out);
  echo.write(a.out);
  const bool per_trait_dirs = traits.size() > 1;
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const fs::path dir = per_trait_dirs ? fs::path(a.out) / kTraitLetters[traits[i]] : fs::path(a.out);
    prepare_out(dir);
    if (traits[i] >= 0) std::printf("training independent model for trait %s\n", kTraitLetters[traits[i]]);
    check(tl_train(nets[i].get(), corpus.get(), &cfg, dir.string().c_str(), on_epoch, nullptr), "training");
    const fs::path ckpt = dir / "model.ckpt";
    check(tl_network_save(nets[i].get(), ckpt.string().c_str()), "saving checkpoint");
    std::printf("wrote %s\n", ckpt.string().c_str());
  }
  return kExitOk;
}

// ---- pretrain ----

struct PretrainArgs {
  std::string out = ".", arch = "mini-resnet";
  tl_auxiliary_config aux{};
  std::optional<double> lr, momentum, weight_decay, dropout;
  std::optional<uint32_t> batch_size, epochs;
  uint64_t seed = 1;
};

void add_pretrain(CLI::App& app, PretrainArgs& a) {
  tl_auxiliary_config_default(&a.aux);
  auto* sub = app.add_subcommand("pretrain", "Train a backbone on the auxiliary texture task");
  sub->add_option("--out", a.out, "Output directory")->capture_default_str();
  sub->add_option("--arch", a.arch, "mini-alex or mini-resnet")->capture_default_str();
  sub->add_option("--images-per-class", a.aux.images_per_class, "Auxiliary images per texture")->capture_default_str();
  sub->add_option("--image-size", a.aux.image_size, "Stored image side")->capture_default_str();
  sub->add_option("--crop-size", a.aux.crop_size, "Network input side")->capture_default_str();
  sub->add_option("--noise", a.aux.noise_std, "Pixel noise std")->capture_default_str();
  sub->add_option("--aux-seed", a.aux.seed, "Auxiliary generator seed")->capture_default_str();
  sub->add_option("--train-fraction", a.aux.train_fraction, "Train share per texture")->capture_default_str();
  add_hyper(sub, a.lr, a.momentum, a.weight_decay, a.dropout, a.batch_size, a.epochs);
  sub->add_option("--seed", a.seed, "Initialization and data-order seed")->capture_default_str();
}

int run_pretrain(const PretrainArgs& a) {
  const tl_arch arch = parse_arch(a.arch);
  check(tl_auxiliary_config_validate(&a.aux), "invalid auxiliary settings");
  const tl_train_config cfg = effective_train(arch, false, a.lr, a.momentum, a.weight_decay, a.dropout,
                                              a.batch_size, a.epochs, a.seed, true);
  ConfigEcho echo("pretrain");
  echo.set("out", a.out);
  echo.set("arch", a.arch);
  echo.set("images-per-class", static_cast<long long>(a.aux.images_per_class));
  echo.set("image-size", static_cast<long long>(a.aux.image_size));
  echo.set("crop-size", static_cast<long long>(a.aux.crop_size));
  echo.set("noise", a.aux.noise_std);
  echo.set("aux-seed", static_cast<long long>(a.aux.seed));
  echo.set("train-fraction", a.aux.train_fraction);
  echo_train(echo, cfg);
  echo.set("no-test-eval", false);

  prepare_out(a.out);
  echo.write(a.out);
  const fs::path ckpt = fs::path(a.out) / "pretrained.ckpt";
  double acc = 0.0;
  check(tl_pretrain_auxiliary(arch, &a.aux, &cfg, ckpt.string().c_str(), a.out.c_str(), &acc), "pretraining");
  std::printf("auxiliary test accuracy %.4f\nwrote %s\n", acc, ckpt.string().c_str());
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  std::vector<std::string> models;
  std::string corpus, out = "results";
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* sub = app.add_subcommand("eval", "Per-trait accuracy, ROC/AUC and PR/AP on the test split");
  sub->add_option("--model", a.models, "Checkpoint: one all-in-one, or five independent (repeat the flag)");
  sub->add_option("--corpus", a.corpus, "Corpus directory");
  sub->add_option("--out", a.out, "Output directory")->capture_default_str();
}

int run_eval(const EvalArgs& a) {
  if (a.models.empty()) usage_error("eval: --model is required");
  if (a.corpus.empty()) usage_error("eval: --corpus is required");
  ConfigEcho echo("eval");
  echo.set("model", a.models);
  echo.set("corpus", a.corpus);
  echo.set("out", a.out);

  const CorpusHandle corpus = open_corpus(a.corpus);
  std::vector<NetHandle> nets;
  std::vector<tl_network*> raw;
  for (const auto& m : a.models) {
    nets.push_back(open_model(m));
    raw.push_back(nets.back().get());
  }
  prepare_out(a.out);
  echo.write(a.out);
  tl_metrics metrics;
  const std::string config_json = echo.json().dump();
  check(tl_evaluate(raw.data(), raw.size(), corpus.get(), a.out.c_str(), config_json.c_str(), &metrics),
        "evaluating");
  std::printf("trait  test  accuracy  auc     ap\n");
  for (int t = 0; t < TL_NUM_TRAITS; ++t) {
    std::printf("%-5s  %4zu  %7.2f%%  %.4f  %.4f\n", kTraitLetters[t], metrics.test_samples[t],
                100.0 * metrics.accuracy[t], metrics.auc[t], metrics.ap[t]);
  }
  std::printf("average accuracy %.2f%%\n", 100.0 * metrics.average_accuracy);
  return kExitOk;
}

// ---- activations ----

struct ActivationArgs {
  std::string model, corpus, trait, pole = "high", out;
  std::size_t top = 50;
};

void add_activations(CLI::App& app, ActivationArgs& a) {
  auto* sub = app.add_subcommand("activations", "Test images that most excite one trait pole");
  sub->add_option("--model", a.model, "Checkpoint");
  sub->add_option("--corpus", a.corpus, "Corpus directory");
  sub->add_option("--trait", a.trait, "O, C, E, A or N");
  sub->add_option("--pole", a.pole, "high or low")->capture_default_str();
  sub->add_option("--top", a.top, "Number of images")->capture_default_str();
  sub->add_option("--out", a.out, "Directory for activations CSV and config echo (stdout only when omitted)");
}

int run_activations(const ActivationArgs& a) {
  if (a.model.empty() || a.corpus.empty() || a.trait.empty()) {
    usage_error("activations: --model, --corpus and --trait are required");
  }
  const int trait = parse_trait(a.trait);
  if (a.pole != "high" && a.pole != "low") usage_error("--pole must be high or low");
  if (a.top == 0) usage_error("--top must be positive");
  const int polarity = a.pole == "high" ? 0 : 1;
  const CorpusHandle corpus = open_corpus(a.corpus);
  const NetHandle net = open_model(a.model);
  const std::size_t k = std::min(a.top, tl_corpus_sample_count(corpus.get(), TL_SPLIT_TEST));
  std::vector<uint64_t> ids(k);
  std::vector<double> scores(k);
  check(tl_max_activations(net.get(), corpus.get(), trait, polarity, k, ids.data(), scores.data()),
        "scoring");

  std::string table = "rank,sample_id,score\n";
  for (std::size_t i = 0; i < k; ++i) {
    char line[96];
    std::snprintf(line, sizeof line, "%zu,%llu,%.17g\n", i + 1, static_cast<unsigned long long>(ids[i]),
                  scores[i]);
    table += line;
  }
  std::fputs(table.c_str(), stdout);
  if (!a.out.empty()) {
    ConfigEcho echo("activations");
    echo.set("model", a.model);
    echo.set("corpus", a.corpus);
    echo.set("trait", std::string(kTraitLetters[trait]));
    echo.set("pole", a.pole);
    echo.set("top", static_cast<long long>(a.top));
    echo.set("out", a.out);
    prepare_out(a.out);
    echo.write(a.out);
    const fs::path path = fs::path(a.out) / ("activations_" + std::string(kTraitLetters[trait]) + "_" + a.pole + ".csv");
    std::ofstream os(path, std::ios::binary);
    os << table;
    if (!os) throw Failure{kExitIo, "cannot write " + path.string()};
  }
  return kExitOk;
}

// ---- tsne ----

struct TsneArgs {
  std::string model, corpus, out = "tsne";
  std::vector<std::string> traits;
  std::size_t per_pole = 50;
  tl_tsne_config cfg{};
};

void add_tsne(CLI::App& app, TsneArgs& a) {
  tl_tsne_config_default(&a.cfg);
  auto* sub = app.add_subcommand("tsne", "2-D t-SNE of penultimate features of top-activating images");
  sub->add_option("--model", a.model, "Checkpoint");
  sub->add_option("--corpus", a.corpus, "Corpus directory");
  sub->add_option("--out", a.out, "Output directory")->capture_default_str();
  sub->add_option("--traits", a.traits, "Traits to project (default all five)");
  sub->add_option("--per-pole", a.per_pole, "Images per (trait, pole)")->capture_default_str();
  sub->add_option("--perplexity", a.cfg.perplexity, "Effective neighbour count")->capture_default_str();
  sub->add_option("--iterations", a.cfg.iterations, "Gradient steps")->capture_default_str();
  sub->add_option("--learning-rate", a.cfg.learning_rate, "Step size")->capture_default_str();
  sub->add_option("--seed", a.cfg.seed, "Initialization seed")->capture_default_str();
}

int run_tsne(const TsneArgs& a) {
  if (a.model.empty() || a.corpus.empty()) usage_error("tsne: --model and --corpus are required");
  if (a.per_pole == 0) usage_error("--per-pole must be positive");
  if (!(a.cfg.perplexity > 0.0) || !(a.cfg.learning_rate > 0.0)) {
    usage_error("--perplexity and --learning-rate must be positive");
  }
  std::vector<int> traits;
  std::vector<std::string> names;
  if (a.traits.empty()) {
    for (int t = 0; t < TL_NUM_TRAITS; ++t) traits.push_back(t);
  } else {
    for (const auto& s : a.traits) traits.push_back(parse_trait(s));
  }
  for (int t : traits) names.emplace_back(kTraitLetters[t]);

  ConfigEcho echo("tsne");
  echo.set("model", a.model);
  echo.set("corpus", a.corpus);
  echo.set("out", a.out);
  echo.set("traits", names);
  echo.set("per-pole", static_cast<long long>(a.per_pole));
  echo.set("perplexity", a.cfg.perplexity);
  echo.set("iterations", static_cast<long long>(a.cfg.iterations));
  echo.set("learning-rate", a.cfg.learning_rate);
  echo.set("seed", static_cast<long long>(a.cfg.seed));

  const CorpusHandle corpus = open_corpus(a.corpus);
  const NetHandle net = open_model(a.model);
  prepare_out(a.out);
  echo.write(a.out);
  const fs::path csv = fs::path(a.out) / "embedding.csv";
  const fs::path meta = fs::path(a.out) / "embedding.json";
  std::size_t points = 0;
  double kl = 0.0;
  check(tl_tsne_project(net.get(), corpus.get(), traits.data(), traits.size(), a.per_pole, &a.cfg,
                        csv.string().c_str(), meta.string().c_str(), &points, &kl),
        "projecting");
  std::printf("embedded %zu points, final KL %.6f\nwrote %s\n", points, kl, csv.string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"traitlens: Big Five trait classifiers on synthetic tagged images"};
  app.set_config("--config", "", "Read options from a config file (sections per subcommand); flags win");
  app.set_version_flag("--version", tl_version());
  app.require_subcommand(1);

  GenArgs gen;
  TrainArgs train;
  PretrainArgs pretrain;
  EvalArgs eval;
  ActivationArgs act;
  TsneArgs tsne;
  add_gen(app, gen);
  add_train(app, train);
  add_pretrain(app, pretrain);
  add_eval(app, eval);
  add_activations(app, act);
  add_tsne(app, tsne);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-corpus") return run_gen(gen);
    if (name == "train") return run_train(train);
    if (name == "pretrain") return run_pretrain(pretrain);
    if (name == "eval") return run_eval(eval);
    if (name == "activations") return run_activations(act);
    return run_tsne(tsne);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    if (f.code == kExitUsage) std::cerr << "\n" << app.get_subcommands().front()->help();
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
}
