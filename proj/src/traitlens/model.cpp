#include "traitlens/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "traitlens/image.hpp"
#include "traitlens/random.hpp"

namespace traitlens {

using nlohmann::ordered_json;

const char* arch_name(ArchitectureKind k) {
  return k == ArchitectureKind::MiniAlex ? "mini-alex" : "mini-resnet";
}

std::optional<ArchitectureKind> parse_arch(std::string_view s) {
  if (s == "mini-alex") return ArchitectureKind::MiniAlex;
  if (s == "mini-resnet") return ArchitectureKind::MiniResNet;
  return std::nullopt;
}

ArchitectureSpec ArchitectureSpec::mini_alex(std::size_t input_size) {
  ArchitectureSpec s;
  s.kind = ArchitectureKind::MiniAlex;
  s.input_size = input_size;
  s.conv_channels = {16, 32, 32, 64, 64};
  s.fc_units = {128, 128};
  return s;
}

ArchitectureSpec ArchitectureSpec::mini_resnet(std::size_t input_size) {
  ArchitectureSpec s;
  s.kind = ArchitectureKind::MiniResNet;
  s.input_size = input_size;
  s.stem_channels = 16;
  s.stage_channels = {16, 32, 64};
  s.blocks_per_stage = 2;
  return s;
}

std::size_t ArchitectureSpec::feature_dim() const {
  if (kind == ArchitectureKind::MiniAlex) return fc_units.empty() ? 0 : fc_units.back();
  return stage_channels.empty() ? 0 : stage_channels.back();
}

void ArchitectureSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("architecture: " + m); };
  auto positive = [](const std::vector<std::size_t>& v) {
    return std::all_of(v.begin(), v.end(), [](std::size_t x) { return x > 0; });
  };
  if (input_size == 0) fail("input_size must be positive");
  if (kind == ArchitectureKind::MiniAlex) {
    if (conv_channels.size() != 5 || !positive(conv_channels)) fail("mini-alex needs 5 positive conv widths");
    if (fc_units.size() != 2 || !positive(fc_units)) fail("mini-alex needs 2 positive FC widths");
    if (input_size % 8 != 0) fail("mini-alex input_size must be divisible by 8");
    if (!stage_channels.empty() || stem_channels != 0 || blocks_per_stage != 0)
      fail("mini-alex does not take residual fields");
  } else {
    if (stem_channels == 0) fail("mini-resnet needs a stem width");
    if (stage_channels.empty() || !positive(stage_channels)) fail("mini-resnet needs positive stage widths");
    if (blocks_per_stage == 0) fail("mini-resnet needs at least one block per stage");
    std::size_t size = input_size;
    for (std::size_t i = 1; i < stage_channels.size(); ++i) size = (size - 1) / 2 + 1;
    if (size == 0) fail("input too small for the stage count");
    if (!conv_channels.empty() || !fc_units.empty()) fail("mini-resnet does not take mini-alex fields");
  }
}

namespace {

ordered_json arch_json(const ArchitectureSpec& s) {
  ordered_json j;
  j["kind"] = arch_name(s.kind);
  j["input_size"] = s.input_size;
  if (s.kind == ArchitectureKind::MiniAlex) {
    j["conv_channels"] = s.conv_channels;
    j["fc_units"] = s.fc_units;
  } else {
    j["stem_channels"] = s.stem_channels;
    j["stage_channels"] = s.stage_channels;
    j["blocks_per_stage"] = s.blocks_per_stage;
  }
  return j;
}

ArchitectureSpec arch_from(const ordered_json& j) {
  auto kind = parse_arch(j.at("kind").get<std::string>());
  if (!kind) throw std::invalid_argument("unknown architecture kind " + j.at("kind").dump());
  ArchitectureSpec s;
  s.kind = *kind;
  s.input_size = j.at("input_size").get<std::size_t>();
  if (s.kind == ArchitectureKind::MiniAlex) {
    s.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    s.fc_units = j.at("fc_units").get<std::vector<std::size_t>>();
  } else {
    s.stem_channels = j.at("stem_channels").get<std::size_t>();
    s.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
    s.blocks_per_stage = j.at("blocks_per_stage").get<std::size_t>();
  }
  s.validate();
  return s;
}

const char* head_mode_name(HeadMode m) {
  switch (m) {
    case HeadMode::Independent: return "independent";
    case HeadMode::AllInOne: return "all-in-one";
    case HeadMode::Auxiliary: return "auxiliary";
  }
  return "?";
}

ordered_json heads_json(const HeadConfig& h) {
  ordered_json j;
  j["mode"] = head_mode_name(h.mode);
  if (h.mode == HeadMode::Independent) j["trait"] = std::string(1, trait_letter(h.trait));
  if (h.mode == HeadMode::Auxiliary) j["classes"] = h.aux_classes;
  return j;
}

HeadConfig heads_from(const ordered_json& j) {
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "all-in-one") return HeadConfig::all_in_one();
  if (mode == "independent") {
    auto t = parse_trait(j.at("trait").get<std::string>());
    if (!t) throw std::invalid_argument("bad trait in head descriptor");
    return HeadConfig::independent(*t);
  }
  if (mode == "auxiliary") {
    auto n = j.at("classes").get<std::size_t>();
    if (n < 2) throw std::invalid_argument("auxiliary head needs >= 2 classes");
    return HeadConfig::auxiliary(n);
  }
  throw std::invalid_argument("unknown head mode " + mode);
}

}  // namespace

std::string ArchitectureSpec::to_json() const { return arch_json(*this).dump(); }

ArchitectureSpec ArchitectureSpec::from_json(const std::string& json) {
  try {
    return arch_from(ordered_json::parse(json));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("architecture descriptor: ") + e.what());
  }
}

std::optional<std::size_t> HeadConfig::head_for(Trait t) const {
  switch (mode) {
    case HeadMode::AllInOne: return static_cast<std::size_t>(t);
    case HeadMode::Independent:
      if (t == trait) return 0;
      return std::nullopt;
    case HeadMode::Auxiliary: return std::nullopt;
  }
  return std::nullopt;
}

std::string HeadConfig::head_name(std::size_t head) const {
  switch (mode) {
    case HeadMode::AllInOne: return std::string(1, trait_letter(kTraits.at(head)));
    case HeadMode::Independent: return std::string(1, trait_letter(trait));
    case HeadMode::Auxiliary: return "aux";
  }
  return "?";
}

std::string HeadConfig::to_json() const { return heads_json(*this).dump(); }

HeadConfig HeadConfig::from_json(const std::string& json) {
  try {
    return heads_from(ordered_json::parse(json));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("head descriptor: ") + e.what());
  }
}

// ---- network ----------------------------------------------------------------

namespace {

constexpr double kAlexDropout = 0.5;

template <typename Real>
void build_alex(nn::Sequential<Real>& net, const ArchitectureSpec& s) {
  const auto& ch = s.conv_channels;
  nn::ConvGeometry same{1, 1};
  std::size_t in = 3;
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const std::string tag = "conv" + std::to_string(i + 1);
    net.template emplace<nn::Conv2D<Real>>(tag, in, ch[i], 3, same, true);
    net.template emplace<nn::ReLU<Real>>(tag + ".relu");
    if (i == 0 || i == 1 || i == 4) net.template emplace<nn::MaxPool<Real>>(tag + ".pool", nn::PoolGeometry{});
    in = ch[i];
  }
  const std::size_t side = s.input_size / 8;
  std::size_t features = in * side * side;
  for (std::size_t i = 0; i < s.fc_units.size(); ++i) {
    const std::string tag = "fc" + std::to_string(i + 1);
    net.template emplace<nn::FullyConnected<Real>>(tag, features, s.fc_units[i]);
    net.template emplace<nn::ReLU<Real>>(tag + ".relu");
    net.template emplace<nn::Dropout<Real>>(tag + ".dropout", kAlexDropout);
    features = s.fc_units[i];
  }
}

template <typename Real>
void build_resnet(nn::Sequential<Real>& net, const ArchitectureSpec& s) {
  net.template emplace<nn::Conv2D<Real>>("stem.conv", 3, s.stem_channels, 3, nn::ConvGeometry{1, 1}, false);
  net.template emplace<nn::BatchNorm<Real>>("stem.bn", s.stem_channels);
  net.template emplace<nn::ReLU<Real>>("stem.relu");
  std::size_t in = s.stem_channels;
  for (std::size_t st = 0; st < s.stage_channels.size(); ++st) {
    for (std::size_t b = 0; b < s.blocks_per_stage; ++b) {
      const std::size_t stride = (st > 0 && b == 0) ? 2 : 1;
      const std::string tag = "stage" + std::to_string(st + 1) + ".block" + std::to_string(b + 1);
      net.template emplace<nn::ResidualBlock<Real>>(tag, in, s.stage_channels[st], stride);
      in = s.stage_channels[st];
    }
  }
  net.template emplace<nn::GlobalAvgPool<Real>>("gap");
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// He normal for weights (fan-in = all dims but the first), zero biases and
// betas, unit gammas.
template <typename Real>
void init_parameter(nn::Parameter<Real>& p, std::mt19937_64& rng) {
  auto& v = p.value;
  if (ends_with(p.name, ".weight")) {
    const double fan_in = static_cast<double>(v.size() / v.dim(0));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& x : v.data()) x = static_cast<Real>(dist(rng));
  } else if (ends_with(p.name, ".gamma")) {
    v.fill(Real{1});
  } else {
    v.fill(Real{0});
  }
  p.grad.fill(Real{0});
}

std::uint64_t head_stream_key(const HeadConfig& heads, std::size_t head) {
  switch (heads.mode) {
    case HeadMode::AllInOne: return head;
    case HeadMode::Independent: return static_cast<std::uint64_t>(heads.trait);
    case HeadMode::Auxiliary: return 99;
  }
  return 0;
}

}  // namespace

template <typename Real>
Network<Real>::Network(ArchitectureSpec spec, HeadConfig heads)
    : spec_(std::move(spec)), heads_(heads), backbone_(std::make_unique<nn::Sequential<Real>>("backbone")) {
  spec_.validate();
  if (spec_.kind == ArchitectureKind::MiniAlex) {
    build_alex(*backbone_, spec_);
  } else {
    build_resnet(*backbone_, spec_);
  }
  for (std::size_t h = 0; h < heads_.head_count(); ++h) {
    head_layers_.push_back(std::make_unique<nn::FullyConnected<Real>>(
        "head." + heads_.head_name(h), spec_.feature_dim(), heads_.classes_per_head()));
  }
}

template <typename Real>
nn::Tensor<Real> Network<Real>::features(const nn::Tensor<Real>& batch, const nn::ForwardContext& ctx) {
  if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != spec_.input_size ||
      batch.dim(3) != spec_.input_size) {
    throw nn::ShapeError("network input must be [N,3," + std::to_string(spec_.input_size) + "," +
                         std::to_string(spec_.input_size) + "], got " + nn::shape_string(batch.shape()));
  }
  nn::ForwardContext inner = ctx;
  inner.ops = &stats_.backbone_ops;
  auto f = backbone_->forward(batch, inner);
  ++stats_.backbone_passes;
  return f.reshaped({batch.dim(0), spec_.feature_dim()});
}

template <typename Real>
nn::Tensor<Real> Network<Real>::head_logits(std::size_t head, const nn::Tensor<Real>& feats) {
  nn::ForwardContext ctx;
  ctx.ops = &stats_.head_ops;
  ++stats_.head_passes;
  return head_layers_.at(head)->forward(feats, ctx);
}

template <typename Real>
NetworkOutput<Real> Network<Real>::forward(const nn::Tensor<Real>& batch, const nn::ForwardContext& ctx) {
  NetworkOutput<Real> out;
  out.features = features(batch, ctx);
  for (std::size_t h = 0; h < head_layers_.size(); ++h) out.logits.push_back(head_logits(h, out.features));
  return out;
}

template <typename Real>
void Network<Real>::backward(const std::vector<nn::Tensor<Real>>& logit_grads) {
  if (logit_grads.size() != head_layers_.size()) {
    throw std::invalid_argument("backward needs one logit gradient per head");
  }
  std::optional<nn::Tensor<Real>> feature_grad;
  for (std::size_t h = 0; h < head_layers_.size(); ++h) {
    auto g = head_layers_[h]->backward(logit_grads[h]);
    if (!feature_grad) {
      feature_grad = std::move(g);
    } else {
      auto fg = feature_grad->data();
      auto gg = g.data();
      for (std::size_t i = 0; i < fg.size(); ++i) fg[i] += gg[i];
    }
  }
  backbone_->backward(*feature_grad);
}

template <typename Real>
std::vector<nn::Parameter<Real>*> Network<Real>::parameters(ParamGroup group) {
  std::vector<nn::Parameter<Real>*> out;
  if (group == ParamGroup::Backbone) {
    backbone_->collect_parameters(out);
  } else {
    for (auto& h : head_layers_) h->collect_parameters(out);
  }
  return out;
}

template <typename Real>
std::vector<nn::Parameter<Real>*> Network<Real>::parameters() {
  auto out = parameters(ParamGroup::Backbone);
  auto heads = parameters(ParamGroup::Heads);
  out.insert(out.end(), heads.begin(), heads.end());
  return out;
}

template <typename Real>
std::vector<nn::NamedBuffer<Real>> Network<Real>::buffers() {
  std::vector<nn::NamedBuffer<Real>> out;
  backbone_->collect_buffers(out);
  return out;
}

template <typename Real>
nn::Parameter<Real>& Network<Real>::parameter(const std::string& name) {
  for (auto* p : parameters()) {
    if (p->name == name) return *p;
  }
  throw std::out_of_range("no parameter named " + name);
}

template <typename Real>
void Network<Real>::set_dropout(double p) {
  for (const auto& layer : backbone_->layers()) {
    if (layer->kind() == nn::LayerKind::Dropout) static_cast<nn::Dropout<Real>&>(*layer).set_probability(p);
  }
}

template <typename Real>
std::size_t Network<Real>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename Real>
Network<Real> build_network(const ArchitectureSpec& spec, const HeadConfig& heads, std::uint64_t init_seed) {
  Network<Real> net(spec, heads);
  auto rng = derive_rng({init_seed}, "init-backbone");
  for (auto* p : net.parameters(ParamGroup::Backbone)) init_parameter(*p, rng);
  for (std::size_t h = 0; h < heads.head_count(); ++h) {
    auto head_rng = derive_rng({init_seed, head_stream_key(heads, h)}, "init-head");
    std::vector<nn::Parameter<Real>*> ps;
    net.head(h).collect_parameters(ps);
    for (auto* p : ps) init_parameter(*p, head_rng);
  }
  return net;
}

std::size_t expected_parameter_count(const ArchitectureSpec& spec, const HeadConfig& heads) {
  spec.validate();
  std::size_t n = 0;
  auto conv = [](std::size_t in, std::size_t out, std::size_t k, bool bias) {
    return out * in * k * k + (bias ? out : 0);
  };
  if (spec.kind == ArchitectureKind::MiniAlex) {
    std::size_t in = 3;
    for (std::size_t c : spec.conv_channels) {
      n += conv(in, c, 3, true);
      in = c;
    }
    std::size_t side = spec.input_size / 8;
    std::size_t f = in * side * side;
    for (std::size_t u : spec.fc_units) {
      n += f * u + u;
      f = u;
    }
  } else {
    n += conv(3, spec.stem_channels, 3, false) + 2 * spec.stem_channels;
    std::size_t in = spec.stem_channels;
    for (std::size_t st = 0; st < spec.stage_channels.size(); ++st) {
      const std::size_t c = spec.stage_channels[st];
      for (std::size_t b = 0; b < spec.blocks_per_stage; ++b) {
        const bool strided = st > 0 && b == 0;
        n += conv(in, c, 3, false) + 2 * c + conv(c, c, 3, false) + 2 * c;
        if (strided || in != c) n += conv(in, c, 1, false) + 2 * c;
        in = c;
      }
    }
  }
  n += heads.head_count() * (spec.feature_dim() * heads.classes_per_head() + heads.classes_per_head());
  return n;
}

// ---- losses -----------------------------------------------------------------

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& x : p) x /= z;
  return p;
}

std::array<double, 2> softmax(double o0, double o1) {
  const std::array<double, 2> o{o0, o1};
  auto p = softmax(std::span<const double>(o));
  return {p[0], p[1]};
}

double logistic_loss(std::span<const double> probabilities, int class_index) {
  if (class_index < 0 || static_cast<std::size_t>(class_index) >= probabilities.size()) {
    throw std::invalid_argument("class index out of range");
  }
  return -std::log(std::max(probabilities[class_index], kLossProbabilityFloor));
}

namespace {

// -log softmax(o)[y] by log-sum-exp. Exact for any logits, so the value stays
// consistent with the gradient p - onehot even when p underflows.
double cross_entropy_from_logits(std::span<const double> o, std::size_t y) {
  const double mx = *std::max_element(o.begin(), o.end());
  double z = 0.0;
  for (double v : o) z += std::exp(v - mx);
  return mx + std::log(z) - o[y];
}

}  // namespace

MaskedLoss masked_loss(std::span<const std::array<double, 2>> per_head_logits, Label label) {
  if (per_head_logits.size() != kNumTraits) {
    throw std::invalid_argument("masked loss needs the five all-in-one heads");
  }
  if (label.class_index != 0 && label.class_index != 1) throw std::invalid_argument("class index must be 0 or 1");
  MaskedLoss out;
  const auto h = static_cast<std::size_t>(label.trait);
  const auto& o = per_head_logits[h];
  auto p = softmax(o[0], o[1]);
  out.per_head[h] = cross_entropy_from_logits(o, static_cast<std::size_t>(label.class_index));
  out.total = out.per_head[h];
  for (int c = 0; c < 2; ++c) out.logit_grads[h][c] = p[c] - (c == label.class_index ? 1.0 : 0.0);
  return out;
}

template <typename Real>
BatchLoss<Real> batch_loss(const NetworkOutput<Real>& output, std::span<const int> heads,
                           std::span<const int> labels) {
  const std::size_t n = heads.size();
  if (labels.size() != n || n == 0) throw std::invalid_argument("batch_loss: heads and labels must align");
  BatchLoss<Real> out;
  for (const auto& l : output.logits) {
    if (l.dim(0) != n) throw std::invalid_argument("batch_loss: logits batch size mismatch");
    out.logit_grads.emplace_back(l.shape());
  }
  out.predictions.resize(n);
  std::vector<double> row;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = static_cast<std::size_t>(heads[i]);
    if (h >= output.logits.size()) throw std::invalid_argument("batch_loss: head index out of range");
    const auto& lg = output.logits[h];
    const std::size_t c = lg.dim(1);
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::invalid_argument("batch_loss: label out of range");
    }
    row.assign(c, 0.0);
    for (std::size_t k = 0; k < c; ++k) row[k] = static_cast<double>(lg.ptr()[i * c + k]);
    auto p = softmax(row);
    total += cross_entropy_from_logits(row, static_cast<std::size_t>(labels[i]));
    // First maximum wins, so a tie at p = 0.5 predicts class 0.
    out.predictions[i] = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    Real* g = out.logit_grads[h].ptr() + i * c;
    for (std::size_t k = 0; k < c; ++k) {
      g[k] = static_cast<Real>((p[k] - (static_cast<int>(k) == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  out.mean_loss = total / static_cast<double>(n);
  return out;
}

GroupLearningRates finetune_groups(bool finetune) {
  return finetune ? GroupLearningRates{1.0, 10.0} : GroupLearningRates{1.0, 1.0};
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'R', 'A', 'I', 'T', 'L', 'N', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxDescriptor = 1 << 20;
constexpr std::uint64_t kMaxName = 4096;

std::string descriptor(const ArchitectureSpec& spec, const HeadConfig& heads, nn::ScalarType scalar) {
  ordered_json j;
  j["format"] = "traitlens-checkpoint";
  j["architecture"] = arch_json(spec);
  j["heads"] = heads_json(heads);
  j["scalar"] = nn::to_string(scalar);
  return j.dump();
}

struct Header {
  CheckpointInfo info;
  std::uint64_t tensor_count = 0;
};

Header read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[8];
  if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) {
    throw CheckpointError(path.string() + ": not a traitlens checkpoint (bad magic)");
  }
  unsigned char vb[4];
  if (!is.read(reinterpret_cast<char*>(vb), 4)) throw CheckpointError(path.string() + ": truncated header");
  const std::uint32_t version = vb[0] | vb[1] << 8 | vb[2] << 16 | static_cast<std::uint32_t>(vb[3]) << 24;
  if (version != kVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kVersion) + ")");
  }
  try {
    const std::uint64_t len = nn::read_u64(is);
    if (len > kMaxDescriptor) throw CheckpointError(path.string() + ": descriptor length out of range");
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
      throw CheckpointError(path.string() + ": truncated descriptor");
    }
    const auto j = ordered_json::parse(text);
    if (j.at("format") != "traitlens-checkpoint") throw CheckpointError(path.string() + ": wrong format tag");
    Header h;
    h.info.spec = arch_from(j.at("architecture"));
    h.info.heads = heads_from(j.at("heads"));
    h.info.scalar = nn::scalar_type_from_string(j.at("scalar").get<std::string>());
    h.tensor_count = nn::read_u64(is);
    return h;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": corrupt checkpoint header: " + e.what());
  }
}

std::string read_name(std::istream& is) {
  const std::uint64_t len = nn::read_u64(is);
  if (len == 0 || len > kMaxName) throw nn::FormatError("tensor name length out of range");
  std::string name(len, '\0');
  if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw nn::FormatError("truncated tensor name");
  return name;
}

template <typename Real>
std::vector<std::pair<std::string, nn::Tensor<Real>*>> state_of(Network<Real>& net) {
  std::vector<std::pair<std::string, nn::Tensor<Real>*>> out;
  for (auto* p : net.parameters()) out.emplace_back(p->name, &p->value);
  for (auto& b : net.buffers()) out.emplace_back(b.name, b.tensor);
  return out;
}

bool is_head_tensor(const std::string& name) { return name.rfind("head.", 0) == 0; }

// Reads every stored tensor; `accept` decides which names must be present in
// the target and copies matching ones. Throws CheckpointError on any mismatch.
template <typename Real>
void read_tensors(std::istream& is, const Header& header, Network<Real>& net, bool backbone_only,
                  const std::filesystem::path& path) {
  auto state = state_of(net);
  std::size_t expected = 0;
  for (auto& [name, t] : state) expected += (!backbone_only || !is_head_tensor(name)) ? 1 : 0;
  std::size_t matched = 0;
  try {
    for (std::uint64_t i = 0; i < header.tensor_count; ++i) {
      const auto name = read_name(is);
      auto tensor = nn::read_tensor<Real>(is, header.info.scalar);
      if (backbone_only && is_head_tensor(name)) continue;
      auto it = std::find_if(state.begin(), state.end(), [&](const auto& e) { return e.first == name; });
      if (it == state.end()) throw CheckpointError(path.string() + ": unexpected tensor " + name);
      if (tensor.shape() != it->second->shape()) {
        throw CheckpointError(path.string() + ": tensor " + name + " has shape " +
                              nn::shape_string(tensor.shape()) + ", expected " +
                              nn::shape_string(it->second->shape()));
      }
      *it->second = std::move(tensor);
      ++matched;
    }
  } catch (const nn::FormatError& e) {
    throw CheckpointError(path.string() + ": corrupt tensor data: " + e.what());
  }
  if (matched != expected) {
    throw CheckpointError(path.string() + ": expected " + std::to_string(expected) + " tensors, found " +
                          std::to_string(matched));
  }
}

}  // namespace

template <typename Real>
void save_checkpoint(Network<Real>& network, const std::filesystem::path& path) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 8);
  const unsigned char vb[4] = {kVersion & 0xff, (kVersion >> 8) & 0xff, (kVersion >> 16) & 0xff, kVersion >> 24};
  os.write(reinterpret_cast<const char*>(vb), 4);
  const auto scalar = nn::scalar_type_of<Real>();
  const auto desc = descriptor(network.spec(), network.head_config(), scalar);
  nn::write_u64(os, desc.size());
  os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
  auto state = state_of(network);
  nn::write_u64(os, state.size());
  for (auto& [name, t] : state) {
    nn::write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    nn::write_tensor(os, *t, scalar);
  }
  // Serialize fully in memory so a failed write never leaves a half-valid file
  // under the final name.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    const auto bytes = os.str();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_header(is, path).info;
}

template <typename Real>
Network<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const auto header = read_header(is, path);
  Network<Real> net(header.info.spec, header.info.heads);
  read_tensors(is, header, net, false, path);
  return net;
}

template <typename Real>
Network<Real> load_backbone(const std::filesystem::path& path, const ArchitectureSpec& expected,
                            const HeadConfig& heads, std::uint64_t head_seed) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const auto header = read_header(is, path);
  if (!(header.info.spec == expected)) {
    throw ArchitectureMismatch("checkpoint architecture " + header.info.spec.to_json() +
                               " does not match requested " + expected.to_json());
  }
  auto net = build_network<Real>(expected, heads, head_seed);
  read_tensors(is, header, net, true, path);
  return net;
}

#define TRAITLENS_INSTANTIATE(Real)                                                                  \
  template class Network<Real>;                                                                      \
  template Network<Real> build_network(const ArchitectureSpec&, const HeadConfig&, std::uint64_t);  \
  template BatchLoss<Real> batch_loss(const NetworkOutput<Real>&, std::span<const int>,             \
                                      std::span<const int>);                                         \
  template void save_checkpoint(Network<Real>&, const std::filesystem::path&);                      \
  template Network<Real> load_checkpoint(const std::filesystem::path&);                             \
  template Network<Real> load_backbone(const std::filesystem::path&, const ArchitectureSpec&,       \
                                       const HeadConfig&, std::uint64_t);

TRAITLENS_INSTANTIATE(float)
TRAITLENS_INSTANTIATE(double)

}  // namespace traitlens
