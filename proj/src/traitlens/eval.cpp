#include "traitlens/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "traitlens/parallel.hpp"
#include "traitlens/train.hpp"

namespace traitlens {

std::vector<ScoredSample> ranked(std::span<const ScoredSample> scored) {
  std::vector<ScoredSample> out(scored.begin(), scored.end());
  std::sort(out.begin(), out.end(), [](const ScoredSample& a, const ScoredSample& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.sample_id < b.sample_id;
  });
  return out;
}

RocCurve roc_curve(std::span<const ScoredSample> scored) {
  const auto order = ranked(scored);
  std::uint64_t pos = 0, neg = 0;
  for (const auto& s : order) (s.true_class == 0 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw MetricError("ROC needs both classes present");

  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  // Twice the area in units of one (positive, negative) cell.
  std::uint64_t twice_area = 0;
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = order[i].score;
    const std::uint64_t tp0 = tp, fp0 = fp;
    for (; i < order.size() && order[i].score == threshold; ++i) (order[i].true_class == 0 ? tp : fp) += 1;
    twice_area += (fp - fp0) * (tp + tp0);
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos), threshold});
  }
  roc.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return roc;
}

PrCurve pr_curve(std::span<const ScoredSample> scored) {
  const auto order = ranked(scored);
  std::size_t pos = 0;
  for (const auto& s : order) pos += s.true_class == 0;
  if (pos == 0) throw MetricError("average precision needs at least one positive");
  PrCurve pr;
  double precision_sum = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    const bool hit = order[k - 1].true_class == 0;
    tp += hit;
    const double precision = static_cast<double>(tp) / static_cast<double>(k);
    if (hit) precision_sum += precision;
    pr.points.push_back({static_cast<double>(tp) / static_cast<double>(pos), precision, order[k - 1].score});
  }
  pr.ap = precision_sum / static_cast<double>(pos);
  return pr;
}

std::array<double, kNumTraits> accuracy_per_trait(std::span<const ScoredSample> scored) {
  std::array<std::size_t, kNumTraits> correct{}, total{};
  for (const auto& s : scored) {
    const auto t = static_cast<std::size_t>(s.trait);
    ++total[t];
    if (predicted_class(s.score) == s.true_class) ++correct[t];
  }
  std::array<double, kNumTraits> out{};
  for (std::size_t t = 0; t < kNumTraits; ++t) {
    if (total[t] == 0) throw MetricError(std::string("no test samples for trait ") + trait_letter(kTraits[t]));
    out[t] = static_cast<double>(correct[t]) / static_cast<double>(total[t]);
  }
  return out;
}

EvalReport evaluate(std::span<const ScoredSample> scored) {
  const auto acc = accuracy_per_trait(scored);
  EvalReport report;
  double sum = 0.0;
  for (Trait t : kTraits) {
    std::vector<ScoredSample> mine;
    for (const auto& s : scored) {
      if (s.trait == t) mine.push_back(s);
    }
    TraitMetrics m;
    m.trait = t;
    m.test_samples = mine.size();
    m.accuracy = acc[static_cast<std::size_t>(t)];
    m.roc = roc_curve(mine);
    m.pr = pr_curve(mine);
    sum += m.accuracy;
    report.traits.push_back(std::move(m));
  }
  report.average_accuracy = sum / static_cast<double>(kNumTraits);
  return report;
}

template <typename Real>
std::vector<ScoredSample> score_samples(Network<Real>& network, const CorpusManifest& manifest,
                                        std::span<const Image> images, Split split) {
  if (images.size() != manifest.samples.size()) {
    throw std::invalid_argument("score_samples: images must align with the manifest");
  }
  const HeadConfig& hc = network.head_config();
  std::vector<const Image*> ptrs;
  std::vector<const Sample*> samples;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Sample& s = manifest.samples[i];
    if (s.split != split || !hc.head_for(s.trait)) continue;
    ptrs.push_back(&images[i]);
    samples.push_back(&s);
  }
  const auto logits = center_view_logits(network, std::span<const Image* const>(ptrs), manifest.mean_image,
                                         manifest.generator.crop_size);
  std::vector<ScoredSample> out;
  out.reserve(samples.size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const Sample& s = *samples[r];
    const auto& lg = logits[*hc.head_for(s.trait)];
    const auto p = softmax(static_cast<double>(lg.ptr()[2 * r]), static_cast<double>(lg.ptr()[2 * r + 1]));
    out.push_back({s.sample_id, s.trait, static_cast<int>(s.polarity), p[0]});
  }
  return out;
}

template <typename Real>
std::vector<Activation> max_activating_samples(Network<Real>& network, const CorpusManifest& manifest,
                                               std::span<const Image> images, Trait trait,
                                               Polarity polarity, std::size_t k) {
  if (images.size() != manifest.samples.size()) {
    throw std::invalid_argument("max_activating_samples: images must align with the manifest");
  }
  const auto head = network.head_config().head_for(trait);
  if (!head) throw std::invalid_argument(std::string("network has no head for trait ") + trait_letter(trait));
  std::vector<const Image*> ptrs;
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (manifest.samples[i].split != Split::Test) continue;
    ptrs.push_back(&images[i]);
    ids.push_back(manifest.samples[i].sample_id);
  }
  if (k > ptrs.size()) {
    throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " + std::to_string(ptrs.size()) +
                                " test images");
  }
  const auto logits = center_view_logits(network, std::span<const Image* const>(ptrs), manifest.mean_image,
                                         manifest.generator.crop_size);
  const auto& lg = logits[*head];
  const auto c = static_cast<std::size_t>(polarity);
  std::vector<Activation> all(ptrs.size());
  for (std::size_t r = 0; r < ptrs.size(); ++r) {
    all[r] = {ids[r], softmax(static_cast<double>(lg.ptr()[2 * r]), static_cast<double>(lg.ptr()[2 * r + 1]))[c]};
  }
  auto better = [](const Activation& a, const Activation& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.sample_id < b.sample_id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

template <typename Real>
std::vector<std::vector<double>> extract_features(Network<Real>& network,
                                                  std::span<const Image* const> images,
                                                  const MeanImage& mean, std::size_t crop_size) {
  if (crop_size != network.spec().input_size) throw nn::ShapeError("crop size does not match network input");
  constexpr std::size_t kBatch = 64;
  const std::size_t view = Image::kChannels * crop_size * crop_size;
  const std::size_t dim = network.feature_dim();
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kBatch) {
    const std::size_t m = std::min(kBatch, images.size() - start);
    nn::Tensor<Real> batch({m, Image::kChannels, crop_size, crop_size});
    parallel_for(m, [&](std::size_t i) {
      const Image& img = *images[start + i];
      render_view(img, mean, crop_size, center_view(img.width, crop_size), batch.ptr() + i * view);
    });
    nn::ForwardContext ctx;
    ctx.mode = nn::Mode::Infer;
    const auto f = network.features(batch, ctx);
    for (std::size_t i = 0; i < m; ++i) out.emplace_back(f.ptr() + i * dim, f.ptr() + (i + 1) * dim);
  }
  return out;
}

// ---- writers ----------------------------------------------------------------

void write_metrics_json(const EvalReport& report, const std::string& config_json,
                        const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["traits"] = nlohmann::ordered_json::array();
  for (const auto& m : report.traits) {
    nlohmann::ordered_json t;
    t["trait"] = std::string(1, trait_letter(m.trait));
    t["name"] = trait_name(m.trait);
    t["test_samples"] = m.test_samples;
    t["accuracy_percent"] = 100.0 * m.accuracy;
    t["auc"] = m.roc.auc;
    t["ap"] = m.pr.ap;
    j["traits"].push_back(t);
  }
  j["average_accuracy_percent"] = 100.0 * report.average_accuracy;
  j["config"] = config_json.empty() ? nlohmann::ordered_json::object() : nlohmann::ordered_json::parse(config_json);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

namespace {

void write_points(const std::filesystem::path& path, const char* header, const std::vector<CurvePoint>& pts) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << header << '\n';
  char buf[128];
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g", p.threshold, p.x, p.y);
    os << buf << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_curve_csvs(const EvalReport& report, const std::filesystem::path& dir) {
  for (const auto& m : report.traits) {
    const char t = trait_letter(m.trait);
    write_points(dir / (std::string("roc_") + t + ".csv"), "threshold,fpr,tpr", m.roc.points);
    write_points(dir / (std::string("pr_") + t + ".csv"), "threshold,recall,precision", m.pr.points);
  }
}

void write_curves_svg(const EvalReport& report, const std::filesystem::path& path) {
  static const char* colours[kNumTraits] = {"#e6862e", "#3b75af", "#519e3e", "#c53a32", "#8d69b8"};
  constexpr double kPanel = 300, kMargin = 50, kGap = 60;
  const double width = 2 * kPanel + 2 * kMargin + kGap, height = kPanel + 2 * kMargin + 20;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  char buf[160];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int panel = 0; panel < 2; ++panel) {
    const double x0 = kMargin + panel * (kPanel + kGap), y0 = kMargin;
    os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << kPanel << "\" height=\"" << kPanel
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
      const double f = tick / 4.0;
      std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.2f</text>\n",
                    x0 + f * kPanel, y0 + kPanel + 16, f);
      os << buf;
      std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.2f</text>\n", x0 - 4,
                    y0 + (1 - f) * kPanel + 4, f);
      os << buf;
    }
    os << "<text x=\"" << x0 + kPanel / 2 << "\" y=\"" << y0 - 10 << "\" text-anchor=\"middle\">"
       << (panel == 0 ? "ROC (FPR vs TPR)" : "Precision-recall") << "</text>\n";
    for (std::size_t t = 0; t < report.traits.size(); ++t) {
      const auto& m = report.traits[t];
      const auto& pts = panel == 0 ? m.roc.points : m.pr.points;
      os << "<polyline fill=\"none\" stroke=\"" << colours[t % kNumTraits] << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& p : pts) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x0 + p.x * kPanel, y0 + (1 - p.y) * kPanel);
        os << buf;
      }
      os << "\"/>\n";
      std::snprintf(buf, sizeof buf, "%s %c = %.3f", panel == 0 ? "AUC" : "AP", trait_letter(m.trait),
                    panel == 0 ? m.roc.auc : m.pr.ap);
      const double ly = y0 + kPanel + 34;
      os << "<text x=\"" << x0 + t * 62 << "\" y=\"" << ly << "\" fill=\"" << colours[t % kNumTraits]
         << "\" font-size=\"10\">" << buf << "</text>\n";
    }
  }
  os << "</svg>\n";
  if (!os) throw IoError("failed writing " + path.string());
}

#define TRAITLENS_INSTANTIATE(Real)                                                                      \
  template std::vector<ScoredSample> score_samples(Network<Real>&, const CorpusManifest&,              \
                                                   std::span<const Image>, Split);                     \
  template std::vector<Activation> max_activating_samples(Network<Real>&, const CorpusManifest&,       \
                                                          std::span<const Image>, Trait, Polarity,     \
                                                          std::size_t);                                \
  template std::vector<std::vector<double>> extract_features(Network<Real>&,                           \
                                                             std::span<const Image* const>,            \
                                                             const MeanImage&, std::size_t);

TRAITLENS_INSTANTIATE(float)
TRAITLENS_INSTANTIATE(double)

}  // namespace traitlens
