#include "traitlens/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace traitlens::nn {

double gradient_relative_error(double analytic, double numeric, double tensor_scale) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-3 * tensor_scale, 1e-300});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport compare_with_central_differences(const std::function<double()>& objective,
                                                 const std::vector<GradTarget>& targets,
                                                 double eps) {
  GradCheckReport report;
  for (const auto& target : targets) {
    require_shape(target.value->shape() == target.analytic->shape(),
                  "gradient check: analytic gradient shape differs for " + target.name);
    std::vector<double> numeric(target.value->size());
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      double& x = (*target.value)[i];
      const double saved = x;
      x = saved + eps;
      const double up = objective();
      x = saved - eps;
      const double down = objective();
      x = saved;
      numeric[i] = (up - down) / (2 * eps);
    }
    double scale = 0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      scale = std::max({scale, std::abs(numeric[i]), std::abs((*target.analytic)[i])});
    }
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double err = gradient_relative_error((*target.analytic)[i], numeric[i], scale);
      if (err > report.max_relative_error || report.entries_checked == 0) {
        report.max_relative_error = err;
        report.worst_target = target.name;
        report.worst_index = i;
      }
      ++report.entries_checked;
    }
  }
  return report;
}

GradCheckReport finite_difference_check(Layer<double>& layer, const Tensor<double>& input,
                                        double eps, std::uint64_t seed, Mode mode) {
  std::mt19937_64 rng;
  ForwardContext ctx{mode, &rng, nullptr};
  const std::uint64_t dropout_seed = seed ^ 0x9e3779b97f4a7c15ULL;

  Tensor<double> x = input;
  rng.seed(dropout_seed);
  const Tensor<double> out = layer.forward(x, ctx);

  Tensor<double> projection(out.shape());
  std::mt19937_64 proj_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < projection.size(); ++i) projection[i] = normal(proj_rng);

  const Tensor<double> input_grad = layer.backward(projection);
  std::vector<Tensor<double>> param_grads;
  auto params = layer.parameters();
  for (auto* p : params) param_grads.push_back(p->grad);

  auto objective = [&] {
    rng.seed(dropout_seed);
    const Tensor<double> y = layer.forward(x, ctx);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += projection[i] * y[i];
    return s;
  };

  std::vector<GradTarget> targets{{layer.name() + ".input", &x, &input_grad}};
  for (std::size_t i = 0; i < params.size(); ++i) {
    targets.push_back({params[i]->name, &params[i]->value, &param_grads[i]});
  }
  return compare_with_central_differences(objective, targets, eps);
}

}  // namespace traitlens::nn
