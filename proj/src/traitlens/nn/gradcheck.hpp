#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "traitlens/nn/layers.hpp"

namespace traitlens::nn {

// A tensor perturbed by the finite-difference sweep and the analytic gradient
// it is compared against.
struct GradTarget {
  std::string name;
  Tensor<double>* value;
  const Tensor<double>* analytic;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_target;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

// Entry-wise relative error |a - n| / max(|a|, |n|, floor), where floor is
// 1e-3 of the largest gradient magnitude in the same tensor. The floor keeps
// entries that are zero up to round-off from dominating the maximum.
double gradient_relative_error(double analytic, double numeric, double tensor_scale);

// Central differences (f(x+eps) - f(x-eps)) / 2eps for every entry of every
// target. `objective` must be a pure function of the target tensors.
GradCheckReport compare_with_central_differences(const std::function<double()>& objective,
                                                 const std::vector<GradTarget>& targets,
                                                 double eps);

// Checks a layer's backward against central differences of the scalar
// projection <r, layer(x)> with r ~ N(0,1) drawn from `seed`. Dropout masks are
// held fixed by re-seeding the forward rng before every evaluation.
GradCheckReport finite_difference_check(Layer<double>& layer, const Tensor<double>& input,
                                        double eps = 1e-5, std::uint64_t seed = 1,
                                        Mode mode = Mode::Train);

}  // namespace traitlens::nn
