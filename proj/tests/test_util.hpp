#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "test_files.hpp"
#include "traitlens/nn/tensor.hpp"

namespace testutil {

template <typename Real = double>
traitlens::nn::Tensor<Real> random_tensor(traitlens::nn::Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  traitlens::nn::Tensor<Real> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Real>(d(rng));
  return t;
}

template <typename Real>
double max_abs_diff(const traitlens::nn::Tensor<Real>& a, const traitlens::nn::Tensor<Real>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace testutil
