#pragma once

// Binary tensor records: rank (u64), dims (u64 each), then the flat data as
// little-endian IEEE-754 values of the stored width.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "traitlens/nn/tensor.hpp"

namespace traitlens::nn {

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

enum class ScalarType : std::uint8_t { Float32 = 4, Float64 = 8 };

const char* to_string(ScalarType t);
ScalarType scalar_type_from_string(const std::string& s);

template <typename Real>
constexpr ScalarType scalar_type_of() {
  return sizeof(Real) == 4 ? ScalarType::Float32 : ScalarType::Float64;
}

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_u64(std::ostream& os, std::uint64_t v);
std::uint64_t read_u64(std::istream& is);

// Writes data at the width of `stored`; values are converted if Real differs.
template <typename Real>
void write_tensor(std::ostream& os, const Tensor<Real>& t, ScalarType stored);

template <typename Real>
Tensor<Real> read_tensor(std::istream& is, ScalarType stored);

}  // namespace traitlens::nn
