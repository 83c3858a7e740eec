#include "traitlens/nn/serialize.hpp"

#include <cstring>
#include <string>
#include <vector>

namespace traitlens::nn {

namespace {

constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

void require_stream(std::istream& is, const char* what) {
  if (!is) throw FormatError(std::string("truncated tensor record while reading ") + what);
}

}  // namespace

const char* to_string(ScalarType t) {
  return t == ScalarType::Float32 ? "float32" : "float64";
}

ScalarType scalar_type_from_string(const std::string& s) {
  if (s == "float32") return ScalarType::Float32;
  if (s == "float64") return ScalarType::Float64;
  throw FormatError("unknown scalar type '" + s + "'");
}

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require_stream(is, "u64");
  return v;
}

template <typename Real>
void write_tensor(std::ostream& os, const Tensor<Real>& t, ScalarType stored) {
  write_u64(os, t.rank());
  for (std::size_t d : t.shape()) write_u64(os, d);
  if (stored == scalar_type_of<Real>()) {
    os.write(reinterpret_cast<const char*>(t.ptr()),
             static_cast<std::streamsize>(t.size() * sizeof(Real)));
  } else if (stored == ScalarType::Float32) {
    std::vector<float> buf(t.data().begin(), t.data().end());
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    std::vector<double> buf(t.data().begin(), t.data().end());
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(double)));
  }
}

template <typename Real>
Tensor<Real> read_tensor(std::istream& is, ScalarType stored) {
  const std::uint64_t rank = read_u64(is);
  if (rank > kMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " out of range");
  Shape shape(rank);
  for (auto& d : shape) d = read_u64(is);
  const std::size_t n = shape_size(shape);
  if (n > kMaxElements) throw FormatError("tensor element count out of range");
  std::vector<Real> data(n);
  if (stored == scalar_type_of<Real>()) {
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(Real)));
  } else if (stored == ScalarType::Float32) {
    std::vector<float> buf(n);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    std::copy(buf.begin(), buf.end(), data.begin());
  } else {
    std::vector<double> buf(n);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(double)));
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<Real>(buf[i]);
  }
  require_stream(is, "tensor data");
  return Tensor<Real>(std::move(shape), std::move(data));
}

template void write_tensor(std::ostream&, const Tensor<float>&, ScalarType);
template void write_tensor(std::ostream&, const Tensor<double>&, ScalarType);
template Tensor<float> read_tensor(std::istream&, ScalarType);
template Tensor<double> read_tensor(std::istream&, ScalarType);

}  // namespace traitlens::nn
