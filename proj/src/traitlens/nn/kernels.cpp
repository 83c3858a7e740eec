#include "traitlens/nn/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace traitlens::nn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Real>
const Tensor<Real>& GradientBundle<Real>::param(std::string_view name) const {
  for (const auto& [n, t] : parameter_grads) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter gradient named " + std::string(name));
}

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapMat = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMapMat = Eigen::Map<const RowMat<Real>>;

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, ConvGeometry g) {
  const std::size_t padded = in + 2 * g.padding;
  if (g.stride == 0 || padded < kernel) return 0;
  return (padded - kernel) / g.stride + 1;
}

struct ConvDims {
  std::size_t n, c, h, w, k, r, oh, ow;
};

template <typename Real>
ConvDims conv_dims(const Tensor<Real>& input, const Tensor<Real>& weights, ConvGeometry g) {
  require_shape(input.rank() == 4, "conv2d: input must be NCHW, got " + shape_string(input.shape()));
  require_shape(weights.rank() == 4 && weights.dim(2) == weights.dim(3),
                "conv2d: weights must be [K,C,R,R], got " + shape_string(weights.shape()));
  require_shape(weights.dim(1) == input.dim(1),
                "conv2d: channel mismatch, input " + shape_string(input.shape()) + " weights " +
                    shape_string(weights.shape()));
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
             weights.dim(0), weights.dim(2), 0, 0};
  d.oh = conv_out_dim(d.h, d.r, g);
  d.ow = conv_out_dim(d.w, d.r, g);
  require_shape(d.oh > 0 && d.ow > 0, "conv2d: output dimensions must be positive");
  return d;
}

// Writes one image's columns into a [C*R*R, ld] matrix whose first OH*OW
// columns belong to this image.
template <typename Real>
void im2col(const Real* image, const ConvDims& d, ConvGeometry g, Real* col, std::size_t ld) {
  for (std::size_t c = 0; c < d.c; ++c) {
    const Real* src = image + c * d.h * d.w;
    for (std::size_t u = 0; u < d.r; ++u) {
      for (std::size_t v = 0; v < d.r; ++v) {
        Real* dst = col + ((c * d.r + u) * d.r + v) * ld;
        for (std::size_t i = 0; i < d.oh; ++i) {
          const long y = static_cast<long>(i * g.stride + u) - static_cast<long>(g.padding);
          Real* row = dst + i * d.ow;
          if (y < 0 || y >= static_cast<long>(d.h)) {
            std::fill(row, row + d.ow, Real{0});
            continue;
          }
          const Real* line = src + static_cast<std::size_t>(y) * d.w;
          // Output columns j whose source x = j*stride + v - pad lies inside the row.
          const long off = static_cast<long>(v) - static_cast<long>(g.padding);
          const long s = static_cast<long>(g.stride);
          const long lo = off >= 0 ? 0 : (-off + s - 1) / s;
          const long hi = std::min<long>(static_cast<long>(d.ow),
                                         (static_cast<long>(d.w) - off + s - 1) / s);
          std::fill(row, row + std::max(lo, 0L), Real{0});
          if (s == 1) {
            std::copy(line + lo + off, line + hi + off, row + lo);
          } else {
            for (long j = lo; j < hi; ++j) row[j] = line[j * s + off];
          }
          std::fill(row + std::max(hi, lo), row + d.ow, Real{0});
        }
      }
    }
  }
}

template <typename Real>
void col2im(const Real* col, const ConvDims& d, ConvGeometry g, Real* image, std::size_t ld) {
  for (std::size_t c = 0; c < d.c; ++c) {
    Real* dst = image + c * d.h * d.w;
    for (std::size_t u = 0; u < d.r; ++u) {
      for (std::size_t v = 0; v < d.r; ++v) {
        const Real* src = col + ((c * d.r + u) * d.r + v) * ld;
        for (std::size_t i = 0; i < d.oh; ++i) {
          const long y = static_cast<long>(i * g.stride + u) - static_cast<long>(g.padding);
          if (y < 0 || y >= static_cast<long>(d.h)) continue;
          Real* line = dst + static_cast<std::size_t>(y) * d.w;
          const Real* row = src + i * d.ow;
          const long off = static_cast<long>(v) - static_cast<long>(g.padding);
          const long s = static_cast<long>(g.stride);
          const long lo = off >= 0 ? 0 : (-off + s - 1) / s;
          const long hi = std::min<long>(static_cast<long>(d.ow),
                                         (static_cast<long>(d.w) - off + s - 1) / s);
          for (long j = lo; j < hi; ++j) line[j * s + off] += row[j];
        }
      }
    }
  }
}

// Images are packed side by side into one column matrix so each GEMM is large.
// The chunk size depends only on the shapes, keeping results reproducible.
std::size_t images_per_chunk(const ConvDims& d) {
  constexpr std::size_t kMaxColumnElements = std::size_t{1} << 18;
  const std::size_t per_image = d.c * d.r * d.r * d.oh * d.ow;
  return std::clamp<std::size_t>(kMaxColumnElements / std::max<std::size_t>(per_image, 1), 1, d.n);
}

}  // namespace

template <typename Real>
Tensor<Real> conv2d_forward(const Tensor<Real>& input, const Tensor<Real>& weights,
                            std::span<const Real> bias, ConvGeometry geometry) {
  const ConvDims d = conv_dims(input, weights, geometry);
  require_shape(bias.empty() || bias.size() == d.k, "conv2d: bias length must equal kernel count");
  const std::size_t ckk = d.c * d.r * d.r;
  const std::size_t plane = d.oh * d.ow;
  const std::size_t chunk = images_per_chunk(d);
  Tensor<Real> out({d.n, d.k, d.oh, d.ow});
  std::vector<Real> col(ckk * plane * chunk);
  std::vector<Real> res(d.k * plane * chunk);
  ConstMapMat<Real> w(weights.ptr(), d.k, ckk);
  for (std::size_t n0 = 0; n0 < d.n; n0 += chunk) {
    const std::size_t m = std::min(chunk, d.n - n0);
    const std::size_t ld = m * plane;
    for (std::size_t i = 0; i < m; ++i) {
      im2col(input.ptr() + (n0 + i) * d.c * d.h * d.w, d, geometry, col.data() + i * plane, ld);
    }
    MapMat<Real> r(res.data(), d.k, ld);
    r.noalias() = w * ConstMapMat<Real>(col.data(), ckk, ld);
    for (std::size_t i = 0; i < m; ++i) {
      Real* o = out.ptr() + (n0 + i) * d.k * plane;
      for (std::size_t k = 0; k < d.k; ++k) {
        const Real* src = res.data() + k * ld + i * plane;
        const Real b = bias.empty() ? Real{0} : bias[k];
        for (std::size_t p = 0; p < plane; ++p) o[k * plane + p] = src[p] + b;
      }
    }
  }
  return out;
}

template <typename Real>
GradientBundle<Real> conv2d_backward(const Tensor<Real>& input, const Tensor<Real>& weights,
                                     const Tensor<Real>& upstream, ConvGeometry geometry,
                                     bool with_bias) {
  const ConvDims d = conv_dims(input, weights, geometry);
  require_shape(upstream.shape() == Shape({d.n, d.k, d.oh, d.ow}),
                "conv2d_backward: upstream " + shape_string(upstream.shape()) +
                    " does not match forward output");
  const std::size_t ckk = d.c * d.r * d.r;
  const std::size_t plane = d.oh * d.ow;
  const std::size_t chunk = images_per_chunk(d);

  GradientBundle<Real> g;
  g.input_grad = Tensor<Real>(input.shape());
  Tensor<Real> dw(weights.shape());
  Tensor<Real> db({d.k});
  std::vector<Real> col(ckk * plane * chunk);
  std::vector<Real> dcol(ckk * plane * chunk);
  std::vector<Real> up(d.k * plane * chunk);
  ConstMapMat<Real> w(weights.ptr(), d.k, ckk);
  MapMat<Real> dwm(dw.ptr(), d.k, ckk);

  for (std::size_t n0 = 0; n0 < d.n; n0 += chunk) {
    const std::size_t m = std::min(chunk, d.n - n0);
    const std::size_t ld = m * plane;
    for (std::size_t i = 0; i < m; ++i) {
      im2col(input.ptr() + (n0 + i) * d.c * d.h * d.w, d, geometry, col.data() + i * plane, ld);
      const Real* u = upstream.ptr() + (n0 + i) * d.k * plane;
      for (std::size_t k = 0; k < d.k; ++k) {
        std::copy_n(u + k * plane, plane, up.data() + k * ld + i * plane);
      }
    }
    ConstMapMat<Real> upm(up.data(), d.k, ld);
    dwm.noalias() += upm * ConstMapMat<Real>(col.data(), ckk, ld).transpose();
    if (with_bias) {
      for (std::size_t k = 0; k < d.k; ++k) db[k] += upm.row(k).sum();
    }
    MapMat<Real>(dcol.data(), ckk, ld).noalias() = w.transpose() * upm;
    for (std::size_t i = 0; i < m; ++i) {
      col2im(dcol.data() + i * plane, d, geometry, g.input_grad.ptr() + (n0 + i) * d.c * d.h * d.w, ld);
    }
  }
  g.parameter_grads.emplace_back("weight", std::move(dw));
  if (with_bias) g.parameter_grads.emplace_back("bias", std::move(db));
  return g;
}

template <typename Real>
Tensor<Real> fully_connected_forward(const Tensor<Real>& input, const Tensor<Real>& weights,
                                     const Tensor<Real>& bias) {
  require_shape(input.rank() >= 2 && weights.rank() == 2, "fully_connected: bad ranks");
  const std::size_t n = input.dim(0);
  const std::size_t in = input.size() / n;
  const std::size_t out_dim = weights.dim(0);
  require_shape(weights.dim(1) == in && bias.size() == out_dim,
                "fully_connected: input " + shape_string(input.shape()) + " weights " +
                    shape_string(weights.shape()) + " bias " + shape_string(bias.shape()));
  Tensor<Real> out({n, out_dim});
  MapMat<Real> o(out.ptr(), n, out_dim);
  o.noalias() = ConstMapMat<Real>(input.ptr(), n, in) *
                ConstMapMat<Real>(weights.ptr(), out_dim, in).transpose();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < out_dim; ++j) o(i, j) += bias[j];
  }
  return out;
}

template <typename Real>
GradientBundle<Real> fully_connected_backward(const Tensor<Real>& input,
                                              const Tensor<Real>& weights,
                                              const Tensor<Real>& upstream) {
  const std::size_t n = input.dim(0);
  const std::size_t in = input.size() / n;
  const std::size_t out_dim = weights.dim(0);
  require_shape(upstream.shape() == Shape({n, out_dim}),
                "fully_connected_backward: upstream " + shape_string(upstream.shape()));
  ConstMapMat<Real> x(input.ptr(), n, in);
  ConstMapMat<Real> w(weights.ptr(), out_dim, in);
  ConstMapMat<Real> up(upstream.ptr(), n, out_dim);

  GradientBundle<Real> g;
  g.input_grad = Tensor<Real>(input.shape());
  MapMat<Real>(g.input_grad.ptr(), n, in).noalias() = up * w;
  Tensor<Real> dw(weights.shape());
  MapMat<Real>(dw.ptr(), out_dim, in).noalias() = up.transpose() * x;
  Tensor<Real> db({out_dim});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < out_dim; ++j) db[j] += up(i, j);
  }
  g.parameter_grads.emplace_back("weight", std::move(dw));
  g.parameter_grads.emplace_back("bias", std::move(db));
  return g;
}

template <typename Real>
Tensor<Real> relu_forward(const Tensor<Real>& input) {
  Tensor<Real> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > Real{0} ? input[i] : Real{0};
  return out;
}

template <typename Real>
Tensor<Real> relu_backward(const Tensor<Real>& input, const Tensor<Real>& upstream) {
  require_shape(input.shape() == upstream.shape(), "relu_backward: shape mismatch");
  Tensor<Real> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = input[i] > Real{0} ? upstream[i] : Real{0};
  }
  return out;
}

template <typename Real>
Tensor<Real> maxpool_forward(const Tensor<Real>& input, PoolGeometry g,
                             std::vector<std::size_t>* argmax) {
  require_shape(input.rank() == 4, "maxpool: input must be NCHW");
  require_shape(g.window > 0 && g.stride > 0 && input.dim(2) >= g.window &&
                    input.dim(3) >= g.window,
                "maxpool: window larger than input " + shape_string(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = (h - g.window) / g.stride + 1;
  const std::size_t ow = (w - g.window) / g.stride + 1;
  Tensor<Real> out({n, c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        std::size_t best = base + (i * g.stride) * w + j * g.stride;
        for (std::size_t u = 0; u < g.window; ++u) {
          for (std::size_t v = 0; v < g.window; ++v) {
            const std::size_t idx = base + (i * g.stride + u) * w + j * g.stride + v;
            if (input[idx] > input[best]) best = idx;
          }
        }
        out[o] = input[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

template <typename Real>
Tensor<Real> maxpool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                              const Tensor<Real>& upstream) {
  require_shape(argmax.size() == upstream.size(), "maxpool_backward: upstream shape mismatch");
  Tensor<Real> out(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) out[argmax[o]] += upstream[o];
  return out;
}

template <typename Real>
Tensor<Real> global_avg_pool_forward(const Tensor<Real>& input) {
  require_shape(input.rank() == 4, "global_avg_pool: input must be NCHW");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor<Real> out({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0;
    for (std::size_t k = 0; k < hw; ++k) s += input[p * hw + k];
    out[p] = static_cast<Real>(s / static_cast<double>(hw));
  }
  return out;
}

template <typename Real>
Tensor<Real> global_avg_pool_backward(const Shape& input_shape, const Tensor<Real>& upstream) {
  require_shape(input_shape.size() == 4 && upstream.shape() == Shape({input_shape[0], input_shape[1]}),
                "global_avg_pool_backward: shape mismatch");
  const std::size_t hw = input_shape[2] * input_shape[3];
  Tensor<Real> out(input_shape);
  const Real scale = Real{1} / static_cast<Real>(hw);
  for (std::size_t p = 0; p < upstream.size(); ++p) {
    std::fill_n(out.ptr() + p * hw, hw, upstream[p] * scale);
  }
  return out;
}

namespace {

struct ChannelLayout {
  std::size_t n, c, inner;
};

template <typename Real>
ChannelLayout channel_layout(const Tensor<Real>& x) {
  require_shape(x.rank() == 2 || x.rank() == 4,
                "batchnorm: input must be [N,C] or [N,C,H,W], got " + shape_string(x.shape()));
  return {x.dim(0), x.dim(1), x.rank() == 4 ? x.dim(2) * x.dim(3) : 1};
}

}  // namespace

template <typename Real>
Tensor<Real> batchnorm_forward(const Tensor<Real>& input, const Tensor<Real>& gamma,
                               const Tensor<Real>& beta, Mode mode, BatchNormStats<Real>& stats,
                               BatchNormOptions options, BatchNormCache<Real>* cache) {
  const ChannelLayout L = channel_layout(input);
  require_shape(gamma.size() == L.c && beta.size() == L.c && stats.running_mean.size() == L.c &&
                    stats.running_var.size() == L.c,
                "batchnorm: per-channel parameter length mismatch");
  if (mode == Mode::Train && L.n < 2) {
    throw std::invalid_argument("batchnorm: Train mode needs a batch of at least 2");
  }
  const double count = static_cast<double>(L.n * L.inner);
  Tensor<Real> out(input.shape());
  Tensor<Real> normalized(input.shape());
  std::vector<double> inv_std(L.c);

  for (std::size_t c = 0; c < L.c; ++c) {
    double mean = 0, var = 0;
    if (mode == Mode::Train) {
      for (std::size_t n = 0; n < L.n; ++n) {
        const Real* p = input.ptr() + (n * L.c + c) * L.inner;
        for (std::size_t k = 0; k < L.inner; ++k) mean += p[k];
      }
      mean /= count;
      for (std::size_t n = 0; n < L.n; ++n) {
        const Real* p = input.ptr() + (n * L.c + c) * L.inner;
        for (std::size_t k = 0; k < L.inner; ++k) {
          const double dv = p[k] - mean;
          var += dv * dv;
        }
      }
      var /= count;
      const double m = options.momentum;
      stats.running_mean[c] = static_cast<Real>((1 - m) * stats.running_mean[c] + m * mean);
      stats.running_var[c] = static_cast<Real>((1 - m) * stats.running_var[c] + m * var);
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + options.epsilon);
    inv_std[c] = is;
    const double gm = gamma[c], bt = beta[c];
    for (std::size_t n = 0; n < L.n; ++n) {
      const std::size_t off = (n * L.c + c) * L.inner;
      for (std::size_t k = 0; k < L.inner; ++k) {
        const double xh = (input[off + k] - mean) * is;
        normalized[off + k] = static_cast<Real>(xh);
        out[off + k] = static_cast<Real>(gm * xh + bt);
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->input_shape = input.shape();
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename Real>
GradientBundle<Real> batchnorm_backward(const BatchNormCache<Real>& cache,
                                        const Tensor<Real>& gamma, const Tensor<Real>& upstream) {
  require_shape(upstream.shape() == cache.input_shape, "batchnorm_backward: upstream shape mismatch");
  const ChannelLayout L = channel_layout(upstream);
  const double count = static_cast<double>(L.n * L.inner);
  GradientBundle<Real> g;
  g.input_grad = Tensor<Real>(upstream.shape());
  Tensor<Real> dgamma({L.c}), dbeta({L.c});
  for (std::size_t c = 0; c < L.c; ++c) {
    double sum_dy = 0, sum_dy_xh = 0;
    for (std::size_t n = 0; n < L.n; ++n) {
      const std::size_t off = (n * L.c + c) * L.inner;
      for (std::size_t k = 0; k < L.inner; ++k) {
        sum_dy += upstream[off + k];
        sum_dy_xh += static_cast<double>(upstream[off + k]) * cache.normalized[off + k];
      }
    }
    dgamma[c] = static_cast<Real>(sum_dy_xh);
    dbeta[c] = static_cast<Real>(sum_dy);
    const double scale = gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < L.n; ++n) {
      const std::size_t off = (n * L.c + c) * L.inner;
      for (std::size_t k = 0; k < L.inner; ++k) {
        double dx = upstream[off + k];
        if (cache.mode == Mode::Train) {
          dx -= (sum_dy + cache.normalized[off + k] * sum_dy_xh) / count;
        }
        g.input_grad[off + k] = static_cast<Real>(scale * dx);
      }
    }
  }
  g.parameter_grads.emplace_back("gamma", std::move(dgamma));
  g.parameter_grads.emplace_back("beta", std::move(dbeta));
  return g;
}

template <typename Real>
Tensor<Real> dropout_forward(const Tensor<Real>& input, double p, Mode mode, std::mt19937_64& rng,
                             Tensor<Real>* mask) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (mode == Mode::Infer) {
    if (mask) *mask = Tensor<Real>(input.shape(), Real{1});
    return input;
  }
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  Tensor<Real> m(input.shape());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = uniform(rng) < p ? Real{0} : keep_scale;
  Tensor<Real> out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] * m[i];
  if (mask) *mask = std::move(m);
  return out;
}

template <typename Real>
Tensor<Real> dropout_backward(const Tensor<Real>& mask, const Tensor<Real>& upstream) {
  require_shape(mask.shape() == upstream.shape(), "dropout_backward: shape mismatch");
  Tensor<Real> out(upstream.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = upstream[i] * mask[i];
  return out;
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_shape(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                            shape_string(b.shape()));
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

#define TRAITLENS_INSTANTIATE_KERNELS(R)                                                         \
  template struct GradientBundle<R>;                                                             \
  template Tensor<R> conv2d_forward(const Tensor<R>&, const Tensor<R>&, std::span<const R>,      \
                                    ConvGeometry);                                               \
  template GradientBundle<R> conv2d_backward(const Tensor<R>&, const Tensor<R>&,                 \
                                             const Tensor<R>&, ConvGeometry, bool);              \
  template Tensor<R> fully_connected_forward(const Tensor<R>&, const Tensor<R>&,                 \
                                             const Tensor<R>&);                                  \
  template GradientBundle<R> fully_connected_backward(const Tensor<R>&, const Tensor<R>&,        \
                                                      const Tensor<R>&);                         \
  template Tensor<R> relu_forward(const Tensor<R>&);                                             \
  template Tensor<R> relu_backward(const Tensor<R>&, const Tensor<R>&);                          \
  template Tensor<R> maxpool_forward(const Tensor<R>&, PoolGeometry, std::vector<std::size_t>*); \
  template Tensor<R> maxpool_backward(const Shape&, const std::vector<std::size_t>&,             \
                                      const Tensor<R>&);                                         \
  template Tensor<R> global_avg_pool_forward(const Tensor<R>&);                                  \
  template Tensor<R> global_avg_pool_backward(const Shape&, const Tensor<R>&);                   \
  template Tensor<R> batchnorm_forward(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&,     \
                                       Mode, BatchNormStats<R>&, BatchNormOptions,               \
                                       BatchNormCache<R>*);                                      \
  template GradientBundle<R> batchnorm_backward(const BatchNormCache<R>&, const Tensor<R>&,      \
                                                const Tensor<R>&);                               \
  template Tensor<R> dropout_forward(const Tensor<R>&, double, Mode, std::mt19937_64&,           \
                                     Tensor<R>*);                                                \
  template Tensor<R> dropout_backward(const Tensor<R>&, const Tensor<R>&);                       \
  template Tensor<R> add(const Tensor<R>&, const Tensor<R>&);

TRAITLENS_INSTANTIATE_KERNELS(float)
TRAITLENS_INSTANTIATE_KERNELS(double)

#undef TRAITLENS_INSTANTIATE_KERNELS

}  // namespace traitlens::nn
