#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gradeloss {

// Feature maps are stored channel-by-row: a (C x N*H*W) row-major matrix
// whose columns hold sample n's pixels at [n*H*W, (n+1)*H*W) in raster
// order. Dense activations are (features x N).
template <typename Scalar>
using Tensor2 = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct MapShape {
  int n = 0;
  int h = 0;
  int w = 0;
  Eigen::Index pixels() const { return static_cast<Eigen::Index>(h) * w; }
};

/// Kaiming-uniform fill, bound sqrt(6 / fan_in).
template <typename Scalar>
void kaiming_uniform(Tensor2<Scalar>& w, int fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(dist(rng));
}

// ---------------------------------------------------------------- conv

template <typename Scalar>
struct Conv2d {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 5;
  int pad = 2;
  Tensor2<Scalar> weight;  // out_ch x (in_ch * kernel * kernel)
  Tensor2<Scalar> bias;    // out_ch x 1
  Tensor2<Scalar> grad_weight;
  Tensor2<Scalar> grad_bias;

  struct Cache {
    Tensor2<Scalar> input;
    MapShape shape;
  };

  Conv2d() = default;
  Conv2d(int in, int out, int k, int p, std::uint64_t seed)
      : in_ch(in), out_ch(out), kernel(k), pad(p),
        weight(out, in * k * k), bias(Tensor2<Scalar>::Zero(out, 1)),
        grad_weight(Tensor2<Scalar>::Zero(out, in * k * k)), grad_bias(Tensor2<Scalar>::Zero(out, 1)) {
    kaiming_uniform(weight, in * k * k, seed);
  }

  MapShape output_shape(const MapShape& s) const {
    return {s.n, s.h + 2 * pad - kernel + 1, s.w + 2 * pad - kernel + 1};
  }

  using ColMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  // Samples per im2col block, bounding the patch matrix to ~16M entries.
  int chunk_size(const MapShape& s) const {
    const Eigen::Index per = output_shape(s).pixels() * in_ch * kernel * kernel;
    return static_cast<int>(std::clamp<Eigen::Index>((Eigen::Index{1} << 24) / std::max<Eigen::Index>(per, 1), 1, s.n));
  }

  // (count*out_pixels x in_ch*k*k) patch matrix of samples [first, first+count).
  ColMatrix im2col_t(const Tensor2<Scalar>& x, const MapShape& s, int first, int count) const {
    const MapShape o = output_shape(s);
    ColMatrix col(count * o.pixels(), in_ch * kernel * kernel);
    for (int ci = 0; ci < in_ch; ++ci) {
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          Scalar* dst_col = col.data() + ((ci * kernel + ky) * kernel + kx) * col.rows();
          const int lo = std::clamp(pad - kx, 0, o.w);
          const int hi = std::clamp(s.w + pad - kx, lo, o.w);
          for (int n = 0; n < count; ++n) {
            const Scalar* src = x.data() + ci * x.cols() + (first + n) * s.pixels();
            Scalar* dst = dst_col + n * o.pixels();
            for (int y = 0; y < o.h; ++y) {
              const int iy = y + ky - pad;
              Scalar* row = dst + y * o.w;
              if (iy < 0 || iy >= s.h) {
                std::fill(row, row + o.w, Scalar(0));
                continue;
              }
              const Scalar* src_row = src + iy * s.w + (kx - pad);
              std::fill(row, row + lo, Scalar(0));
              std::copy(src_row + lo, src_row + hi, row + lo);
              std::fill(row + hi, row + o.w, Scalar(0));
            }
          }
        }
      }
    }
    return col;
  }

  void col2im_t_add(const ColMatrix& col, const MapShape& s, int first, int count, Tensor2<Scalar>& dx) const {
    const MapShape o = output_shape(s);
    for (int ci = 0; ci < in_ch; ++ci) {
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const Scalar* src_col = col.data() + ((ci * kernel + ky) * kernel + kx) * col.rows();
          const int lo = std::clamp(pad - kx, 0, o.w);
          const int hi = std::clamp(s.w + pad - kx, lo, o.w);
          for (int n = 0; n < count; ++n) {
            Scalar* dst = dx.data() + ci * dx.cols() + (first + n) * s.pixels();
            const Scalar* src = src_col + n * o.pixels();
            for (int y = 0; y < o.h; ++y) {
              const int iy = y + ky - pad;
              if (iy < 0 || iy >= s.h) continue;
              Scalar* dst_row = dst + iy * s.w + (kx - pad);
              const Scalar* src_row = src + y * o.w;
              for (int xo = lo; xo < hi; ++xo) dst_row[xo] += src_row[xo];
            }
          }
        }
      }
    }
  }

  Tensor2<Scalar> forward(const Tensor2<Scalar>& x, const MapShape& s, Cache* cache) const {
    const MapShape o = output_shape(s);
    Tensor2<Scalar> y(out_ch, o.n * o.pixels());
    const int chunk = chunk_size(s);
    for (int first = 0; first < s.n; first += chunk) {
      const int count = std::min(chunk, s.n - first);
      const ColMatrix col = im2col_t(x, s, first, count);
      auto block = y.middleCols(first * o.pixels(), count * o.pixels());
      block.noalias() = weight * col.transpose();
      block.colwise() += bias.col(0);
    }
    if (cache) {
      cache->input = x;
      cache->shape = s;
    }
    return y;
  }

  Tensor2<Scalar> backward(const Tensor2<Scalar>& dy, const Cache& cache) {
    const MapShape& s = cache.shape;
    const MapShape o = output_shape(s);
    grad_weight.setZero();
    grad_bias = dy.rowwise().sum();
    Tensor2<Scalar> dx = Tensor2<Scalar>::Zero(in_ch, s.n * s.pixels());
    const int chunk = chunk_size(s);
    for (int first = 0; first < s.n; first += chunk) {
      const int count = std::min(chunk, s.n - first);
      const ColMatrix col = im2col_t(cache.input, s, first, count);
      const auto dy_block = dy.middleCols(first * o.pixels(), count * o.pixels());
      grad_weight.noalias() += dy_block * col;
      const ColMatrix dcol = dy_block.transpose() * weight;
      col2im_t_add(dcol, s, first, count, dx);
    }
    return dx;
  }
};

// ---------------------------------------------------------------- linear

template <typename Scalar>
struct Linear {
  int in_dim = 0;
  int out_dim = 0;
  Tensor2<Scalar> weight;  // out x in
  Tensor2<Scalar> bias;    // out x 1
  Tensor2<Scalar> grad_weight;
  Tensor2<Scalar> grad_bias;

  struct Cache {
    Tensor2<Scalar> input;
  };

  Linear() = default;
  Linear(int in, int out, std::uint64_t seed)
      : in_dim(in), out_dim(out), weight(out, in), bias(Tensor2<Scalar>::Zero(out, 1)),
        grad_weight(Tensor2<Scalar>::Zero(out, in)), grad_bias(Tensor2<Scalar>::Zero(out, 1)) {
    kaiming_uniform(weight, in, seed);
  }

  Tensor2<Scalar> forward(const Tensor2<Scalar>& x, Cache* cache) const {
    Tensor2<Scalar> y = weight * x;
    y.colwise() += bias.col(0);
    if (cache) cache->input = x;
    return y;
  }

  Tensor2<Scalar> backward(const Tensor2<Scalar>& dy, const Cache& cache) {
    grad_weight.noalias() = dy * cache.input.transpose();
    grad_bias = dy.rowwise().sum();
    return weight.transpose() * dy;
  }
};

// ---------------------------------------------------------------- batch norm

/// Per-row normalization over all columns (batch and, for feature maps,
/// spatial positions).
template <typename Scalar>
struct BatchNorm {
  int channels = 0;
  Scalar epsilon = Scalar(1e-5);
  Scalar momentum = Scalar(0.1);
  Tensor2<Scalar> scale;  // C x 1
  Tensor2<Scalar> shift;  // C x 1
  Tensor2<Scalar> running_mean;
  Tensor2<Scalar> running_var;
  Tensor2<Scalar> grad_scale;
  Tensor2<Scalar> grad_shift;

  struct Cache {
    Tensor2<Scalar> normalized;
    ColVector<Scalar> inv_std;
    ColVector<Scalar> batch_mean;
    ColVector<Scalar> batch_var;
    bool training = false;
  };

  BatchNorm() = default;
  BatchNorm(int c, double eps, double mom)
      : channels(c), epsilon(static_cast<Scalar>(eps)), momentum(static_cast<Scalar>(mom)),
        scale(Tensor2<Scalar>::Ones(c, 1)), shift(Tensor2<Scalar>::Zero(c, 1)),
        running_mean(Tensor2<Scalar>::Zero(c, 1)), running_var(Tensor2<Scalar>::Ones(c, 1)),
        grad_scale(Tensor2<Scalar>::Zero(c, 1)), grad_shift(Tensor2<Scalar>::Zero(c, 1)) {}

  Tensor2<Scalar> forward(const Tensor2<Scalar>& x, bool training, Cache* cache) const {
    ColVector<Scalar> mean;
    ColVector<Scalar> var;
    if (training) {
      mean = x.rowwise().mean();
      var = (x.colwise() - mean).array().square().rowwise().mean();
    } else {
      mean = running_mean.col(0);
      var = running_var.col(0);
    }
    const ColVector<Scalar> inv_std = (var.array() + epsilon).rsqrt();
    Tensor2<Scalar> xhat = (x.colwise() - mean).array().colwise() * inv_std.array();
    Tensor2<Scalar> y = (xhat.array().colwise() * scale.col(0).array()).colwise() + shift.col(0).array();
    if (cache) {
      cache->normalized = std::move(xhat);
      cache->inv_std = inv_std;
      cache->batch_mean = mean;
      cache->batch_var = var;
      cache->training = training;
    }
    return y;
  }

  /// Exponential moving update with the unbiased batch variance.
  void update_running(const Cache& cache, Eigen::Index count) {
    const Scalar unbias = count > 1 ? Scalar(count) / Scalar(count - 1) : Scalar(1);
    running_mean = (Scalar(1) - momentum) * running_mean + momentum * cache.batch_mean;
    running_var = (Scalar(1) - momentum) * running_var + momentum * unbias * cache.batch_var;
  }

  Tensor2<Scalar> backward(const Tensor2<Scalar>& dy, const Cache& cache) {
    const auto& xhat = cache.normalized;
    grad_shift = dy.rowwise().sum();
    grad_scale = (dy.array() * xhat.array()).rowwise().sum();
    const ColVector<Scalar> g = scale.col(0).array() * cache.inv_std.array();
    if (!cache.training) return dy.array().colwise() * g.array();
    const auto m = static_cast<Scalar>(dy.cols());
    const ColVector<Scalar> sum_dy = grad_shift.col(0);
    const ColVector<Scalar> sum_dy_xhat = grad_scale.col(0);
    Tensor2<Scalar> dx = (dy.array() * m).colwise() - sum_dy.array();
    dx.array() -= xhat.array().colwise() * sum_dy_xhat.array();
    dx.array().colwise() *= g.array() / m;
    return dx;
  }
};

// ---------------------------------------------------------------- activation

/// max(x, slope * x); slope 0 is a plain ReLU.
template <typename Scalar>
struct LeakyRelu {
  Scalar slope = Scalar(0.01);

  struct Cache {
    Tensor2<Scalar> input;
  };

  Tensor2<Scalar> forward(const Tensor2<Scalar>& x, Cache* cache) const {
    if (cache) cache->input = x;
    return x.unaryExpr([s = slope](Scalar v) { return v > Scalar(0) ? v : s * v; });
  }

  Tensor2<Scalar> backward(const Tensor2<Scalar>& dy, const Cache& cache) const {
    return dy.binaryExpr(cache.input, [s = slope](Scalar g, Scalar v) { return v > Scalar(0) ? g : s * g; });
  }
};

// ---------------------------------------------------------------- pooling

/// 2x2 stride-2 max pool. Gradient goes to the first maximum in
/// (0,0), (0,1), (1,0), (1,1) order.
template <typename Scalar>
struct MaxPool2 {
  struct Cache {
    std::vector<Eigen::Index> argmax;
    MapShape in_shape;
    Eigen::Index channels = 0;
  };

  static MapShape output_shape(const MapShape& s) { return {s.n, s.h / 2, s.w / 2}; }

  Tensor2<Scalar> forward(const Tensor2<Scalar>& x, const MapShape& s, Cache* cache) const {
    const MapShape o = output_shape(s);
    Tensor2<Scalar> y(x.rows(), o.n * o.pixels());
    if (cache) {
      cache->argmax.resize(static_cast<std::size_t>(y.size()));
      cache->in_shape = s;
      cache->channels = x.rows();
    }
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
      const Scalar* src = x.data() + c * x.cols();
      Scalar* dst = y.data() + c * y.cols();
      for (int n = 0; n < s.n; ++n) {
        const Eigen::Index ib = n * s.pixels();
        const Eigen::Index ob = n * o.pixels();
        for (int oy = 0; oy < o.h; ++oy) {
          for (int ox = 0; ox < o.w; ++ox) {
            Eigen::Index best = ib + (2 * oy) * s.w + 2 * ox;
            const Eigen::Index cand[3] = {best + 1, best + s.w, best + s.w + 1};
            for (Eigen::Index q : cand)
              if (src[q] > src[best]) best = q;
            dst[ob + oy * o.w + ox] = src[best];
            if (cache) cache->argmax[static_cast<std::size_t>(c * y.cols() + ob + oy * o.w + ox)] = best;
          }
        }
      }
    }
    return y;
  }

  Tensor2<Scalar> backward(const Tensor2<Scalar>& dy, const Cache& cache) const {
    const MapShape& s = cache.in_shape;
    Tensor2<Scalar> dx = Tensor2<Scalar>::Zero(cache.channels, s.n * s.pixels());
    for (Eigen::Index c = 0; c < dy.rows(); ++c)
      for (Eigen::Index j = 0; j < dy.cols(); ++j)
        dx(c, cache.argmax[static_cast<std::size_t>(c * dy.cols() + j)]) += dy(c, j);
    return dx;
  }
};

// ---------------------------------------------------------------- reshape

/// (C x N*P) feature map to (C*P x N) dense batch, feature index c*P + p.
template <typename Scalar>
Tensor2<Scalar> flatten_maps(const Tensor2<Scalar>& x, const MapShape& s) {
  const Eigen::Index p = s.pixels();
  Tensor2<Scalar> y(x.rows() * p, s.n);
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    for (int n = 0; n < s.n; ++n)
      for (Eigen::Index i = 0; i < p; ++i) y(c * p + i, n) = x(c, n * p + i);
  return y;
}

template <typename Scalar>
Tensor2<Scalar> unflatten_maps(const Tensor2<Scalar>& y, Eigen::Index channels, const MapShape& s) {
  const Eigen::Index p = s.pixels();
  Tensor2<Scalar> x(channels, s.n * p);
  for (Eigen::Index c = 0; c < channels; ++c)
    for (int n = 0; n < s.n; ++n)
      for (Eigen::Index i = 0; i < p; ++i) x(c, n * p + i) = y(c * p + i, n);
  return x;
}

}  // namespace gradeloss
