#include "fsim/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fsim::nn {

void init_uniform(Tensor& t, double bound, Rng& rng) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(rng, -bound, bound);
}

// ---------------------------------------------------------------------------
// linear

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1) && b.size() == w.dim(0),
          "linear: shape mismatch " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  Tensor y({n, out});
  auto ym = as_matrix(y, n, out);
  ym.noalias() = as_matrix(x, n, in) * as_matrix(w, out, in).transpose();
  ym.rowwise() += as_matrix(b, 1, out).row(0);
  return y;
}

Tensor linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db,
                       bool need_dx) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  const auto dym = as_matrix(dy, n, out);
  as_matrix(dw, out, in).noalias() += dym.transpose() * as_matrix(x, n, in);
  as_matrix(db, 1, out) += dym.colwise().sum();
  if (!need_dx) return {};
  Tensor dx({n, in});
  as_matrix(dx, n, in).noalias() = dym * as_matrix(w, out, in);
  return dx;
}

// ---------------------------------------------------------------------------
// convolution

namespace {

void im2col(const double* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            double* cols) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = x + c * hw;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols + ((c * k + ki) * k + kj) * hw;
        const long dy = static_cast<long>(ki) - pad;
        const long dx = static_cast<long>(kj) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          double* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = plane + sy * static_cast<long>(w);
          const long lo = std::max(0L, -dx);
          const long hi = std::min(static_cast<long>(w), static_cast<long>(w) - dx);
          std::fill(dst, dst + lo, 0.0);
          for (long xx = lo; xx < hi; ++xx) dst[xx] = src[xx + dx];
          std::fill(dst + std::max(hi, lo), dst + w, 0.0);
        }
      }
    }
  }
}

void col2im(const double* cols, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t k, double* x) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = x + c * hw;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * hw;
        const long dy = static_cast<long>(ki) - pad;
        const long dx = static_cast<long>(kj) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const double* src = row + y * w;
          double* dst = plane + sy * static_cast<long>(w);
          const long lo = std::max(0L, -dx);
          const long hi = std::min(static_cast<long>(w), static_cast<long>(w) - dx);
          for (long xx = lo; xx < hi; ++xx) dst[xx + dx] += src[xx];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 4 && w.rank() == 4 && w.dim(1) == x.dim(1) && w.dim(2) == w.dim(3) &&
              w.dim(2) % 2 == 1 && b.size() == w.dim(0),
          "conv2d: shape mismatch " + shape_string(x.shape()) + " * " + shape_string(w.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2), hw = h * wd, ck = c * k * k;
  Tensor y({n, o, h, wd});
  Tensor cols({ck, hw});
  const auto wm = as_matrix(w, o, ck);
  const auto bm = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(o));
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x.data() + s * c * hw, c, h, wd, k, cols.data());
    MatrixMap ys(y.data() + s * o * hw, static_cast<Eigen::Index>(o),
                 static_cast<Eigen::Index>(hw));
    ys.noalias() = wm * as_matrix(cols, ck, hw);
    ys.colwise() += bm;
  }
  return y;
}

Tensor conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db,
                       bool need_dx) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2), hw = h * wd, ck = c * k * k;
  Tensor dx;
  if (need_dx) dx = Tensor(x.shape());
  Tensor cols({ck, hw});
  Tensor dcols;
  if (need_dx) dcols = Tensor({ck, hw});
  auto dwm = as_matrix(dw, o, ck);
  const auto wm = as_matrix(w, o, ck);
  for (std::size_t s = 0; s < n; ++s) {
    ConstMatrixMap dys(dy.data() + s * o * hw, static_cast<Eigen::Index>(o),
                       static_cast<Eigen::Index>(hw));
    im2col(x.data() + s * c * hw, c, h, wd, k, cols.data());
    dwm.noalias() += dys * as_matrix(cols, ck, hw).transpose();
    for (std::size_t oc = 0; oc < o; ++oc) db[oc] += dys.row(static_cast<Eigen::Index>(oc)).sum();
    if (need_dx) {
      as_matrix(dcols, ck, hw).noalias() = wm.transpose() * dys;
      col2im(dcols.data(), c, h, wd, k, dx.data() + s * c * hw);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// max-feature-map and pooling

Tensor mfm_forward(const Tensor& x, MfmCache* cache) {
  require(x.rank() >= 2 && x.dim(1) % 2 == 0, "mfm: channel axis must be even");
  std::vector<std::size_t> shape = x.shape();
  const std::size_t n = shape[0], half = shape[1] / 2;
  std::size_t inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) inner *= shape[i];
  shape[1] = half;
  Tensor y(shape);
  if (cache) {
    cache->in_shape = x.shape();
    cache->upper.assign(y.size(), 0);
  }
  for (std::size_t s = 0; s < n; ++s) {
    const double* lo = x.data() + s * 2 * half * inner;
    const double* hi = lo + half * inner;
    double* out = y.data() + s * half * inner;
    for (std::size_t i = 0; i < half * inner; ++i) {
      const bool up = hi[i] > lo[i];
      out[i] = up ? hi[i] : lo[i];
      if (cache) cache->upper[s * half * inner + i] = up;
    }
  }
  return y;
}

Tensor mfm_backward(const Tensor& dy, const MfmCache& cache) {
  Tensor dx(cache.in_shape);
  const std::size_t n = cache.in_shape[0];
  const std::size_t block = dy.size() / n;
  for (std::size_t s = 0; s < n; ++s) {
    double* lo = dx.data() + s * 2 * block;
    double* hi = lo + block;
    for (std::size_t i = 0; i < block; ++i) {
      const std::size_t j = s * block + i;
      (cache.upper[j] ? hi : lo)[i] = dy[j];
    }
  }
  return dx;
}

Tensor maxpool2_forward(const Tensor& x, PoolCache* cache) {
  require(x.rank() == 4 && x.dim(2) >= 2 && x.dim(3) >= 2,
          "maxpool: input too small " + shape_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({x.dim(0), x.dim(1), oh, ow});
  if (cache) {
    cache->in_shape = x.shape();
    cache->argmax.resize(y.size());
  }
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = x.data() + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (2 * i + di) * w + 2 * j + dj;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = p * oh * ow + i * ow + j;
        y[o] = in[best];
        if (cache) cache->argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return y;
}

Tensor maxpool2_backward(const Tensor& dy, const PoolCache& cache) {
  Tensor dx(cache.in_shape);
  const std::size_t h = cache.in_shape[2], w = cache.in_shape[3];
  const std::size_t out_plane = (h / 2) * (w / 2);
  for (std::size_t o = 0; o < dy.size(); ++o) {
    const std::size_t p = o / out_plane;
    dx[p * h * w + cache.argmax[o]] += dy[o];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// batch normalization

BatchNorm::BatchNorm(std::size_t channels)
    : gamma({channels}), beta({channels}), running_mean({channels}), running_var({channels}, 1.0) {
  gamma.value.fill(1.0);
}

namespace {
struct ChannelLayout {
  std::size_t n, c, inner;
};
ChannelLayout layout_of(const Tensor& x) {
  require(x.rank() == 2 || x.rank() == 4, "batchnorm: expected [N, C] or [N, C, H, W]");
  return {x.dim(0), x.dim(1), x.rank() == 4 ? x.dim(2) * x.dim(3) : 1};
}
}  // namespace

Tensor batchnorm_infer(const BatchNorm& bn, const Tensor& x) {
  const auto [n, c, inner] = layout_of(x);
  require(bn.gamma.value.size() == c, "batchnorm: channel mismatch");
  Tensor y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(bn.running_var[ch] + bn.eps);
    const double scale = bn.gamma.value[ch] * inv;
    const double shift = bn.beta.value[ch] - bn.running_mean[ch] * scale;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) y[base + i] = x[base + i] * scale + shift;
    }
  }
  return y;
}

Tensor batchnorm_forward(BatchNorm& bn, const Tensor& x, Mode mode, BatchNormCache* cache) {
  const auto [n, c, inner] = layout_of(x);
  require(bn.gamma.value.size() == c, "batchnorm: channel mismatch");
  const std::size_t m = n * inner;
  Tensor y(x.shape());
  if (cache) {
    cache->mode = mode;
    cache->xhat = Tensor(x.shape());
    cache->inv_std.assign(c, 0.0);
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < inner; ++i) sum += x[(s * c + ch) * inner + i];
      mean = sum / m;
      double sq = 0.0;
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = x[(s * c + ch) * inner + i] - mean;
          sq += d * d;
        }
      var = sq / m;
      const double unbiased = m > 1 ? sq / (m - 1) : var;
      bn.running_mean[ch] = (1.0 - bn.momentum) * bn.running_mean[ch] + bn.momentum * mean;
      bn.running_var[ch] = (1.0 - bn.momentum) * bn.running_var[ch] + bn.momentum * unbiased;
    } else {
      mean = bn.running_mean[ch];
      var = bn.running_var[ch];
    }
    const double inv = 1.0 / std::sqrt(var + bn.eps);
    if (cache) cache->inv_std[ch] = inv;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = (s * c + ch) * inner + i;
        const double xh = (x[idx] - mean) * inv;
        if (cache) cache->xhat[idx] = xh;
        y[idx] = bn.gamma.value[ch] * xh + bn.beta.value[ch];
      }
  }
  if (mode == Mode::Train) bn.tracked = true;
  return y;
}

Tensor batchnorm_backward(BatchNorm& bn, const Tensor& dy, const BatchNormCache& cache) {
  const auto [n, c, inner] = layout_of(dy);
  const std::size_t m = n * inner;
  Tensor dx(dy.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = (s * c + ch) * inner + i;
        sum_dy += dy[idx];
        sum_dy_xhat += dy[idx] * cache.xhat[idx];
      }
    bn.gamma.grad[ch] += sum_dy_xhat;
    bn.beta.grad[ch] += sum_dy;
    const double g = bn.gamma.value[ch] * cache.inv_std[ch];
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = (s * c + ch) * inner + i;
        if (cache.mode == Mode::Train) {
          dx[idx] = g * (dy[idx] - sum_dy / m - cache.xhat[idx] * sum_dy_xhat / m);
        } else {
          dx[idx] = g * dy[idx];
        }
      }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// pooling over time, activations, dropout, losses

Tensor time_mean_forward(const Tensor& x) {
  require(x.rank() == 4, "time_mean: expected [N, C, H, W]");
  const std::size_t n = x.dim(0), rows = x.dim(1) * x.dim(2), w = x.dim(3);
  Tensor y({n, rows});
  for (std::size_t r = 0; r < n * rows; ++r) {
    double acc = 0.0;
    for (std::size_t t = 0; t < w; ++t) acc += x[r * w + t];
    y[r] = acc / static_cast<double>(w);
  }
  return y;
}

Tensor time_mean_backward(const Tensor& dy, const std::vector<std::size_t>& in_shape) {
  Tensor dx(in_shape);
  const std::size_t w = in_shape[3];
  for (std::size_t r = 0; r < dy.size(); ++r) {
    const double g = dy[r] / static_cast<double>(w);
    for (std::size_t t = 0; t < w; ++t) dx[r * w + t] = g;
  }
  return dx;
}

Tensor leaky_relu_forward(const Tensor& x, double slope) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope) {
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : slope * dy[i];
  return dx;
}

Tensor dropout_forward(const Tensor& x, double rate, Mode mode, Rng* rng, DropoutCache* cache) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (mode == Mode::Eval || rate == 0.0) {
    if (cache) cache->scale.assign(x.size(), 1.0);
    return x;
  }
  require(rng != nullptr, "dropout: training mode needs an rng");
  Tensor y(x.shape());
  if (cache) cache->scale.resize(x.size());
  const double keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = uniform01(*rng) < rate ? 0.0 : keep;
    y[i] = x[i] * s;
    if (cache) cache->scale[i] = s;
  }
  return y;
}

Tensor dropout_backward(const Tensor& dy, const DropoutCache& cache) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * cache.scale[i];
  return dx;
}

Tensor log_softmax(const Tensor& logits) {
  require(logits.rank() == 2, "log_softmax: expected [N, K]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const double* z = logits.data() + s * k;
    const double mx = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < k; ++j) out[s * k + j] = z[j] - lse;
  }
  return out;
}

double nll_loss(const Tensor& log_probs, std::span<const int> targets) {
  const std::size_t n = log_probs.dim(0), k = log_probs.dim(1);
  require(targets.size() == n, "nll: target count mismatch");
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    require(targets[s] >= 0 && static_cast<std::size_t>(targets[s]) < k, "nll: target out of range");
    loss -= log_probs[s * k + static_cast<std::size_t>(targets[s])];
  }
  return loss / static_cast<double>(n);
}

Tensor log_softmax_nll_backward(const Tensor& log_probs, std::span<const int> targets) {
  const std::size_t n = log_probs.dim(0), k = log_probs.dim(1);
  Tensor dz(log_probs.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(log_probs[s * k + j]);
      dz[s * k + j] = (p - (static_cast<int>(j) == targets[s] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  return dz;
}

}  // namespace fsim::nn
