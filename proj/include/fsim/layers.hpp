#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fsim/common.hpp"
#include "fsim/tensor.hpp"

// Forward/backward kernels for the small networks in this project. Backward
// functions accumulate (+=) into parameter gradients and return the gradient
// with respect to the layer input.
namespace fsim::nn {

enum class Mode { Train, Eval };

void init_uniform(Tensor& t, double bound, Rng& rng);

/// x [N, in], w [out, in], b [out] -> [N, out]
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db,
                       bool need_dx = true);

/// Stride-1 convolution with zero "same" padding; x [N, C, H, W], w [O, C, k, k]
/// with k odd, b [O].
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db,
                       bool need_dx = true);

/// Max-Feature-Map: splits axis 1 in two halves and keeps the elementwise max.
struct MfmCache {
  std::vector<std::uint8_t> upper;  // 1 where the second half won
  std::vector<std::size_t> in_shape;
};
Tensor mfm_forward(const Tensor& x, MfmCache* cache = nullptr);
Tensor mfm_backward(const Tensor& dy, const MfmCache& cache);

/// 2x2 max pooling with stride 2 over the last two axes (floor on odd sizes).
struct PoolCache {
  std::vector<std::uint32_t> argmax;
  std::vector<std::size_t> in_shape;
};
Tensor maxpool2_forward(const Tensor& x, PoolCache* cache = nullptr);
Tensor maxpool2_backward(const Tensor& dy, const PoolCache& cache);

/// Per-channel normalization over axis 1 of [N, C] or [N, C, H, W]. Train mode
/// uses batch statistics and updates the running estimates (unbiased variance);
/// Eval mode uses the running estimates.
struct BatchNorm {
  Param gamma;
  Param beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  bool tracked = false;  // running statistics have been estimated or loaded

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);
};
struct BatchNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
  Mode mode = Mode::Eval;
};
Tensor batchnorm_forward(BatchNorm& bn, const Tensor& x, Mode mode, BatchNormCache* cache);
Tensor batchnorm_infer(const BatchNorm& bn, const Tensor& x);
Tensor batchnorm_backward(BatchNorm& bn, const Tensor& dy, const BatchNormCache& cache);

/// [N, C, H, W] -> [N, C * H], averaging over the last (time) axis.
Tensor time_mean_forward(const Tensor& x);
Tensor time_mean_backward(const Tensor& dy, const std::vector<std::size_t>& in_shape);

Tensor leaky_relu_forward(const Tensor& x, double slope);
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double slope);

/// Inverted dropout; identity in Eval mode or when rate == 0.
struct DropoutCache {
  std::vector<double> scale;
};
Tensor dropout_forward(const Tensor& x, double rate, Mode mode, Rng* rng, DropoutCache* cache);
Tensor dropout_backward(const Tensor& dy, const DropoutCache& cache);

/// Row-wise log-softmax of [N, K].
Tensor log_softmax(const Tensor& logits);
/// Mean negative log-likelihood over the batch.
double nll_loss(const Tensor& log_probs, std::span<const int> targets);
/// Gradient of mean NLL(log_softmax(z)) with respect to z.
Tensor log_softmax_nll_backward(const Tensor& log_probs, std::span<const int> targets);

}  // namespace fsim::nn
