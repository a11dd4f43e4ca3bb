#include <doctest.h>

#include <cmath>

#include "fsim/layers.hpp"
#include "gradcheck.hpp"

using namespace fsim;
using namespace fsim::nn;
using fsim::testing::dot;
using fsim::testing::numeric_grad;
using fsim::testing::rel_error;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double bound = 1.0) {
  Tensor t(std::move(shape));
  init_uniform(t, bound, rng);
  return t;
}

// Direct 4-loop convolution with zero padding.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const long pad = static_cast<long>(k / 2);
  Tensor y({n, o, h, wd});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < wd; ++j) {
          double acc = b[oc];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long yi = static_cast<long>(i + u) - pad, xj = static_cast<long>(j + v) - pad;
                if (yi < 0 || xj < 0 || yi >= static_cast<long>(h) || xj >= static_cast<long>(wd)) continue;
                acc += w[((oc * c + ic) * k + u) * k + v] * x[((s * c + ic) * h + yi) * wd + xj];
              }
          y[((s * o + oc) * h + i) * wd + j] = acc;
        }
  return y;
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("linear forward and gradients") {
  Rng rng(1);
  Tensor x = random_tensor({4, 5}, rng), w = random_tensor({3, 5}, rng), b = random_tensor({3}, rng);
  const Tensor y = linear_forward(x, w, b);
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < 5; ++i) acc += w[o * 5 + i] * x[s * 5 + i];
      CHECK(y[s * 3 + o] == doctest::Approx(acc).epsilon(1e-12));
    }
  const Tensor r = random_tensor({4, 3}, rng);
  Tensor dw(w.shape()), db(b.shape());
  const Tensor dx = linear_backward(x, w, r, dw, db);
  auto loss = [&] { return dot(linear_forward(x, w, b), r); };
  CHECK(rel_error(dx, numeric_grad(x, loss)) < 1e-7);
  CHECK(rel_error(dw, numeric_grad(w, loss)) < 1e-7);
  CHECK(rel_error(db, numeric_grad(b, loss)) < 1e-7);
  CHECK_THROWS_AS(linear_forward(x, random_tensor({3, 4}, rng), b), Error);
}

TEST_CASE("convolution matches the direct loop and its gradients") {
  Rng rng(2);
  for (std::size_t k : {1, 3, 5}) {
    Tensor x = random_tensor({2, 2, 6, 7}, rng), w = random_tensor({4, 2, k, k}, rng),
           b = random_tensor({4}, rng);
    const Tensor y = conv2d_forward(x, w, b);
    const Tensor ref = naive_conv(x, w, b);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    const Tensor r = random_tensor(y.shape(), rng);
    Tensor dw(w.shape()), db(b.shape());
    const Tensor dx = conv2d_backward(x, w, r, dw, db);
    auto loss = [&] { return dot(conv2d_forward(x, w, b), r); };
    CHECK(rel_error(dx, numeric_grad(x, loss)) < 1e-7);
    CHECK(rel_error(dw, numeric_grad(w, loss)) < 1e-7);
    CHECK(rel_error(db, numeric_grad(b, loss)) < 1e-7);
  }
  Rng r2(3);
  CHECK_THROWS_AS(conv2d_forward(random_tensor({1, 2, 4, 4}, r2), random_tensor({1, 2, 2, 2}, r2),
                                 random_tensor({1}, r2)),
                  Error);
}

TEST_CASE("max-feature-map keeps the larger half") {
  Rng rng(4);
  Tensor x = random_tensor({2, 4, 3, 2}, rng);
  MfmCache cache;
  const Tensor y = mfm_forward(x, &cache);
  REQUIRE(y.shape() == std::vector<std::size_t>{2, 2, 3, 2});
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 12; ++i)
      CHECK(y[s * 12 + i] == std::max(x[s * 24 + i], x[s * 24 + 12 + i]));
  const Tensor r = random_tensor(y.shape(), rng);
  const Tensor dx = mfm_backward(r, cache);
  CHECK(rel_error(dx, numeric_grad(x, [&] { return dot(mfm_forward(x), r); })) < 1e-7);
  CHECK_THROWS_AS(mfm_forward(random_tensor({1, 3}, rng)), Error);
}

TEST_CASE("2x2 max pooling floors odd sizes") {
  Rng rng(5);
  Tensor x = random_tensor({1, 2, 5, 4}, rng);
  PoolCache cache;
  const Tensor y = maxpool2_forward(x, &cache);
  REQUIRE(y.shape() == std::vector<std::size_t>{1, 2, 2, 2});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double m = -1e9;
        for (std::size_t u = 0; u < 2; ++u)
          for (std::size_t v = 0; v < 2; ++v) m = std::max(m, x[(c * 5 + 2 * i + u) * 4 + 2 * j + v]);
        CHECK(y[(c * 2 + i) * 2 + j] == m);
      }
  const Tensor r = random_tensor(y.shape(), rng);
  const Tensor dx = maxpool2_backward(r, cache);
  CHECK(rel_error(dx, numeric_grad(x, [&] { return dot(maxpool2_forward(x), r); })) < 1e-7);
}

TEST_CASE("batch norm: train statistics, running estimates, gradients") {
  Rng rng(6);
  BatchNorm bn(3);
  init_uniform(bn.gamma.value, 1.0, rng);
  init_uniform(bn.beta.value, 1.0, rng);
  Tensor x = random_tensor({4, 3, 2, 2}, rng, 2.0);
  BatchNormCache cache;
  const Tensor y = batchnorm_forward(bn, x, Mode::Train, &cache);
  CHECK(bn.tracked);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t i = 0; i < 4; ++i) mean += x[(s * 3 + c) * 4 + i];
    mean /= 16.0;
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t i = 0; i < 4; ++i) sq += std::pow(x[(s * 3 + c) * 4 + i] - mean, 2);
    CHECK(bn.running_mean[c] == doctest::Approx(0.1 * mean));
    CHECK(bn.running_var[c] == doctest::Approx(0.9 + 0.1 * sq / 15.0));
    const double inv = 1.0 / std::sqrt(sq / 16.0 + 1e-5);
    CHECK(y[(1 * 3 + c) * 4 + 2] ==
          doctest::Approx(bn.gamma.value[c] * (x[(1 * 3 + c) * 4 + 2] - mean) * inv + bn.beta.value[c]));
  }

  const Tensor r = random_tensor(y.shape(), rng);
  bn.gamma.zero_grad();
  bn.beta.zero_grad();
  const Tensor dx = batchnorm_backward(bn, r, cache);
  auto loss = [&] {
    BatchNorm copy = bn;
    return dot(batchnorm_forward(copy, x, Mode::Train, nullptr), r);
  };
  CHECK(rel_error(dx, numeric_grad(x, loss)) < 1e-6);
  CHECK(rel_error(bn.gamma.grad, numeric_grad(bn.gamma.value, loss)) < 1e-6);
  CHECK(rel_error(bn.beta.grad, numeric_grad(bn.beta.value, loss)) < 1e-6);

  SUBCASE("eval mode uses running statistics and fixed-statistics gradients") {
    BatchNormCache ec;
    const Tensor ye = batchnorm_forward(bn, x, Mode::Eval, &ec);
    const Tensor yi = batchnorm_infer(bn, x);
    for (std::size_t i = 0; i < ye.size(); ++i) CHECK(ye[i] == doctest::Approx(yi[i]).epsilon(1e-12));
    const Tensor dxe = batchnorm_backward(bn, r, ec);
    CHECK(rel_error(dxe, numeric_grad(x, [&] { return dot(batchnorm_infer(bn, x), r); })) < 1e-7);
  }
}

TEST_CASE("time mean pools the last axis") {
  Rng rng(7);
  Tensor x = random_tensor({2, 3, 2, 5}, rng);
  const Tensor y = time_mean_forward(x);
  REQUIRE(y.shape() == std::vector<std::size_t>{2, 6});
  double acc = 0.0;
  for (std::size_t t = 0; t < 5; ++t) acc += x[((1 * 3 + 2) * 2 + 1) * 5 + t];
  CHECK(y[1 * 6 + 2 * 2 + 1] == doctest::Approx(acc / 5.0));
  const Tensor r = random_tensor(y.shape(), rng);
  const Tensor dx = time_mean_backward(r, x.shape());
  CHECK(rel_error(dx, numeric_grad(x, [&] { return dot(time_mean_forward(x), r); })) < 1e-8);
}

TEST_CASE("leaky relu and dropout") {
  Rng rng(8);
  Tensor x = random_tensor({3, 4}, rng);
  const Tensor y = leaky_relu_forward(x, 0.01);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == (x[i] > 0 ? x[i] : 0.01 * x[i]));
  const Tensor r = random_tensor(y.shape(), rng);
  CHECK(rel_error(leaky_relu_backward(x, r, 0.01),
                  numeric_grad(x, [&] { return dot(leaky_relu_forward(x, 0.01), r); })) < 1e-7);

  CHECK(dropout_forward(x, 0.5, Mode::Eval, nullptr, nullptr) == x);
  DropoutCache cache;
  Rng drop(9);
  const Tensor d = dropout_forward(x, 0.5, Mode::Train, &drop, &cache);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK((cache.scale[i] == 0.0 || cache.scale[i] == 2.0));
    CHECK(d[i] == x[i] * cache.scale[i]);
  }
  const Tensor g = dropout_backward(r, cache);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(g[i] == r[i] * cache.scale[i]);
  // keep rate of inverted dropout
  Tensor big({20000}, 1.0);
  DropoutCache bc;
  const Tensor out = dropout_forward(big, 0.3, Mode::Train, &drop, &bc);
  double mean = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) mean += out[i];
  CHECK(mean / out.size() == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("log softmax and NLL") {
  Rng rng(10);
  Tensor z = random_tensor({4, 3}, rng, 3.0);
  const std::vector<int> t{0, 2, 1, 2};
  const Tensor lp = log_softmax(z);
  for (std::size_t s = 0; s < 4; ++s) {
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) total += std::exp(lp[s * 3 + k]);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  double expect = 0.0;
  for (std::size_t s = 0; s < 4; ++s) expect -= lp[s * 3 + t[s]];
  CHECK(nll_loss(lp, t) == doctest::Approx(expect / 4.0));
  const Tensor g = log_softmax_nll_backward(lp, t);
  CHECK(rel_error(g, numeric_grad(z, [&] { return nll_loss(log_softmax(z), t); })) < 1e-7);
  // large logits stay finite
  Tensor huge({1, 2});
  huge[0] = 1000.0;
  huge[1] = -1000.0;
  const Tensor lh = log_softmax(huge);
  CHECK(std::isfinite(lh[1]));
  CHECK(lh[0] == doctest::Approx(0.0));
  CHECK_THROWS_AS(nll_loss(lp, std::vector<int>{0, 3, 1, 2}), Error);
}

}
