#pragma once

// Slow, direct reference implementations used to check the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fsim/evaluation.hpp"
#include "fsim/similarity.hpp"
#include "fsim/splicing.hpp"

namespace fsim::oracle {

/// Eval-mode head, one scalar at a time, straight from the layer definitions.
inline std::array<double, 2> head_log_probs(const SimilarityHead& head, std::span<const double> e_a,
                                            std::span<const double> e_b) {
  std::map<std::string, std::vector<double>> p;
  for (const auto& ref : head.state()) p[ref.name] = ref.value->values();
  const std::size_t L = head.config().embedding_dim, M = head.config().projection_dim;
  auto project = [&](std::span<const double> e) {
    std::vector<double> h(M);
    for (std::size_t i = 0; i < M; ++i) {
      h[i] = p["fc1.bias"][i];
      for (std::size_t j = 0; j < L; ++j) h[i] += p["fc1.weight"][i * L + j] * e[j];
    }
    return h;
  };
  const auto ha = project(e_a), hb = project(e_b);
  std::vector<double> f;
  for (double v : ha) f.push_back(v);
  for (double v : hb) f.push_back(v);
  for (std::size_t i = 0; i < M; ++i) f.push_back(ha[i] * hb[i]);
  std::vector<double> act(M);
  for (std::size_t i = 0; i < M; ++i) {
    double u = p["fc2.bias"][i];
    for (std::size_t j = 0; j < 3 * M; ++j) u += p["fc2.weight"][i * 3 * M + j] * f[j];
    const double bn = (u - p["norm.running_mean"][i]) / std::sqrt(p["norm.running_var"][i] + 1e-5) *
                          p["norm.gamma"][i] +
                      p["norm.beta"][i];
    act[i] = bn > 0 ? bn : head.config().leaky_slope * bn;
  }
  std::array<double, 2> z{};
  for (std::size_t k = 0; k < 2; ++k) {
    z[k] = p["fc3.bias"][k];
    for (std::size_t i = 0; i < M; ++i) z[k] += p["fc3.weight"][k * M + i] * act[i];
  }
  const double mx = std::max(z[0], z[1]);
  const double lse = mx + std::log(std::exp(z[0] - mx) + std::exp(z[1] - mx));
  return {z[0] - lse, z[1] - lse};
}

/// AUC by counting every positive/negative pair, ties as one half.
inline double auc(std::span<const ScoredTrial> trials) {
  long wins2 = 0, npos = 0, nneg = 0;
  for (const auto& t : trials) (t.label ? npos : nneg)++;
  for (const auto& p : trials)
    if (p.label == 1)
      for (const auto& n : trials)
        if (n.label == 0) wins2 += p.score > n.score ? 2 : (p.score == n.score ? 1 : 0);
  return static_cast<double>(wins2) / (2.0 * static_cast<double>(npos) * static_cast<double>(nneg));
}

/// EER by sweeping every distinct score, counting errors from scratch at
/// each threshold, then bracketing the first FPR <= FNR crossing.
inline EerResult eer(std::span<const ScoredTrial> trials) {
  std::set<double> unique;
  long npos = 0, nneg = 0;
  for (const auto& t : trials) {
    unique.insert(t.score);
    (t.label ? npos : nneg)++;
  }
  std::vector<double> th(unique.begin(), unique.end()), fpr, fnr;
  for (double t : th) {
    long fp = 0, fn = 0;
    for (const auto& x : trials) {
      if (x.label == 0 && x.score >= t) ++fp;
      if (x.label == 1 && x.score < t) ++fn;
    }
    fpr.push_back(static_cast<double>(fp) / static_cast<double>(nneg));
    fnr.push_back(static_cast<double>(fn) / static_cast<double>(npos));
  }
  bool beyond = false;
  std::size_t i = 0;
  while (i < th.size() && fpr[i] - fnr[i] > 0) ++i;
  if (i == th.size()) {
    th.push_back(th.back());
    fpr.push_back(0.0);
    fnr.push_back(1.0);
    beyond = true;
  }
  if (i == 0) return {fpr[0], th[0]};
  const double d0 = fpr[i - 1] - fnr[i - 1], d1 = fpr[i] - fnr[i];
  if (d1 == 0.0) return {fpr[i], 0.5 * (th[i - 1] + th[i])};
  const double a = d0 / (d0 - d1);
  return {fpr[i - 1] + a * (fpr[i] - fpr[i - 1]),
          beyond ? th[i - 1] : th[i - 1] + a * (th[i] - th[i - 1])};
}

/// Gaussian smoothing with explicit mirrored indices.
inline std::vector<double> smooth(const std::vector<double>& x, double sigma) {
  const long n = static_cast<long>(x.size());
  const long r = static_cast<long>(std::ceil(4.0 * sigma));
  std::vector<double> k;
  double total = 0.0;
  for (long j = -r; j <= r; ++j) {
    k.push_back(std::exp(-static_cast<double>(j * j) / (2.0 * sigma * sigma)));
    total += k.back();
  }
  std::vector<double> y(x.size(), 0.0);
  for (long i = 0; i < n; ++i)
    for (long j = -r; j <= r; ++j) {
      long idx = i + j;
      while (idx < 0 || idx >= n) idx = idx < 0 ? -idx - 1 : 2 * n - 1 - idx;
      y[i] += k[j + r] / total * x[idx];
    }
  return y;
}

/// Minima via peaks of -x; prominence as the least drop over every window
/// around the peak that it dominates; width by scanning outward.
inline std::vector<Minimum> minima(const std::vector<double>& seq, double min_depth,
                                   std::size_t min_width) {
  const std::size_t n = seq.size();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = -seq[i];
  std::vector<Minimum> out;
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t a = i, b = i;
    while (a > 0 && x[a - 1] == x[i]) --a;
    while (b + 1 < n && x[b + 1] == x[i]) ++b;
    if (a == 0 || b + 1 == n || !(x[a - 1] < x[i]) || !(x[b + 1] < x[i])) continue;
    const std::size_t p = (a + b) / 2;
    if (!seen.insert(p).second) continue;
    double best = INFINITY;
    for (std::size_t lo = 0; lo <= p; ++lo)
      for (std::size_t hi = p; hi < n; ++hi) {
        const double top = *std::max_element(x.begin() + lo, x.begin() + hi + 1);
        if (top > x[p]) continue;
        const double left = *std::min_element(x.begin() + lo, x.begin() + p + 1);
        const double right = *std::min_element(x.begin() + p, x.begin() + hi + 1);
        best = std::min(best, std::max(left, right));
      }
    const double depth = x[p] - best;
    const double level = x[p] - depth / 2.0;
    std::size_t width = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t lo = std::min(j, p), hi = std::max(j, p);
      bool ok = true;
      for (std::size_t k = lo; k <= hi; ++k) ok = ok && x[k] > level;
      width += ok;
    }
    if (depth >= min_depth && width >= min_width) out.push_back({p, depth, width});
  }
  return out;
}

/// Number of window pairs by walking the track.
inline std::size_t window_pairs(std::size_t n, std::size_t w, std::size_t s) {
  std::size_t count = 0;
  for (std::size_t start = 0; start + 2 * w <= n; start += s) ++count;
  return count;
}

}  // namespace fsim::oracle
