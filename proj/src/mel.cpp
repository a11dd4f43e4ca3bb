#include "fsim/mel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fsim/common.hpp"

namespace fsim {

void validate(const MelSpecConfig& cfg) {
  require(cfg.n_fft > 0 && (cfg.n_fft & (cfg.n_fft - 1)) == 0, "mel: n_fft must be a power of two");
  require(cfg.win_length > 0 && cfg.win_length <= cfg.n_fft, "mel: need 0 < win_length <= n_fft");
  require(cfg.hop_length > 0, "mel: hop_length must be positive");
  require(cfg.n_mels > 0, "mel: n_mels must be positive");
  require(cfg.f_min >= 0.0 && cfg.f_min < cfg.f_max && cfg.f_max <= cfg.sample_rate / 2.0,
          "mel: need 0 <= f_min < f_max <= sample_rate / 2");
}

std::size_t mel_frame_count(std::size_t n_samples, const MelSpecConfig& cfg) {
  require(n_samples >= cfg.win_length, "mel: segment shorter than one analysis window");
  return 1 + (n_samples - cfg.win_length) / cfg.hop_length;
}

void fft_inplace(std::vector<std::complex<double>>& data) {
  const std::size_t n = data.size();
  require(n > 0 && (n & (n - 1)) == 0, "fft: size must be a power of two");
  thread_local std::vector<std::complex<double>> twiddle;
  if (twiddle.size() != n / 2) {
    twiddle.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k)
      twiddle[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  // explicit complex arithmetic: std::complex operator* carries NaN handling
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2, stride = n / len;
    for (std::size_t k = 0; k < half; ++k) {
      const double wr = twiddle[k * stride].real(), wi = twiddle[k * stride].imag();
      for (std::size_t i = k; i < n; i += len) {
        const double ur = data[i].real(), ui = data[i].imag();
        const double xr = data[i + half].real(), xi = data[i + half].imag();
        const double vr = xr * wr - xi * wi, vi = xr * wi + xi * wr;
        data[i] = {ur + vr, ui + vi};
        data[i + half] = {ur - vr, ui - vi};
      }
    }
  }
}

namespace {
constexpr double kLinearStep = 200.0 / 3.0;
constexpr double kLogStartHz = 1000.0;
constexpr double kLogStartMel = kLogStartHz / kLinearStep;
const double kLogStep = std::log(6.4) / 27.0;
}  // namespace

double hz_to_mel(double hz) {
  if (hz < kLogStartHz) return hz / kLinearStep;
  return kLogStartMel + std::log(hz / kLogStartHz) / kLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kLogStartMel) return mel * kLinearStep;
  return kLogStartHz * std::exp(kLogStep * (mel - kLogStartMel));
}

namespace {
std::vector<double> mel_edges(const MelSpecConfig& cfg) {
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (cfg.n_mels + 1));
  return edges;
}
}  // namespace

std::vector<double> mel_center_frequencies(const MelSpecConfig& cfg) {
  const auto edges = mel_edges(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

MelFrontend::MelFrontend(const MelSpecConfig& cfg) : cfg_(cfg) {
  validate(cfg);
  window_.resize(cfg.win_length);
  for (std::size_t i = 0; i < cfg.win_length; ++i)  // periodic Hamming
    window_[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / cfg.win_length);

  const std::size_t bins = cfg.n_fft / 2 + 1;
  const auto edges = mel_edges(cfg);
  filters_.assign(cfg.n_mels * bins, 0.0);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    const double norm = 2.0 / (right - left);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double rise = (f - left) / (center - left);
      const double fall = (right - f) / (right - center);
      filters_[m * bins + k] = norm * std::max(0.0, std::min(rise, fall));
    }
    std::size_t lo = 0, hi = bins;
    while (lo < bins && filters_[m * bins + lo] == 0.0) ++lo;
    while (hi > lo && filters_[m * bins + hi - 1] == 0.0) --hi;
    support_.emplace_back(lo, hi);
  }
}

MelSpec MelFrontend::compute(std::span<const float> samples) const {
  const std::size_t frames = mel_frame_count(samples.size(), cfg_);
  const std::size_t bins = cfg_.n_fft / 2 + 1;
  MelSpec spec;
  spec.n_mels = cfg_.n_mels;
  spec.n_frames = frames;
  spec.values.resize(cfg_.n_mels * frames);

  std::vector<std::complex<double>> buf(cfg_.n_fft);
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const float* frame = samples.data() + t * cfg_.hop_length;
    for (std::size_t i = 0; i < cfg_.n_fft; ++i)
      buf[i] = i < cfg_.win_length ? frame[i] * window_[i] : 0.0;
    fft_inplace(buf);
    for (std::size_t k = 0; k < bins; ++k)
      power[k] = buf[k].real() * buf[k].real() + buf[k].imag() * buf[k].imag();
    for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
      const double* w = &filters_[m * bins];
      double acc = 0.0;
      for (std::size_t k = support_[m].first; k < support_[m].second; ++k) acc += w[k] * power[k];
      spec.values[m * frames + t] = std::log(acc + kLogFloor);
    }
  }
  return spec;
}

MelSpec mel_spectrogram(const Segment& seg, const MelSpecConfig& cfg) {
  return MelFrontend(cfg).compute(seg.samples);
}

}  // namespace fsim
