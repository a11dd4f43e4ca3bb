#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fsim/corpus.hpp"

namespace fsim {

/// Log-mel frontend settings. The STFT is not centered: frame t covers samples
/// [t * hop_length, t * hop_length + win_length), so
/// n_frames = 1 + floor((n_samples - win_length) / hop_length).
struct MelSpecConfig {
  std::size_t n_fft = 512;
  std::size_t win_length = 400;
  std::size_t hop_length = 160;
  double f_min = 20.0;
  double f_max = 7600.0;
  std::size_t n_mels = 80;
  int sample_rate = kSampleRate;

  bool operator==(const MelSpecConfig&) const = default;
};

void validate(const MelSpecConfig& cfg);
std::size_t mel_frame_count(std::size_t n_samples, const MelSpecConfig& cfg);

inline constexpr double kLogFloor = 1e-10;

/// values is row-major [n_mels x n_frames] of natural-log mel energies.
struct MelSpec {
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;
  std::vector<double> values;

  double at(std::size_t mel, std::size_t frame) const { return values[mel * n_frames + frame]; }
};

/// In-place radix-2 complex FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& data);

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Center frequency (Hz) of each of the n_mels triangular filters.
std::vector<double> mel_center_frequencies(const MelSpecConfig& cfg);

/// Precomputed window and area-normalized triangular filterbank.
class MelFrontend {
 public:
  explicit MelFrontend(const MelSpecConfig& cfg);

  MelSpec compute(std::span<const float> samples) const;
  const MelSpecConfig& config() const { return cfg_; }
  /// Row-major [n_mels x (n_fft / 2 + 1)].
  const std::vector<double>& filterbank() const { return filters_; }

 private:
  MelSpecConfig cfg_;
  std::vector<double> window_;
  std::vector<double> filters_;
  std::vector<std::pair<std::size_t, std::size_t>> support_;  // nonzero bins per filter
};

MelSpec mel_spectrogram(const Segment& seg, const MelSpecConfig& cfg);

}  // namespace fsim
