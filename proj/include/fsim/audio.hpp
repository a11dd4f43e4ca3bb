#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace fsim {

inline constexpr int kSampleRate = 16000;

/// Mono audio at kSampleRate after ingestion. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Reads a RIFF/WAVE file (integer PCM 8/16/24/32 bit or IEEE float 32/64 bit),
/// averages channels to mono and resamples to 16 kHz.
Waveform load_waveform(const std::filesystem::path& path);

/// Writes 32-bit float mono WAV. Float keeps synthesized corpora bit-exact on reload.
void save_waveform(const std::filesystem::path& path, const Waveform& wave);

/// Band-limited resampling with a Blackman-windowed sinc kernel, evaluated as a
/// polyphase table over the reduced rate ratio. Output length is
/// ceil(n * out_rate / in_rate).
std::vector<float> resample(std::span<const float> input, int in_rate, int out_rate);

}  // namespace fsim
