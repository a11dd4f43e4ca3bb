#include "fsim/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "fsim/common.hpp"

namespace fsim {
namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ofstream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

double decode_sample(const unsigned char* p, int format, int bits) {
  if (format == 3) {
    if (bits == 32) {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    double d;
    std::memcpy(&d, p, 8);
    return d;
  }
  switch (bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
      return static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    case 24: {
      std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
      if (v & 0x800000) v |= ~0xffffff;
      return v / 8388608.0;
    }
    default:
      return static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
  }
}

double blackman(double x) {  // x in [-1, 1]
  const double t = std::numbers::pi * (x + 1.0);
  return 0.42 - 0.5 * std::cos(t) + 0.08 * std::cos(2.0 * t);
}

}  // namespace

Waveform load_waveform(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open audio file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
              std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          "not a RIFF/WAVE file: " + path.string());

  int format = 0, channels = 0, bits = 0;
  long rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && avail >= 16) {
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE && avail >= 26) format = read_u16(chunk + 32);  // extensible
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1);
  }
  require(format == 1 || format == 3, "unsupported WAV encoding in " + path.string());
  require(channels > 0 && rate > 0, "malformed fmt chunk in " + path.string());
  require((format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32)) ||
              (format == 3 && (bits == 32 || bits == 64)),
          "unsupported WAV sample width in " + path.string());
  require(data != nullptr, "missing data chunk in " + path.string());

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data_size / frame_bytes;
  require(frames > 0, "zero-length audio: " + path.string());

  std::vector<float> mono(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      acc += decode_sample(data + i * frame_bytes + c * (bits / 8), format, bits);
    }
    mono[i] = static_cast<float>(acc / channels);
  }
  for (float v : mono) require(std::isfinite(v), "non-finite sample in " + path.string());

  Waveform wave;
  wave.samples = rate == kSampleRate ? std::move(mono)
                                     : resample(mono, static_cast<int>(rate), kSampleRate);
  return wave;
}

void save_waveform(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write audio file: " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 4);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, 3);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * 4);
  put_u16(out, 4);
  put_u16(out, 32);
  out.write("data", 4);
  put_u32(out, data_bytes);
  out.write(reinterpret_cast<const char*>(wave.samples.data()),
            static_cast<std::streamsize>(data_bytes));
  require(static_cast<bool>(out), "write failed: " + path.string());
}

std::vector<float> resample(std::span<const float> input, int in_rate, int out_rate) {
  require(in_rate > 0 && out_rate > 0, "resample: rates must be positive");
  if (in_rate == out_rate) return {input.begin(), input.end()};

  const long g = std::gcd(in_rate, out_rate);
  const long up = out_rate / g;    // number of distinct fractional phases
  const long down = in_rate / g;
  const double cutoff = 0.97 * std::min(1.0, static_cast<double>(out_rate) / in_rate);
  constexpr int kZeroCrossings = 16;
  const int half = static_cast<int>(std::ceil(kZeroCrossings / cutoff));
  const int taps = 2 * half + 1;

  // table[p][j] is the weight of input sample (k0 - half + j) for output phase p,
  // where the output lies at k0 + p / up.
  std::vector<double> table(static_cast<std::size_t>(up) * taps);
  for (long p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / up;
    double sum = 0.0;
    for (int j = 0; j < taps; ++j) {
      const double d = (j - half) - frac;
      const double x = cutoff * d;
      const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double w = std::abs(d) >= half ? 0.0 : blackman(d / half);
      table[p * taps + j] = cutoff * sinc * w;
      sum += table[p * taps + j];
    }
    // unity DC gain per phase
    for (int j = 0; j < taps; ++j) table[p * taps + j] /= sum;
  }

  const std::size_t n_in = input.size();
  const std::size_t n_out =
      static_cast<std::size_t>((static_cast<long long>(n_in) * out_rate + in_rate - 1) / in_rate);
  std::vector<float> out(n_out);
  for (std::size_t n = 0; n < n_out; ++n) {
    const long long pos = static_cast<long long>(n) * down;
    const long long k0 = pos / up;
    const long p = static_cast<long>(pos % up);
    const double* w = &table[static_cast<std::size_t>(p) * taps];
    double acc = 0.0;
    for (int j = 0; j < taps; ++j) {
      const long long k = k0 - half + j;
      if (k >= 0 && k < static_cast<long long>(n_in)) acc += w[j] * input[k];
    }
    out[n] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace fsim
