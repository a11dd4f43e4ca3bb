#include "fsim/splicing.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace fsim {

std::size_t SpliceScanConfig::window_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::llround(window_len * sample_rate));
}

std::size_t SpliceScanConfig::stride_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::llround(stride * sample_rate));
}

void validate(const SpliceScanConfig& cfg) {
  require(cfg.window_len > 0.0 && cfg.window_samples() > 0, "scan: window_len must be positive");
  require(cfg.stride > 0.0 && cfg.stride_samples() > 0, "scan: stride must be positive");
  require(cfg.gaussian_sigma > 0.0, "scan: gaussian_sigma must be positive");
  require(cfg.min_width >= 1, "scan: min_width must be at least 1");
}

std::size_t window_pair_count(std::size_t n_samples, std::size_t window, std::size_t stride) {
  require(window > 0 && stride > 0, "window and stride must be positive");
  if (n_samples < 2 * window) return 0;
  return 1 + (n_samples - 2 * window) / stride;
}

std::vector<std::pair<Segment, Segment>> window_pairs(const Waveform& wave,
                                                      const SpliceScanConfig& cfg,
                                                      const std::string& track) {
  validate(cfg);
  const std::size_t w = cfg.window_samples(wave.sample_rate);
  const std::size_t s = cfg.stride_samples(wave.sample_rate);
  const std::size_t count = window_pair_count(wave.size(), w, s);
  require(count > 0, "track of " + std::to_string(wave.duration_s()) +
                         " s is shorter than two windows (" + std::to_string(2 * cfg.window_len) +
                         " s)");
  std::vector<std::pair<Segment, Segment>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t a = i * s;
    out.emplace_back(fit_segment(wave, w, a, track), fit_segment(wave, w, a + w, track));
  }
  return out;
}

ScoreSequence score_track(const SiameseModel& model, const Waveform& wave,
                          const SpliceScanConfig& cfg) {
  validate(cfg);
  require(wave.sample_rate == kSampleRate, "scan expects 16 kHz audio");
  const std::size_t w = cfg.window_samples(wave.sample_rate);
  require(model.segment_len == w,
          "model was trained on " + std::to_string(model.segment_len) +
              "-sample segments but the scan window is " + std::to_string(w) + " samples");
  // a private track id lets overlapping pairs share window embeddings
  SiameseScorer scorer(model);
  const std::string track = "scan:" + hex64(fnv1a(wave.samples.data(), wave.samples.size() * sizeof(float)));
  ScoreSequence seq;
  const std::size_t s = cfg.stride_samples(wave.sample_rate);
  std::size_t i = 0;
  for (const auto& [a, b] : window_pairs(wave, cfg, track)) {
    seq.raw.push_back(scorer.score(a, b));
    seq.pair_boundary_times.push_back(static_cast<double>(i * s + w) / wave.sample_rate);
    ++i;
  }
  seq.smoothed = gaussian_smooth(seq.raw, cfg.gaussian_sigma);
  return seq;
}

std::vector<double> gaussian_smooth(std::span<const double> seq, double sigma) {
  require(!seq.empty(), "gaussian_smooth: empty sequence");
  require(sigma > 0.0, "gaussian_smooth: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (auto& v : kernel) v /= total;

  const long n = static_cast<long>(seq.size());
  auto reflect = [n](long i) {
    const long period = 2 * n;
    long m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
  };
  std::vector<double> out(seq.size());
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * seq[reflect(i + k)];
    out[i] = acc;
  }
  return out;
}

std::vector<Minimum> detect_minima(std::span<const double> seq, double min_depth,
                                   std::size_t min_width) {
  const std::size_t n = seq.size();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = -seq[i];

  std::vector<Minimum> out;
  std::size_t i = 1;
  while (i + 1 < n) {
    if (x[i - 1] < x[i]) {
      std::size_t ahead = i + 1;
      while (ahead < n && x[ahead] == x[i]) ++ahead;
      if (ahead < n && x[ahead] < x[i]) {
        const std::size_t peak = (i + ahead - 1) / 2;
        const double height = x[peak];

        double left_low = height;
        for (std::size_t j = peak; j-- > 0 && x[j] <= height;) left_low = std::min(left_low, x[j]);
        double right_low = height;
        for (std::size_t j = peak + 1; j < n && x[j] <= height; ++j)
          right_low = std::min(right_low, x[j]);
        const double depth = height - std::max(left_low, right_low);

        const double level = height - depth / 2.0;
        std::size_t lo = peak, hi = peak;
        while (lo > 0 && x[lo - 1] > level) --lo;
        while (hi + 1 < n && x[hi + 1] > level) ++hi;
        const std::size_t width = hi - lo + 1;

        if (depth >= min_depth && width >= min_width) out.push_back({peak, depth, width});
        i = ahead;
        continue;
      }
      i = ahead;
      continue;
    }
    ++i;
  }
  return out;
}

nlohmann::json SpliceReport::to_json() const {
  nlohmann::json mins = nlohmann::json::array();
  for (const auto& m : minima) mins.push_back({{"time", m.time}, {"depth", m.depth}, {"width", m.width}});
  return {{"global_score", global_score},
          {"minima", mins},
          {"decision", decision()},
          {"operating_threshold", operating_threshold}};
}

SpliceReport splice_report(const ScoreSequence& seq, const SpliceScanConfig& cfg,
                           double operating_threshold) {
  require(seq.smoothed.size() == seq.pair_boundary_times.size(),
          "score sequence and boundary times differ in length");
  SpliceReport report;
  report.operating_threshold = operating_threshold;
  for (const auto& m : detect_minima(seq.smoothed, cfg.min_depth, cfg.min_width)) {
    report.minima.push_back({seq.pair_boundary_times[m.index], m.depth, m.width});
    report.global_score = std::max(report.global_score, m.depth);
  }
  report.spliced = report.global_score >= operating_threshold;
  return report;
}

SpliceReport splice_report(const ScoreSequence& seq, const SpliceScanConfig& cfg) {
  return splice_report(seq, cfg, cfg.operating_threshold);
}

Waveform splice_waveforms(const Waveform& first, const Waveform& second, std::size_t switch_at,
                          std::size_t length) {
  require(first.sample_rate == second.sample_rate, "splice sources differ in sample rate");
  require(switch_at <= length, "splice point lies beyond the track end");
  require(first.size() >= switch_at && second.size() >= length,
          "splice sources are shorter than the requested track");
  Waveform out;
  out.sample_rate = first.sample_rate;
  out.samples.assign(first.samples.begin(), first.samples.begin() + switch_at);
  out.samples.insert(out.samples.end(), second.samples.begin() + switch_at,
                     second.samples.begin() + length);
  return out;
}

std::vector<SpliceTrack> make_toy_splice_tracks(const Manifest& manifest, Split split,
                                                std::size_t n_homogeneous, std::size_t n_spliced,
                                                double duration_s, double switch_lo,
                                                double switch_hi, std::uint64_t seed) {
  require(duration_s >= 1.0, "splice tracks must last at least 1 s");
  require(0.0 <= switch_lo && switch_lo <= switch_hi && switch_hi <= duration_s,
          "splice switch range must lie inside the track");
  std::map<int, ToyGeneratorSpec> specs;
  for (const auto& r : manifest.records)
    if (r.split == split && r.toy) specs.emplace(r.generator_label, r.toy->spec);
  require(specs.size() >= 2, "splice tracks need at least 2 toy generators in split " + to_string(split));
  std::vector<int> labels;
  for (const auto& [label, spec] : specs) labels.push_back(label);

  Rng rng(seed);
  const auto length = static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
  std::uint64_t utterance = 0;
  auto fresh = [&](int label) {
    Waveform w = synth_toy_waveform(specs.at(label), mix_seed(seed, 0x7ac0000 + utterance++), duration_s);
    w.samples.resize(length, 0.0f);
    return w;
  };
  std::vector<SpliceTrack> out;
  for (std::size_t k = 0; k < n_homogeneous; ++k) {
    SpliceTrack t;
    t.generator_a = t.generator_b = labels[uniform_index(rng, labels.size())];
    t.wave = fresh(t.generator_a);
    t.name = "homog_" + std::to_string(k);
    out.push_back(std::move(t));
  }
  for (std::size_t k = 0; k < n_spliced; ++k) {
    SpliceTrack t;
    t.spliced = true;
    const std::size_t a = uniform_index(rng, labels.size());
    std::size_t b = uniform_index(rng, labels.size() - 1);
    if (b >= a) ++b;
    t.generator_a = labels[a];
    t.generator_b = labels[b];
    const auto at = static_cast<std::size_t>(std::llround(uniform(rng, switch_lo, switch_hi) * kSampleRate));
    t.switch_time = static_cast<double>(at) / kSampleRate;
    t.wave = splice_waveforms(fresh(t.generator_a), fresh(t.generator_b), at, length);
    t.name = "splice_" + std::to_string(k);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace fsim
