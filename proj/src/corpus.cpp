#include "fsim/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace fsim {

using nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw Error("unknown split '" + text + "' (expected train|val|test)");
}

void validate(const ToyGeneratorSpec& spec) {
  require(spec.comb_f0 >= 80.0 && spec.comb_f0 <= 400.0, "toy spec: comb_f0 outside [80, 400] Hz");
  require(!spec.iir_coloration.empty() && spec.iir_coloration.size() % 5 == 0,
          "toy spec: iir_coloration must hold whole biquad sections (5 coefficients each)");
  require(!std::isnan(spec.noise_floor_db) && spec.noise_floor_db < HUGE_VAL,
          "toy spec: noise_floor_db must be finite or -inf");
  require(spec.codec_decimation >= 1, "toy spec: codec_decimation must be >= 1");
}

namespace {

void apply_biquads(std::vector<double>& x, const std::vector<double>& coeffs) {
  for (std::size_t s = 0; s + 5 <= coeffs.size(); s += 5) {
    const double b0 = coeffs[s], b1 = coeffs[s + 1], b2 = coeffs[s + 2];
    const double a1 = coeffs[s + 3], a2 = coeffs[s + 4];
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (double& v : x) {
      const double y = b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = v;
      y2 = y1;
      y1 = y;
      v = y;
    }
  }
}

std::vector<double> peaking_section(double freq, double q, double gain_db) {
  const double a = std::pow(10.0, gain_db / 40.0);
  const double w0 = 2.0 * std::numbers::pi * freq / kSampleRate;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha / a;
  return {(1.0 + alpha * a) / a0, -2.0 * std::cos(w0) / a0, (1.0 - alpha * a) / a0,
          -2.0 * std::cos(w0) / a0, (1.0 - alpha / a) / a0};
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
  return p;
}

// Stratified draw: generator g lands in bin perm[g] of n equal bins over [lo, hi].
double stratified(std::size_t bin, std::size_t n, double lo, double hi, Rng& rng) {
  return lo + (static_cast<double>(bin) + uniform(rng, 0.2, 0.8)) * (hi - lo) / n;
}

}  // namespace

Waveform synth_toy_waveform(const ToyGeneratorSpec& spec, std::uint64_t utterance_seed,
                            double duration_s) {
  validate(spec);
  require(duration_s >= 0.5, "synth_toy_waveform: duration must be >= 0.5 s");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
  Rng rng(mix_seed(spec.rng_seed, utterance_seed));

  // Harmonic comb with per-utterance random amplitudes and phases.
  const int harmonics = static_cast<int>(7800.0 / spec.comb_f0);
  std::vector<std::complex<double>> phasor(harmonics), step(harmonics);
  std::vector<double> amp(harmonics);
  for (int k = 0; k < harmonics; ++k) {
    amp[k] = uniform(rng, 0.2, 1.0) / std::sqrt(k + 1.0);
    phasor[k] = std::polar(1.0, uniform(rng, 0.0, 2.0 * std::numbers::pi));
    step[k] = std::polar(1.0, 2.0 * std::numbers::pi * spec.comb_f0 * (k + 1) / kSampleRate);
  }
  const double am_rate = uniform(rng, 2.5, 6.0);
  const double am_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);

  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < harmonics; ++k) {
      acc += amp[k] * phasor[k].real();
      phasor[k] *= step[k];
    }
    if ((i & 1023) == 1023) {
      for (auto& p : phasor) p /= std::abs(p);
    }
    const double t = static_cast<double>(i) / kSampleRate;
    x[i] = acc * (0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * am_rate * t + am_phase));
  }

  apply_biquads(x, spec.iir_coloration);

  double energy = 0.0;
  for (double v : x) energy += v * v;
  const double rms = std::sqrt(energy / static_cast<double>(n));
  if (rms > 0.0) {
    for (double& v : x) v *= 0.1 / rms;
  }
  if (std::isfinite(spec.noise_floor_db)) {
    const double sigma = std::pow(10.0, spec.noise_floor_db / 20.0);
    for (double& v : x) v += sigma * normal(rng);
  }

  std::vector<float> out(x.begin(), x.end());
  if (spec.codec_decimation > 1) {
    const auto low = resample(out, spec.codec_decimation, 1);
    out = resample(low, 1, spec.codec_decimation);
    out.resize(n, 0.0f);
  }

  float peak = 0.0f;
  for (float v : out) peak = std::max(peak, std::abs(v));
  if (peak > 0.0f) {
    const double gain = 0.9 / peak;
    for (float& v : out) v = static_cast<float>(v * gain);
  }
  return Waveform{std::move(out), kSampleRate};
}

// ---------------------------------------------------------------------------
// manifest

namespace {

json spec_to_json(const ToySource& toy) {
  const auto& s = toy.spec;
  json j{{"generator_id", s.generator_id},
         {"comb_f0", s.comb_f0},
         {"iir_coloration", s.iir_coloration},
         {"codec_decimation", s.codec_decimation},
         {"rng_seed", s.rng_seed},
         {"utterance_seed", toy.utterance_seed}};
  j["noise_floor_db"] = std::isfinite(s.noise_floor_db) ? json(s.noise_floor_db) : json(nullptr);
  return j;
}

ToySource spec_from_json(const json& j) {
  ToySource toy;
  auto& s = toy.spec;
  s.generator_id = j.at("generator_id").get<int>();
  s.comb_f0 = j.at("comb_f0").get<double>();
  s.iir_coloration = j.at("iir_coloration").get<std::vector<double>>();
  s.codec_decimation = j.at("codec_decimation").get<int>();
  s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  const auto& noise = j.at("noise_floor_db");
  s.noise_floor_db = noise.is_null() ? -HUGE_VAL : noise.get<double>();
  toy.utterance_seed = j.at("utterance_seed").get<std::uint64_t>();
  validate(s);
  return toy;
}

}  // namespace

std::string manifest_to_jsonl(const Manifest& manifest) {
  std::ostringstream out;
  for (const auto& r : manifest.records) {
    json j{{"audio_ref", r.audio_ref},
           {"generator_label", r.generator_label},
           {"split", to_string(r.split)},
           {"duration_s", r.duration_s}};
    if (r.toy) j["toy_spec"] = spec_to_json(*r.toy);
    out << j.dump() << '\n';
  }
  return out.str();
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write manifest: " + path.string());
  out << manifest_to_jsonl(manifest);
  require(static_cast<bool>(out), "write failed: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open manifest: " + path.string());
  Manifest manifest;
  manifest.base_dir = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestRecord r;
      r.audio_ref = j.at("audio_ref").get<std::string>();
      r.generator_label = j.at("generator_label").get<int>();
      r.split = parse_split(j.at("split").get<std::string>());
      r.duration_s = j.at("duration_s").get<double>();
      if (j.contains("toy_spec") && !j["toy_spec"].is_null()) r.toy = spec_from_json(j["toy_spec"]);
      require(r.generator_label >= 0, "negative generator_label");
      manifest.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return manifest;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_partition(
    std::size_t count, double ratio, Rng& rng) {
  require(count >= 2, "stratified split needs at least 2 items per group");
  auto order = permutation(count, rng);
  auto first = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(count)));
  first = std::clamp<std::size_t>(first, 1, count - 1);
  std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<long>(first));
  std::vector<std::size_t> b(order.begin() + static_cast<long>(first), order.end());
  return {a, b};
}

Manifest build_toy_manifest(int n_generators, int utterances_per_gen, const SplitRatios& ratios,
                            std::uint64_t rng_seed) {
  require(n_generators >= 4, "build_toy_manifest: need at least 4 generators");
  require(utterances_per_gen >= 2, "build_toy_manifest: need at least 2 utterances per generator");
  require(ratios.train > 0 && ratios.val > 0 && ratios.test > 0,
          "build_toy_manifest: split ratios must be positive");
  require(std::abs(ratios.train + ratios.val + ratios.test - 1.0) < 1e-9,
          "build_toy_manifest: split ratios must sum to 1");

  const auto n = static_cast<std::size_t>(n_generators);
  auto n_test = static_cast<std::size_t>(std::llround(ratios.test * n));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 2);
  const std::size_t n_known = n - n_test;

  Rng rng(rng_seed);
  const auto f0_bins = permutation(n, rng);
  const auto formant_bins = permutation(n, rng);
  const auto tilt_bins = permutation(n, rng);
  const auto noise_bins = permutation(n, rng);
  const auto codec_bins = permutation(n, rng);

  std::vector<ToyGeneratorSpec> specs(n);
  for (std::size_t g = 0; g < n; ++g) {
    auto& s = specs[g];
    s.generator_id = static_cast<int>(g);
    s.comb_f0 = stratified(f0_bins[g], n, 90.0, 390.0, rng);
    const double formant =
        std::exp(stratified(formant_bins[g], n, std::log(400.0), std::log(3600.0), rng));
    s.iir_coloration = peaking_section(formant, uniform(rng, 2.0, 6.0), uniform(rng, 8.0, 16.0));
    const double tilt = stratified(tilt_bins[g], n, -0.7, 0.9, rng);
    s.iir_coloration.insert(s.iir_coloration.end(), {1.0, -tilt, 0.0, 0.0, 0.0});
    s.noise_floor_db = stratified(noise_bins[g], n, -60.0, -20.0, rng);
    s.codec_decimation = 1 + static_cast<int>(codec_bins[g] % 3);
    s.rng_seed = mix_seed(rng_seed, 1000 + g);
  }
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      require(!(specs[a] == specs[b]) , "build_toy_manifest: duplicate generator spec");

  Manifest manifest;
  const double train_share = ratios.train / (ratios.train + ratios.val);
  for (std::size_t g = 0; g < n; ++g) {
    std::vector<Split> splits(utterances_per_gen, Split::Test);
    if (g < n_known) {
      auto [train, val] = stratified_partition(splits.size(), train_share, rng);
      for (auto i : train) splits[i] = Split::Train;
      for (auto i : val) splits[i] = Split::Val;
    }
    for (int u = 0; u < utterances_per_gen; ++u) {
      ManifestRecord r;
      r.audio_ref = "toy:g" + std::to_string(g) + ":u" + std::to_string(u);
      r.generator_label = static_cast<int>(g);
      r.split = splits[u];
      r.duration_s = std::round(uniform(rng, 2.5, 5.5) * 1000.0) / 1000.0;
      r.toy = ToySource{specs[g], mix_seed(rng_seed ^ 0x5eedULL, g * 100003 + u)};
      manifest.records.push_back(std::move(r));
    }
  }
  return manifest;
}

// ---------------------------------------------------------------------------
// audio access and sampling

const Waveform& AudioLibrary::waveform(std::size_t record) {
  require(record < manifest_->records.size(), "AudioLibrary: record index out of range");
  if (auto it = cache_.find(record); it != cache_.end()) return it->second;
  const auto& r = manifest_->records[record];
  std::filesystem::path path = r.audio_ref;
  if (path.is_relative()) path = manifest_->base_dir / path;
  Waveform wave;
  std::error_code ec;
  if (r.audio_ref.rfind("toy:", 0) != 0 && std::filesystem::exists(path, ec)) {
    wave = load_waveform(path);
  } else if (r.toy) {
    wave = synth_toy_waveform(r.toy->spec, r.toy->utterance_seed, r.duration_s);
  } else {
    throw Error("audio not found and no toy source: " + r.audio_ref);
  }
  require(!wave.samples.empty(), "zero-length audio: " + r.audio_ref);
  return cache_.emplace(record, std::move(wave)).first->second;
}

Segment fit_segment(const Waveform& wave, std::size_t target_len, std::size_t start,
                    std::string track) {
  require(target_len > 0, "fit_segment: target length must be positive");
  require(start < wave.samples.size(), "fit_segment: start beyond end of waveform");
  Segment seg;
  seg.origin = {std::move(track), start};
  seg.samples.resize(target_len);
  const std::size_t available = wave.samples.size() - start;
  const float* src = wave.samples.data() + start;
  if (available >= target_len) {
    std::copy(src, src + target_len, seg.samples.begin());
  } else {
    for (std::size_t i = 0; i < target_len; i += available) {
      const std::size_t chunk = std::min(available, target_len - i);
      std::copy(src, src + chunk, seg.samples.begin() + static_cast<long>(i));
    }
  }
  return seg;
}

SplitView::SplitView(const Manifest& manifest, Split split) {
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (manifest.records[i].split != split) continue;
    groups_[manifest.records[i].generator_label].push_back(i);
    ++size_;
  }
}

std::vector<int> SplitView::generators() const {
  std::vector<int> out;
  for (const auto& [label, _] : groups_) out.push_back(label);
  return out;
}

Segment draw_segment(AudioLibrary& library, std::size_t record, std::size_t segment_len,
                     StartPolicy policy, Rng& rng) {
  const Waveform& wave = library.waveform(record);
  std::size_t start = 0;
  if (policy == StartPolicy::Random) {
    const std::size_t slack = wave.size() > segment_len ? wave.size() - segment_len : 0;
    start = uniform_index(rng, slack + 1);
  }
  return fit_segment(wave, segment_len, start, library.manifest().records[record].audio_ref);
}

PairSample make_pair(AudioLibrary& library, std::size_t record_a, std::size_t record_b,
                     std::size_t segment_len, StartPolicy policy, Rng& rng) {
  const auto& records = library.manifest().records;
  PairSample pair;
  pair.record_a = record_a;
  pair.record_b = record_b;
  pair.generator_a = records.at(record_a).generator_label;
  pair.generator_b = records.at(record_b).generator_label;
  pair.label = pair.generator_a == pair.generator_b ? 1 : 0;
  pair.segment_a = draw_segment(library, record_a, segment_len, policy, rng);
  pair.segment_b = draw_segment(library, record_b, segment_len, policy, rng);
  return pair;
}

PairSample sample_pair(const SplitView& view, AudioLibrary& library, std::size_t segment_len,
                       Rng& rng, StartPolicy policy) {
  const auto& groups = view.by_generator();
  const bool same = uniform01(rng) < 0.5;
  if (same) {
    std::vector<const std::vector<std::size_t>*> eligible;
    for (const auto& [label, recs] : groups)
      if (recs.size() >= 2) eligible.push_back(&recs);
    require(!eligible.empty(), "sample_pair: no generator with 2 utterances for a same pair");
    const auto& recs = *eligible[uniform_index(rng, eligible.size())];
    const std::size_t i = uniform_index(rng, recs.size());
    std::size_t j = uniform_index(rng, recs.size() - 1);
    if (j >= i) ++j;
    return make_pair(library, recs[i], recs[j], segment_len, policy, rng);
  }
  require(groups.size() >= 2, "sample_pair: need 2 generators for a different pair");
  const auto labels = view.generators();
  const std::size_t gi = uniform_index(rng, labels.size());
  std::size_t gj = uniform_index(rng, labels.size() - 1);
  if (gj >= gi) ++gj;
  const auto& ra = groups.at(labels[gi]);
  const auto& rb = groups.at(labels[gj]);
  const std::size_t a = ra[uniform_index(rng, ra.size())];
  const std::size_t b = rb[uniform_index(rng, rb.size())];
  return make_pair(library, a, b, segment_len, policy, rng);
}

PairSample sample_pair(const Manifest& manifest, AudioLibrary& library, Split split,
                       std::size_t segment_len, Rng& rng, StartPolicy policy) {
  return sample_pair(SplitView(manifest, split), library, segment_len, rng, policy);
}

std::pair<Segment, int> sample_class_balanced_segment(const SplitView& view,
                                                      AudioLibrary& library,
                                                      std::size_t segment_len, Rng& rng,
                                                      StartPolicy policy) {
  require(view.size() > 0, "sample_class_balanced_segment: empty split");
  const auto labels = view.generators();
  const int label = labels[uniform_index(rng, labels.size())];
  const auto& recs = view.by_generator().at(label);
  const std::size_t record = recs[uniform_index(rng, recs.size())];
  return {draw_segment(library, record, segment_len, policy, rng), label};
}

std::pair<Segment, int> sample_class_balanced_segment(const Manifest& manifest,
                                                      AudioLibrary& library, Split split,
                                                      std::size_t segment_len, Rng& rng,
                                                      StartPolicy policy) {
  return sample_class_balanced_segment(SplitView(manifest, split), library, segment_len, rng,
                                       policy);
}

}  // namespace fsim
