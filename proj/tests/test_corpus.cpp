#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <set>

#include "fsim/corpus.hpp"

using namespace fsim;
namespace fs = std::filesystem;

namespace {

ToyGeneratorSpec plain_spec(double f0) {
  ToyGeneratorSpec s;
  s.comb_f0 = f0;
  s.iir_coloration = {1, 0, 0, 0, 0};
  s.noise_floor_db = -HUGE_VAL;
  s.codec_decimation = 1;
  s.rng_seed = 99;
  return s;
}

std::vector<double> dft_magnitude(const std::vector<float>& x, std::size_t bins) {
  std::vector<double> mag(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n)
      acc += static_cast<double>(x[n]) *
             std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * n) / x.size());
    mag[k] = std::abs(acc);
  }
  return mag;
}

// Manifest whose records all point at one short WAV file.
Manifest file_manifest(const std::vector<std::pair<int, int>>& label_counts, Split split) {
  const fs::path dir = fs::temp_directory_path() / "fsim_test_corpus";
  fs::create_directories(dir);
  Waveform w;
  for (int i = 0; i < 200; ++i) w.samples.push_back(static_cast<float>(i) / 200.0f);
  save_waveform(dir / "tiny.wav", w);
  Manifest m;
  m.base_dir = dir;
  for (auto [label, count] : label_counts)
    for (int i = 0; i < count; ++i) {
      ManifestRecord r;
      r.audio_ref = "tiny.wav";
      r.generator_label = label;
      r.split = split;
      r.duration_s = 200.0 / 16000.0;
      m.records.push_back(r);
    }
  return m;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("fit_segment slices, repeats and rejects bad offsets") {
  Waveform w;
  for (int i = 0; i < 24000; ++i) w.samples.push_back(static_cast<float>(i));
  SUBCASE("repetition matches modular indexing") {
    const Segment s = fit_segment(w, 64000, 0);
    REQUIRE(s.samples.size() == 64000);
    for (std::size_t i = 0; i < 64000; ++i) CHECK(s.samples[i] == w.samples[i % 24000]);
  }
  SUBCASE("pure slice when long enough") {
    const Segment s = fit_segment(w, 1000, 500, "t");
    for (std::size_t i = 0; i < 1000; ++i) CHECK(s.samples[i] == w.samples[500 + i]);
    CHECK(s.origin.track == "t");
    CHECK(s.origin.start == 500);
  }
  SUBCASE("repetition from an offset") {
    const Segment s = fit_segment(w, 30000, 20000);
    for (std::size_t i = 0; i < 30000; ++i) CHECK(s.samples[i] == w.samples[20000 + i % 4000]);
  }
  SUBCASE("length property for any source length") {
    for (std::size_t n : {1, 2, 3, 999, 16000}) {
      Waveform v;
      v.samples.assign(n, 1.0f);
      CHECK(fit_segment(v, 64000, 0).samples.size() == 64000);
    }
  }
  CHECK_THROWS_AS(fit_segment(w, 10, 24000), Error);
  CHECK_THROWS_AS(fit_segment(w, 0, 0), Error);
}

TEST_CASE("toy synthesis is deterministic and normalized") {
  ToyGeneratorSpec s = plain_spec(150.0);
  s.noise_floor_db = -40.0;
  s.codec_decimation = 2;
  const Waveform a = synth_toy_waveform(s, 5, 1.0);
  const Waveform b = synth_toy_waveform(s, 5, 1.0);
  CHECK(a.samples == b.samples);
  CHECK(a.size() == 16000);
  float peak = 0.0f;
  for (float v : a.samples) peak = std::max(peak, std::abs(v));
  CHECK(peak == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(synth_toy_waveform(s, 6, 1.0).samples != a.samples);
  CHECK_THROWS_AS(synth_toy_waveform(s, 5, 0.4), Error);
}

TEST_CASE("pure comb has its spectral peaks at multiples of f0") {
  // 0.5 s at 16 kHz: DFT bin spacing 2 Hz, so f0 = 200 Hz harmonics fall on bins
  const ToyGeneratorSpec s = plain_spec(200.0);
  const Waveform w = synth_toy_waveform(s, 3, 0.5);
  const auto mag = dft_magnitude(w.samples, 4000);
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t k = 1; k + 1 < mag.size(); ++k)
    if (mag[k] > mag[k - 1] && mag[k] >= mag[k + 1]) ranked.emplace_back(mag[k], k);
  std::sort(ranked.rbegin(), ranked.rend());
  REQUIRE(ranked.size() >= 5);
  for (int i = 0; i < 5; ++i) {
    const double hz = ranked[i].second * 2.0;
    CHECK(std::fmod(hz, 200.0) == doctest::Approx(0.0));
  }
}

TEST_CASE("coloration changes the long-term spectrum") {
  ToyGeneratorSpec a = plain_spec(180.0);
  ToyGeneratorSpec b = a;
  b.iir_coloration = {1.0, -0.9, 0.0, 0.0, 0.0};
  const auto ma = dft_magnitude(synth_toy_waveform(a, 1, 0.5).samples, 400);
  const auto mb = dft_magnitude(synth_toy_waveform(b, 1, 0.5).samples, 400);
  double dist = 0.0;
  for (std::size_t k = 0; k < ma.size(); ++k) dist += std::pow(std::log(ma[k] + 1e-9) - std::log(mb[k] + 1e-9), 2);
  CHECK(dist > 1.0);
}

TEST_CASE("spec validation") {
  ToyGeneratorSpec s = plain_spec(50.0);
  CHECK_THROWS_AS(validate(s), Error);
  s = plain_spec(150.0);
  s.iir_coloration = {1, 0};
  CHECK_THROWS_AS(validate(s), Error);
  s = plain_spec(150.0);
  s.codec_decimation = 0;
  CHECK_THROWS_AS(validate(s), Error);
}

TEST_CASE("toy manifest: counts, open-set property, determinism") {
  const Manifest m = build_toy_manifest(8, 50, SplitRatios{}, 7);
  CHECK(m.records.size() == 400);
  std::set<int> train_gens, val_gens, test_gens;
  std::map<int, std::pair<int, int>> per_gen;
  for (const auto& r : m.records) {
    if (r.split == Split::Train) train_gens.insert(r.generator_label), ++per_gen[r.generator_label].first;
    if (r.split == Split::Val) val_gens.insert(r.generator_label), ++per_gen[r.generator_label].second;
    if (r.split == Split::Test) test_gens.insert(r.generator_label);
    CHECK(r.duration_s >= 2.5);
    CHECK(r.duration_s <= 5.5);
  }
  CHECK(train_gens.size() == 6);
  CHECK(test_gens.size() == 2);
  CHECK(train_gens == val_gens);
  for (int g : test_gens) CHECK(train_gens.count(g) == 0);
  for (const auto& [g, counts] : per_gen) {
    CHECK(counts.first == 35);
    CHECK(counts.second == 15);
  }
  const Manifest again = build_toy_manifest(8, 50, SplitRatios{}, 7);
  CHECK(manifest_to_jsonl(again) == manifest_to_jsonl(m));
  CHECK(manifest_to_jsonl(build_toy_manifest(8, 50, SplitRatios{}, 8)) != manifest_to_jsonl(m));

  std::set<std::string> refs;
  for (const auto& r : m.records) refs.insert(r.audio_ref);
  CHECK(refs.size() == m.records.size());
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = a + 1; b < 8; ++b)
      CHECK_FALSE(m.records[a * 50].toy->spec == m.records[b * 50].toy->spec);
}

TEST_CASE("toy manifest preconditions") {
  CHECK_THROWS_AS(build_toy_manifest(3, 10, SplitRatios{}, 1), Error);
  CHECK_THROWS_AS(build_toy_manifest(8, 10, SplitRatios{0.5, 0.2, 0.2}, 1), Error);
}

TEST_CASE("manifest JSONL round trip keeps every field, including a disabled noise floor") {
  Manifest m = build_toy_manifest(4, 3, SplitRatios{}, 11);
  m.records[0].toy->spec.noise_floor_db = -HUGE_VAL;
  const fs::path path = fs::temp_directory_path() / "fsim_test_corpus_manifest.jsonl";
  write_manifest(path, m);
  const Manifest r = read_manifest(path);
  REQUIRE(r.records.size() == m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    CHECK(r.records[i].audio_ref == m.records[i].audio_ref);
    CHECK(r.records[i].generator_label == m.records[i].generator_label);
    CHECK(r.records[i].split == m.records[i].split);
    CHECK(r.records[i].duration_s == m.records[i].duration_s);
    CHECK(r.records[i].toy->spec == m.records[i].toy->spec);
    CHECK(r.records[i].toy->utterance_seed == m.records[i].toy->utterance_seed);
  }
  CHECK(std::isinf(r.records[0].toy->spec.noise_floor_db));
  CHECK(r.base_dir == path.parent_path());
  CHECK_THROWS_AS(read_manifest(fs::temp_directory_path() / "no_such_manifest.jsonl"), Error);
}

TEST_CASE("stratified_partition sizes") {
  Rng rng(1);
  auto [a, b] = stratified_partition(10, 0.7, rng);
  CHECK(a.size() == 7);
  CHECK(b.size() == 3);
  std::set<std::size_t> all(a.begin(), a.end());
  all.insert(b.begin(), b.end());
  CHECK(all.size() == 10);
  auto [c, d] = stratified_partition(2, 0.99, rng);
  CHECK(c.size() == 1);
  CHECK(d.size() == 1);
}

TEST_CASE("sample_pair labels and balance") {
  const Manifest m = build_toy_manifest(4, 6, SplitRatios{}, 3);
  AudioLibrary lib(m);
  Rng rng(17);
  int same = 0;
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    const PairSample p = sample_pair(m, lib, Split::Train, 800, rng);
    CHECK(p.label == (p.generator_a == p.generator_b ? 1 : 0));
    CHECK(p.record_a != p.record_b);
    CHECK(p.segment_a.samples.size() == 800);
    CHECK(m.records[p.record_a].split == Split::Train);
    same += p.label;
  }
  CHECK(same > 150);
  CHECK(same < 250);
}

TEST_CASE("sample_pair same-pair fraction over 10000 draws") {
  const Manifest m = file_manifest({{0, 3}, {1, 3}, {2, 3}}, Split::Train);
  AudioLibrary lib(m);
  Rng rng(23);
  int same = 0;
  for (int i = 0; i < 10000; ++i) same += sample_pair(m, lib, Split::Train, 50, rng).label;
  CHECK(same >= 4700);
  CHECK(same <= 5300);
}

TEST_CASE("sample_pair rejects splits that cannot form pairs") {
  const Manifest one_gen = file_manifest({{0, 5}}, Split::Train);
  AudioLibrary lib(one_gen);
  Rng rng(1);
  bool threw = false;
  for (int i = 0; i < 20 && !threw; ++i) {
    try {
      sample_pair(one_gen, lib, Split::Train, 50, rng);
    } catch (const Error&) {
      threw = true;
    }
  }
  CHECK(threw);
}

TEST_CASE("class-balanced sampling is uniform over generators, not utterances") {
  const Manifest m = file_manifest({{0, 10}, {1, 1000}}, Split::Train);
  AudioLibrary lib(m);
  Rng rng(5);
  int zero = 0;
  for (int i = 0; i < 10000; ++i) zero += sample_class_balanced_segment(m, lib, Split::Train, 50, rng).second == 0;
  CHECK(zero >= 4700);
  CHECK(zero <= 5300);

  const Manifest single = file_manifest({{4, 3}}, Split::Val);
  AudioLibrary lib1(single);
  for (int i = 0; i < 20; ++i) CHECK(sample_class_balanced_segment(single, lib1, Split::Val, 50, rng).second == 4);
  CHECK_THROWS_AS(sample_class_balanced_segment(single, lib1, Split::Train, 50, rng), Error);

  Rng r1(9), r2(9);
  for (int i = 0; i < 50; ++i) {
    const auto a = sample_class_balanced_segment(m, lib, Split::Train, 50, r1);
    const auto b = sample_class_balanced_segment(m, lib, Split::Train, 50, r2);
    CHECK(a.second == b.second);
    CHECK(a.first.origin.start == b.first.origin.start);
  }
}

TEST_CASE("draw_segment start policy") {
  const Manifest m = file_manifest({{0, 2}}, Split::Train);
  AudioLibrary lib(m);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    CHECK(draw_segment(lib, 0, 50, StartPolicy::Zero, rng).origin.start == 0);
    CHECK(draw_segment(lib, 0, 50, StartPolicy::Random, rng).origin.start <= 150);
    CHECK(draw_segment(lib, 0, 500, StartPolicy::Random, rng).origin.start == 0);
  }
}

TEST_CASE("library prefers files and falls back to synthesis") {
  Manifest m = build_toy_manifest(4, 2, SplitRatios{}, 1);
  AudioLibrary lib(m);
  const Waveform& w = lib.waveform(0);
  const auto& r = m.records[0];
  CHECK(w.samples == synth_toy_waveform(r.toy->spec, r.toy->utterance_seed, r.duration_s).samples);
  Manifest broken;
  broken.records.push_back({"does_not_exist.wav", 0, Split::Train, 1.0, std::nullopt});
  AudioLibrary lib2(broken);
  CHECK_THROWS_AS(lib2.waveform(0), Error);
}

}
