#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fsim/audio.hpp"
#include "fsim/common.hpp"

namespace fsim {

struct SegmentOrigin {
  std::string track;
  std::size_t start = 0;  // offset in samples
};

/// A fixed-length slice of a waveform, padded by cyclic repetition when the
/// source runs out.
struct Segment {
  std::vector<float> samples;
  SegmentOrigin origin;
};

enum class Split { Train, Val, Test };
std::string to_string(Split split);
Split parse_split(const std::string& text);

/// Procedural stand-in for a speech generator. Every field contributes a
/// fingerprint: the harmonic comb plays the role of the prosody model, the IIR
/// sections the spectral envelope, the noise floor vocoder noise, and the
/// decimation factor a bandwidth limit.
struct ToyGeneratorSpec {
  int generator_id = 0;
  double comb_f0 = 150.0;                 // Hz, in [80, 400]
  std::vector<double> iir_coloration{1, 0, 0, 0, 0};  // biquads: b0 b1 b2 a1 a2 per section
  double noise_floor_db = -40.0;          // -inf disables the noise
  int codec_decimation = 1;
  std::uint64_t rng_seed = 0;

  bool operator==(const ToyGeneratorSpec&) const = default;
};

void validate(const ToyGeneratorSpec& spec);

/// Deterministic in (spec, utterance_seed). duration_s must be at least 0.5.
Waveform synth_toy_waveform(const ToyGeneratorSpec& spec, std::uint64_t utterance_seed,
                            double duration_s);

struct ToySource {
  ToyGeneratorSpec spec;
  std::uint64_t utterance_seed = 0;
};

struct ManifestRecord {
  std::string audio_ref;
  int generator_label = 0;
  Split split = Split::Train;
  double duration_s = 0.0;
  std::optional<ToySource> toy;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  /// Relative audio_ref paths resolve against this directory.
  std::filesystem::path base_dir;
};

/// One JSON object per line: audio_ref, generator_label, split, duration_s and
/// optionally toy_spec.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);
std::string manifest_to_jsonl(const Manifest& manifest);

struct SplitRatios {
  double train = 0.525;
  double val = 0.225;
  double test = 0.25;
};

/// Builds an open-set toy manifest. A round(test * n) subset of generators is
/// reserved for the test split (labels K..n-1); the remaining K generators
/// (labels 0..K-1) have their utterances split train/val in proportion
/// train:val, stratified per generator.
Manifest build_toy_manifest(int n_generators, int utterances_per_gen, const SplitRatios& ratios,
                            std::uint64_t rng_seed);

/// Per-group split of `count` items into (first, second) index sets with
/// |first| = round(ratio * count) clamped to [1, count - 1].
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_partition(
    std::size_t count, double ratio, Rng& rng);

/// Lazily materializes manifest audio: an existing file wins, otherwise the
/// toy source is synthesized. Caches waveforms; not thread-safe.
class AudioLibrary {
 public:
  explicit AudioLibrary(const Manifest& manifest) : manifest_(&manifest) {}

  const Waveform& waveform(std::size_t record);
  const Manifest& manifest() const { return *manifest_; }

 private:
  const Manifest* manifest_;
  std::unordered_map<std::size_t, Waveform> cache_;
};

Segment fit_segment(const Waveform& wave, std::size_t target_len, std::size_t start,
                    std::string track = {});

/// Records of one split grouped by generator label.
class SplitView {
 public:
  SplitView(const Manifest& manifest, Split split);

  const std::map<int, std::vector<std::size_t>>& by_generator() const { return groups_; }
  std::vector<int> generators() const;
  std::size_t size() const { return size_; }

 private:
  std::map<int, std::vector<std::size_t>> groups_;
  std::size_t size_ = 0;
};

enum class StartPolicy { Random, Zero };

struct PairSample {
  Segment segment_a;
  Segment segment_b;
  int label = 0;
  int generator_a = 0;
  int generator_b = 0;
  std::size_t record_a = 0;
  std::size_t record_b = 0;
};

/// Segment of `record` starting at 0 or at a uniform offset in
/// [0, max(0, length - segment_len)].
Segment draw_segment(AudioLibrary& library, std::size_t record, std::size_t segment_len,
                     StartPolicy policy, Rng& rng);

PairSample make_pair(AudioLibrary& library, std::size_t record_a, std::size_t record_b,
                     std::size_t segment_len, StartPolicy policy, Rng& rng);

/// Same-generator pair (two distinct utterances of a uniformly chosen
/// generator) with probability 0.5, otherwise one utterance from each of two
/// distinct uniformly chosen generators.
PairSample sample_pair(const SplitView& view, AudioLibrary& library, std::size_t segment_len,
                       Rng& rng, StartPolicy policy = StartPolicy::Random);
PairSample sample_pair(const Manifest& manifest, AudioLibrary& library, Split split,
                       std::size_t segment_len, Rng& rng,
                       StartPolicy policy = StartPolicy::Random);

/// Uniform over generators first, then uniform over that generator's utterances.
std::pair<Segment, int> sample_class_balanced_segment(const SplitView& view,
                                                      AudioLibrary& library,
                                                      std::size_t segment_len, Rng& rng,
                                                      StartPolicy policy = StartPolicy::Random);
std::pair<Segment, int> sample_class_balanced_segment(const Manifest& manifest,
                                                      AudioLibrary& library, Split split,
                                                      std::size_t segment_len, Rng& rng,
                                                      StartPolicy policy = StartPolicy::Random);

}  // namespace fsim
