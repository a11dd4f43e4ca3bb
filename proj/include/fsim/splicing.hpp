#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fsim/audio.hpp"
#include "fsim/corpus.hpp"
#include "fsim/similarity.hpp"

namespace fsim {

struct SpliceScanConfig {
  double window_len = 0.5;  // s
  double stride = 0.05;     // s
  double gaussian_sigma = 1.7;  // score-sequence samples
  double min_depth = 0.38;
  std::size_t min_width = 3;  // score-sequence samples
  double operating_threshold = 0.38;

  std::size_t window_samples(int sample_rate = kSampleRate) const;
  std::size_t stride_samples(int sample_rate = kSampleRate) const;
};
void validate(const SpliceScanConfig& cfg);

/// Number of adjacent window pairs (A, B) that fit entirely in n samples:
/// 1 + floor((n - 2w) / s), or 0 when n < 2w.
std::size_t window_pair_count(std::size_t n_samples, std::size_t window, std::size_t stride);

/// Pair i: A = [i*s, i*s + w), B = [i*s + w, i*s + 2w). Trailing audio that
/// cannot hold a full B window is dropped.
std::vector<std::pair<Segment, Segment>> window_pairs(const Waveform& wave,
                                                      const SpliceScanConfig& cfg,
                                                      const std::string& track = {});

struct ScoreSequence {
  std::vector<double> raw;
  std::vector<double> smoothed;
  std::vector<double> pair_boundary_times;  // s
};

/// Raw score of every window pair plus its smoothed version. The model must
/// have been trained on windows of the scan length.
ScoreSequence score_track(const SiameseModel& model, const Waveform& wave,
                          const SpliceScanConfig& cfg);

/// Discrete Gaussian (radius ceil(4 sigma), normalized to sum 1) convolved
/// with reflect boundary handling: the sequence is mirrored about its edges
/// including the edge sample (d c b a | a b c d | d c b a).
std::vector<double> gaussian_smooth(std::span<const double> seq, double sigma);

struct Minimum {
  std::size_t index = 0;
  double depth = 0.0;
  std::size_t width = 0;
};

/// Local minima of seq, i.e. peaks of -seq:
///  - a peak is a sample (or the middle of a flat run, rounded down) strictly
///    above both neighbours; runs touching either end do not count;
///  - depth is the topographic prominence: from the peak, extend left and
///    right until a strictly higher sample or the sequence end, take the
///    lowest sample on each side; depth = peak - max(left low, right low);
///  - width counts the contiguous samples around the peak that stay strictly
///    above peak - depth / 2.
/// Minima with depth >= min_depth and width >= min_width are returned in
/// index order.
std::vector<Minimum> detect_minima(std::span<const double> seq, double min_depth,
                                   std::size_t min_width);

struct SpliceMinimum {
  double time = 0.0;
  double depth = 0.0;
  std::size_t width = 0;
};

struct SpliceReport {
  double global_score = 0.0;
  std::vector<SpliceMinimum> minima;
  bool spliced = false;
  double operating_threshold = 0.0;

  std::string decision() const { return spliced ? "spliced" : "authentic"; }
  nlohmann::json to_json() const;
};

/// global_score = deepest minimum (0 if none); spliced iff
/// global_score >= operating_threshold.
SpliceReport splice_report(const ScoreSequence& seq, const SpliceScanConfig& cfg,
                           double operating_threshold);
SpliceReport splice_report(const ScoreSequence& seq, const SpliceScanConfig& cfg);

/// Track whose samples come from `first` up to `switch_at` and from `second`
/// afterwards; both sources must cover the track length.
Waveform splice_waveforms(const Waveform& first, const Waveform& second, std::size_t switch_at,
                          std::size_t length);

struct SpliceTrack {
  std::string name;
  Waveform wave;
  bool spliced = false;
  double switch_time = 0.0;  // s, spliced tracks only
  int generator_a = 0;
  int generator_b = 0;
};

/// Labeled toy scan set built from the generators of one manifest split with
/// fresh utterance seeds: homogeneous tracks from a single generator, and
/// single-splice tracks switching between two distinct generators at a time
/// drawn uniformly from [switch_lo, switch_hi].
std::vector<SpliceTrack> make_toy_splice_tracks(const Manifest& manifest, Split split,
                                                std::size_t n_homogeneous, std::size_t n_spliced,
                                                double duration_s, double switch_lo,
                                                double switch_hi, std::uint64_t seed);

}  // namespace fsim
