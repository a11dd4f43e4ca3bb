#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fsim/corpus.hpp"
#include "fsim/extractor.hpp"

namespace fsim {

/// label 1 = same-source pair (positive).
struct ScoredTrial {
  double score = 0.0;
  int label = 0;
  int generator_a = -1;
  int generator_b = -1;
};

/// Probability that a random positive outscores a random negative, ties
/// counted as 1/2 (rank-sum form, equal to the trapezoidal ROC area).
double auc(std::span<const ScoredTrial> trials);

struct EerResult {
  double eer = 0.0;
  double tau = 0.0;
};

/// Equal error rate with FPR(t) = P(score >= t | neg) and
/// FNR(t) = P(score < t | pos), evaluated at the sorted unique scores.
///
/// Let t_i be the first threshold with FPR(t_i) <= FNR(t_i):
///  - if the two are equal there, EER is that common value and tau is the
///    midpoint of (t_{i-1}, t_i], the interval over which the rates are
///    constant;
///  - otherwise both rates are linearly interpolated between t_{i-1} and t_i
///    to their crossing, giving EER and tau.
/// If FPR > FNR still holds at the largest score, the sweep continues to a
/// virtual threshold above every score (FPR = 0, FNR = 1); the interpolated
/// tau is then clamped to the largest score.
EerResult eer(std::span<const ScoredTrial> trials);

/// Decision threshold for validation trials: the EER operating point.
double calibrate_threshold(std::span<const ScoredTrial> val_trials);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};
/// ROC points at every unique score (descending threshold), starting at (0, 0).
std::vector<RocPoint> roc_curve(std::span<const ScoredTrial> trials);

/// G x G correct-decision rates: diagonal (g, g) is the fraction of same
/// pairs of g accepted; off-diagonal (g, h) the fraction of (g, h) pairs
/// rejected. Cells are ordered (first segment from the row generator).
struct DetectionMatrix {
  std::vector<int> generators;
  std::vector<std::string> names;
  std::vector<double> values;  // row-major

  std::size_t size() const { return generators.size(); }
  double at(std::size_t row, std::size_t col) const { return values[row * size() + col]; }
  double mean_diagonal() const;
  double mean_off_diagonal() const;
  /// (M + M^T) / 2.
  DetectionMatrix symmetrized() const;
};

DetectionMatrix detection_matrix(PairScorer& scorer, AudioLibrary& library, const SplitView& view,
                                 double tau, std::size_t pairs_per_cell, std::size_t segment_len,
                                 Rng& rng);

enum class BaselineKind { Cosine, Euclidean };
std::string to_string(BaselineKind kind);

/// cosine -> (1 + cos angle) / 2, euclidean -> exp(-||a - b||).
double baseline_score(std::span<const double> a, std::span<const double> b, BaselineKind kind);

class BaselineScorer final : public PairScorer {
 public:
  BaselineScorer(const FeatureExtractor& extractor, BaselineKind kind)
      : cache_(extractor), kind_(kind) {}
  double score(const Segment& a, const Segment& b) override;

 private:
  EmbeddingCache cache_;
  BaselineKind kind_;
};

class ConstantScorer final : public PairScorer {
 public:
  explicit ConstantScorer(double value) : value_(value) {}
  double score(const Segment&, const Segment&) override { return value_; }

 private:
  double value_;
};

std::vector<ScoredTrial> score_pairs(PairScorer& scorer, const std::vector<PairSample>& pairs);

void write_trials_csv(const std::filesystem::path& path, std::span<const ScoredTrial> trials);
void write_matrix_csv(const std::filesystem::path& path, const DetectionMatrix& matrix);

}  // namespace fsim
