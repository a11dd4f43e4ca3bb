#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "fsim/checkpoint.hpp"
#include "fsim/extractor.hpp"
#include "fsim/layers.hpp"

namespace fsim {

struct SimilarityHeadConfig {
  std::size_t embedding_dim = 128;  // L, must match the extractor
  std::size_t projection_dim = 64;  // M
  double dropout_rate = 0.5;
  double leaky_slope = 0.01;
  /// Average S(A, B) and S(B, A) at inference. Off by default.
  bool symmetrize = false;
};

/// Class 0 = different source, class 1 = same source. s = exp(log_probs[1]).
struct SimilarityScore {
  std::array<double, 2> log_probs{};
  double s = 0.0;
};

/// concat(h_a, h_b, h_a * h_b).
std::vector<double> fuse(std::span<const double> h_a, std::span<const double> h_b);

/// 1 iff score.s >= tau.
int decide(const SimilarityScore& score, double tau);

/// Shallow pair classifier over embeddings:
///   h_a = fc1(e_a), h_b = fc1(e_b)                (shared, no nonlinearity)
///   u   = fc2(concat(h_a, h_b, h_a * h_b))        (3M -> M)
///   h   = LeakyReLU(BatchNorm(Dropout(u)))
///   log_probs = LogSoftmax(fc3(h))                (M -> 2)
class SimilarityHead {
 public:
  struct Tape {
    Tensor e_a, e_b, h_a, h_b, fused, normed, activated;
    nn::DropoutCache dropout;
    nn::BatchNormCache norm;
    Tensor log_probs;
  };

  explicit SimilarityHead(SimilarityHeadConfig cfg);  // zero weights
  SimilarityHead(SimilarityHeadConfig cfg, Rng& rng);

  const SimilarityHeadConfig& config() const { return cfg_; }
  SimilarityHeadConfig& config() { return cfg_; }

  std::vector<double> project(std::span<const double> embedding) const;

  /// Single-pair forward. Eval mode is deterministic and requires running
  /// normalization statistics; Train mode draws dropout masks from rng and
  /// updates the statistics.
  SimilarityScore forward(std::span<const double> e_a, std::span<const double> e_b,
                          nn::Mode mode, Rng* rng);
  /// Eval-mode score, honouring the symmetrize flag. Const and reentrant.
  SimilarityScore score(std::span<const double> e_a, std::span<const double> e_b) const;

  /// Batched forward over [N, L] inputs; returns log-probabilities [N, 2].
  Tensor forward_batch(const Tensor& e_a, const Tensor& e_b, nn::Mode mode, Rng* rng, Tape* tape);
  Tensor infer_batch(const Tensor& e_a, const Tensor& e_b) const;
  /// Backpropagates d loss / d logits ([N, 2], pre-LogSoftmax); accumulates
  /// parameter gradients and returns (d/d e_a, d/d e_b).
  std::pair<Tensor, Tensor> backward(const Tape& tape, const Tensor& grad_logits);

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> state() const;
  void zero_grad();
  bool has_running_stats() const { return norm_.tracked; }
  nn::BatchNorm& norm() { return norm_; }

  nlohmann::json header() const;
  std::vector<NamedArray> arrays(const std::string& prefix = {}) const;
  static SimilarityHead from_parts(const nlohmann::json& header,
                                   const std::vector<NamedArray>& arrays);

 private:
  void check_dims(std::size_t n_a, std::size_t n_b) const;

  SimilarityHeadConfig cfg_;
  Param fc1_w_, fc1_b_;
  Param fc2_w_, fc2_b_;
  nn::BatchNorm norm_;
  Param fc3_w_, fc3_b_;
};

SimilarityScore score_from_log_probs(double log_p0, double log_p1);

/// Extractor (Siamese, shared weights) + similarity head.
struct SiameseModel {
  FeatureExtractor extractor;
  SimilarityHead head;
  /// Segment length (samples) the head was trained on.
  std::size_t segment_len = 4 * kSampleRate;
  std::string strategy = "frozen";

  SimilarityScore score(const Segment& a, const Segment& b) const;

  /// Header carries M, L, segment_len, strategy and the extractor content
  /// hash. With embed_extractor the extractor arrays travel under
  /// "extractor."; otherwise an external extractor must be supplied on load.
  Checkpoint to_checkpoint(bool embed_extractor = true) const;
  static SiameseModel from_checkpoint(const Checkpoint& ckpt,
                                      const FeatureExtractor* external_extractor = nullptr);
};

/// PairScorer backed by a SiameseModel with an embedding cache.
class SiameseScorer final : public PairScorer {
 public:
  explicit SiameseScorer(const SiameseModel& model) : model_(&model), cache_(model.extractor) {}
  double score(const Segment& a, const Segment& b) override;

 private:
  const SiameseModel* model_;
  EmbeddingCache cache_;
};

}  // namespace fsim
