#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <tuple>
#include <span>
#include <string>
#include <vector>

#include "fsim/backbone.hpp"
#include "fsim/checkpoint.hpp"
#include "fsim/corpus.hpp"
#include "fsim/mel.hpp"

namespace fsim {

/// L-dimensional forensic feature vector from the backbone's last hidden layer.
struct Embedding {
  std::vector<double> values;
  SegmentOrigin source;
};

/// Mel frontend + backbone + closed-set class head (affine L -> C).
/// Copying deep-copies the backbone.
class FeatureExtractor {
 public:
  FeatureExtractor(MelSpecConfig mel, std::unique_ptr<Backbone> backbone, std::size_t n_classes,
                   Rng* rng);
  FeatureExtractor(const FeatureExtractor& other);
  FeatureExtractor& operator=(const FeatureExtractor& other);
  FeatureExtractor(FeatureExtractor&&) noexcept = default;
  FeatureExtractor& operator=(FeatureExtractor&&) noexcept = default;

  static FeatureExtractor create_lcnn(const MelSpecConfig& mel, const LcnnConfig& cfg,
                                      std::size_t n_classes, Rng& rng);

  const MelSpecConfig& mel_config() const { return frontend_->config(); }
  const Backbone& backbone() const { return *backbone_; }
  Backbone& backbone() { return *backbone_; }
  std::size_t embedding_dim() const { return backbone_->embedding_dim(); }
  std::size_t num_classes() const { return n_classes_; }

  /// Log-mel batch [N, n_mels, n_frames]; all segments must share one length.
  Tensor features(std::span<const Segment* const> segments) const;
  Tensor features(const std::vector<Segment>& segments) const;

  Tensor embed(const Tensor& mel_batch) const { return backbone_->embed(mel_batch); }
  Embedding extract_embedding(const Segment& seg) const;
  std::vector<Embedding> extract_embeddings(const std::vector<Segment>& segs) const;
  /// Class logits (length C) from the class head.
  std::vector<double> classify_source(const Segment& seg) const;
  Tensor class_logits(const Tensor& embeddings) const;

  Param& head_weight() { return head_weight_; }
  Param& head_bias() { return head_bias_; }
  const Param& head_weight() const { return head_weight_; }
  const Param& head_bias() const { return head_bias_; }

  std::vector<ParamRef> parameters(bool include_head = true);
  std::vector<ConstParamRef> state() const;
  void zero_grad();

  /// "init", "phase1" or "phase2".
  std::string phase = "init";
  /// Segment length (samples) of the most recent training phase.
  std::size_t segment_len = 4 * kSampleRate;
  /// Generator label of each class index.
  std::vector<int> class_labels;

  nlohmann::json header() const;
  std::vector<NamedArray> arrays(const std::string& prefix = {}) const;
  Checkpoint to_checkpoint() const;
  static FeatureExtractor from_checkpoint(const Checkpoint& ckpt);
  static FeatureExtractor from_parts(const nlohmann::json& header,
                                     const std::vector<NamedArray>& arrays);
  std::uint64_t content_hash() const;

 private:
  std::shared_ptr<const MelFrontend> frontend_;
  std::unique_ptr<Backbone> backbone_;
  std::size_t n_classes_ = 0;
  Param head_weight_;
  Param head_bias_;
};

nlohmann::json mel_config_to_json(const MelSpecConfig& cfg);
MelSpecConfig mel_config_from_json(const nlohmann::json& j);

}  // namespace fsim

namespace fsim {

/// Memoizes embeddings by segment origin (track, start, length). Segments with
/// an empty track id are never cached. Not thread-safe.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(const FeatureExtractor& extractor) : extractor_(&extractor) {}

  const std::vector<double>& get(const Segment& seg);
  std::size_t size() const { return cache_.size(); }
  const FeatureExtractor& extractor() const { return *extractor_; }

 private:
  const FeatureExtractor* extractor_;
  std::map<std::tuple<std::string, std::size_t, std::size_t>, std::vector<double>> cache_;
  std::vector<double> scratch_;
};

/// Scores a pair of segments; higher means more likely the same source.
class PairScorer {
 public:
  virtual ~PairScorer() = default;
  virtual double score(const Segment& a, const Segment& b) = 0;
};

}  // namespace fsim
