#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsim/layers.hpp"
#include "fsim/tensor.hpp"

namespace fsim {

/// Activations a backbone keeps between forward and backward.
struct BackboneTape {
  virtual ~BackboneTape() = default;
};

/// Contract every feature-extractor backbone satisfies. Inputs are batches of
/// log-mel spectrograms [N, n_mels, n_frames]; outputs are embeddings [N, L]
/// taken from the last hidden layer.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::string id() const = 0;
  virtual std::size_t embedding_dim() const = 0;
  virtual std::size_t input_bins() const = 0;
  virtual std::size_t min_frames() const = 0;

  /// Inference (fixed statistics). Const and reentrant.
  virtual Tensor embed(const Tensor& input) const = 0;
  /// Differentiable forward; Train mode updates normalization statistics.
  virtual Tensor forward(const Tensor& input, nn::Mode mode,
                         std::unique_ptr<BackboneTape>& tape) = 0;
  /// Accumulates parameter gradients; returns d/d input when requested.
  virtual Tensor backward(const BackboneTape& tape, const Tensor& grad_embedding,
                          bool need_input_grad = false) = 0;

  virtual std::vector<ParamRef> parameters() = 0;
  virtual std::vector<ConstParamRef> state() const = 0;
  virtual nlohmann::json config() const = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;
};

/// Compact Light-CNN: each block is conv -> Max-Feature-Map -> BatchNorm ->
/// 2x2 max pool. The pooled map is averaged over
/// time, flattened over (channel, frequency), then an affine layer of width
/// 2L followed by Max-Feature-Map gives the L-dimensional embedding.
struct LcnnConfig {
  std::size_t n_mels = 80;
  std::vector<std::size_t> channels{16, 16, 32, 32};  // conv outputs before MFM halving
  std::vector<std::size_t> kernels{5, 3, 3, 3};
  std::size_t embedding_dim = 128;
  bool batch_norm = true;

  nlohmann::json to_json() const;
  static LcnnConfig from_json(const nlohmann::json& j);
};

class LcnnBackbone final : public Backbone {
 public:
  explicit LcnnBackbone(LcnnConfig cfg);  // zero weights
  LcnnBackbone(LcnnConfig cfg, Rng& rng);

  std::string id() const override { return "lcnn"; }
  std::size_t embedding_dim() const override { return cfg_.embedding_dim; }
  std::size_t input_bins() const override { return cfg_.n_mels; }
  std::size_t min_frames() const override { return std::size_t{1} << cfg_.channels.size(); }

  Tensor embed(const Tensor& input) const override;
  Tensor forward(const Tensor& input, nn::Mode mode, std::unique_ptr<BackboneTape>& tape) override;
  Tensor backward(const BackboneTape& tape, const Tensor& grad_embedding,
                  bool need_input_grad) override;

  std::vector<ParamRef> parameters() override;
  std::vector<ConstParamRef> state() const override;
  nlohmann::json config() const override { return cfg_.to_json(); }
  std::unique_ptr<Backbone> clone() const override;

  const LcnnConfig& lcnn_config() const { return cfg_; }

 private:
  struct Block {
    Param weight;
    Param bias;
    nn::BatchNorm norm;
  };

  void check_input(const Tensor& input) const;
  std::size_t flat_dim() const;

  LcnnConfig cfg_;
  std::vector<Block> blocks_;
  Param fc_weight_;
  Param fc_bias_;
};

using BackboneFactory = std::function<std::unique_ptr<Backbone>(const nlohmann::json&, Rng*)>;

/// Registers a backbone constructor under `id`. A null rng asks for an
/// uninitialized (to-be-loaded) instance.
void register_backbone(const std::string& id, BackboneFactory factory);
std::unique_ptr<Backbone> make_backbone(const std::string& id, const nlohmann::json& config,
                                        Rng* rng);
std::vector<std::string> registered_backbones();

}  // namespace fsim
