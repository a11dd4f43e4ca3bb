#include "fsim/backbone.hpp"

#include <cmath>
#include <map>

namespace fsim {

nlohmann::json LcnnConfig::to_json() const {
  return {{"n_mels", n_mels},
          {"channels", channels},
          {"kernels", kernels},
          {"embedding_dim", embedding_dim},
          {"batch_norm", batch_norm}};
}

LcnnConfig LcnnConfig::from_json(const nlohmann::json& j) {
  LcnnConfig cfg;
  if (j.contains("n_mels")) cfg.n_mels = j["n_mels"].get<std::size_t>();
  if (j.contains("channels")) cfg.channels = j["channels"].get<std::vector<std::size_t>>();
  if (j.contains("kernels")) cfg.kernels = j["kernels"].get<std::vector<std::size_t>>();
  if (j.contains("embedding_dim")) cfg.embedding_dim = j["embedding_dim"].get<std::size_t>();
  if (j.contains("batch_norm")) cfg.batch_norm = j["batch_norm"].get<bool>();
  return cfg;
}

namespace {

struct LcnnTape final : BackboneTape {
  std::vector<Tensor> block_inputs;
  std::vector<nn::MfmCache> mfm;
  std::vector<nn::BatchNormCache> norm;
  std::vector<nn::PoolCache> pool;
  std::vector<std::size_t> pooled_shape;
  std::vector<std::size_t> input_shape;
  Tensor fc_input;
  nn::MfmCache fc_mfm;
};

}  // namespace

LcnnBackbone::LcnnBackbone(LcnnConfig cfg) : cfg_(std::move(cfg)) {
  require(!cfg_.channels.empty() && cfg_.channels.size() == cfg_.kernels.size(),
          "lcnn: channels and kernels must be non-empty and of equal length");
  require(cfg_.embedding_dim > 0, "lcnn: embedding_dim must be positive");
  require((cfg_.n_mels >> cfg_.channels.size()) >= 1, "lcnn: too many pooling stages for n_mels");
  std::size_t in = 1;
  for (std::size_t b = 0; b < cfg_.channels.size(); ++b) {
    const std::size_t out = cfg_.channels[b], k = cfg_.kernels[b];
    require(out % 2 == 0 && out > 0, "lcnn: conv channels must be even for Max-Feature-Map");
    require(k % 2 == 1, "lcnn: kernel sizes must be odd");
    Block block;
    block.weight = Param({out, in, k, k});
    block.bias = Param({out});
    block.norm = nn::BatchNorm(out / 2);
    blocks_.push_back(std::move(block));
    in = out / 2;
  }
  fc_weight_ = Param({2 * cfg_.embedding_dim, flat_dim()});
  fc_bias_ = Param({2 * cfg_.embedding_dim});
}

LcnnBackbone::LcnnBackbone(LcnnConfig cfg, Rng& rng) : LcnnBackbone(std::move(cfg)) {
  for (auto& block : blocks_) {
    const auto& s = block.weight.value.shape();
    nn::init_uniform(block.weight.value, std::sqrt(6.0 / static_cast<double>(s[1] * s[2] * s[3])),
                     rng);
  }
  nn::init_uniform(fc_weight_.value, std::sqrt(6.0 / static_cast<double>(flat_dim())), rng);
}

std::size_t LcnnBackbone::flat_dim() const {
  return (cfg_.channels.back() / 2) * (cfg_.n_mels >> cfg_.channels.size());
}

void LcnnBackbone::check_input(const Tensor& input) const {
  require(input.rank() == 3 && input.dim(1) == cfg_.n_mels,
          "lcnn: expected input [N, " + std::to_string(cfg_.n_mels) + ", T], got " +
              shape_string(input.shape()));
  require(input.dim(2) >= min_frames(),
          "lcnn: need at least " + std::to_string(min_frames()) + " frames, got " +
              std::to_string(input.dim(2)));
}

Tensor LcnnBackbone::embed(const Tensor& input) const {
  check_input(input);
  Tensor x = input;
  x.reshape({input.dim(0), 1, input.dim(1), input.dim(2)});
  for (const auto& block : blocks_) {
    x = nn::conv2d_forward(x, block.weight.value, block.bias.value);
    x = nn::mfm_forward(x);
    if (cfg_.batch_norm) x = nn::batchnorm_infer(block.norm, x);
    x = nn::maxpool2_forward(x);
  }
  x = nn::time_mean_forward(x);
  x = nn::linear_forward(x, fc_weight_.value, fc_bias_.value);
  return nn::mfm_forward(x);
}

Tensor LcnnBackbone::forward(const Tensor& input, nn::Mode mode,
                             std::unique_ptr<BackboneTape>& tape_out) {
  check_input(input);
  auto tape = std::make_unique<LcnnTape>();
  tape->input_shape = input.shape();
  const std::size_t nb = blocks_.size();
  tape->mfm.resize(nb);
  tape->norm.resize(nb);
  tape->pool.resize(nb);
  Tensor x = input;
  x.reshape({input.dim(0), 1, input.dim(1), input.dim(2)});
  for (std::size_t b = 0; b < nb; ++b) {
    auto& block = blocks_[b];
    Tensor y = nn::conv2d_forward(x, block.weight.value, block.bias.value);
    tape->block_inputs.push_back(std::move(x));
    y = nn::mfm_forward(y, &tape->mfm[b]);
    if (cfg_.batch_norm) y = nn::batchnorm_forward(block.norm, y, mode, &tape->norm[b]);
    x = nn::maxpool2_forward(y, &tape->pool[b]);
  }
  tape->pooled_shape = x.shape();
  tape->fc_input = nn::time_mean_forward(x);
  Tensor z = nn::linear_forward(tape->fc_input, fc_weight_.value, fc_bias_.value);
  Tensor e = nn::mfm_forward(z, &tape->fc_mfm);
  tape_out = std::move(tape);
  return e;
}

Tensor LcnnBackbone::backward(const BackboneTape& base, const Tensor& grad_embedding,
                              bool need_input_grad) {
  const auto& tape = dynamic_cast<const LcnnTape&>(base);
  Tensor g = nn::mfm_backward(grad_embedding, tape.fc_mfm);
  g = nn::linear_backward(tape.fc_input, fc_weight_.value, g, fc_weight_.grad, fc_bias_.grad);
  g = nn::time_mean_backward(g, tape.pooled_shape);
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    auto& block = blocks_[b];
    g = nn::maxpool2_backward(g, tape.pool[b]);
    if (cfg_.batch_norm) g = nn::batchnorm_backward(block.norm, g, tape.norm[b]);
    g = nn::mfm_backward(g, tape.mfm[b]);
    const bool need = b > 0 || need_input_grad;
    g = nn::conv2d_backward(tape.block_inputs[b], block.weight.value, g, block.weight.grad,
                            block.bias.grad, need);
  }
  if (need_input_grad) g.reshape(tape.input_shape);
  return g;
}

std::vector<ParamRef> LcnnBackbone::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    auto& block = blocks_[b];
    const std::string p = "block" + std::to_string(b) + ".";
    out.push_back({p + "conv.weight", &block.weight.value, &block.weight.grad});
    out.push_back({p + "conv.bias", &block.bias.value, &block.bias.grad});
    if (cfg_.batch_norm) {
      out.push_back({p + "norm.gamma", &block.norm.gamma.value, &block.norm.gamma.grad});
      out.push_back({p + "norm.beta", &block.norm.beta.value, &block.norm.beta.grad});
      out.push_back({p + "norm.running_mean", &block.norm.running_mean, nullptr});
      out.push_back({p + "norm.running_var", &block.norm.running_var, nullptr});
    }
  }
  out.push_back({"fc.weight", &fc_weight_.value, &fc_weight_.grad});
  out.push_back({"fc.bias", &fc_bias_.value, &fc_bias_.grad});
  return out;
}

std::vector<ConstParamRef> LcnnBackbone::state() const {
  std::vector<ConstParamRef> out;
  for (auto& ref : const_cast<LcnnBackbone*>(this)->parameters())
    out.push_back({ref.name, ref.value});
  return out;
}

std::unique_ptr<Backbone> LcnnBackbone::clone() const {
  return std::make_unique<LcnnBackbone>(*this);
}

// ---------------------------------------------------------------------------
// registry

namespace {
std::map<std::string, BackboneFactory>& registry() {
  static std::map<std::string, BackboneFactory> table{
      {"lcnn", [](const nlohmann::json& cfg, Rng* rng) -> std::unique_ptr<Backbone> {
         auto c = LcnnConfig::from_json(cfg);
         if (rng) return std::make_unique<LcnnBackbone>(c, *rng);
         return std::make_unique<LcnnBackbone>(c);
       }}};
  return table;
}
}  // namespace

void register_backbone(const std::string& id, BackboneFactory factory) {
  registry()[id] = std::move(factory);
}

std::unique_ptr<Backbone> make_backbone(const std::string& id, const nlohmann::json& config,
                                        Rng* rng) {
  auto it = registry().find(id);
  require(it != registry().end(), "unknown backbone '" + id + "'");
  return it->second(config, rng);
}

std::vector<std::string> registered_backbones() {
  std::vector<std::string> ids;
  for (const auto& [id, _] : registry()) ids.push_back(id);
  return ids;
}

}  // namespace fsim
