#include "fsim/extractor.hpp"

#include <cmath>

namespace fsim {

nlohmann::json mel_config_to_json(const MelSpecConfig& cfg) {
  return {{"n_fft", cfg.n_fft},       {"win_length", cfg.win_length}, {"hop_length", cfg.hop_length},
          {"f_min", cfg.f_min},       {"f_max", cfg.f_max},           {"n_mels", cfg.n_mels},
          {"sample_rate", cfg.sample_rate}, {"window", "hamming"}};
}

MelSpecConfig mel_config_from_json(const nlohmann::json& j) {
  MelSpecConfig cfg;
  cfg.n_fft = j.at("n_fft").get<std::size_t>();
  cfg.win_length = j.at("win_length").get<std::size_t>();
  cfg.hop_length = j.at("hop_length").get<std::size_t>();
  cfg.f_min = j.at("f_min").get<double>();
  cfg.f_max = j.at("f_max").get<double>();
  cfg.n_mels = j.at("n_mels").get<std::size_t>();
  cfg.sample_rate = j.at("sample_rate").get<int>();
  return cfg;
}

FeatureExtractor::FeatureExtractor(MelSpecConfig mel, std::unique_ptr<Backbone> backbone,
                                   std::size_t n_classes, Rng* rng)
    : frontend_(std::make_shared<MelFrontend>(mel)),
      backbone_(std::move(backbone)),
      n_classes_(n_classes) {
  require(backbone_ != nullptr, "extractor: null backbone");
  require(n_classes_ >= 1, "extractor: need at least one class");
  require(backbone_->input_bins() == mel.n_mels,
          "extractor: backbone expects " + std::to_string(backbone_->input_bins()) +
              " mel bins but frontend produces " + std::to_string(mel.n_mels));
  const std::size_t l = backbone_->embedding_dim();
  head_weight_ = Param({n_classes_, l});
  head_bias_ = Param({n_classes_});
  if (rng) nn::init_uniform(head_weight_.value, 1.0 / std::sqrt(static_cast<double>(l)), *rng);
  for (std::size_t c = 0; c < n_classes_; ++c) class_labels.push_back(static_cast<int>(c));
}

FeatureExtractor::FeatureExtractor(const FeatureExtractor& other)
    : phase(other.phase),
      segment_len(other.segment_len),
      class_labels(other.class_labels),
      frontend_(other.frontend_),
      backbone_(other.backbone_->clone()),
      n_classes_(other.n_classes_),
      head_weight_(other.head_weight_),
      head_bias_(other.head_bias_) {}

FeatureExtractor& FeatureExtractor::operator=(const FeatureExtractor& other) {
  if (this != &other) {
    FeatureExtractor copy(other);
    *this = std::move(copy);
  }
  return *this;
}

FeatureExtractor FeatureExtractor::create_lcnn(const MelSpecConfig& mel, const LcnnConfig& cfg,
                                               std::size_t n_classes, Rng& rng) {
  return FeatureExtractor(mel, std::make_unique<LcnnBackbone>(cfg, rng), n_classes, &rng);
}

Tensor FeatureExtractor::features(std::span<const Segment* const> segments) const {
  require(!segments.empty(), "extractor: empty batch");
  const std::size_t len = segments.front()->samples.size();
  const std::size_t frames = mel_frame_count(len, mel_config());
  const std::size_t bins = mel_config().n_mels;
  Tensor batch({segments.size(), bins, frames});
  for (std::size_t i = 0; i < segments.size(); ++i) {
    require(segments[i]->samples.size() == len, "extractor: segments in a batch differ in length");
    const MelSpec spec = frontend_->compute(segments[i]->samples);
    std::copy(spec.values.begin(), spec.values.end(), batch.data() + i * bins * frames);
  }
  return batch;
}

Tensor FeatureExtractor::features(const std::vector<Segment>& segments) const {
  std::vector<const Segment*> ptrs;
  for (const auto& s : segments) ptrs.push_back(&s);
  return features(ptrs);
}

Embedding FeatureExtractor::extract_embedding(const Segment& seg) const {
  const Segment* one[] = {&seg};
  Tensor e = embed(features(one));
  return Embedding{e.values(), seg.origin};
}

std::vector<Embedding> FeatureExtractor::extract_embeddings(const std::vector<Segment>& segs) const {
  std::vector<Embedding> out;
  if (segs.empty()) return out;
  const Tensor e = embed(features(segs));
  const std::size_t l = embedding_dim();
  for (std::size_t i = 0; i < segs.size(); ++i)
    out.push_back({{e.data() + i * l, e.data() + (i + 1) * l}, segs[i].origin});
  return out;
}

Tensor FeatureExtractor::class_logits(const Tensor& embeddings) const {
  return nn::linear_forward(embeddings, head_weight_.value, head_bias_.value);
}

std::vector<double> FeatureExtractor::classify_source(const Segment& seg) const {
  const Segment* one[] = {&seg};
  return class_logits(embed(features(one))).values();
}

std::vector<ParamRef> FeatureExtractor::parameters(bool include_head) {
  auto out = backbone_->parameters();
  for (auto& p : out) p.name = "backbone." + p.name;
  if (include_head) {
    out.push_back({"head.weight", &head_weight_.value, &head_weight_.grad});
    out.push_back({"head.bias", &head_bias_.value, &head_bias_.grad});
  }
  return out;
}

std::vector<ConstParamRef> FeatureExtractor::state() const {
  auto out = backbone_->state();
  for (auto& p : out) p.name = "backbone." + p.name;
  out.push_back({"head.weight", &head_weight_.value});
  out.push_back({"head.bias", &head_bias_.value});
  return out;
}

void FeatureExtractor::zero_grad() {
  for (auto& p : parameters())
    if (p.grad) p.grad->fill(0.0);
}

nlohmann::json FeatureExtractor::header() const {
  return {{"kind", "extractor"},
          {"backbone_id", backbone_->id()},
          {"backbone_config", backbone_->config()},
          {"L", embedding_dim()},
          {"C", n_classes_},
          {"mel", mel_config_to_json(mel_config())},
          {"phase", phase},
          {"segment_len", segment_len},
          {"class_labels", class_labels}};
}

std::vector<NamedArray> FeatureExtractor::arrays(const std::string& prefix) const {
  return export_arrays(state(), prefix);
}

Checkpoint FeatureExtractor::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta = header();
  ckpt.arrays = arrays();
  ckpt.meta["content_hash"] = hex64(fsim::content_hash(ckpt.arrays));
  return ckpt;
}

FeatureExtractor FeatureExtractor::from_parts(const nlohmann::json& header,
                                              const std::vector<NamedArray>& arrays) {
  auto backbone = make_backbone(header.at("backbone_id").get<std::string>(),
                                header.at("backbone_config"), nullptr);
  FeatureExtractor fx(mel_config_from_json(header.at("mel")), std::move(backbone),
                      header.at("C").get<std::size_t>(), nullptr);
  require(fx.embedding_dim() == header.at("L").get<std::size_t>(),
          "extractor checkpoint: L in header does not match backbone");
  import_arrays(fx.parameters(), arrays, "extractor checkpoint");
  fx.phase = header.at("phase").get<std::string>();
  fx.segment_len = header.at("segment_len").get<std::size_t>();
  fx.class_labels = header.at("class_labels").get<std::vector<int>>();
  return fx;
}

FeatureExtractor FeatureExtractor::from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.meta.value("kind", "") == "extractor", "checkpoint is not an extractor checkpoint");
  return from_parts(ckpt.meta, ckpt.arrays);
}

std::uint64_t FeatureExtractor::content_hash() const { return fsim::content_hash(arrays()); }

}  // namespace fsim

namespace fsim {

const std::vector<double>& EmbeddingCache::get(const Segment& seg) {
  if (seg.origin.track.empty()) {
    scratch_ = extractor_->extract_embedding(seg).values;
    return scratch_;
  }
  const auto key = std::make_tuple(seg.origin.track, seg.origin.start, seg.samples.size());
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  return cache_.emplace(key, extractor_->extract_embedding(seg).values).first->second;
}

}  // namespace fsim
