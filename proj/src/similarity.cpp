#include "fsim/similarity.hpp"

#include <cmath>
#include <optional>

namespace fsim {

std::vector<double> fuse(std::span<const double> h_a, std::span<const double> h_b) {
  require(h_a.size() == h_b.size(), "fuse: length mismatch");
  const std::size_t m = h_a.size();
  std::vector<double> out(3 * m);
  for (std::size_t i = 0; i < m; ++i) {
    out[i] = h_a[i];
    out[m + i] = h_b[i];
    out[2 * m + i] = h_a[i] * h_b[i];
  }
  return out;
}

int decide(const SimilarityScore& score, double tau) {
  require(tau >= 0.0 && tau <= 1.0, "decide: tau must lie in [0, 1]");
  return score.s >= tau ? 1 : 0;
}

SimilarityScore score_from_log_probs(double log_p0, double log_p1) {
  return SimilarityScore{{log_p0, log_p1}, std::exp(log_p1)};
}

SimilarityHead::SimilarityHead(SimilarityHeadConfig cfg)
    : cfg_(cfg),
      fc1_w_({cfg.projection_dim, cfg.embedding_dim}),
      fc1_b_({cfg.projection_dim}),
      fc2_w_({cfg.projection_dim, 3 * cfg.projection_dim}),
      fc2_b_({cfg.projection_dim}),
      norm_(cfg.projection_dim),
      fc3_w_({2, cfg.projection_dim}),
      fc3_b_({2}) {
  require(cfg.embedding_dim > 0 && cfg.projection_dim > 0, "similarity head: dimensions must be positive");
  require(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0, "similarity head: dropout rate must be in [0, 1)");
}

SimilarityHead::SimilarityHead(SimilarityHeadConfig cfg, Rng& rng) : SimilarityHead(cfg) {
  const double b1 = 1.0 / std::sqrt(static_cast<double>(cfg.embedding_dim));
  const double b2 = 1.0 / std::sqrt(3.0 * static_cast<double>(cfg.projection_dim));
  const double b3 = 1.0 / std::sqrt(static_cast<double>(cfg.projection_dim));
  nn::init_uniform(fc1_w_.value, b1, rng);
  nn::init_uniform(fc1_b_.value, b1, rng);
  nn::init_uniform(fc2_w_.value, b2, rng);
  nn::init_uniform(fc2_b_.value, b2, rng);
  nn::init_uniform(fc3_w_.value, b3, rng);
  nn::init_uniform(fc3_b_.value, b3, rng);
}

void SimilarityHead::check_dims(std::size_t n_a, std::size_t n_b) const {
  require(n_a == cfg_.embedding_dim && n_b == cfg_.embedding_dim,
          "similarity head: expected embeddings of length " + std::to_string(cfg_.embedding_dim) +
              ", got " + std::to_string(n_a) + " and " + std::to_string(n_b));
}

std::vector<double> SimilarityHead::project(std::span<const double> embedding) const {
  check_dims(embedding.size(), embedding.size());
  Tensor e({1, embedding.size()});
  std::copy(embedding.begin(), embedding.end(), e.data());
  return nn::linear_forward(e, fc1_w_.value, fc1_b_.value).values();
}

namespace {
Tensor fuse_rows(const Tensor& h_a, const Tensor& h_b) {
  const std::size_t n = h_a.dim(0), m = h_a.dim(1);
  Tensor out({n, 3 * m});
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = fuse({h_a.data() + r * m, m}, {h_b.data() + r * m, m});
    std::copy(row.begin(), row.end(), out.data() + r * 3 * m);
  }
  return out;
}

Tensor row_tensor(std::span<const double> v) {
  Tensor t({1, v.size()});
  std::copy(v.begin(), v.end(), t.data());
  return t;
}
}  // namespace

Tensor SimilarityHead::forward_batch(const Tensor& e_a, const Tensor& e_b, nn::Mode mode, Rng* rng,
                                     Tape* tape) {
  require(e_a.rank() == 2 && e_b.same_shape(e_a), "similarity head: batch shape mismatch");
  check_dims(e_a.dim(1), e_b.dim(1));
  if (mode == nn::Mode::Eval)
    require(norm_.tracked, "similarity head: normalization running statistics absent in eval mode");
  Tensor h_a = nn::linear_forward(e_a, fc1_w_.value, fc1_b_.value);
  Tensor h_b = nn::linear_forward(e_b, fc1_w_.value, fc1_b_.value);
  Tensor fused = fuse_rows(h_a, h_b);
  Tensor u = nn::linear_forward(fused, fc2_w_.value, fc2_b_.value);
  nn::DropoutCache drop;
  Tensor d = nn::dropout_forward(u, cfg_.dropout_rate, mode, rng, tape ? &drop : nullptr);
  nn::BatchNormCache norm;
  Tensor pre = nn::batchnorm_forward(norm_, d, mode, tape ? &norm : nullptr);
  Tensor post = nn::leaky_relu_forward(pre, cfg_.leaky_slope);
  Tensor z = nn::linear_forward(post, fc3_w_.value, fc3_b_.value);
  Tensor log_probs = nn::log_softmax(z);
  if (tape) {
    tape->e_a = e_a;
    tape->e_b = e_b;
    tape->h_a = std::move(h_a);
    tape->h_b = std::move(h_b);
    tape->fused = std::move(fused);
    tape->normed = std::move(pre);
    tape->activated = std::move(post);
    tape->dropout = std::move(drop);
    tape->norm = std::move(norm);
    tape->log_probs = log_probs;
  }
  return log_probs;
}

Tensor SimilarityHead::infer_batch(const Tensor& e_a, const Tensor& e_b) const {
  require(e_a.rank() == 2 && e_b.same_shape(e_a), "similarity head: batch shape mismatch");
  check_dims(e_a.dim(1), e_b.dim(1));
  require(norm_.tracked, "similarity head: normalization running statistics absent in eval mode");
  const Tensor h_a = nn::linear_forward(e_a, fc1_w_.value, fc1_b_.value);
  const Tensor h_b = nn::linear_forward(e_b, fc1_w_.value, fc1_b_.value);
  const Tensor u = nn::linear_forward(fuse_rows(h_a, h_b), fc2_w_.value, fc2_b_.value);
  const Tensor post = nn::leaky_relu_forward(nn::batchnorm_infer(norm_, u), cfg_.leaky_slope);
  return nn::log_softmax(nn::linear_forward(post, fc3_w_.value, fc3_b_.value));
}

SimilarityScore SimilarityHead::forward(std::span<const double> e_a, std::span<const double> e_b,
                                        nn::Mode mode, Rng* rng) {
  if (mode == nn::Mode::Eval) return score(e_a, e_b);
  const Tensor lp = forward_batch(row_tensor(e_a), row_tensor(e_b), mode, rng, nullptr);
  return score_from_log_probs(lp[0], lp[1]);
}

SimilarityScore SimilarityHead::score(std::span<const double> e_a, std::span<const double> e_b) const {
  const Tensor lp = infer_batch(row_tensor(e_a), row_tensor(e_b));
  SimilarityScore forward_order = score_from_log_probs(lp[0], lp[1]);
  if (!cfg_.symmetrize) return forward_order;
  const Tensor rev = infer_batch(row_tensor(e_b), row_tensor(e_a));
  const double p = 0.5 * (forward_order.s + std::exp(rev[1]));
  return SimilarityScore{{std::log1p(-p), std::log(p)}, p};
}

std::pair<Tensor, Tensor> SimilarityHead::backward(const Tape& tape, const Tensor& grad_logits) {
  Tensor g = nn::linear_backward(tape.activated, fc3_w_.value, grad_logits, fc3_w_.grad, fc3_b_.grad);
  g = nn::leaky_relu_backward(tape.normed, g, cfg_.leaky_slope);
  g = nn::batchnorm_backward(norm_, g, tape.norm);
  g = nn::dropout_backward(g, tape.dropout);
  const Tensor d_fused = nn::linear_backward(tape.fused, fc2_w_.value, g, fc2_w_.grad, fc2_b_.grad);

  const std::size_t n = tape.h_a.dim(0), m = tape.h_a.dim(1);
  Tensor d_ha({n, m}), d_hb({n, m});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < m; ++i) {
      const double dp = d_fused[r * 3 * m + 2 * m + i];
      d_ha[r * m + i] = d_fused[r * 3 * m + i] + dp * tape.h_b[r * m + i];
      d_hb[r * m + i] = d_fused[r * 3 * m + m + i] + dp * tape.h_a[r * m + i];
    }
  Tensor d_ea = nn::linear_backward(tape.e_a, fc1_w_.value, d_ha, fc1_w_.grad, fc1_b_.grad);
  Tensor d_eb = nn::linear_backward(tape.e_b, fc1_w_.value, d_hb, fc1_w_.grad, fc1_b_.grad);
  return {std::move(d_ea), std::move(d_eb)};
}

std::vector<ParamRef> SimilarityHead::parameters() {
  return {{"fc1.weight", &fc1_w_.value, &fc1_w_.grad},
          {"fc1.bias", &fc1_b_.value, &fc1_b_.grad},
          {"fc2.weight", &fc2_w_.value, &fc2_w_.grad},
          {"fc2.bias", &fc2_b_.value, &fc2_b_.grad},
          {"norm.gamma", &norm_.gamma.value, &norm_.gamma.grad},
          {"norm.beta", &norm_.beta.value, &norm_.beta.grad},
          {"norm.running_mean", &norm_.running_mean, nullptr},
          {"norm.running_var", &norm_.running_var, nullptr},
          {"fc3.weight", &fc3_w_.value, &fc3_w_.grad},
          {"fc3.bias", &fc3_b_.value, &fc3_b_.grad}};
}

std::vector<ConstParamRef> SimilarityHead::state() const {
  std::vector<ConstParamRef> out;
  for (const auto& p : const_cast<SimilarityHead*>(this)->parameters()) out.push_back({p.name, p.value});
  return out;
}

void SimilarityHead::zero_grad() {
  for (auto& p : parameters())
    if (p.grad) p.grad->fill(0.0);
}

nlohmann::json SimilarityHead::header() const {
  return {{"L", cfg_.embedding_dim},
          {"M", cfg_.projection_dim},
          {"dropout_rate", cfg_.dropout_rate},
          {"leaky_slope", cfg_.leaky_slope},
          {"symmetrize", cfg_.symmetrize},
          {"norm_tracked", norm_.tracked}};
}

std::vector<NamedArray> SimilarityHead::arrays(const std::string& prefix) const {
  return export_arrays(state(), prefix);
}

SimilarityHead SimilarityHead::from_parts(const nlohmann::json& header,
                                          const std::vector<NamedArray>& arrays) {
  SimilarityHeadConfig cfg;
  cfg.embedding_dim = header.at("L").get<std::size_t>();
  cfg.projection_dim = header.at("M").get<std::size_t>();
  cfg.dropout_rate = header.at("dropout_rate").get<double>();
  cfg.leaky_slope = header.at("leaky_slope").get<double>();
  cfg.symmetrize = header.value("symmetrize", false);
  SimilarityHead head(cfg);
  import_arrays(head.parameters(), arrays, "similarity checkpoint");
  head.norm_.tracked = header.value("norm_tracked", true);
  return head;
}

// ---------------------------------------------------------------------------

SimilarityScore SiameseModel::score(const Segment& a, const Segment& b) const {
  const std::vector<Segment> pair{a, b};
  const Tensor e = extractor.embed(extractor.features(pair));
  const std::size_t l = extractor.embedding_dim();
  return head.score({e.data(), l}, {e.data() + l, l});
}

Checkpoint SiameseModel::to_checkpoint(bool embed_extractor) const {
  Checkpoint ckpt;
  ckpt.meta = head.header();
  ckpt.meta["kind"] = "similarity";
  ckpt.meta["phase"] = "phase2";
  ckpt.meta["segment_len"] = segment_len;
  ckpt.meta["strategy"] = strategy;
  ckpt.meta["extractor"] = extractor.header();
  ckpt.meta["extractor_hash"] = hex64(extractor.content_hash());
  ckpt.meta["extractor_embedded"] = embed_extractor;
  ckpt.arrays = head.arrays("head.");
  if (embed_extractor) {
    auto ex = extractor.arrays("extractor.");
    ckpt.arrays.insert(ckpt.arrays.end(), ex.begin(), ex.end());
  }
  return ckpt;
}

SiameseModel SiameseModel::from_checkpoint(const Checkpoint& ckpt,
                                           const FeatureExtractor* external_extractor) {
  require(ckpt.meta.value("kind", "") == "similarity", "checkpoint is not a similarity checkpoint");
  const std::string expected_hash = ckpt.meta.at("extractor_hash").get<std::string>();
  std::optional<FeatureExtractor> fx;
  if (ckpt.meta.value("extractor_embedded", false)) {
    fx = FeatureExtractor::from_parts(ckpt.meta.at("extractor"), ckpt.with_prefix("extractor."));
  } else {
    require(external_extractor != nullptr,
            "similarity checkpoint has no embedded extractor; supply the extractor checkpoint");
    fx = *external_extractor;
  }
  require(hex64(fx->content_hash()) == expected_hash,
          "similarity checkpoint: extractor content hash mismatch (expected " + expected_hash + ")");
  SimilarityHead head = SimilarityHead::from_parts(ckpt.meta, ckpt.with_prefix("head."));
  require(head.config().embedding_dim == fx->embedding_dim(),
          "similarity checkpoint: head L does not match extractor L");
  SiameseModel model{std::move(*fx), std::move(head), ckpt.meta.at("segment_len").get<std::size_t>(),
                     ckpt.meta.value("strategy", "frozen")};
  return model;
}

double SiameseScorer::score(const Segment& a, const Segment& b) {
  const std::vector<double> e_a = cache_.get(a);
  const std::vector<double>& e_b = cache_.get(b);
  return model_->head.score(e_a, e_b).s;
}

}  // namespace fsim
