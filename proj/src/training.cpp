#include "fsim/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace fsim {

Adam::Adam(std::vector<ParamRef> params, double lr_, double beta1, double beta2, double eps)
    : lr(lr_), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : params)
    if (p.grad) params_.push_back(p);
  for (const auto& p : params_) {
    m_.emplace_back(p.value->size(), 0.0);
    v_.emplace_back(p.value->size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.grad->fill(0.0);
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    double* w = params_[k].value->data();
    const double* g = params_[k].grad->data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

PlateauScheduler::PlateauScheduler(double factor, int patience)
    : factor_(factor), patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  require(factor > 0.0 && factor < 1.0, "plateau factor must lie in (0, 1)");
  require(patience >= 1, "plateau patience must be at least 1");
}

double PlateauScheduler::step(double loss, double lr) {
  if (loss < best_) {
    best_ = loss;
    bad_ = 0;
    return lr;
  }
  if (++bad_ >= patience_) {
    bad_ = 0;
    return lr * factor_;
  }
  return lr;
}

void validate(const Phase1Config& cfg) {
  require(cfg.epochs >= 1, "phase1: epochs must be at least 1");
  require(cfg.batch_size >= 1, "phase1: batch_size must be at least 1");
  require(cfg.lr > 0.0, "phase1: lr must be positive");
  require(cfg.plateau_patience >= 1, "phase1: plateau_patience must be at least 1");
  require(cfg.early_stop >= cfg.plateau_patience, "phase1: early_stop must be >= plateau_patience");
  require(cfg.segment_len >= cfg.mel.win_length, "phase1: segment shorter than one analysis window");
  validate(cfg.mel);
}

void validate(const Phase2Config& cfg) {
  require(cfg.epochs >= 1, "phase2: epochs must be at least 1");
  require(cfg.batch_size >= 1, "phase2: batch_size must be at least 1");
  require(cfg.lr > 0.0, "phase2: lr must be positive");
  require(cfg.strategy == "frozen" || cfg.strategy == "unfrozen",
          "phase2: strategy must be 'frozen' or 'unfrozen', got '" + cfg.strategy + "'");
  require(cfg.plateau_patience >= 1, "phase2: plateau_patience must be at least 1");
  require(cfg.early_stop >= cfg.plateau_patience, "phase2: early_stop must be >= plateau_patience");
  require(cfg.projection_dim >= 1, "phase2: projection_dim must be at least 1");
  require(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0, "phase2: dropout_rate must lie in [0, 1)");
  require(cfg.segment_len > 0, "phase2: segment_len must be positive");
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs)
    epochs_json.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_loss", e.val_loss},
                           {"val_accuracy", e.val_accuracy},
                           {"lr", e.lr},
                           {"improved", e.improved}});
  return {{"phase", phase},           {"epochs", epochs_json},       {"best_epoch", best_epoch},
          {"best_val_loss", best_val_loss}, {"stop_reason", stop_reason}, {"final_lr", final_lr},
          {"checkpoint_path", checkpoint_path}};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_stratified(
    const Manifest& manifest, double ratio, Rng& rng) {
  require(ratio > 0.0 && ratio < 1.0, "split ratio must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    if (manifest.records[i].split != Split::Test)
      groups[manifest.records[i].generator_label].push_back(i);
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  for (const auto& [label, records] : groups) {
    require(records.size() >= 2,
            "generator " + std::to_string(label) + " has fewer than 2 utterances to split");
    const auto [first, second] = stratified_partition(records.size(), ratio, rng);
    for (auto i : first) out.first.push_back(records[i]);
    for (auto i : second) out.second.push_back(records[i]);
  }
  std::sort(out.first.begin(), out.first.end());
  std::sort(out.second.begin(), out.second.end());
  return out;
}

Manifest resplit(const Manifest& manifest, double ratio, Rng& rng) {
  Manifest out = manifest;
  const auto [train, val] = split_stratified(manifest, ratio, rng);
  for (auto i : train) out.records[i].split = Split::Train;
  for (auto i : val) out.records[i].split = Split::Val;
  return out;
}

namespace {

constexpr std::size_t kEvalChunk = 32;

void check_finite(double loss, const std::string& phase, int epoch, std::size_t step) {
  if (!std::isfinite(loss))
    throw Error(phase + " diverged: non-finite loss " + std::to_string(loss) + " at epoch " +
                std::to_string(epoch) + ", step " + std::to_string(step));
}

/// Rows [begin, begin + n) of a [N, L] tensor.
Tensor rows(const Tensor& t, std::size_t begin, std::size_t n) {
  const std::size_t width = t.dim(1);
  Tensor out({n, width});
  std::copy_n(t.data() + begin * width, n * width, out.data());
  return out;
}

Tensor stack_rows(const Tensor& top, const Tensor& bottom) {
  Tensor out({top.dim(0) + bottom.dim(0), top.dim(1)});
  std::copy_n(top.data(), top.size(), out.data());
  std::copy_n(bottom.data(), bottom.size(), out.data() + top.size());
  return out;
}

struct StopTracker {
  int early_stop;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int since_best = 0;

  bool update(double val_loss, int epoch) {
    if (val_loss < best) {
      best = val_loss;
      best_epoch = epoch;
      since_best = 0;
      return true;
    }
    ++since_best;
    return false;
  }
  bool should_stop() const { return since_best >= early_stop; }
};

}  // namespace

Phase1Result train_extractor(const Manifest& manifest, const Phase1Config& cfg, Rng& rng,
                             const EpochCallback& on_epoch) {
  validate(cfg);
  const SplitView train(manifest, Split::Train);
  const SplitView val(manifest, Split::Val);
  const std::vector<int> labels = train.generators();
  require(labels.size() >= 2, "phase1 needs at least 2 train generators, found " +
                                  std::to_string(labels.size()));
  require(val.size() > 0, "phase1 needs a non-empty validation split");
  std::map<int, int> class_of;
  for (std::size_t c = 0; c < labels.size(); ++c) class_of[labels[c]] = static_cast<int>(c);

  const std::uint64_t seed = rng();
  Rng init_rng(mix_seed(seed, 1));
  Rng batch_rng(mix_seed(seed, 2));

  FeatureExtractor fx = FeatureExtractor::create_lcnn(cfg.mel, cfg.backbone, labels.size(), init_rng);
  fx.class_labels = labels;
  fx.segment_len = cfg.segment_len;
  AudioLibrary library(manifest);

  std::vector<Tensor> val_inputs;
  std::vector<std::vector<int>> val_targets;
  {
    std::vector<Segment> chunk;
    std::vector<int> targets;
    auto flush = [&] {
      if (chunk.empty()) return;
      val_inputs.push_back(fx.features(chunk));
      val_targets.push_back(targets);
      chunk.clear();
      targets.clear();
    };
    for (const auto& [label, records] : val.by_generator()) {
      const auto it = class_of.find(label);
      require(it != class_of.end(),
              "validation generator " + std::to_string(label) + " is absent from the train split");
      for (auto r : records) {
        chunk.push_back(draw_segment(library, r, cfg.segment_len, StartPolicy::Zero, batch_rng));
        targets.push_back(it->second);
        if (chunk.size() == kEvalChunk) flush();
      }
    }
    flush();
  }

  const std::size_t steps = cfg.steps_per_epoch
                                ? cfg.steps_per_epoch
                                : (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  Adam opt(fx.parameters(true), cfg.lr);
  PlateauScheduler scheduler(cfg.plateau_factor, cfg.plateau_patience);
  StopTracker stop{cfg.early_stop};
  FeatureExtractor best = fx;
  TrainReport report;
  report.phase = "phase1";
  report.stop_reason = "epoch_limit";

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double train_loss = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<Segment> segments;
      std::vector<int> targets;
      for (std::size_t k = 0; k < cfg.batch_size; ++k) {
        auto [seg, label] = sample_class_balanced_segment(train, library, cfg.segment_len, batch_rng);
        segments.push_back(std::move(seg));
        targets.push_back(class_of.at(label));
      }
      const Tensor x = fx.features(segments);
      std::unique_ptr<BackboneTape> tape;
      const Tensor emb = fx.backbone().forward(x, nn::Mode::Train, tape);
      const Tensor logits = nn::linear_forward(emb, fx.head_weight().value, fx.head_bias().value);
      const Tensor log_probs = nn::log_softmax(logits);
      const double loss = nn::nll_loss(log_probs, targets);
      check_finite(loss, "phase1", epoch, step);
      train_loss += loss;

      opt.zero_grad();
      const Tensor grad = nn::log_softmax_nll_backward(log_probs, targets);
      const Tensor grad_emb = nn::linear_backward(emb, fx.head_weight().value, grad,
                                                  fx.head_weight().grad, fx.head_bias().grad);
      fx.backbone().backward(*tape, grad_emb, false);
      opt.step();
    }

    double val_loss = 0.0;
    std::size_t correct = 0, total = 0;
    for (std::size_t b = 0; b < val_inputs.size(); ++b) {
      const Tensor log_probs = nn::log_softmax(fx.class_logits(fx.embed(val_inputs[b])));
      const auto& targets = val_targets[b];
      val_loss += nn::nll_loss(log_probs, targets) * static_cast<double>(targets.size());
      const std::size_t c = log_probs.dim(1);
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const double* row = log_probs.data() + i * c;
        correct += static_cast<std::size_t>(std::max_element(row, row + c) - row) ==
                   static_cast<std::size_t>(targets[i]);
      }
      total += targets.size();
    }
    val_loss /= static_cast<double>(total);
    check_finite(val_loss, "phase1 validation", epoch, 0);

    EpochRecord rec{epoch, train_loss / static_cast<double>(steps), val_loss,
                    static_cast<double>(correct) / static_cast<double>(total), opt.lr, false};
    rec.improved = stop.update(val_loss, epoch);
    if (rec.improved) best = fx;
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    opt.lr = scheduler.step(val_loss, opt.lr);
    if (stop.should_stop()) {
      report.stop_reason = "early_stop";
      break;
    }
  }
  report.best_epoch = stop.best_epoch;
  report.best_val_loss = stop.best;
  report.final_lr = opt.lr;
  best.phase = "phase1";
  return {std::move(best), std::move(report)};
}

Phase2Result train_similarity(const FeatureExtractor& extractor, const Manifest& manifest,
                              const Phase2Config& cfg, Rng& rng, const EpochCallback& on_epoch) {
  validate(cfg);
  require(extractor.phase == "phase1" || extractor.phase == "phase2",
          "phase2 needs a Phase-1 trained extractor, checkpoint phase is '" + extractor.phase + "'");
  const std::size_t L = cfg.embedding_dim ? cfg.embedding_dim : extractor.embedding_dim();
  require(L == extractor.embedding_dim(),
          "embedding size mismatch: head expects L=" + std::to_string(L) + ", extractor gives " +
              std::to_string(extractor.embedding_dim()));
  const bool unfrozen = cfg.strategy == "unfrozen";
  const SplitView train(manifest, Split::Train);
  const SplitView val(manifest, Split::Val);
  require(train.generators().size() >= 2, "phase2 needs at least 2 train generators");
  require(val.generators().size() >= 2, "phase2 needs at least 2 validation generators");

  const std::uint64_t seed = rng();
  Rng init_rng(mix_seed(seed, 1));
  Rng pair_rng(mix_seed(seed, 2));
  Rng dropout_rng(mix_seed(seed, 3));
  Rng val_rng(mix_seed(seed, 4));

  SimilarityHeadConfig head_cfg;
  head_cfg.embedding_dim = L;
  head_cfg.projection_dim = cfg.projection_dim;
  head_cfg.dropout_rate = cfg.dropout_rate;
  SimilarityHead head(head_cfg, init_rng);
  FeatureExtractor fx = extractor;
  AudioLibrary library(manifest);

  const std::size_t n_val = cfg.val_pairs ? cfg.val_pairs : std::max<std::size_t>(100, val.size());
  std::vector<PairSample> val_pairs;
  for (std::size_t i = 0; i < n_val; ++i)
    val_pairs.push_back(sample_pair(val, library, cfg.segment_len, val_rng));

  const std::size_t pairs_per_epoch = cfg.pairs_per_epoch ? cfg.pairs_per_epoch : train.size();
  const std::size_t steps = (pairs_per_epoch + cfg.batch_size - 1) / cfg.batch_size;

  std::vector<ParamRef> params = head.parameters();
  if (unfrozen)
    for (auto& p : fx.parameters(false)) params.push_back(p);
  Adam opt(params, cfg.lr);
  PlateauScheduler scheduler(cfg.plateau_factor, cfg.plateau_patience);
  StopTracker stop{cfg.early_stop};
  SimilarityHead best_head = head;
  FeatureExtractor best_fx = fx;
  TrainReport report;
  report.phase = "phase2";
  report.stop_reason = "epoch_limit";

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double train_loss = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t n = std::min(cfg.batch_size, pairs_per_epoch - step * cfg.batch_size);
      std::vector<PairSample> batch;
      std::vector<int> targets;
      for (std::size_t k = 0; k < n; ++k) {
        batch.push_back(sample_pair(train, library, cfg.segment_len, pair_rng));
        targets.push_back(batch.back().label);
      }
      std::vector<const Segment*> segs;
      for (const auto& p : batch) segs.push_back(&p.segment_a);
      for (const auto& p : batch) segs.push_back(&p.segment_b);
      const Tensor x = fx.features(segs);
      std::unique_ptr<BackboneTape> tape;
      const Tensor emb = unfrozen ? fx.backbone().forward(x, nn::Mode::Train, tape) : fx.embed(x);

      SimilarityHead::Tape head_tape;
      const Tensor log_probs =
          head.forward_batch(rows(emb, 0, n), rows(emb, n, n), nn::Mode::Train, &dropout_rng, &head_tape);
      const double loss = nn::nll_loss(log_probs, targets);
      check_finite(loss, "phase2", epoch, step);
      train_loss += loss;

      opt.zero_grad();
      const auto [grad_a, grad_b] =
          head.backward(head_tape, nn::log_softmax_nll_backward(log_probs, targets));
      if (unfrozen) fx.backbone().backward(*tape, stack_rows(grad_a, grad_b), false);
      opt.step();
    }

    double val_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < val_pairs.size(); b += kEvalChunk) {
      const std::size_t n = std::min(kEvalChunk, val_pairs.size() - b);
      std::vector<const Segment*> segs;
      std::vector<int> targets;
      for (std::size_t k = b; k < b + n; ++k) {
        segs.push_back(&val_pairs[k].segment_a);
        targets.push_back(val_pairs[k].label);
      }
      for (std::size_t k = b; k < b + n; ++k) segs.push_back(&val_pairs[k].segment_b);
      const Tensor emb = fx.embed(fx.features(segs));
      const Tensor log_probs = head.infer_batch(rows(emb, 0, n), rows(emb, n, n));
      val_loss += nn::nll_loss(log_probs, targets) * static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const SimilarityScore s = score_from_log_probs(log_probs.data()[2 * i], log_probs.data()[2 * i + 1]);
        correct += decide(s, 0.5) == targets[i];
      }
    }
    val_loss /= static_cast<double>(val_pairs.size());
    check_finite(val_loss, "phase2 validation", epoch, 0);

    EpochRecord rec{epoch, train_loss / static_cast<double>(steps), val_loss,
                    static_cast<double>(correct) / static_cast<double>(val_pairs.size()), opt.lr,
                    false};
    rec.improved = stop.update(val_loss, epoch);
    if (rec.improved) {
      best_head = head;
      if (unfrozen) best_fx = fx;
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    opt.lr = scheduler.step(val_loss, opt.lr);
    if (stop.should_stop()) {
      report.stop_reason = "early_stop";
      break;
    }
  }
  report.best_epoch = stop.best_epoch;
  report.best_val_loss = stop.best;
  report.final_lr = opt.lr;
  if (unfrozen) {
    best_fx.phase = "phase2";
    best_fx.segment_len = cfg.segment_len;
  }
  return {SiameseModel{std::move(best_fx), std::move(best_head), cfg.segment_len, cfg.strategy},
          std::move(report)};
}

}  // namespace fsim
