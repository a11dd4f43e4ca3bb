#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fsim/corpus.hpp"
#include "fsim/extractor.hpp"
#include "fsim/similarity.hpp"

namespace fsim {

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8). Entries without a gradient
/// (running statistics) are skipped.
class Adam {
 public:
  Adam(std::vector<ParamRef> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();
  void zero_grad();
  double lr;

 private:
  std::vector<ParamRef> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Reduce-on-plateau: after `patience` consecutive epochs without a strict
/// improvement of the monitored loss, lr is multiplied by `factor` and the
/// counter restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience);
  /// Returns the (possibly reduced) learning rate.
  double step(double loss, double lr);
  int bad_epochs() const { return bad_; }

 private:
  double factor_;
  int patience_;
  double best_;
  int bad_ = 0;
};

struct Phase1Config {
  int epochs = 200;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  int plateau_patience = 10;
  double plateau_factor = 0.1;
  int early_stop = 20;
  std::size_t segment_len = 4 * kSampleRate;
  /// Optimizer steps per epoch; 0 = ceil(train utterances / batch_size).
  std::size_t steps_per_epoch = 0;
  LcnnConfig backbone;
  MelSpecConfig mel;
};
void validate(const Phase1Config& cfg);

struct Phase2Config {
  int epochs = 100;
  std::size_t batch_size = 256;  // pairs
  double lr = 1e-4;
  std::string strategy = "frozen";
  /// 0 = number of train utterances.
  std::size_t pairs_per_epoch = 0;
  /// Size of the fixed validation pair set; 0 = max(100, val utterances).
  std::size_t val_pairs = 0;
  int plateau_patience = 10;
  double plateau_factor = 0.1;
  int early_stop = 20;
  std::size_t segment_len = 4 * kSampleRate;
  /// Head input size; 0 = take the extractor's embedding size.
  std::size_t embedding_dim = 0;
  std::size_t projection_dim = 64;
  double dropout_rate = 0.5;
};
void validate(const Phase2Config& cfg);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
  bool improved = false;
};

struct TrainReport {
  std::string phase;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::string stop_reason;  // "early_stop" or "epoch_limit"
  double final_lr = 0.0;
  std::string checkpoint_path;

  nlohmann::json to_json() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Stratified split of the non-test records of `manifest`: per generator,
/// round(ratio * count) utterances go to the first set (clamped so both sides
/// are non-empty). Returns record indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_stratified(
    const Manifest& manifest, double ratio, Rng& rng);

/// Copy of `manifest` whose non-test records are re-split train/val by
/// split_stratified.
Manifest resplit(const Manifest& manifest, double ratio, Rng& rng);

struct Phase1Result {
  FeatureExtractor extractor;
  TrainReport report;
};

/// Closed-set source tracing with cross-entropy on class-balanced batches
/// drawn from the train split; validation on every val utterance (offset 0).
/// Returns the best-validation extractor, tagged "phase1".
Phase1Result train_extractor(const Manifest& manifest, const Phase1Config& cfg, Rng& rng,
                             const EpochCallback& on_epoch = {});

struct Phase2Result {
  SiameseModel model;
  TrainReport report;
};

/// Siamese similarity learning with NLL on same/different pairs. Frozen
/// leaves the extractor untouched; unfrozen updates it jointly every step and
/// keeps the extractor state from the best validation epoch.
Phase2Result train_similarity(const FeatureExtractor& extractor, const Manifest& manifest,
                              const Phase2Config& cfg, Rng& rng,
                              const EpochCallback& on_epoch = {});

}  // namespace fsim
