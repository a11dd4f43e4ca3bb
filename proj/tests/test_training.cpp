#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "fsim/training.hpp"

using namespace fsim;
using namespace fsim::testing;

namespace {

Manifest flat_manifest(const std::vector<int>& counts) {
  Manifest m;
  for (std::size_t g = 0; g < counts.size(); ++g)
    for (int u = 0; u < counts[g]; ++u) {
      ManifestRecord r;
      r.audio_ref = "g" + std::to_string(g) + "_u" + std::to_string(u) + ".wav";
      r.generator_label = static_cast<int>(g);
      r.split = Split::Train;
      r.duration_s = 1.0;
      m.records.push_back(r);
    }
  return m;
}

Phase1Config tiny_phase1() {
  Phase1Config cfg;
  cfg.epochs = 2;
  cfg.batch_size = 6;
  cfg.steps_per_epoch = 2;
  cfg.plateau_patience = 1;
  cfg.early_stop = 2;
  cfg.segment_len = 4000;
  cfg.backbone = small_lcnn();
  cfg.mel = small_mel();
  return cfg;
}

Phase2Config tiny_phase2(const std::string& strategy) {
  Phase2Config cfg;
  cfg.epochs = 2;
  cfg.batch_size = 6;
  cfg.pairs_per_epoch = 12;
  cfg.val_pairs = 12;
  cfg.plateau_patience = 1;
  cfg.early_stop = 2;
  cfg.segment_len = 4000;
  cfg.projection_dim = 4;
  cfg.strategy = strategy;
  return cfg;
}

const Manifest& tiny_corpus() {
  static const Manifest m = build_toy_manifest(4, 6, SplitRatios{}, 99);
  return m;
}

const FeatureExtractor& tiny_phase1_extractor() {
  static const FeatureExtractor fx = [] {
    Rng rng(3);
    return train_extractor(tiny_corpus(), tiny_phase1(), rng).extractor;
  }();
  return fx;
}

void check_report_invariants(const TrainReport& report, const Phase1Config& c1, int epoch_limit,
                             int early_stop, double factor) {
  (void)c1;
  REQUIRE(!report.epochs.empty());
  CHECK(static_cast<int>(report.epochs.size()) <= epoch_limit);
  double best = INFINITY;
  int best_epoch = -1, since = 0;
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    const auto& e = report.epochs[i];
    CHECK(e.epoch == static_cast<int>(i) + 1);
    CHECK(e.improved == (e.val_loss < best));
    if (e.val_loss < best) {
      best = e.val_loss;
      best_epoch = e.epoch;
      since = 0;
    } else {
      ++since;
    }
    // training continues only while the patience budget is not exhausted
    if (i + 1 < report.epochs.size()) CHECK(since < early_stop);
    if (i > 0) {
      const double prev = report.epochs[i - 1].lr;
      CHECK(e.lr <= prev);
      if (e.lr != prev) CHECK(e.lr == doctest::Approx(prev * factor).epsilon(1e-12));
    }
  }
  CHECK(report.best_epoch == best_epoch);
  CHECK(report.best_val_loss == best);
  for (const auto& e : report.epochs)
    if (e.epoch > report.best_epoch) CHECK(report.best_val_loss <= e.val_loss);
  if (static_cast<int>(report.epochs.size()) < epoch_limit) CHECK(report.stop_reason == "early_stop");
  else CHECK((report.stop_reason == "epoch_limit" || report.stop_reason == "early_stop"));
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("Adam matches a hand-rolled update") {
  Tensor w({3}), g({3});
  w[0] = 1.0; w[1] = -2.0; w[2] = 0.5;
  std::vector<ParamRef> params{{"w", &w, &g}};
  Adam opt(params, 0.01);
  double ref[3] = {1.0, -2.0, 0.5}, m[3] = {}, v[3] = {};
  for (int t = 1; t <= 5; ++t) {
    for (int i = 0; i < 3; ++i) g[i] = 2.0 * w[i] + 0.1 * t;
    double gr[3];
    for (int i = 0; i < 3; ++i) gr[i] = 2.0 * ref[i] + 0.1 * t;
    opt.step();
    for (int i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * gr[i];
      v[i] = 0.999 * v[i] + 0.001 * gr[i] * gr[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < 3; ++i) CHECK(w[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  // the first Adam step moves every weight by lr against the gradient sign
  Tensor x({1}), gx({1});
  x[0] = 3.0;
  gx[0] = -7.0;
  Adam one({{"x", &x, &gx}}, 0.5);
  one.step();
  CHECK(x[0] == doctest::Approx(3.5));
  one.zero_grad();
  CHECK(gx[0] == 0.0);
}

TEST_CASE("plateau scheduler reduces by the factor after patience bad epochs") {
  PlateauScheduler s(0.1, 2);
  double lr = 1.0;
  lr = s.step(5.0, lr);
  CHECK(lr == 1.0);
  lr = s.step(5.0, lr);  // bad 1
  CHECK(lr == 1.0);
  lr = s.step(6.0, lr);  // bad 2 -> reduce
  CHECK(lr == doctest::Approx(0.1));
  lr = s.step(4.0, lr);  // improvement
  CHECK(lr == doctest::Approx(0.1));
  lr = s.step(4.0, lr);
  lr = s.step(4.0, lr);
  CHECK(lr == doctest::Approx(0.01));
  CHECK_THROWS_AS(PlateauScheduler(1.0, 2), Error);
  CHECK_THROWS_AS(PlateauScheduler(0.1, 0), Error);
}

TEST_CASE("plateau lr is non-increasing with exact factor steps") {
  Rng rng(11);
  PlateauScheduler s(0.5, 3);
  double lr = 1e-3;
  for (int e = 0; e < 200; ++e) {
    const double next = s.step(uniform(rng, 0.0, 1.0), lr);
    CHECK(next <= lr);
    if (next != lr) CHECK(next == lr * 0.5);
    lr = next;
  }
}

TEST_CASE("config validation") {
  Phase1Config p1;
  CHECK_NOTHROW(validate(p1));
  p1.early_stop = 5;
  CHECK_THROWS_AS(validate(p1), Error);
  p1 = Phase1Config{};
  p1.batch_size = 0;
  CHECK_THROWS_AS(validate(p1), Error);
  Phase2Config p2;
  CHECK_NOTHROW(validate(p2));
  p2.strategy = "thawed";
  CHECK_THROWS_AS(validate(p2), Error);
}

TEST_CASE("stratified split: 10 per generator gives 7/3") {
  Rng rng(1);
  const Manifest m = flat_manifest({10, 10, 10});
  const auto [a, b] = split_stratified(m, 0.7, rng);
  CHECK(a.size() == 21);
  CHECK(b.size() == 9);
  for (int g = 0; g < 3; ++g) {
    const auto count = [&](const std::vector<std::size_t>& v) {
      return std::count_if(v.begin(), v.end(), [&](std::size_t i) { return m.records[i].generator_label == g; });
    };
    CHECK(count(a) == 7);
    CHECK(count(b) == 3);
  }
}

TEST_CASE("stratified split: 9 per generator lands within one of 6.3") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Manifest m = flat_manifest({9, 9});
    const auto [a, b] = split_stratified(m, 0.7, rng);
    for (int g = 0; g < 2; ++g) {
      const auto n = std::count_if(a.begin(), a.end(), [&](std::size_t i) { return m.records[i].generator_label == g; });
      CHECK(std::abs(static_cast<double>(n) - 6.3) <= 1.0);
      CHECK((n == 6 || n == 7));
    }
  }
}

TEST_CASE("stratified split is a partition of the non-test records") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> counts;
    const int gens = 2 + static_cast<int>(uniform_index(rng, 5));
    for (int g = 0; g < gens; ++g) counts.push_back(2 + static_cast<int>(uniform_index(rng, 15)));
    Manifest m = flat_manifest(counts);
    ManifestRecord held_out = m.records.front();
    held_out.split = Split::Test;
    held_out.generator_label = 100;
    m.records.push_back(held_out);
    const std::size_t test_index = m.records.size() - 1;
    const auto [a, b] = split_stratified(m, 0.7, rng);
    std::set<std::size_t> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    CHECK(sa.size() == a.size());
    for (auto i : sa) CHECK(sb.count(i) == 0);
    CHECK(sa.size() + sb.size() == m.records.size() - 1);
    CHECK(sa.count(test_index) == 0);
    CHECK(sb.count(test_index) == 0);
    std::set<std::string> refs;
    for (auto i : sa) refs.insert(m.records[i].audio_ref);
    for (auto i : sb) CHECK(refs.count(m.records[i].audio_ref) == 0);
  }
}

TEST_CASE("stratified split rejects a generator with one utterance") {
  Rng rng(1);
  CHECK_THROWS_AS(split_stratified(flat_manifest({5, 1}), 0.7, rng), Error);
  const Manifest m = resplit(flat_manifest({10, 10}), 0.7, rng);
  CHECK(SplitView(m, Split::Train).size() == 14);
  CHECK(SplitView(m, Split::Val).size() == 6);
}

TEST_CASE("phase 1 rejects a single train generator") {
  Manifest m = build_toy_manifest(4, 6, SplitRatios{}, 5);
  for (auto& r : m.records)
    if (r.generator_label != 0 && r.split == Split::Train) r.split = Split::Test;
  for (auto& r : m.records)
    if (r.generator_label != 0 && r.split == Split::Val) r.split = Split::Test;
  Rng rng(1);
  CHECK_THROWS_WITH_AS(train_extractor(m, tiny_phase1(), rng), doctest::Contains("at least 2 train generators"),
                       Error);
}

TEST_CASE("phase 1 is deterministic for a fixed seed") {
  Rng r1(42), r2(42);
  const auto a = train_extractor(tiny_corpus(), tiny_phase1(), r1);
  const auto b = train_extractor(tiny_corpus(), tiny_phase1(), r2);
  REQUIRE(a.report.epochs.size() == b.report.epochs.size());
  for (std::size_t i = 0; i < a.report.epochs.size(); ++i) {
    CHECK(a.report.epochs[i].train_loss == b.report.epochs[i].train_loss);
    CHECK(a.report.epochs[i].val_loss == b.report.epochs[i].val_loss);
  }
  CHECK(a.extractor.content_hash() == b.extractor.content_hash());
  CHECK(a.extractor.phase == "phase1");
  CHECK(a.extractor.class_labels == std::vector<int>{0, 1, 2});
  CHECK(a.report.phase == "phase1");
  CHECK(std::isfinite(a.report.epochs.front().train_loss));
}

TEST_CASE("phase 1 report invariants under early stopping") {
  Phase1Config cfg = tiny_phase1();
  cfg.epochs = 6;
  cfg.lr = 3e-2;
  cfg.plateau_patience = 1;
  cfg.early_stop = 1;
  Rng rng(8);
  const auto res = train_extractor(tiny_corpus(), cfg, rng);
  check_report_invariants(res.report, cfg, cfg.epochs, cfg.early_stop, cfg.plateau_factor);
  const auto j = res.report.to_json();
  CHECK(j.at("epochs").size() == res.report.epochs.size());
  CHECK(j.contains("stop_reason"));
}

TEST_CASE("phase 2 needs a phase-1 extractor and matching L") {
  Rng rng(1);
  FeatureExtractor raw = small_extractor(3, rng);
  CHECK_THROWS_AS(train_similarity(raw, tiny_corpus(), tiny_phase2("frozen"), rng), Error);
  Phase2Config cfg = tiny_phase2("frozen");
  cfg.embedding_dim = 16;
  CHECK_THROWS_WITH_AS(train_similarity(tiny_phase1_extractor(), tiny_corpus(), cfg, rng),
                       doctest::Contains("embedding size mismatch"), Error);
}

TEST_CASE("frozen strategy leaves the extractor bit-identical") {
  const FeatureExtractor& fx = tiny_phase1_extractor();
  const auto before = fx.content_hash();
  Rng rng(4);
  const auto res = train_similarity(fx, tiny_corpus(), tiny_phase2("frozen"), rng);
  CHECK(fx.content_hash() == before);
  CHECK(res.model.extractor.content_hash() == before);
  CHECK(res.model.strategy == "frozen");
  CHECK(res.model.segment_len == 4000);
  CHECK(res.model.head.has_running_stats());
  CHECK(res.report.phase == "phase2");
}

TEST_CASE("unfrozen strategy updates the extractor and is deterministic") {
  const FeatureExtractor& fx = tiny_phase1_extractor();
  Phase2Config cfg = tiny_phase2("unfrozen");
  cfg.lr = 1e-3;
  Rng r1(6), r2(6);
  const auto a = train_similarity(fx, tiny_corpus(), cfg, r1);
  const auto b = train_similarity(fx, tiny_corpus(), cfg, r2);
  CHECK(a.model.extractor.content_hash() != fx.content_hash());
  CHECK(a.model.extractor.content_hash() == b.model.extractor.content_hash());
  CHECK(a.model.extractor.phase == "phase2");
  REQUIRE(a.report.epochs.size() == b.report.epochs.size());
  for (std::size_t i = 0; i < a.report.epochs.size(); ++i)
    CHECK(a.report.epochs[i].val_loss == b.report.epochs[i].val_loss);
  for (const auto& e : a.report.epochs) {
    CHECK(e.val_accuracy >= 0.0);
    CHECK(e.val_accuracy <= 1.0);
  }
}

TEST_CASE("sanity descent on duplicated identical pairs") {
  Rng rng(9);
  SimilarityHeadConfig cfg;
  cfg.embedding_dim = 8;
  cfg.projection_dim = 4;
  cfg.dropout_rate = 0.0;
  SimilarityHead head(cfg, rng);
  Tensor e({1, 8});
  nn::init_uniform(e, 1.0, rng);
  Tensor ea({16, 8});
  for (std::size_t r = 0; r < 16; ++r) std::copy_n(e.data(), 8, ea.data() + r * 8);
  const std::vector<int> targets(16, 1);
  Adam opt(head.parameters(), 1e-4);
  double prev = INFINITY;
  for (int step = 0; step < 5; ++step) {
    SimilarityHead::Tape tape;
    const Tensor lp = head.forward_batch(ea, ea, nn::Mode::Train, &rng, &tape);
    const double loss = nn::nll_loss(lp, targets);
    CHECK(loss < prev);
    prev = loss;
    opt.zero_grad();
    head.backward(tape, nn::log_softmax_nll_backward(lp, targets));
    opt.step();
  }
}

}
