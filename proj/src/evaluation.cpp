#include "fsim/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace fsim {

namespace {

struct Counts {
  std::size_t pos = 0, neg = 0;
};

Counts count_labels(std::span<const ScoredTrial> trials) {
  Counts c;
  for (const auto& t : trials) {
    require(t.label == 0 || t.label == 1, "trial labels must be 0 or 1");
    require(!std::isnan(t.score), "trial score is NaN");
    (t.label == 1 ? c.pos : c.neg)++;
  }
  require(c.pos > 0 && c.neg > 0, "metrics need both positive and negative trials");
  return c;
}

std::vector<ScoredTrial> sorted_by_score(std::span<const ScoredTrial> trials) {
  std::vector<ScoredTrial> v(trials.begin(), trials.end());
  std::stable_sort(v.begin(), v.end(),
                   [](const ScoredTrial& a, const ScoredTrial& b) { return a.score < b.score; });
  return v;
}

}  // namespace

double auc(std::span<const ScoredTrial> trials) {
  const Counts c = count_labels(trials);
  const auto v = sorted_by_score(trials);
  // twice the positive rank sum, with midranks for ties (ranks are 1-based)
  unsigned long long twice_rank_sum = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < v.size() && v[j].score == v[i].score) pos_in_group += v[j++].label;
    twice_rank_sum += static_cast<unsigned long long>(pos_in_group) * (i + 1 + j);
    i = j;
  }
  const double numerator = static_cast<double>(twice_rank_sum) -
                           static_cast<double>(c.pos) * static_cast<double>(c.pos + 1);
  return numerator / (2.0 * static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

EerResult eer(std::span<const ScoredTrial> trials) {
  const Counts c = count_labels(trials);
  const auto v = sorted_by_score(trials);

  // rates at each unique threshold, ascending
  std::vector<double> thresholds, fpr, fnr;
  std::size_t below_pos = 0, below_neg = 0;
  for (std::size_t i = 0; i < v.size();) {
    thresholds.push_back(v[i].score);
    fpr.push_back(static_cast<double>(c.neg - below_neg) / static_cast<double>(c.neg));
    fnr.push_back(static_cast<double>(below_pos) / static_cast<double>(c.pos));
    std::size_t j = i;
    while (j < v.size() && v[j].score == v[i].score) {
      (v[j].label == 1 ? below_pos : below_neg)++;
      ++j;
    }
    i = j;
  }
  const std::size_t k = thresholds.size();
  bool virtual_top = false;
  // FPR(t_1) = 1 and FNR(t_1) = 0, so index 0 always has FPR > FNR
  std::size_t i = 1;
  while (i < k && fpr[i] > fnr[i]) ++i;
  if (i == k) {
    thresholds.push_back(thresholds.back());
    fpr.push_back(0.0);
    fnr.push_back(1.0);
    virtual_top = true;
  }
  const double d_prev = fpr[i - 1] - fnr[i - 1];
  const double d_cur = fpr[i] - fnr[i];
  if (d_cur == 0.0) return {fpr[i], 0.5 * (thresholds[i - 1] + thresholds[i])};
  const double alpha = d_prev / (d_prev - d_cur);
  const double rate = fpr[i - 1] + alpha * (fpr[i] - fpr[i - 1]);
  const double tau = virtual_top ? thresholds[i - 1]
                                 : thresholds[i - 1] + alpha * (thresholds[i] - thresholds[i - 1]);
  return {rate, tau};
}

double calibrate_threshold(std::span<const ScoredTrial> val_trials) { return eer(val_trials).tau; }

std::vector<RocPoint> roc_curve(std::span<const ScoredTrial> trials) {
  const Counts c = count_labels(trials);
  auto v = sorted_by_score(trials);
  std::reverse(v.begin(), v.end());
  std::vector<RocPoint> out;
  out.push_back({v.front().score, 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j].score == v[i].score) (v[j++].label == 1 ? tp : fp)++;
    out.push_back({v[i].score, static_cast<double>(fp) / c.neg, static_cast<double>(tp) / c.pos});
    i = j;
  }
  return out;
}

double DetectionMatrix::mean_diagonal() const {
  double acc = 0.0;
  for (std::size_t g = 0; g < size(); ++g) acc += at(g, g);
  return size() ? acc / static_cast<double>(size()) : 0.0;
}

double DetectionMatrix::mean_off_diagonal() const {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < size(); ++r)
    for (std::size_t c = 0; c < size(); ++c)
      if (r != c) {
        acc += at(r, c);
        ++n;
      }
  return n ? acc / static_cast<double>(n) : 0.0;
}

DetectionMatrix DetectionMatrix::symmetrized() const {
  DetectionMatrix out = *this;
  for (std::size_t r = 0; r < size(); ++r)
    for (std::size_t c = 0; c < size(); ++c)
      out.values[r * size() + c] = 0.5 * (at(r, c) + at(c, r));
  return out;
}

DetectionMatrix detection_matrix(PairScorer& scorer, AudioLibrary& library, const SplitView& view,
                                 double tau, std::size_t pairs_per_cell, std::size_t segment_len,
                                 Rng& rng) {
  require(tau >= 0.0 && tau <= 1.0, "detection_matrix: tau must lie in [0, 1]");
  require(pairs_per_cell > 0, "detection_matrix: pairs_per_cell must be positive");
  DetectionMatrix m;
  m.generators = view.generators();
  const std::size_t g = m.generators.size();
  require(g >= 1, "detection_matrix: split has no generators");
  for (int label : m.generators) {
    require(view.by_generator().at(label).size() >= 2,
            "detection_matrix: generator " + std::to_string(label) + " has fewer than 2 utterances");
    m.names.push_back("gen" + std::to_string(label));
  }
  m.values.assign(g * g, 0.0);
  for (std::size_t r = 0; r < g; ++r) {
    const auto& rows = view.by_generator().at(m.generators[r]);
    for (std::size_t c = 0; c < g; ++c) {
      const auto& cols = view.by_generator().at(m.generators[c]);
      std::size_t correct = 0;
      for (std::size_t k = 0; k < pairs_per_cell; ++k) {
        const std::size_t i = uniform_index(rng, rows.size());
        std::size_t j = uniform_index(rng, r == c ? cols.size() - 1 : cols.size());
        if (r == c && j >= i) ++j;
        const PairSample pair =
            make_pair(library, rows[i], cols[j], segment_len, StartPolicy::Zero, rng);
        const int accept = scorer.score(pair.segment_a, pair.segment_b) >= tau ? 1 : 0;
        correct += (r == c) ? accept : 1 - accept;
      }
      m.values[r * g + c] = static_cast<double>(correct) / static_cast<double>(pairs_per_cell);
    }
  }
  return m;
}

std::string to_string(BaselineKind kind) {
  return kind == BaselineKind::Cosine ? "cosine" : "euclidean";
}

double baseline_score(std::span<const double> a, std::span<const double> b, BaselineKind kind) {
  require(a.size() == b.size() && !a.empty(), "baseline_score: embeddings must have equal, nonzero length");
  if (kind == BaselineKind::Cosine) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    require(na > 0.0 && nb > 0.0, "baseline_score: cosine undefined for a zero vector");
    const double cosine = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    return 0.5 * (1.0 + cosine);
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-std::sqrt(sq));
}

double BaselineScorer::score(const Segment& a, const Segment& b) {
  const std::vector<double> e_a = cache_.get(a);
  return baseline_score(e_a, cache_.get(b), kind_);
}

std::vector<ScoredTrial> score_pairs(PairScorer& scorer, const std::vector<PairSample>& pairs) {
  std::vector<ScoredTrial> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs)
    out.push_back({scorer.score(p.segment_a, p.segment_b), p.label, p.generator_a, p.generator_b});
  return out;
}

void write_trials_csv(const std::filesystem::path& path, std::span<const ScoredTrial> trials) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out.precision(17);
  out << "score,label,generator_a,generator_b\n";
  for (const auto& t : trials)
    out << t.score << ',' << t.label << ',' << t.generator_a << ',' << t.generator_b << '\n';
}

void write_matrix_csv(const std::filesystem::path& path, const DetectionMatrix& matrix) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << "generator";
  for (const auto& n : matrix.names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < matrix.size(); ++r) {
    out << matrix.names[r];
    for (std::size_t c = 0; c < matrix.size(); ++c) out << ',' << matrix.at(r, c);
    out << '\n';
  }
}

}  // namespace fsim
