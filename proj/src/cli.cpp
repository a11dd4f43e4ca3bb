#include "fsim/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsim/corpus.hpp"
#include "fsim/evaluation.hpp"
#include "fsim/plot.hpp"
#include "fsim/similarity.hpp"
#include "fsim/splicing.hpp"
#include "fsim/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fsim {

namespace {

constexpr const char* kVersion = "0.1.0";

struct Globals {
  std::string config;
  std::uint64_t seed = 1234;
  std::string out = "fsim_out";
};

struct SynthOptions {
  int gens = 8;
  int utts = 50;
  std::size_t splice_homogeneous = 0;
  std::size_t splice_spliced = 0;
  double splice_duration = 4.0;
};

struct TrainOptions {
  std::string manifest;
  std::string phase = "both";
  std::string extractor;
  double p1_segment = 4.0;
  double p2_segment = 4.0;
  Phase1Config p1;
  Phase2Config p2;
};

struct EvalOptions {
  std::string manifest;
  std::string model;
  std::string baseline_extractor;
  std::size_t pairs = 2000;
  std::size_t val_pairs = 500;
  std::size_t pairs_per_cell = 100;
  std::string matrix_split = "test";
};

struct ScanOptions {
  std::string model;
  std::string input;
  std::string labels;
  SpliceScanConfig scan;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  require(static_cast<bool>(f), "cannot write " + path.string());
  f << j.dump(2) << '\n';
}

std::size_t seconds_to_samples(double s) {
  require(s > 0.0, "durations must be positive");
  return static_cast<std::size_t>(std::llround(s * kSampleRate));
}

void write_run_metadata(const fs::path& out_dir, const std::string& command, const Globals& g,
                        const json& config) {
  const std::string dumped = config.dump();
  json meta{{"command", command},
            {"seed", g.seed},
            {"config", config},
            {"config_hash", hex64(fnv1a(dumped.data(), dumped.size()))},
            {"versions", {{"fsim", kVersion}, {"compiler", __VERSION__}, {"cxx", __cplusplus}}}};
  write_json(out_dir / ("run_" + command + ".json"), meta);
}

Manifest load_manifest_checked(const std::string& path) {
  require(!path.empty(), "--manifest is required");
  require(fs::exists(path), "manifest not found: " + path);
  return read_manifest(path);
}

SiameseModel load_model(const std::string& path) {
  require(fs::exists(path), "similarity checkpoint not found: " + path);
  return SiameseModel::from_checkpoint(load_checkpoint(path));
}

// ---------------------------------------------------------------- synth-corpus

int cmd_synth(const Globals& g, const SynthOptions& o, std::ostream& out) {
  const fs::path dir = fs::path(g.out) / "corpus";
  fs::create_directories(dir / "wav");
  Manifest manifest = build_toy_manifest(o.gens, o.utts, SplitRatios{}, g.seed);
  std::map<Split, std::size_t> counts;
  for (auto& r : manifest.records) {
    const std::string name = r.audio_ref.substr(4);  // "g{g}:u{u}"
    std::string file = "wav/" + name + ".wav";
    std::replace(file.begin(), file.end(), ':', '_');
    save_waveform(dir / file, synth_toy_waveform(r.toy->spec, r.toy->utterance_seed, r.duration_s));
    r.audio_ref = file;
    ++counts[r.split];
  }
  write_manifest(dir / "manifest.jsonl", manifest);
  const std::string text = manifest_to_jsonl(manifest);
  const std::string hash = hex64(fnv1a(text.data(), text.size()));

  std::size_t n_tracks = 0;
  if (o.splice_homogeneous + o.splice_spliced > 0) {
    fs::create_directories(dir / "tracks");
    const auto tracks = make_toy_splice_tracks(manifest, Split::Train, o.splice_homogeneous,
                                               o.splice_spliced, o.splice_duration, 1.0,
                                               o.splice_duration - 1.0, mix_seed(g.seed, 77));
    std::ofstream labels(dir / "tracks" / "labels.csv");
    labels << "file,label,switch_time\n";
    for (const auto& t : tracks) {
      save_waveform(dir / "tracks" / (t.name + ".wav"), t.wave);
      labels << t.name << ".wav," << (t.spliced ? 1 : 0) << ',' << t.switch_time << '\n';
    }
    n_tracks = tracks.size();
  }
  out << "wrote " << manifest.records.size() << " utterances from " << o.gens << " generators ("
      << counts[Split::Train] << " train, " << counts[Split::Val] << " val, " << counts[Split::Test]
      << " test)";
  if (n_tracks) out << " and " << n_tracks << " scan tracks";
  out << " to " << dir.string() << "\nmanifest hash " << hash << '\n';
  write_run_metadata(g.out, "synth-corpus", g,
                     {{"gens", o.gens}, {"utts", o.utts}, {"splice_homogeneous", o.splice_homogeneous},
                      {"splice_spliced", o.splice_spliced}, {"manifest_hash", hash}});
  return 0;
}

// ----------------------------------------------------------------------- train

json phase1_json(const Phase1Config& c) {
  return {{"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"lr", c.lr},                 {"plateau_patience", c.plateau_patience},
          {"early_stop", c.early_stop}, {"segment_len", c.segment_len},
          {"steps_per_epoch", c.steps_per_epoch}, {"backbone", c.backbone.to_json()}};
}

json phase2_json(const Phase2Config& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"strategy", c.strategy},
          {"pairs_per_epoch", c.pairs_per_epoch},
          {"val_pairs", c.val_pairs},
          {"plateau_patience", c.plateau_patience},
          {"early_stop", c.early_stop},
          {"segment_len", c.segment_len},
          {"projection_dim", c.projection_dim},
          {"dropout_rate", c.dropout_rate}};
}

int cmd_train(const Globals& g, TrainOptions o, std::ostream& out) {
  require(o.phase == "1" || o.phase == "2" || o.phase == "both",
          "--phase must be 1, 2 or both, got '" + o.phase + "'");
  o.p1.segment_len = seconds_to_samples(o.p1_segment);
  o.p2.segment_len = seconds_to_samples(o.p2_segment);
  validate(o.p1);
  validate(o.p2);
  const Manifest manifest = load_manifest_checked(o.manifest);
  fs::create_directories(g.out);
  const fs::path extractor_path = o.extractor.empty() ? fs::path(g.out) / "extractor.ckpt"
                                                      : fs::path(o.extractor);
  Rng rng(g.seed);
  auto log_epoch = [&out](const char* phase) {
    return [&out, phase](const EpochRecord& e) {
      out << phase << " epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss "
          << e.val_loss << " val_acc " << e.val_accuracy << " lr " << e.lr
          << (e.improved ? " *" : "") << std::endl;
    };
  };

  std::optional<FeatureExtractor> extractor;
  if (o.phase != "2") {
    Rng r1(mix_seed(g.seed, 1));
    auto result = train_extractor(manifest, o.p1, r1, log_epoch("phase1"));
    save_checkpoint(extractor_path, result.extractor.to_checkpoint());
    result.report.checkpoint_path = extractor_path.string();
    write_json(fs::path(g.out) / "phase1_report.json", result.report.to_json());
    out << "phase1 best epoch " << result.report.best_epoch << ", checkpoint "
        << extractor_path.string() << '\n';
    extractor = std::move(result.extractor);
  }
  if (o.phase != "1") {
    if (!extractor) {
      require(fs::exists(extractor_path),
              "phase 2 needs a Phase-1 extractor checkpoint; not found: " + extractor_path.string());
      extractor = FeatureExtractor::from_checkpoint(load_checkpoint(extractor_path));
    }
    Rng r2(mix_seed(g.seed, 2));
    auto result = train_similarity(*extractor, manifest, o.p2, r2, log_epoch("phase2"));
    const fs::path model_path = fs::path(g.out) / "similarity.ckpt";
    save_checkpoint(model_path, result.model.to_checkpoint(true));
    result.report.checkpoint_path = model_path.string();
    write_json(fs::path(g.out) / "phase2_report.json", result.report.to_json());
    out << "phase2 best epoch " << result.report.best_epoch << ", checkpoint "
        << model_path.string() << '\n';
  }
  write_run_metadata(g.out, "train", g,
                     {{"manifest", o.manifest}, {"phase", o.phase}, {"phase1", phase1_json(o.p1)},
                      {"phase2", phase2_json(o.p2)}});
  return 0;
}

// -------------------------------------------------------------------- evaluate

json metrics_json(const std::vector<ScoredTrial>& trials) {
  const EerResult e = eer(trials);
  return {{"eer", e.eer}, {"auc", auc(trials)}, {"tau_at_eer", e.tau}};
}

json matrix_json(const DetectionMatrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.size(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < m.size(); ++c) row.push_back(m.at(r, c));
    rows.push_back(row);
  }
  return {{"generators", m.names},
          {"values", rows},
          {"mean_diagonal", m.mean_diagonal()},
          {"mean_off_diagonal", m.mean_off_diagonal()}};
}

int cmd_evaluate(const Globals& g, const EvalOptions& o, std::ostream& out) {
  const Manifest manifest = load_manifest_checked(o.manifest);
  const std::string model_path =
      o.model.empty() ? (fs::path(g.out) / "similarity.ckpt").string() : o.model;
  const SiameseModel model = load_model(model_path);
  std::optional<FeatureExtractor> baseline_fx;
  fs::path baseline_path = o.baseline_extractor;
  if (baseline_path.empty() && fs::exists(fs::path(model_path).parent_path() / "extractor.ckpt"))
    baseline_path = fs::path(model_path).parent_path() / "extractor.ckpt";
  if (!baseline_path.empty()) {
    require(fs::exists(baseline_path), "baseline extractor not found: " + baseline_path.string());
    baseline_fx = FeatureExtractor::from_checkpoint(load_checkpoint(baseline_path));
  }
  const FeatureExtractor& base = baseline_fx ? *baseline_fx : model.extractor;
  fs::create_directories(g.out);

  AudioLibrary library(manifest);
  SiameseScorer scorer(model);
  Rng val_rng(mix_seed(g.seed, 11)), test_rng(mix_seed(g.seed, 12)), matrix_rng(mix_seed(g.seed, 13));

  const SplitView val(manifest, Split::Val);
  std::vector<PairSample> val_pairs;
  for (std::size_t i = 0; i < o.val_pairs; ++i)
    val_pairs.push_back(sample_pair(val, library, model.segment_len, val_rng, StartPolicy::Zero));
  const double tau = calibrate_threshold(score_pairs(scorer, val_pairs));

  const SplitView test(manifest, Split::Test);
  std::vector<PairSample> test_pairs;
  for (std::size_t i = 0; i < o.pairs; ++i)
    test_pairs.push_back(sample_pair(test, library, model.segment_len, test_rng, StartPolicy::Zero));
  const auto trials = score_pairs(scorer, test_pairs);

  json result = metrics_json(trials);
  result["tau"] = tau;
  result["n_pairs"] = trials.size();
  std::vector<std::pair<std::string, std::vector<RocPoint>>> curves{{"similarity head", roc_curve(trials)}};
  json baselines = json::object();
  for (BaselineKind kind : {BaselineKind::Cosine, BaselineKind::Euclidean}) {
    BaselineScorer b(base, kind);
    const auto bt = score_pairs(b, test_pairs);
    baselines[to_string(kind)] = metrics_json(bt);
    curves.emplace_back(to_string(kind), roc_curve(bt));
  }
  result["baselines"] = baselines;

  const DetectionMatrix matrix = detection_matrix(scorer, library, SplitView(manifest, parse_split(o.matrix_split)),
                                                  tau, o.pairs_per_cell, model.segment_len, matrix_rng);
  result["matrix"] = matrix_json(matrix);
  result["matrix"]["split"] = o.matrix_split;
  result["matrix_symmetrized"] = matrix_json(matrix.symmetrized());

  write_json(fs::path(g.out) / "metrics.json", result);
  write_trials_csv(fs::path(g.out) / "trials.csv", trials);
  write_matrix_csv(fs::path(g.out) / "matrix.csv", matrix);
  write_matrix_csv(fs::path(g.out) / "matrix_symmetrized.csv", matrix.symmetrized());
  write_heatmap_svg(fs::path(g.out) / "matrix.svg", "Detection rates (" + o.matrix_split + ")", matrix);
  write_roc_svg(fs::path(g.out) / "roc.svg", "Open-set source verification", curves);

  out << "eer " << result["eer"].get<double>() << " auc " << result["auc"].get<double>() << " tau "
      << tau << '\n';
  for (const auto& [name, m] : baselines.items())
    out << name << " eer " << m["eer"].get<double>() << " auc " << m["auc"].get<double>() << '\n';
  write_run_metadata(g.out, "evaluate", g,
                     {{"manifest", o.manifest}, {"model", model_path}, {"pairs", o.pairs},
                      {"val_pairs", o.val_pairs}, {"pairs_per_cell", o.pairs_per_cell},
                      {"matrix_split", o.matrix_split}, {"baseline_extractor", baseline_path.string()}});
  return 0;
}

// ------------------------------------------------------------------------ scan

struct TrackLabel {
  int label = 0;
  double switch_time = -1.0;
};

std::map<std::string, TrackLabel> read_labels(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read labels file " + path.string());
  std::map<std::string, TrackLabel> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string file, label, time;
    std::getline(ss, file, ',');
    std::getline(ss, label, ',');
    std::getline(ss, time, ',');
    require(label == "0" || label == "1", "labels file: label must be 0 or 1 in line '" + line + "'");
    TrackLabel t;
    t.label = label == "1";
    if (!time.empty()) t.switch_time = std::stod(time);
    out[fs::path(file).filename().string()] = t;
  }
  return out;
}

int cmd_scan(const Globals& g, const ScanOptions& o, std::ostream& out) {
  validate(o.scan);
  require(!o.model.empty(), "--model is required");
  const SiameseModel model = load_model(o.model);
  require(fs::exists(o.input), "scan input not found: " + o.input);
  std::vector<fs::path> files;
  if (fs::is_directory(o.input)) {
    for (const auto& e : fs::directory_iterator(o.input))
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    require(!files.empty(), "no .wav files in " + o.input);
  } else {
    files.push_back(o.input);
  }
  std::map<std::string, TrackLabel> labels;
  if (!o.labels.empty()) labels = read_labels(o.labels);

  const fs::path dir = fs::path(g.out) / "scan";
  fs::create_directories(dir);
  std::ofstream summary(dir / "summary.csv");
  summary << "file,global_score,decision,n_minima,first_minimum_time\n";
  std::vector<ScoredTrial> trials;
  for (const auto& file : files) {
    const Waveform wave = load_waveform(file);
    const ScoreSequence seq = score_track(model, wave, o.scan);
    const SpliceReport report = splice_report(seq, o.scan);
    const std::string stem = file.stem().string();
    {
      std::ofstream csv(dir / (stem + "_scores.csv"));
      csv << "boundary_time,raw,smoothed\n";
      for (std::size_t i = 0; i < seq.raw.size(); ++i)
        csv << seq.pair_boundary_times[i] << ',' << seq.raw[i] << ',' << seq.smoothed[i] << '\n';
    }
    json rj = report.to_json();
    rj["file"] = file.filename().string();
    write_json(dir / (stem + "_report.json"), rj);
    std::vector<double> marks;
    for (const auto& m : report.minima) marks.push_back(m.time);
    write_line_plot_svg(dir / (stem + "_scores.svg"), "Similarity along " + file.filename().string(),
                        "time (s)", "score",
                        {{"raw", seq.pair_boundary_times, seq.raw},
                         {"smoothed", seq.pair_boundary_times, seq.smoothed}},
                        marks);
    summary << file.filename().string() << ',' << report.global_score << ',' << report.decision()
            << ',' << report.minima.size() << ','
            << (report.minima.empty() ? std::string() : std::to_string(report.minima.front().time))
            << '\n';
    out << file.filename().string() << ": " << report.decision() << " (score " << report.global_score
        << ")\n";
    if (const auto it = labels.find(file.filename().string()); it != labels.end())
      trials.push_back({report.global_score, it->second.label, -1, -1});
  }
  if (!trials.empty()) {
    std::size_t pos = 0;
    for (const auto& t : trials) pos += t.label;
    json agg{{"n_tracks", trials.size()}, {"n_spliced", pos}};
    if (pos > 0 && pos < trials.size()) {
      agg["auc"] = auc(trials);
      agg["eer"] = eer(trials).eer;
      write_roc_svg(dir / "roc.svg", "Splicing detection", {{"global score", roc_curve(trials)}});
      out << "track-level auc " << agg["auc"].get<double>() << '\n';
    }
    write_json(dir / "aggregate.json", agg);
  }
  write_run_metadata(g.out, "scan", g,
                     {{"model", o.model}, {"input", o.input}, {"labels", o.labels},
                      {"window_len", o.scan.window_len}, {"stride", o.scan.stride},
                      {"gaussian_sigma", o.scan.gaussian_sigma}, {"min_depth", o.scan.min_depth},
                      {"min_width", o.scan.min_width}, {"threshold", o.scan.operating_threshold}});
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generator source verification and splicing detection on audio"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file with option values");
  Globals g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  SynthOptions so;
  auto* synth = app.add_subcommand("synth-corpus", "Write a toy corpus (WAV files + manifest)");
  synth->add_option("--gens", so.gens, "Number of generators (>= 4)")->capture_default_str();
  synth->add_option("--utts", so.utts, "Utterances per generator")->capture_default_str();
  synth->add_option("--splice-homogeneous", so.splice_homogeneous, "Homogeneous scan tracks");
  synth->add_option("--splice-spliced", so.splice_spliced, "Single-splice scan tracks");
  synth->add_option("--splice-duration", so.splice_duration, "Scan track length (s)");

  TrainOptions to;
  auto* train = app.add_subcommand("train", "Train the extractor and/or the similarity head");
  train->add_option("--manifest", to.manifest, "Manifest (JSONL)");
  train->add_option("--phase", to.phase, "1, 2 or both")->capture_default_str();
  train->add_option("--strategy", to.p2.strategy, "frozen or unfrozen")->capture_default_str();
  train->add_option("--extractor", to.extractor, "Extractor checkpoint (default <out>/extractor.ckpt)");
  train->add_option("--p1-epochs", to.p1.epochs)->capture_default_str();
  train->add_option("--p1-batch", to.p1.batch_size)->capture_default_str();
  train->add_option("--p1-lr", to.p1.lr)->capture_default_str();
  train->add_option("--p1-patience", to.p1.plateau_patience)->capture_default_str();
  train->add_option("--p1-early-stop", to.p1.early_stop)->capture_default_str();
  train->add_option("--p1-steps", to.p1.steps_per_epoch, "Steps per epoch (0 = auto)");
  train->add_option("--p1-segment", to.p1_segment, "Segment length (s)")->capture_default_str();
  train->add_option("--p2-epochs", to.p2.epochs)->capture_default_str();
  train->add_option("--p2-batch", to.p2.batch_size, "Pairs per batch")->capture_default_str();
  train->add_option("--p2-lr", to.p2.lr)->capture_default_str();
  train->add_option("--p2-patience", to.p2.plateau_patience)->capture_default_str();
  train->add_option("--p2-early-stop", to.p2.early_stop)->capture_default_str();
  train->add_option("--p2-pairs", to.p2.pairs_per_epoch, "Pairs per epoch (0 = train utterances)");
  train->add_option("--p2-val-pairs", to.p2.val_pairs, "Validation pairs (0 = auto)");
  train->add_option("--p2-segment", to.p2_segment, "Segment length (s)")->capture_default_str();

  EvalOptions eo;
  auto* evaluate = app.add_subcommand("evaluate", "Open-set metrics, baselines and detection matrix");
  evaluate->add_option("--manifest", eo.manifest, "Manifest (JSONL)");
  evaluate->add_option("--model", eo.model, "Similarity checkpoint (default <out>/similarity.ckpt)");
  evaluate->add_option("--baseline-extractor", eo.baseline_extractor,
                       "Extractor for the cosine/Euclidean baselines");
  evaluate->add_option("--pairs", eo.pairs, "Test pairs")->capture_default_str();
  evaluate->add_option("--val-pairs", eo.val_pairs, "Calibration pairs")->capture_default_str();
  evaluate->add_option("--pairs-per-cell", eo.pairs_per_cell)->capture_default_str();
  evaluate->add_option("--matrix-split", eo.matrix_split, "train, val or test")->capture_default_str();

  ScanOptions sc;
  auto* scan = app.add_subcommand("scan", "Splicing scan of a WAV file or directory");
  scan->add_option("input", sc.input, "WAV file or directory")->required();
  scan->add_option("--model", sc.model, "Similarity checkpoint trained on scan windows")->required();
  scan->add_option("--labels", sc.labels, "CSV file,label[,switch_time] for an aggregate ROC");
  scan->add_option("--threshold", sc.scan.operating_threshold)->capture_default_str();
  scan->add_option("--window", sc.scan.window_len, "Window length (s)")->capture_default_str();
  scan->add_option("--stride", sc.scan.stride, "Stride (s)")->capture_default_str();
  scan->add_option("--sigma", sc.scan.gaussian_sigma)->capture_default_str();
  scan->add_option("--min-depth", sc.scan.min_depth)->capture_default_str();
  scan->add_option("--min-width", sc.scan.min_width)->capture_default_str();

  std::vector<char*> argv;
  std::vector<std::string> storage(args);
  for (auto& a : storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  std::string command = "fsim";
  try {
    if (synth->parsed()) {
      command = "synth-corpus";
      return cmd_synth(g, so, out);
    }
    if (train->parsed()) {
      command = "train";
      return cmd_train(g, to, out);
    }
    if (evaluate->parsed()) {
      command = "evaluate";
      return cmd_evaluate(g, eo, out);
    }
    if (scan->parsed()) {
      command = "scan";
      return cmd_scan(g, sc, out);
    }
  } catch (const std::exception& e) {
    err << json{{"error", {{"command", command}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
  return 2;
}

int run_cli(int argc, char** argv) {
  return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace fsim
