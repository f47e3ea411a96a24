#include "commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "wce/dataset.hpp"
#include "wce/error.hpp"
#include "wce/eval.hpp"
#include "wce/io.hpp"
#include "wce/trainer.hpp"
#include "wce/weights.hpp"

namespace wce::cli {

namespace fs = std::filesystem;

namespace {

Json metadata(const std::string& command, Json config, Json inputs) {
  return {{"tool", "wce"},
          {"version", kToolVersion},
          {"command", command},
          {"config", std::move(config)},
          {"inputs", std::move(inputs)}};
}

std::string file_digest(const fs::path& p) { return sha256_hex(read_file(p)); }

std::string dataset_digest(const fs::path& dir, const std::string& split) {
  return sha256_hex(file_digest(dir / "dataset.json") + file_digest(dir / (split + "_scenes.json")) +
                    file_digest(dir / (split + "_proposals.csv")));
}

const SyntheticDataset& dataset_split(const DatasetBundle& bundle, const std::string& split) {
  auto it = bundle.splits.find(split);
  if (it == bundle.splits.end()) {
    throw Error(ErrorKind::InvalidConfig, "dataset has no split named '" + split + "'");
  }
  return it->second;
}

std::pair<std::string, double> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::InvalidConfig, "expected NAME=VALUE, got '" + text + "'");
  }
  try {
    return {text.substr(0, eq), parse_double(text.substr(eq + 1))};
  } catch (const Error&) {
    throw Error(ErrorKind::InvalidConfig, "bad number in '" + text + "'");
  }
}

// --- stats -----------------------------------------------------------------

struct StatsArgs {
  std::string labels, format = "bdd100k", dataset, split = "train", out, plot_csv;
  std::size_t holdout = 0;
  std::uint64_t split_seed = 0;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
  Json doc;
  Json config = {{"split", a.split}, {"holdout", a.holdout}, {"split_seed", a.split_seed}};
  Json inputs = Json::object();
  if (!a.dataset.empty() == !a.labels.empty()) {
    throw Error(ErrorKind::InvalidConfig, "give exactly one of --labels or --dataset");
  }
  if (!a.labels.empty()) {
    const LabelSet set = parse_labels(a.labels, parse_label_format(a.format));
    std::vector<Scene> scenes = set.scenes;
    std::string split = "all";
    if (a.holdout > 0) {
      scenes = split_scenes(set.scenes, a.holdout, a.split_seed).train;
      split = "train";
      if (scenes.empty()) throw Error(ErrorKind::EmptyDataset, "holdout leaves no training scenes");
    }
    doc = to_json(compute_stats(scenes, set.classes, split));
    Json skipped = {{"missing_box", set.skipped.missing_box},
                    {"degenerate_box", set.skipped.degenerate_box},
                    {"by_category", set.skipped.by_category},
                    {"total", set.skipped.total()}};
    doc["skip_report"] = skipped;
    config["format"] = a.format;
    inputs["labels"] = file_digest(a.labels);
  } else {
    const DatasetBundle bundle = read_dataset(a.dataset);
    const auto& ds = dataset_split(bundle, a.split);
    doc = to_json(compute_stats(ds.scenes, ds.classes, a.split));
    doc["skip_report"] = {{"missing_box", 0}, {"degenerate_box", 0}, {"by_category", Json::object()}, {"total", 0}};
    inputs["dataset"] = dataset_digest(a.dataset, a.split);
  }
  doc["metadata"] = metadata("stats", config, inputs);
  write_json(a.out, doc);

  if (!a.plot_csv.empty()) {
    std::string csv = "class,count,frequency,log10_count\n";
    for (const auto& c : doc.at("classes")) {
      const auto n = c.at("count").get<std::uint64_t>();
      csv += c.at("name").get<std::string>() + "," + std::to_string(n) + "," +
             format_double(c.at("frequency").get<double>()) + "," +
             (n > 0 ? format_double(std::log10(static_cast<double>(n))) : std::string("")) + "\n";
    }
    write_file_atomic(a.plot_csv, csv);
  }
  out << "wrote " << a.out << "\n";
  return kSuccess;
}

// --- weights ---------------------------------------------------------------

struct WeightsArgs {
  std::string stats, scheme = "uniform", out, reference, count_basis = "total";
  double k = 0.5, q = 20.0, beta = 0.9, min_weight = 0.0;
  std::optional<double> log_base;
  std::vector<std::string> manual, floor;
  bool literal = false;
};

int cmd_weights(const WeightsArgs& a, std::ostream& out) {
  SchemeConfig cfg;
  cfg.scheme = parse_scheme(a.scheme);
  cfg.k = a.k;
  cfg.q = a.q;
  cfg.beta = a.beta;
  cfg.log_base = a.log_base;
  cfg.min_weight = a.min_weight;
  cfg.count_basis = parse_count_basis(a.count_basis);
  cfg.literal_effective_number = a.literal;
  for (const auto& m : a.manual) cfg.manual_weights.insert(parse_assignment(m));
  if (!a.floor.empty()) cfg.majority_floor = a.floor;
  if (!a.reference.empty()) cfg.normalize_reference = a.reference;

  Json inputs = Json::object();
  std::optional<ClassStats> stats;
  if (!a.stats.empty()) {
    stats = class_stats_from_json(read_json(a.stats));
    inputs["stats"] = file_digest(a.stats);
  } else if (cfg.scheme != Scheme::Uniform && cfg.scheme != Scheme::Balanced) {
    throw Error(ErrorKind::InvalidConfig, "scheme '" + a.scheme + "' needs --stats");
  }
  const ClassTable classes = stats ? stats->classes : ClassTable::driving();
  const ClassStats& s =
      stats ? *stats : ClassStats::from_counts(classes, 1, std::vector<std::uint64_t>(classes.size(), 0), "none");
  Json doc = to_json(scheme_dispatch(cfg, s, classes));
  doc["metadata"] = metadata("weights", to_json(cfg), inputs);
  write_json(a.out, doc);
  out << "wrote " << a.out << "\n";
  return kSuccess;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t train_images = 5000, eval_images = 1000, num_classes = 7;
  double first_rate = 3.0, ratio = 1.0 / 3.0;
  std::vector<double> rates;
  SynthConfig cfg;
};

int cmd_synth(SynthArgs a, std::ostream& out) {
  SynthConfig cfg = a.cfg;
  if (!a.rates.empty()) {
    cfg.class_rates = a.rates;
  } else {
    cfg.class_rates = SynthConfig::geometric(a.num_classes, a.first_rate, a.ratio).class_rates;
  }
  if (a.train_images == 0) throw Error(ErrorKind::InvalidConfig, "--train-images must be >= 1");
  const auto all = generate_synthetic(cfg, a.train_images + a.eval_images);
  std::map<std::string, SyntheticDataset> splits;
  if (a.eval_images > 0) {
    auto [train, eval] = split_dataset(all, a.train_images);
    splits.emplace("train", std::move(train));
    splits.emplace("eval", std::move(eval));
  } else {
    splits.emplace("train", all);
  }
  const Json config = {{"generator", to_json(cfg)},
                       {"train_images", a.train_images},
                       {"eval_images", a.eval_images}};
  write_dataset(a.out, cfg, splits, metadata("synth", config, Json::object()));
  out << "wrote " << a.out << "\n";
  return kSuccess;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string dataset, split = "train", weights, out, log, arch = "linear", selection = "hardest";
  std::size_t hidden = 16;
  TrainConfig cfg;
};

int cmd_train(TrainArgs a, std::ostream& out) {
  const DatasetBundle bundle = read_dataset(a.dataset);
  const auto& ds = dataset_split(bundle, a.split);
  TrainConfig cfg = a.cfg;
  cfg.mining.selection = parse_selection(a.selection);

  Json inputs = {{"dataset", dataset_digest(a.dataset, a.split)}};
  Json weight_info = {{"scheme", "uniform"}, {"params", Json::object()}};
  if (!a.weights.empty()) {
    const WeightVector w = weight_vector_from_json(read_json(a.weights));
    if (!(w.classes == ds.classes)) {
      throw Error(ErrorKind::InvalidInput, "weight file classes do not match the dataset");
    }
    cfg.loss.static_weights = w.values;
    weight_info = {{"scheme", w.scheme}, {"params", w.params}};
    inputs["weights"] = file_digest(a.weights);
  } else {
    cfg.loss.static_weights = uniform_weights(ds.classes).values;
  }

  ClassifierModel model =
      init_model(parse_architecture(a.arch), static_cast<std::size_t>(ds.proposals.features.cols()),
                 ds.classes, cfg.seed, a.hidden);
  const auto batches = make_batches(ds.proposals, cfg.batch_size);
  const TrainResult result = train(std::move(model), batches, cfg);

  Json config = to_json(cfg);
  config["architecture"] = a.arch;
  config["hidden_dim"] = a.hidden;
  config["split"] = a.split;
  Json doc = {{"format_version", kFormatVersion},
              {"kind", "model"},
              {"model", to_json(result.model)},
              {"train_config", to_json(cfg)},
              {"weights", weight_info},
              {"metadata", metadata("train", config, inputs)}};
  write_json(a.out, doc);
  const std::string log_path = a.log.empty() ? a.out + ".log.json" : a.log;
  write_json(log_path, to_json(result.log));
  out << "wrote " << a.out << " and " << log_path << "\n";
  return kSuccess;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string model, dataset, split = "eval", detections, labels, format = "bdd100k", out, label,
      dump_detections;
  double min_score = 0.01;
  EvalConfig cfg;
};

std::string default_label(const Json& model_doc) {
  const std::string scheme = model_doc.at("weights").at("scheme").get<std::string>();
  const double alpha = model_doc.at("train_config").at("loss").at("focal_alpha").get<double>();
  if (alpha > 0.0) return scheme == "uniform" ? "focal" : scheme + "+focal";
  return scheme;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  Json inputs = Json::object();
  Json config = {{"iou_threshold", a.cfg.iou_threshold},
                 {"target_fppi", a.cfg.target_fppi},
                 {"inclusive_iou", a.cfg.inclusive_iou},
                 {"min_score", a.min_score}};
  std::vector<Detection> dets;
  std::vector<Scene> scenes;
  std::optional<ClassTable> classes;
  std::string label = a.label;

  if (!a.detections.empty()) {
    if (a.labels.empty()) throw Error(ErrorKind::InvalidConfig, "--detections needs --labels");
    const LabelSet set = parse_labels(a.labels, parse_label_format(a.format));
    classes = set.classes;
    scenes = set.scenes;
    dets = parse_detections(read_file(a.detections), *classes);
    inputs["detections"] = file_digest(a.detections);
    inputs["labels"] = file_digest(a.labels);
    config["format"] = a.format;
    if (label.empty()) label = fs::path(a.detections).stem().string();
  } else {
    if (a.model.empty() || a.dataset.empty()) {
      throw Error(ErrorKind::InvalidConfig, "give --model with --dataset, or --detections with --labels");
    }
    const Json model_doc = read_json(a.model);
    const ClassifierModel model = model_from_json(model_doc.at("model"));
    const DatasetBundle bundle = read_dataset(a.dataset);
    const auto& ds = dataset_split(bundle, a.split);
    if (!(model.classes == ds.classes)) {
      throw Error(ErrorKind::InvalidInput, "model classes do not match the dataset");
    }
    classes = ds.classes;
    scenes = ds.scenes;
    dets = detections_from_probabilities(predict(model, ds.proposals.features), ds.proposals,
                                         ds.scenes, a.min_score);
    inputs["model"] = file_digest(a.model);
    inputs["dataset"] = dataset_digest(a.dataset, a.split);
    config["split"] = a.split;
    if (label.empty()) label = default_label(model_doc);
  }

  EvalReport report = evaluate(dets, scenes, *classes, a.cfg);
  report.label = label;
  Json doc = to_json(report);
  doc["metadata"] = metadata("eval", config, inputs);
  write_json(a.out, doc);
  if (!a.dump_detections.empty()) {
    write_file_atomic(a.dump_detections, detections_to_jsonl(*classes, dets));
  }
  out << "wrote " << a.out << "\n";
  return kSuccess;
}

// --- report ----------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> files, labels;
  std::string format = "text", out;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  if (!a.labels.empty() && a.labels.size() != a.files.size()) {
    throw Error(ErrorKind::InvalidConfig, "--labels needs one entry per report file");
  }
  std::vector<EvalReport> reports;
  for (std::size_t i = 0; i < a.files.size(); ++i) {
    reports.push_back(eval_report_from_json(read_json(a.files[i])));
    if (!a.labels.empty()) reports.back().label = a.labels[i];
  }
  const std::string table = render_reports(reports, parse_table_format(a.format));
  if (a.out.empty()) {
    out << table;
  } else {
    write_file_atomic(a.out, table);
  }
  return kSuccess;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig: return kUsageError;
    case ErrorKind::Divergence: return kDivergence;
    default: return kDataError;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Class-imbalance loss reweighting toolkit", "wce"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  StatsArgs stats;
  auto* s = app.add_subcommand("stats", "Per-class instance counts and per-image frequencies");
  s->add_option("--labels", stats.labels, "Label document");
  s->add_option("--format", stats.format, "bdd100k | simple_jsonl")->capture_default_str();
  s->add_option("--dataset", stats.dataset, "Synthetic dataset directory (alternative to --labels)");
  s->add_option("--split", stats.split, "Dataset split")->capture_default_str();
  s->add_option("--holdout", stats.holdout, "Scenes held out of the statistics (labels only)")
      ->capture_default_str();
  s->add_option("--split-seed", stats.split_seed, "Seed for the holdout draw")->capture_default_str();
  s->add_option("--plot-csv", stats.plot_csv, "Also write class,count,frequency,log10_count rows");
  s->add_option("--out", stats.out, "Output stats document")->required();

  WeightsArgs weights;
  auto* w = app.add_subcommand("weights", "Derive a static class-weight vector");
  w->add_option("--stats", weights.stats, "Stats document");
  w->add_option("--scheme", weights.scheme,
                "uniform | balanced | inverse-linear | inverse-log | effective-number")
      ->capture_default_str();
  w->add_option("--k", weights.k, "Linear inverse-frequency scale")->capture_default_str();
  w->add_option("--q", weights.q, "Log inverse-frequency offset")->capture_default_str();
  w->add_option("--log-base", weights.log_base, "Logarithm base (default: natural)");
  w->add_option("--beta", weights.beta, "Effective-number beta")->capture_default_str();
  w->add_option("--manual", weights.manual, "Balanced weight NAME=VALUE (repeatable)");
  w->add_option("--floor", weights.floor, "Class clamped to 1 (repeatable; default: most frequent)");
  w->add_option("--reference", weights.reference, "Class normalized to 1 (default: most frequent)");
  w->add_option("--min-weight", weights.min_weight, "Lower bound for non-floored weights")
      ->capture_default_str();
  w->add_option("--count-basis", weights.count_basis, "total | per_image")->capture_default_str();
  w->add_flag("--literal", weights.literal, "Use E_j directly instead of its normalized inverse");
  w->add_option("--out", weights.out, "Output weight document")->required();

  SynthArgs synth;
  auto* y = app.add_subcommand("synth", "Generate a seeded synthetic long-tail proposal dataset");
  y->add_option("--out", synth.out, "Output directory")->required();
  y->add_option("--train-images", synth.train_images)->capture_default_str();
  y->add_option("--eval-images", synth.eval_images)->capture_default_str();
  y->add_option("--num-classes", synth.num_classes)->capture_default_str();
  y->add_option("--first-rate", synth.first_rate, "Rate of the most frequent class")->capture_default_str();
  y->add_option("--ratio", synth.ratio, "Geometric rate ratio between consecutive classes")
      ->capture_default_str();
  y->add_option("--rates", synth.rates, "Explicit per-class rates (overrides the geometric ones)")
      ->delimiter(',');
  y->add_option("--feature-dim", synth.cfg.feature_dim)->capture_default_str();
  y->add_option("--separation", synth.cfg.class_separation)->capture_default_str();
  y->add_option("--noise", synth.cfg.feature_noise)->capture_default_str();
  y->add_option("--bg-per-fg", synth.cfg.bg_per_fg)->capture_default_str();
  y->add_option("--min-bg", synth.cfg.min_bg_per_image)->capture_default_str();
  y->add_option("--iou-lo", synth.cfg.iou_lo)->capture_default_str();
  y->add_option("--iou-hi", synth.cfg.iou_hi)->capture_default_str();
  y->add_option("--seed", synth.cfg.seed)->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the proposal classifier with momentum SGD");
  t->add_option("--dataset", tr.dataset, "Dataset directory")->required();
  t->add_option("--split", tr.split)->capture_default_str();
  t->add_option("--weights", tr.weights, "Weight document (default: uniform)");
  t->add_option("--out", tr.out, "Output model document")->required();
  t->add_option("--log", tr.log, "Training log (default: <out>.log.json)");
  t->add_option("--arch", tr.arch, "linear | mlp")->capture_default_str();
  t->add_option("--hidden", tr.hidden, "Hidden width for mlp")->capture_default_str();
  t->add_option("--lr", tr.cfg.learning_rate)->capture_default_str();
  t->add_option("--momentum", tr.cfg.momentum)->capture_default_str();
  t->add_option("--batch-size", tr.cfg.batch_size, "Images per batch")->capture_default_str();
  t->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  t->add_option("--seed", tr.cfg.seed)->capture_default_str();
  t->add_option("--focal-alpha", tr.cfg.loss.focal_alpha)->capture_default_str();
  t->add_option("--prob-floor", tr.cfg.loss.prob_floor)->capture_default_str();
  t->add_option("--bg-per-fg", tr.cfg.mining.bg_per_fg, "Mining ratio")->capture_default_str();
  t->add_option("--selection", tr.selection, "hardest | random")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Recall at the FPPI-calibrated threshold");
  e->add_option("--model", ev.model, "Model document");
  e->add_option("--dataset", ev.dataset, "Dataset directory");
  e->add_option("--split", ev.split)->capture_default_str();
  e->add_option("--detections", ev.detections, "Detections (one JSON record per line)");
  e->add_option("--labels", ev.labels, "Ground-truth label document for --detections");
  e->add_option("--format", ev.format, "Label format")->capture_default_str();
  e->add_option("--iou", ev.cfg.iou_threshold)->capture_default_str();
  e->add_option("--fppi", ev.cfg.target_fppi)->capture_default_str();
  e->add_flag("--iou-inclusive", ev.cfg.inclusive_iou, "Count IoU == threshold as a match");
  e->add_option("--min-score", ev.min_score, "Drop detections scored below this")->capture_default_str();
  e->add_option("--label", ev.label, "Column label for the report");
  e->add_option("--dump-detections", ev.dump_detections, "Also write the detections used");
  e->add_option("--out", ev.out, "Output report document")->required();

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Render reports side by side");
  r->add_option("files", rep.files, "Report documents")->required();
  r->add_option("--format", rep.format, "text | markdown | csv")->capture_default_str();
  r->add_option("--labels", rep.labels, "Column labels, one per file")->delimiter(',');
  r->add_option("--out", rep.out, "Write the table here instead of stdout");

  std::vector<std::string> argv_store{"wce"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) {  // --help, --version
      app.exit(ex, out, err);
      return kSuccess;
    }
    err << "error: " << ex.what() << "\n";
    return kUsageError;
  }

  try {
    if (s->parsed()) return cmd_stats(stats, out);
    if (w->parsed()) return cmd_weights(weights, out);
    if (y->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (r->parsed()) return cmd_report(rep, out);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex.kind());
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kDataError;
  }
  err << "error: no command given\n";
  return kUsageError;
}

}  // namespace wce::cli
