#include "wce/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "wce/error.hpp"
#include "wce/io.hpp"

namespace wce {

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "iou_threshold must lie in (0, 1]");
  }
  if (!(target_fppi > 0.0) || !std::isfinite(target_fppi)) {
    throw Error(ErrorKind::InvalidConfig, "target_fppi must be finite and > 0");
  }
}

ImageMatch match_image(std::span<const Detection> detections,
                       std::span<const GroundTruthObject> ground_truth, std::size_t num_classes,
                       const EvalConfig& cfg) {
  ImageMatch out{std::vector<ClassCounts>(num_classes), std::vector<bool>(detections.size(), false)};
  std::vector<std::vector<std::size_t>> dets_of(num_classes), gts_of(num_classes);
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto c = detections[i].class_index;
    if (c == ClassTable::kBackground || c >= num_classes) {
      throw Error(ErrorKind::InvalidInput, "detection has an invalid class index");
    }
    dets_of[c].push_back(i);
  }
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    const auto c = ground_truth[g].class_index;
    if (c == ClassTable::kBackground || c >= num_classes) {
      throw Error(ErrorKind::InvalidInput, "ground truth has an invalid class index");
    }
    gts_of[c].push_back(g);
  }

  for (std::size_t c = 1; c < num_classes; ++c) {
    auto& dets = dets_of[c];
    std::stable_sort(dets.begin(), dets.end(), [&](std::size_t a, std::size_t b) {
      return detections[a].score > detections[b].score;
    });
    const auto& gts = gts_of[c];
    std::vector<bool> taken(gts.size(), false);
    for (std::size_t d : dets) {
      std::optional<std::size_t> best;
      double best_iou = -1.0;
      for (std::size_t k = 0; k < gts.size(); ++k) {
        if (taken[k]) continue;
        const double o = iou(detections[d].box, ground_truth[gts[k]].box);
        if (o > best_iou) {
          best_iou = o;
          best = k;
        }
      }
      if (best && cfg.matches(best_iou)) {
        taken[*best] = true;
        out.true_positive[d] = true;
        ++out.per_class[c].tp;
      } else {
        ++out.per_class[c].fp;
      }
    }
    out.per_class[c].fn = static_cast<std::size_t>(std::count(taken.begin(), taken.end(), false));
  }
  return out;
}

namespace {

// Detection indices grouped by the scene they belong to.
std::vector<std::vector<std::size_t>> group_by_scene(std::span<const Detection> detections,
                                                     std::span<const Scene> scenes) {
  std::unordered_map<std::string, std::size_t> scene_of;
  for (std::size_t i = 0; i < scenes.size(); ++i) scene_of.emplace(scenes[i].image_id, i);
  std::vector<std::vector<std::size_t>> groups(scenes.size());
  for (std::size_t i = 0; i < detections.size(); ++i) {
    auto it = scene_of.find(detections[i].image_id);
    if (it == scene_of.end()) {
      throw Error(ErrorKind::InvalidInput,
                  "detection refers to unknown image '" + detections[i].image_id + "'");
    }
    groups[it->second].push_back(i);
  }
  return groups;
}

std::vector<Detection> gather(std::span<const Detection> all, const std::vector<std::size_t>& idx) {
  std::vector<Detection> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

Calibration calibrate_threshold(std::span<const Detection> detections,
                                std::span<const Scene> scenes, std::size_t num_classes,
                                const EvalConfig& cfg) {
  cfg.validate();
  if (scenes.empty()) throw Error(ErrorKind::InvalidInput, "calibration needs at least one image");
  Calibration cal;
  if (detections.empty()) {
    cal.degenerate = true;
    cal.threshold = 1.0;
    return cal;
  }
  for (const auto& d : detections) {
    if (!std::isfinite(d.score) || d.score < 0.0 || d.score > 1.0) {
      throw Error(ErrorKind::InvalidInput, "detection score outside [0, 1]");
    }
  }

  std::vector<bool> is_tp(detections.size(), false);
  const auto groups = group_by_scene(detections, scenes);
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (groups[s].empty()) continue;
    const auto dets = gather(detections, groups[s]);
    const auto m = match_image(dets, scenes[s].objects, num_classes, cfg);
    for (std::size_t k = 0; k < dets.size(); ++k) is_tp[groups[s][k]] = m.true_positive[k];
  }

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].score > detections[b].score;
  });

  const double images = static_cast<double>(scenes.size());
  std::size_t fp = 0;
  std::optional<double> best;
  double best_fppi = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double score = detections[order[i]].score;
    for (; i < order.size() && detections[order[i]].score == score; ++i) {
      if (!is_tp[order[i]]) ++fp;
    }
    ++cal.candidates;
    const double fppi = static_cast<double>(fp) / images;
    if (fppi > cfg.target_fppi) break;  // FP count only grows as the threshold drops
    best = score;
    best_fppi = fppi;
  }

  if (best) {
    cal.threshold = *best;
    cal.achieved_fppi = best_fppi;
  } else {
    cal.above_all_scores = true;
    cal.threshold = std::nextafter(detections[order.front()].score,
                                   std::numeric_limits<double>::infinity());
    cal.achieved_fppi = 0.0;
  }
  return cal;
}

EvalReport evaluate(std::span<const Detection> detections, std::span<const Scene> scenes,
                    const ClassTable& classes, const EvalConfig& cfg) {
  cfg.validate();
  const std::size_t k = classes.size();
  std::vector<std::size_t> gt(k, 0);
  for (const auto& s : scenes) {
    for (const auto& o : s.objects) {
      if (o.class_index == ClassTable::kBackground || o.class_index >= k) {
        throw Error(ErrorKind::InvalidInput, "ground truth has an invalid class index");
      }
      ++gt[o.class_index];
    }
  }
  const std::size_t total_gt = std::accumulate(gt.begin(), gt.end(), std::size_t{0});
  if (total_gt == 0) throw Error(ErrorKind::InvalidInput, "evaluation needs ground truth objects");

  EvalReport report;
  report.config = cfg;
  report.image_count = scenes.size();
  report.calibration = calibrate_threshold(detections, scenes, k, cfg);

  std::vector<ClassCounts> counts(k);
  const auto groups = group_by_scene(detections, scenes);
  const bool none = report.calibration.degenerate || report.calibration.above_all_scores;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    std::vector<Detection> kept;
    if (!none) {
      for (auto i : groups[s]) {
        if (detections[i].score >= report.calibration.threshold) kept.push_back(detections[i]);
      }
    }
    const auto m = match_image(kept, scenes[s].objects, k, cfg);
    for (std::size_t c = 1; c < k; ++c) counts[c] += m.per_class[c];
  }

  std::size_t total_tp = 0;
  double recall_sum = 0.0;
  std::size_t with_gt = 0;
  for (std::size_t c = 1; c < k; ++c) {
    ClassRecall cr{classes.name(c), gt[c], counts[c], std::nullopt};
    if (gt[c] > 0) {
      cr.recall = static_cast<double>(counts[c].tp) / static_cast<double>(gt[c]);
      recall_sum += *cr.recall;
      ++with_gt;
    }
    total_tp += counts[c].tp;
    report.classes.push_back(std::move(cr));
  }
  report.class_average_recall = recall_sum / static_cast<double>(with_gt);
  report.overall_recall = static_cast<double>(total_tp) / static_cast<double>(total_gt);
  return report;
}

std::vector<Detection> detections_from_probabilities(const Eigen::MatrixXd& probs,
                                                     const ProposalBatch& proposals,
                                                     std::span<const Scene> scenes,
                                                     double min_score) {
  if (static_cast<std::size_t>(probs.rows()) != proposals.size()) {
    throw Error(ErrorKind::InvalidInput, "probability rows do not match proposals");
  }
  std::vector<Detection> out;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const auto row = static_cast<std::size_t>(r);
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      const double p = probs(r, c);
      if (p >= min_score) {
        out.push_back({proposals.boxes[row], static_cast<std::size_t>(c), std::clamp(p, 0.0, 1.0),
                       scenes[proposals.scene_index[row]].image_id});
      }
    }
  }
  return out;
}

Json to_json(const EvalReport& r) {
  Json classes = Json::array();
  for (const auto& c : r.classes) {
    classes.push_back({{"name", c.name},
                       {"ground_truth", c.ground_truth},
                       {"tp", c.counts.tp},
                       {"fp", c.counts.fp},
                       {"fn", c.counts.fn},
                       {"recall", c.recall ? Json(*c.recall) : Json(nullptr)}});
  }
  return {{"format_version", kFormatVersion},
          {"kind", "eval_report"},
          {"label", r.label},
          {"image_count", r.image_count},
          {"config",
           {{"iou_threshold", r.config.iou_threshold},
            {"target_fppi", r.config.target_fppi},
            {"inclusive_iou", r.config.inclusive_iou}}},
          {"calibration",
           {{"threshold", r.calibration.threshold},
            {"achieved_fppi", r.calibration.achieved_fppi},
            {"degenerate", r.calibration.degenerate},
            {"above_all_scores", r.calibration.above_all_scores},
            {"candidates", r.calibration.candidates}}},
          {"classes", classes},
          {"class_average_recall", r.class_average_recall},
          {"overall_recall", r.overall_recall}};
}

EvalReport eval_report_from_json(const Json& j) {
  try {
    EvalReport r;
    r.label = j.value("label", std::string());
    r.image_count = j.at("image_count").get<std::size_t>();
    const auto& cfg = j.at("config");
    r.config = {cfg.at("iou_threshold").get<double>(), cfg.at("target_fppi").get<double>(),
                cfg.at("inclusive_iou").get<bool>()};
    const auto& cal = j.at("calibration");
    r.calibration = {cal.at("threshold").get<double>(), cal.at("achieved_fppi").get<double>(),
                     cal.at("degenerate").get<bool>(), cal.at("above_all_scores").get<bool>(),
                     cal.at("candidates").get<std::size_t>()};
    for (const auto& c : j.at("classes")) {
      ClassRecall cr{c.at("name").get<std::string>(), c.at("ground_truth").get<std::size_t>(),
                     {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                      c.at("fn").get<std::size_t>()},
                     std::nullopt};
      if (!c.at("recall").is_null()) cr.recall = c.at("recall").get<double>();
      r.classes.push_back(std::move(cr));
    }
    r.class_average_recall = j.at("class_average_recall").get<double>();
    r.overall_recall = j.at("overall_recall").get<double>();
    return r;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed report document: ") + e.what());
  }
}

std::string detections_to_jsonl(const ClassTable& classes, std::span<const Detection> detections) {
  std::string out;
  for (const auto& d : detections) {
    out += Json{{"image_id", d.image_id},
                {"class", classes.name(d.class_index)},
                {"x1", d.box.x1},
                {"y1", d.box.y1},
                {"x2", d.box.x2},
                {"y2", d.box.y2},
                {"score", d.score}}
               .dump();
    out += '\n';
  }
  return out;
}

std::vector<Detection> parse_detections(const std::string& jsonl, const ClassTable& classes) {
  std::vector<Detection> out;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "detection record " + std::to_string(record++);
    try {
      const Json j = Json::parse(line);
      Detection d{{j.at("x1").get<double>(), j.at("y1").get<double>(), j.at("x2").get<double>(),
                   j.at("y2").get<double>()},
                  0,
                  j.at("score").get<double>(),
                  j.at("image_id").get<std::string>()};
      const auto cls = classes.find(j.at("class").get<std::string>());
      if (!cls || *cls == ClassTable::kBackground) {
        throw Error(ErrorKind::Parse, where + ": unknown class");
      }
      d.class_index = *cls;
      if (!d.box.valid()) throw Error(ErrorKind::Parse, where + ": invalid box");
      if (!(d.score >= 0.0 && d.score <= 1.0)) throw Error(ErrorKind::Parse, where + ": score outside [0, 1]");
      out.push_back(std::move(d));
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::Parse, where + ": " + e.what());
    }
  }
  return out;
}

TableFormat parse_table_format(const std::string& s) {
  if (iequals(s, "text")) return TableFormat::Text;
  if (iequals(s, "markdown") || iequals(s, "md")) return TableFormat::Markdown;
  if (iequals(s, "csv")) return TableFormat::Csv;
  throw Error(ErrorKind::InvalidConfig, "unknown table format '" + s + "'");
}

namespace {

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

}  // namespace

std::string render_reports(std::span<const EvalReport> reports, TableFormat format) {
  if (reports.empty()) throw Error(ErrorKind::InvalidInput, "no reports to render");

  std::vector<std::string> header{"Object Class"};
  for (std::size_t i = 0; i < reports.size(); ++i) {
    header.push_back(reports[i].label.empty() ? "run " + std::to_string(i + 1) : reports[i].label);
  }

  auto cell = [&](std::optional<double> v) -> std::string {
    if (!v) return "-";
    return format == TableFormat::Csv ? format_double(*v) : percent(*v);
  };

  std::vector<std::vector<std::string>> rows;
  for (const auto& cls : reports.front().classes) {
    std::vector<std::string> row{cls.name};
    for (const auto& r : reports) {
      auto it = std::find_if(r.classes.begin(), r.classes.end(),
                             [&](const ClassRecall& c) { return c.name == cls.name; });
      row.push_back(cell(it == r.classes.end() ? std::nullopt : it->recall));
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> avg{"Average"}, overall{"Overall"};
  for (const auto& r : reports) {
    avg.push_back(cell(r.class_average_recall));
    overall.push_back(cell(r.overall_recall));
  }
  rows.push_back(std::move(avg));
  rows.push_back(std::move(overall));

  std::ostringstream out;
  if (format == TableFormat::Csv) {
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
      out << '\n';
    }
    return out.str();
  }

  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  auto emit = [&](const std::vector<std::string>& row) {
    const bool md = format == TableFormat::Markdown;
    if (md) out << "| ";
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << (md ? " | " : "  ");
      const std::string pad(width[i] - row[i].size(), ' ');
      // Names left-aligned, numbers right-aligned.
      out << (i == 0 ? row[i] + pad : pad + row[i]);
    }
    if (md) out << " |";
    out << '\n';
  };
  emit(header);
  if (format == TableFormat::Markdown) {
    out << "|";
    for (std::size_t i = 0; i < header.size(); ++i) {
      out << (i == 0 ? " :" : " ") << std::string(width[i] - 1, '-') << (i == 0 ? " |" : ": |");
    }
    out << '\n';
  } else {
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  }
  for (const auto& row : rows) emit(row);
  return out.str();
}

}  // namespace wce
