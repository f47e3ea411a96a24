#pragma once

// Recall at a single, FPPI-calibrated score threshold.

#include <Eigen/Core>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wce/class_table.hpp"
#include "wce/dataset.hpp"
#include "wce/geometry.hpp"
#include "wce/json.hpp"

namespace wce {

struct Detection {
  BoundingBox box;
  std::size_t class_index = 0;
  double score = 0.0;
  std::string image_id;
};

struct EvalConfig {
  double iou_threshold = 0.5;
  double target_fppi = 1.0;
  /// Count IoU == threshold as a match (the default requires IoU > threshold).
  bool inclusive_iou = false;

  void validate() const;
  bool matches(double overlap) const {
    return inclusive_iou ? overlap >= iou_threshold : overlap > iou_threshold;
  }
};

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  ClassCounts& operator+=(const ClassCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ClassCounts&) const = default;
};

struct ImageMatch {
  std::vector<ClassCounts> per_class;  // indexed by class, background slot unused
  std::vector<bool> true_positive;     // per input detection
};

/// Greedy per-class matching for one image. Detections go in descending
/// score order (input order on ties); each takes the unmatched same-class
/// ground truth of highest IoU and is a TP if that IoU passes the threshold.
ImageMatch match_image(std::span<const Detection> detections,
                       std::span<const GroundTruthObject> ground_truth, std::size_t num_classes,
                       const EvalConfig& cfg);

struct Calibration {
  double threshold = 0.0;
  double achieved_fppi = 0.0;
  /// No detections at all.
  bool degenerate = false;
  /// Even the top score breaks the FPPI cap; the threshold sits above every score.
  bool above_all_scores = false;
  std::size_t candidates = 0;
};

/// Smallest distinct detection score whose FPPI (total FP / image count)
/// stays within target_fppi.
///
/// Greedy matching in score order makes each detection's TP/FP outcome
/// depend only on higher-ranked detections, so one matching pass over all
/// detections yields the outcome at every candidate threshold at once; the
/// sweep is exact and costs O(N log N) overall.
Calibration calibrate_threshold(std::span<const Detection> detections,
                                std::span<const Scene> scenes, std::size_t num_classes,
                                const EvalConfig& cfg);

struct ClassRecall {
  std::string name;
  std::size_t ground_truth = 0;
  ClassCounts counts;
  std::optional<double> recall;  // empty when the class has no ground truth
};

struct EvalReport {
  std::string label;
  Calibration calibration;
  std::size_t image_count = 0;
  std::vector<ClassRecall> classes;  // foreground classes in table order
  double class_average_recall = 0.0;
  double overall_recall = 0.0;
  EvalConfig config;
};

EvalReport evaluate(std::span<const Detection> detections, std::span<const Scene> scenes,
                    const ClassTable& classes, const EvalConfig& cfg);

/// One detection per (proposal, foreground class) with probability at or
/// above min_score; the box is the proposal box.
std::vector<Detection> detections_from_probabilities(const Eigen::MatrixXd& probs,
                                                     const ProposalBatch& proposals,
                                                     std::span<const Scene> scenes,
                                                     double min_score = 0.01);

Json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const Json& j);

/// One JSON record per line: image_id, class, x1, y1, x2, y2, score.
std::vector<Detection> parse_detections(const std::string& jsonl, const ClassTable& classes);
std::string detections_to_jsonl(const ClassTable& classes, std::span<const Detection> detections);

enum class TableFormat { Text, Markdown, Csv };
TableFormat parse_table_format(const std::string& s);

/// Table with one row per class plus Average and Overall, one column per
/// report in input order. Text and markdown cells are percentages with two
/// decimals; csv cells are raw recall fractions.
std::string render_reports(std::span<const EvalReport> reports, TableFormat format);

}  // namespace wce
