#pragma once

// Annotation ingest, class statistics, and the seeded synthetic long-tail
// proposal generator.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wce/class_table.hpp"
#include "wce/geometry.hpp"
#include "wce/json.hpp"
#include "wce/weights.hpp"

namespace wce {

inline constexpr double kVirtualImageWidth = 1280.0;
inline constexpr double kVirtualImageHeight = 720.0;

struct GroundTruthObject {
  BoundingBox box;
  std::size_t class_index = 0;
};

struct Scene {
  std::string image_id;
  double image_width = kVirtualImageWidth;
  double image_height = kVirtualImageHeight;
  std::vector<GroundTruthObject> objects;
};

enum class LabelFormat { Bdd100k, SimpleJsonl };
LabelFormat parse_label_format(const std::string& s);

struct SkipReport {
  std::map<std::string, std::size_t> by_category;  // labels outside the class table
  std::size_t missing_box = 0;
  std::size_t degenerate_box = 0;

  std::size_t total() const;
};

struct LabelSet {
  ClassTable classes = ClassTable::driving();
  std::vector<Scene> scenes;
  SkipReport skipped;
};

/// Reads a label document. Categories are matched case-insensitively to the
/// driving class table; everything else lands in the skip report.
LabelSet parse_labels(const std::filesystem::path& path, LabelFormat format);
LabelSet parse_labels(std::istream& in, LabelFormat format);

ClassStats compute_stats(std::span<const Scene> scenes, const ClassTable& classes,
                         std::string split = "all");

struct SceneSplit {
  std::vector<Scene> train;
  std::vector<Scene> holdout;
};

/// Seeded uniform holdout of `holdout_count` scenes; both halves keep the
/// input order.
SceneSplit split_scenes(std::span<const Scene> scenes, std::size_t holdout_count,
                        std::uint64_t seed);

struct SynthConfig {
  /// Poisson mean objects per image, one entry per foreground class.
  std::vector<double> class_rates;
  std::size_t feature_dim = 8;
  double class_separation = 4.0;
  double feature_noise = 1.0;
  double bg_per_fg = 3.0;
  /// Background proposals in every image regardless of its object count.
  std::size_t min_bg_per_image = 2;
  double iou_lo = 0.6;
  double iou_hi = 1.0;
  std::uint64_t seed = 0;
  double min_box_size = 24.0;
  double max_box_size = 256.0;
  std::size_t max_placement_retries = 1000;

  /// rates r_j = first_rate * ratio^j for j = 0..num_classes-1.
  static SynthConfig geometric(std::size_t num_classes, double first_rate = 3.0,
                               double ratio = 1.0 / 3.0);

  std::size_t num_classes() const { return class_rates.size(); }
  ClassTable classes() const;
  void validate() const;
};

Json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const Json& j);

/// Row-per-proposal training data. `scene_index` points into the owning
/// scene list; `source_object` is -1 for background proposals.
struct ProposalBatch {
  Eigen::MatrixXd features;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> scene_index;
  std::vector<std::ptrdiff_t> source_object;
  std::vector<BoundingBox> boxes;

  std::size_t size() const { return labels.size(); }
  std::size_t num_foreground() const;
  ProposalBatch select(std::span<const std::size_t> rows) const;
};

struct SyntheticDataset {
  ClassTable classes;
  std::vector<Scene> scenes;
  ProposalBatch proposals;
};

/// Pure function of (cfg, num_images).
SyntheticDataset generate_synthetic(const SynthConfig& cfg, std::size_t num_images);

/// First `first_count` scenes (and their proposals) versus the rest.
std::pair<SyntheticDataset, SyntheticDataset> split_dataset(const SyntheticDataset& ds,
                                                            std::size_t first_count);

/// Class mean of the feature Gaussian; index 0 is background.
Eigen::MatrixXd class_means(const SynthConfig& cfg);

// On-disk dataset directory: dataset.json header plus per-split
// <split>_scenes.json and <split>_proposals.csv.
struct DatasetBundle {
  Json header;
  std::map<std::string, SyntheticDataset> splits;
};

void write_dataset(const std::filesystem::path& dir, const SynthConfig& cfg,
                   const std::map<std::string, SyntheticDataset>& splits,
                   const Json& metadata = Json::object());
DatasetBundle read_dataset(const std::filesystem::path& dir);

Json scenes_to_json(const ClassTable& classes, std::span<const Scene> scenes);
std::vector<Scene> scenes_from_json(const Json& j, const ClassTable& classes);
std::string proposals_to_csv(const ProposalBatch& batch, std::span<const Scene> scenes);
ProposalBatch proposals_from_csv(const std::string& text, std::span<const Scene> scenes,
                                 std::size_t feature_dim);

}  // namespace wce
