#include "wce/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "wce/error.hpp"
#include "wce/io.hpp"

namespace wce {

LabelFormat parse_label_format(const std::string& s) {
  if (iequals(s, "bdd100k")) return LabelFormat::Bdd100k;
  if (iequals(s, "simple_jsonl") || iequals(s, "jsonl")) return LabelFormat::SimpleJsonl;
  throw Error(ErrorKind::InvalidConfig, "unknown label format '" + s + "'");
}

std::size_t SkipReport::total() const {
  std::size_t n = missing_box + degenerate_box;
  for (const auto& [_, c] : by_category) n += c;
  return n;
}

namespace {

double number_at(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number()) {
    throw Error(ErrorKind::Parse, where + ": field '" + key + "' missing or not a number");
  }
  return j.at(key).get<double>();
}

// Resolves a category and clips its box; returns false (and records why)
// when the label is skipped.
bool accept_label(LabelSet& set, Scene& scene, const std::string& category, const Json* box,
                  const std::string& where) {
  const auto cls = set.classes.find(category);
  if (!cls || *cls == ClassTable::kBackground) {
    ++set.skipped.by_category[category];
    return false;
  }
  if (box == nullptr || box->is_null()) {
    ++set.skipped.missing_box;
    return false;
  }
  if (!box->is_object()) throw Error(ErrorKind::Parse, where + ": box is not an object");
  BoundingBox raw{number_at(*box, "x1", where), number_at(*box, "y1", where),
                  number_at(*box, "x2", where), number_at(*box, "y2", where)};
  const BoundingBox b = raw.clipped(scene.image_width, scene.image_height);
  if (!b.valid()) {
    ++set.skipped.degenerate_box;
    return false;
  }
  scene.objects.push_back({b, *cls});
  return true;
}

void parse_bdd(std::istream& in, LabelSet& set) {
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("label document is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorKind::Parse, "label document must be an array of frames");
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const Json& frame = doc[i];
    const std::string where = "record " + std::to_string(i);
    if (!frame.is_object() || !frame.contains("name") || !frame.at("name").is_string()) {
      throw Error(ErrorKind::Parse, where + ": frame needs a string 'name'");
    }
    Scene scene;
    scene.image_id = frame.at("name").get<std::string>();
    if (frame.contains("width")) scene.image_width = number_at(frame, "width", where);
    if (frame.contains("height")) scene.image_height = number_at(frame, "height", where);
    if (frame.contains("labels") && !frame.at("labels").is_null()) {
      const Json& labels = frame.at("labels");
      if (!labels.is_array()) throw Error(ErrorKind::Parse, where + ": 'labels' must be an array");
      for (const Json& label : labels) {
        if (!label.is_object() || !label.contains("category") || !label.at("category").is_string()) {
          throw Error(ErrorKind::Parse, where + ": label needs a string 'category'");
        }
        const Json* box = label.contains("box2d") ? &label.at("box2d") : nullptr;
        accept_label(set, scene, label.at("category").get<std::string>(), box, where);
      }
    }
    set.scenes.push_back(std::move(scene));
  }
}

void parse_jsonl(std::istream& in, LabelSet& set) {
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "record " + std::to_string(record++);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception&) {
      throw Error(ErrorKind::Parse, where + ": not a JSON object");
    }
    if (!j.is_object() || !j.contains("image_id") || !j.at("image_id").is_string()) {
      throw Error(ErrorKind::Parse, where + ": needs a string 'image_id'");
    }
    const std::string id = j.at("image_id").get<std::string>();
    auto [it, fresh] = index.try_emplace(id, set.scenes.size());
    if (fresh) {
      Scene fresh_scene;
      fresh_scene.image_id = id;
      set.scenes.push_back(std::move(fresh_scene));
    }
    Scene& scene = set.scenes[it->second];
    // A record without a class only registers the image.
    if (!j.contains("class") || j.at("class").is_null()) continue;
    if (!j.at("class").is_string()) throw Error(ErrorKind::Parse, where + ": 'class' must be a string");
    accept_label(set, scene, j.at("class").get<std::string>(), &j, where);
  }
}

}  // namespace

LabelSet parse_labels(std::istream& in, LabelFormat format) {
  LabelSet set;
  if (format == LabelFormat::Bdd100k) {
    parse_bdd(in, set);
  } else {
    parse_jsonl(in, set);
  }
  if (set.scenes.empty()) throw Error(ErrorKind::EmptyDataset, "label document contains no scenes");
  return set;
}

LabelSet parse_labels(const std::filesystem::path& path, LabelFormat format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "file not found: " + path.string());
  return parse_labels(in, format);
}

ClassStats compute_stats(std::span<const Scene> scenes, const ClassTable& classes,
                         std::string split) {
  if (scenes.empty()) throw Error(ErrorKind::EmptyDataset, "no scenes to compute statistics over");
  std::vector<std::uint64_t> counts(classes.size(), 0);
  for (const auto& s : scenes) {
    for (const auto& o : s.objects) {
      if (o.class_index == ClassTable::kBackground || o.class_index >= classes.size()) {
        throw Error(ErrorKind::InvalidInput, "object in '" + s.image_id + "' has an invalid class");
      }
      ++counts[o.class_index];
    }
  }
  return ClassStats::from_counts(classes, scenes.size(), std::move(counts), std::move(split));
}

SceneSplit split_scenes(std::span<const Scene> scenes, std::size_t holdout_count,
                        std::uint64_t seed) {
  if (holdout_count > scenes.size()) {
    throw Error(ErrorKind::InvalidConfig, "holdout larger than the scene list");
  }
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> held(scenes.size(), false);
  for (std::size_t i = 0; i < holdout_count; ++i) held[order[i]] = true;
  SceneSplit out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    (held[i] ? out.holdout : out.train).push_back(scenes[i]);
  }
  return out;
}

SynthConfig SynthConfig::geometric(std::size_t num_classes, double first_rate, double ratio) {
  SynthConfig cfg;
  cfg.class_rates.resize(num_classes);
  for (std::size_t j = 0; j < num_classes; ++j) {
    cfg.class_rates[j] = first_rate * std::pow(ratio, static_cast<double>(j));
  }
  cfg.feature_dim = std::max<std::size_t>(cfg.feature_dim, num_classes + 1);
  return cfg;
}

ClassTable SynthConfig::classes() const {
  const ClassTable driving = ClassTable::driving();
  std::vector<std::string> names;
  for (std::size_t j = 0; j < num_classes(); ++j) {
    names.push_back(num_classes() < driving.size() ? driving.name(j + 1)
                                                   : "class" + std::to_string(j + 1));
  }
  return ClassTable::with_background(names);
}

void SynthConfig::validate() const {
  auto bad = [](const std::string& m) { return Error(ErrorKind::InvalidConfig, m); };
  if (num_classes() < 2) throw bad("synthetic data needs at least 2 foreground classes");
  for (double r : class_rates) {
    if (!(r > 0.0) || !std::isfinite(r)) throw bad("class rates must be finite and > 0");
  }
  if (feature_dim < num_classes() + 1) {
    throw bad("feature_dim must be >= num_classes + 1 to place the class means");
  }
  if (!(class_separation > 0.0)) throw bad("class_separation must be > 0");
  if (!(feature_noise >= 0.0)) throw bad("feature_noise must be >= 0");
  if (!(bg_per_fg >= 0.0)) throw bad("bg_per_fg must be >= 0");
  if (!(iou_lo > 0.5 && iou_hi <= 1.0 && iou_lo <= iou_hi)) {
    throw bad("positive IoU range must satisfy 0.5 < lo <= hi <= 1");
  }
  if (!(min_box_size > 0.0 && min_box_size <= max_box_size &&
        max_box_size <= std::min(kVirtualImageWidth, kVirtualImageHeight))) {
    throw bad("box size range must fit in the virtual image");
  }
}

Json to_json(const SynthConfig& cfg) {
  return {{"class_rates", cfg.class_rates},
          {"feature_dim", cfg.feature_dim},
          {"class_separation", cfg.class_separation},
          {"feature_noise", cfg.feature_noise},
          {"bg_per_fg", cfg.bg_per_fg},
          {"min_bg_per_image", cfg.min_bg_per_image},
          {"positive_iou_range", {cfg.iou_lo, cfg.iou_hi}},
          {"seed", cfg.seed},
          {"box_size_range", {cfg.min_box_size, cfg.max_box_size}},
          {"max_placement_retries", cfg.max_placement_retries},
          {"virtual_image", {kVirtualImageWidth, kVirtualImageHeight}}};
}

SynthConfig synth_config_from_json(const Json& j) {
  try {
    SynthConfig cfg;
    cfg.class_rates = j.at("class_rates").get<std::vector<double>>();
    cfg.feature_dim = j.at("feature_dim").get<std::size_t>();
    cfg.class_separation = j.at("class_separation").get<double>();
    cfg.feature_noise = j.at("feature_noise").get<double>();
    cfg.bg_per_fg = j.at("bg_per_fg").get<double>();
    cfg.min_bg_per_image = j.at("min_bg_per_image").get<std::size_t>();
    cfg.iou_lo = j.at("positive_iou_range").at(0).get<double>();
    cfg.iou_hi = j.at("positive_iou_range").at(1).get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.min_box_size = j.at("box_size_range").at(0).get<double>();
    cfg.max_box_size = j.at("box_size_range").at(1).get<double>();
    cfg.max_placement_retries = j.at("max_placement_retries").get<std::size_t>();
    return cfg;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed synthetic config: ") + e.what());
  }
}

std::size_t ProposalBatch::num_foreground() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(),
                                                [](std::size_t l) { return l != 0; }));
}

ProposalBatch ProposalBatch::select(std::span<const std::size_t> rows) const {
  ProposalBatch out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(r));
    out.labels.push_back(labels[r]);
    out.scene_index.push_back(scene_index[r]);
    out.source_object.push_back(source_object[r]);
    out.boxes.push_back(boxes[r]);
  }
  return out;
}

Eigen::MatrixXd class_means(const SynthConfig& cfg) {
  // Scaled simplex vertices: every pair of means sits class_separation apart.
  const auto k = static_cast<Eigen::Index>(cfg.num_classes() + 1);
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(k, static_cast<Eigen::Index>(cfg.feature_dim));
  const double scale = cfg.class_separation / std::sqrt(2.0);
  for (Eigen::Index c = 0; c < k; ++c) means(c, c) = scale;
  return means;
}

namespace {

class SceneSampler {
 public:
  explicit SceneSampler(const SynthConfig& cfg)
      : cfg_(cfg), rng_(cfg.seed), means_(class_means(cfg)) {}

  void sample(std::size_t image, SyntheticDataset& out, std::vector<double>& feats) {
    Scene scene;
    scene.image_id = "synth_" + std::to_string(image);
    std::vector<std::vector<double>> obj_feats;
    for (std::size_t j = 0; j < cfg_.num_classes(); ++j) {
      std::poisson_distribution<int> count(cfg_.class_rates[j]);
      const int n = count(rng_);
      for (int i = 0; i < n; ++i) {
        scene.objects.push_back({random_box(), j + 1});
        obj_feats.push_back(feature(j + 1));
      }
    }

    const std::size_t scene_idx = out.scenes.size();
    auto& p = out.proposals;
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
      p.labels.push_back(scene.objects[o].class_index);
      p.scene_index.push_back(scene_idx);
      p.source_object.push_back(static_cast<std::ptrdiff_t>(o));
      p.boxes.push_back(jitter(scene.objects[o].box));
      feats.insert(feats.end(), obj_feats[o].begin(), obj_feats[o].end());
    }

    const auto n_bg = std::max(
        static_cast<std::size_t>(std::floor(cfg_.bg_per_fg * static_cast<double>(scene.objects.size()))),
        cfg_.min_bg_per_image);
    for (std::size_t b = 0; b < n_bg; ++b) {
      p.labels.push_back(ClassTable::kBackground);
      p.scene_index.push_back(scene_idx);
      p.source_object.push_back(-1);
      p.boxes.push_back(background_box(scene));
      const auto f = feature(ClassTable::kBackground);
      feats.insert(feats.end(), f.begin(), f.end());
    }
    out.scenes.push_back(std::move(scene));
  }

 private:
  BoundingBox random_box() {
    std::uniform_real_distribution<double> size(cfg_.min_box_size, cfg_.max_box_size);
    const double w = size(rng_);
    const double h = size(rng_);
    std::uniform_real_distribution<double> ux(0.0, kVirtualImageWidth - w);
    std::uniform_real_distribution<double> uy(0.0, kVirtualImageHeight - h);
    const double x = ux(rng_);
    const double y = uy(rng_);
    return {x, y, x + w, y + h};
  }

  std::vector<double> feature(std::size_t cls) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> f(cfg_.feature_dim);
    for (std::size_t d = 0; d < cfg_.feature_dim; ++d) {
      f[d] = means_(static_cast<Eigen::Index>(cls), static_cast<Eigen::Index>(d)) +
             cfg_.feature_noise * noise(rng_);
    }
    return f;
  }

  // Rescales the box about its center so that IoU with the original equals a
  // draw from the positive range: growing by 1/sqrt(u) or shrinking by
  // sqrt(u) both give IoU = u.
  BoundingBox jitter(const BoundingBox& gt) {
    std::uniform_real_distribution<double> target(cfg_.iou_lo, cfg_.iou_hi);
    std::bernoulli_distribution grow(0.5);
    const double u = target(rng_);
    const bool try_grow = grow(rng_);
    const double cx = 0.5 * (gt.x1 + gt.x2);
    const double cy = 0.5 * (gt.y1 + gt.y2);
    auto scaled = [&](double s) {
      const double hw = 0.5 * gt.width() * s;
      const double hh = 0.5 * gt.height() * s;
      return BoundingBox{cx - hw, cy - hh, cx + hw, cy + hh};
    };
    if (try_grow) {
      const BoundingBox big = scaled(1.0 / std::sqrt(u));
      if (big.x1 >= 0.0 && big.y1 >= 0.0 && big.x2 <= kVirtualImageWidth &&
          big.y2 <= kVirtualImageHeight) {
        return big;
      }
    }
    return scaled(std::sqrt(u));
  }

  BoundingBox background_box(const Scene& scene) {
    for (std::size_t attempt = 0; attempt < cfg_.max_placement_retries; ++attempt) {
      const BoundingBox b = random_box();
      const bool clear = std::all_of(scene.objects.begin(), scene.objects.end(),
                                     [&](const GroundTruthObject& o) { return iou(b, o.box) < 0.3; });
      if (clear) return b;
    }
    throw Error(ErrorKind::Generation, "could not place a background proposal in " +
                                           scene.image_id + " after " +
                                           std::to_string(cfg_.max_placement_retries) + " tries");
  }

  const SynthConfig& cfg_;
  std::mt19937_64 rng_;
  Eigen::MatrixXd means_;
};

}  // namespace

SyntheticDataset generate_synthetic(const SynthConfig& cfg, std::size_t num_images) {
  cfg.validate();
  if (num_images == 0) throw Error(ErrorKind::InvalidConfig, "num_images must be >= 1");
  SyntheticDataset out{cfg.classes(), {}, {}};
  out.scenes.reserve(num_images);
  std::vector<double> feats;
  SceneSampler sampler(cfg);
  for (std::size_t i = 0; i < num_images; ++i) sampler.sample(i, out, feats);

  const auto rows = static_cast<Eigen::Index>(out.proposals.labels.size());
  const auto cols = static_cast<Eigen::Index>(cfg.feature_dim);
  out.proposals.features =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          feats.data(), rows, cols);
  return out;
}

std::pair<SyntheticDataset, SyntheticDataset> split_dataset(const SyntheticDataset& ds,
                                                            std::size_t first_count) {
  if (first_count > ds.scenes.size()) {
    throw Error(ErrorKind::InvalidConfig, "split point beyond the scene list");
  }
  SyntheticDataset a{ds.classes, {}, {}};
  SyntheticDataset b{ds.classes, {}, {}};
  a.scenes.assign(ds.scenes.begin(), ds.scenes.begin() + static_cast<std::ptrdiff_t>(first_count));
  b.scenes.assign(ds.scenes.begin() + static_cast<std::ptrdiff_t>(first_count), ds.scenes.end());
  std::vector<std::size_t> rows_a, rows_b;
  for (std::size_t r = 0; r < ds.proposals.size(); ++r) {
    (ds.proposals.scene_index[r] < first_count ? rows_a : rows_b).push_back(r);
  }
  a.proposals = ds.proposals.select(rows_a);
  b.proposals = ds.proposals.select(rows_b);
  for (auto& s : b.proposals.scene_index) s -= first_count;
  return {std::move(a), std::move(b)};
}

Json scenes_to_json(const ClassTable& classes, std::span<const Scene> scenes) {
  Json arr = Json::array();
  for (const auto& s : scenes) {
    Json objs = Json::array();
    for (const auto& o : s.objects) {
      objs.push_back({{"class", classes.name(o.class_index)},
                      {"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}}});
    }
    arr.push_back({{"image_id", s.image_id},
                   {"width", s.image_width},
                   {"height", s.image_height},
                   {"objects", objs}});
  }
  return {{"format_version", kFormatVersion}, {"kind", "scenes"}, {"scenes", arr}};
}

std::vector<Scene> scenes_from_json(const Json& j, const ClassTable& classes) {
  std::vector<Scene> out;
  try {
    for (const auto& s : j.at("scenes")) {
      Scene scene{s.at("image_id").get<std::string>(), s.at("width").get<double>(),
                  s.at("height").get<double>(), {}};
      for (const auto& o : s.at("objects")) {
        const auto& b = o.at("box");
        scene.objects.push_back({{b.at(0).get<double>(), b.at(1).get<double>(),
                                  b.at(2).get<double>(), b.at(3).get<double>()},
                                 classes.index_of(o.at("class").get<std::string>())});
      }
      out.push_back(std::move(scene));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed scenes document: ") + e.what());
  }
  return out;
}

std::string proposals_to_csv(const ProposalBatch& batch, std::span<const Scene> scenes) {
  std::string out = "scene_id,label,source_object,x1,y1,x2,y2";
  for (Eigen::Index d = 0; d < batch.features.cols(); ++d) out += ",f" + std::to_string(d);
  out += '\n';
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto& b = batch.boxes[r];
    out += scenes[batch.scene_index[r]].image_id;
    out += ',' + std::to_string(batch.labels[r]) + ',' + std::to_string(batch.source_object[r]);
    for (double v : {b.x1, b.y1, b.x2, b.y2}) out += ',' + format_double(v);
    for (Eigen::Index d = 0; d < batch.features.cols(); ++d) {
      out += ',' + format_double(batch.features(static_cast<Eigen::Index>(r), d));
    }
    out += '\n';
  }
  return out;
}

ProposalBatch proposals_from_csv(const std::string& text, std::span<const Scene> scenes,
                                 std::size_t feature_dim) {
  std::unordered_map<std::string, std::size_t> scene_of;
  for (std::size_t i = 0; i < scenes.size(); ++i) scene_of.emplace(scenes[i].image_id, i);

  ProposalBatch out;
  std::vector<double> feats;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1)) {
      cells.push_back(rest.substr(0, pos));
    }
    cells.push_back(rest);
    if (cells.size() != 7 + feature_dim) {
      throw Error(ErrorKind::Parse, "proposal row " + std::to_string(row) + " has " +
                                        std::to_string(cells.size()) + " columns");
    }
    auto it = scene_of.find(std::string(cells[0]));
    if (it == scene_of.end()) {
      throw Error(ErrorKind::Parse, "proposal row " + std::to_string(row) + " names an unknown scene");
    }
    out.scene_index.push_back(it->second);
    out.labels.push_back(static_cast<std::size_t>(parse_double(cells[1])));
    out.source_object.push_back(static_cast<std::ptrdiff_t>(parse_double(cells[2])));
    out.boxes.push_back({parse_double(cells[3]), parse_double(cells[4]), parse_double(cells[5]),
                         parse_double(cells[6])});
    for (std::size_t d = 0; d < feature_dim; ++d) feats.push_back(parse_double(cells[7 + d]));
    ++row;
  }
  out.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      feats.data(), static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(feature_dim));
  return out;
}

void write_dataset(const std::filesystem::path& dir, const SynthConfig& cfg,
                   const std::map<std::string, SyntheticDataset>& splits, const Json& metadata) {
  std::filesystem::create_directories(dir);
  const ClassTable classes = cfg.classes();
  Json split_info = Json::object();
  for (const auto& [name, ds] : splits) {
    write_json(dir / (name + "_scenes.json"), scenes_to_json(classes, ds.scenes));
    write_file_atomic(dir / (name + "_proposals.csv"), proposals_to_csv(ds.proposals, ds.scenes));
    split_info[name] = {{"images", ds.scenes.size()}, {"proposals", ds.proposals.size()}};
  }
  write_json(dir / "dataset.json", {{"format_version", kFormatVersion},
                                    {"kind", "synthetic_dataset"},
                                    {"generator", to_json(cfg)},
                                    {"classes", classes.names()},
                                    {"splits", split_info},
                                    {"metadata", metadata}});
}

DatasetBundle read_dataset(const std::filesystem::path& dir) {
  DatasetBundle bundle;
  bundle.header = read_json(dir / "dataset.json");
  try {
    const ClassTable classes(bundle.header.at("classes").get<std::vector<std::string>>());
    const auto dim = bundle.header.at("generator").at("feature_dim").get<std::size_t>();
    for (const auto& [name, _] : bundle.header.at("splits").items()) {
      SyntheticDataset ds{classes, scenes_from_json(read_json(dir / (name + "_scenes.json")), classes), {}};
      ds.proposals = proposals_from_csv(read_file(dir / (name + "_proposals.csv")), ds.scenes, dim);
      bundle.splits.emplace(name, std::move(ds));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed dataset header: ") + e.what());
  }
  return bundle;
}

}  // namespace wce
