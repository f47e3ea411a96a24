#include "wce/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "wce/error.hpp"

namespace wce {

std::string to_string(Architecture a) { return a == Architecture::Linear ? "linear" : "mlp"; }

Architecture parse_architecture(const std::string& s) {
  if (iequals(s, "linear")) return Architecture::Linear;
  if (iequals(s, "mlp")) return Architecture::Mlp;
  throw Error(ErrorKind::InvalidConfig, "unknown architecture '" + s + "'");
}

namespace {

struct Forward {
  Eigen::MatrixXd hidden_pre;  // mlp only
  Eigen::MatrixXd hidden;
  Eigen::MatrixXd logits;
};

Eigen::MatrixXd affine(const Eigen::MatrixXd& x, const Layer& l) {
  Eigen::MatrixXd out = x * l.weight.transpose();
  out.rowwise() += l.bias.transpose();
  return out;
}

Forward forward(const ClassifierModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != static_cast<Eigen::Index>(model.feature_dim)) {
    throw Error(ErrorKind::InvalidInput, "feature dimension " + std::to_string(x.cols()) +
                                             " does not match model input " +
                                             std::to_string(model.feature_dim));
  }
  Forward f;
  if (model.arch == Architecture::Linear) {
    f.logits = affine(x, model.layers[0]);
  } else {
    f.hidden_pre = affine(x, model.layers[0]);
    f.hidden = f.hidden_pre.cwiseMax(0.0);
    f.logits = affine(f.hidden, model.layers[1]);
  }
  return f;
}

Layer glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Layer l{Eigen::MatrixXd(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in)),
          Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fan_out))};
  for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = u(rng);
  }
  return l;
}

std::vector<Eigen::Index> as_targets(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<Eigen::Index> t(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw Error(ErrorKind::InvalidInput, "label out of range");
    t[i] = static_cast<Eigen::Index>(labels[i]);
  }
  return t;
}

bool finite(const std::vector<Layer>& layers) {
  return std::all_of(layers.begin(), layers.end(),
                     [](const Layer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

}  // namespace

Eigen::MatrixXd ClassifierModel::logits(const Eigen::MatrixXd& features) const {
  return forward(*this, features).logits;
}

ClassifierModel init_model(Architecture arch, std::size_t feature_dim, const ClassTable& classes,
                           std::uint64_t seed, std::size_t hidden_dim) {
  if (feature_dim == 0) throw Error(ErrorKind::InvalidConfig, "feature_dim must be > 0");
  if (arch == Architecture::Mlp && hidden_dim == 0) {
    throw Error(ErrorKind::InvalidConfig, "hidden_dim must be > 0");
  }
  std::mt19937_64 rng(seed);
  ClassifierModel m{arch, feature_dim, arch == Architecture::Mlp ? hidden_dim : 0, classes, {}};
  if (arch == Architecture::Linear) {
    m.layers.push_back(glorot(feature_dim, classes.size(), rng));
  } else {
    m.layers.push_back(glorot(feature_dim, hidden_dim, rng));
    m.layers.push_back(glorot(hidden_dim, classes.size(), rng));
  }
  return m;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::InvalidConfig, "learning_rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "momentum must lie in [0, 1)");
  }
  if (batch_size == 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
  if (epochs == 0) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
  loss.validate();
  mining.validate();
}

std::vector<ProposalBatch> make_batches(const ProposalBatch& proposals,
                                        std::size_t images_per_batch) {
  if (images_per_batch == 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
  std::vector<ProposalBatch> out;
  std::vector<std::size_t> rows;
  std::size_t current = 0;
  bool open = false;
  for (std::size_t r = 0; r < proposals.size(); ++r) {
    const std::size_t group = proposals.scene_index[r] / images_per_batch;
    if (open && group != current && !rows.empty()) {
      out.push_back(proposals.select(rows));
      rows.clear();
    }
    current = group;
    open = true;
    rows.push_back(r);
  }
  if (!rows.empty()) out.push_back(proposals.select(rows));
  return out;
}

ParameterGradient loss_gradient(const ClassifierModel& model, const Eigen::MatrixXd& features,
                                std::span<const std::size_t> labels, const LossConfigd& loss) {
  const Forward f = forward(model, features);
  const auto targets = as_targets(labels, model.classes.size());
  if (!f.logits.allFinite()) throw Error(ErrorKind::Divergence, "non-finite logits");
  const auto lg = batch_loss_and_grad(f.logits, targets, loss);
  const Eigen::MatrixXd g = lg.gradient;  // d loss / d logits, already divided by N

  ParameterGradient out;
  out.loss = lg.value;
  if (model.arch == Architecture::Linear) {
    out.layers.push_back({g.transpose() * features, g.colwise().sum().transpose()});
  } else {
    const Layer& top = model.layers[1];
    const Eigen::MatrixXd dh = (g * top.weight).cwiseProduct(
        (f.hidden_pre.array() > 0.0).cast<double>().matrix());
    out.layers.push_back({dh.transpose() * features, dh.colwise().sum().transpose()});
    out.layers.push_back({g.transpose() * f.hidden, g.colwise().sum().transpose()});
  }
  return out;
}

void momentum_step(std::vector<Layer>& params, std::vector<Layer>& velocity,
                   const std::vector<Layer>& grads, double lr, double mu) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i].weight = mu * velocity[i].weight - lr * grads[i].weight;
    velocity[i].bias = mu * velocity[i].bias - lr * grads[i].bias;
    params[i].weight += velocity[i].weight;
    params[i].bias += velocity[i].bias;
  }
}

TrainResult train(ClassifierModel model, std::span<const ProposalBatch> batches,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (batches.empty()) throw Error(ErrorKind::InvalidInput, "no training batches");
  for (const auto& b : batches) {
    if (b.features.cols() != static_cast<Eigen::Index>(model.feature_dim)) {
      throw Error(ErrorKind::InvalidInput, "batch feature dimension does not match the model");
    }
  }
  if (cfg.loss.static_weights.size() != 0 &&
      cfg.loss.static_weights.size() != static_cast<Eigen::Index>(model.classes.size())) {
    throw Error(ErrorKind::InvalidInput, "weight vector does not match the model's class table");
  }

  std::vector<Layer> velocity;
  for (const auto& l : model.layers) {
    velocity.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(batches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainingLog log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec{epoch, 0.0, 0, 0};
    double total = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const ProposalBatch& batch = batches[order[step]];
      const std::uint64_t mining_seed = rng();
      auto where = [&] {
        return "epoch " + std::to_string(epoch) + " batch " + std::to_string(step);
      };
      if (batch.num_foreground() == 0) {
        ++rec.skipped;
        continue;
      }

      const Eigen::MatrixXd logits = model.logits(batch.features);
      if (!logits.allFinite()) throw Error(ErrorKind::Divergence, "non-finite logits at " + where());
      std::vector<double> per_proposal(batch.size());
      for (std::size_t r = 0; r < batch.size(); ++r) {
        const auto row = static_cast<Eigen::Index>(r);
        per_proposal[r] = loss(softmax(logits.row(row).transpose()),
                               static_cast<Eigen::Index>(batch.labels[r]), cfg.loss);
      }
      const auto keep = mine_batch(batch.labels, per_proposal, cfg.mining, mining_seed);
      const ProposalBatch mined = batch.select(keep);

      const ParameterGradient grad = loss_gradient(model, mined.features, mined.labels, cfg.loss);
      if (!std::isfinite(grad.loss)) throw Error(ErrorKind::Divergence, "non-finite loss at " + where());
      momentum_step(model.layers, velocity, grad.layers, cfg.learning_rate, cfg.momentum);
      if (!finite(model.layers)) {
        throw Error(ErrorKind::Divergence, "non-finite parameters after " + where());
      }
      total += grad.loss;
      ++rec.batches;
    }
    rec.mean_loss = rec.batches > 0 ? total / static_cast<double>(rec.batches) : 0.0;
    log.epochs.push_back(rec);
  }
  return {std::move(model), std::move(log)};
}

Eigen::MatrixXd predict(const ClassifierModel& model, const Eigen::MatrixXd& features) {
  const Eigen::MatrixXd logits = model.logits(features);
  Eigen::MatrixXd probs(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    probs.row(r) = softmax(logits.row(r).transpose()).transpose();
  }
  return probs;
}

namespace {

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols) {
  if (j.size() != static_cast<std::size_t>(rows)) throw Error(ErrorKind::Parse, "matrix row count mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j.at(static_cast<std::size_t>(r));
    if (row.size() != static_cast<std::size_t>(cols)) throw Error(ErrorKind::Parse, "matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

Json to_json(const ClassifierModel& model) {
  Json layers = Json::array();
  for (const auto& l : model.layers) {
    layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", vector_to_json(l.bias)}});
  }
  return {{"architecture", to_string(model.arch)},
          {"feature_dim", model.feature_dim},
          {"hidden_dim", model.hidden_dim},
          {"classes", model.classes.names()},
          {"layers", layers}};
}

ClassifierModel model_from_json(const Json& j) {
  try {
    ClassifierModel m{parse_architecture(j.at("architecture").get<std::string>()),
                      j.at("feature_dim").get<std::size_t>(), j.at("hidden_dim").get<std::size_t>(),
                      ClassTable(j.at("classes").get<std::vector<std::string>>()), {}};
    std::vector<std::pair<std::size_t, std::size_t>> shapes;  // (out, in)
    if (m.arch == Architecture::Linear) {
      shapes = {{m.classes.size(), m.feature_dim}};
    } else {
      shapes = {{m.hidden_dim, m.feature_dim}, {m.classes.size(), m.hidden_dim}};
    }
    const Json& layers = j.at("layers");
    if (layers.size() != shapes.size()) throw Error(ErrorKind::Parse, "model has the wrong number of layers");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const auto out = static_cast<Eigen::Index>(shapes[i].first);
      const auto in = static_cast<Eigen::Index>(shapes[i].second);
      Layer l{matrix_from_json(layers[i].at("weight"), out, in), Eigen::VectorXd(out)};
      const auto bias = layers[i].at("bias").get<std::vector<double>>();
      if (bias.size() != static_cast<std::size_t>(out)) throw Error(ErrorKind::Parse, "bias length mismatch");
      for (Eigen::Index r = 0; r < out; ++r) l.bias[r] = bias[static_cast<std::size_t>(r)];
      m.layers.push_back(std::move(l));
    }
    if (!finite(m.layers)) throw Error(ErrorKind::InvalidInput, "model parameters are not finite");
    return m;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed model document: ") + e.what());
  }
}

Json to_json(const TrainConfig& cfg) {
  const auto& w = cfg.loss.static_weights;
  return {{"learning_rate", cfg.learning_rate},
          {"momentum", cfg.momentum},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"seed", cfg.seed},
          {"loss",
           {{"static_weights", std::vector<double>(w.data(), w.data() + w.size())},
            {"focal_alpha", cfg.loss.focal_alpha},
            {"prob_floor", cfg.loss.prob_floor}}},
          {"mining", {{"bg_per_fg", cfg.mining.bg_per_fg}, {"selection", to_string(cfg.mining.selection)}}}};
}

TrainConfig train_config_from_json(const Json& j) {
  try {
    TrainConfig cfg;
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.momentum = j.at("momentum").get<double>();
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    const auto w = j.at("loss").at("static_weights").get<std::vector<double>>();
    cfg.loss.static_weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    cfg.loss.focal_alpha = j.at("loss").at("focal_alpha").get<double>();
    cfg.loss.prob_floor = j.at("loss").at("prob_floor").get<double>();
    cfg.mining.bg_per_fg = j.at("mining").at("bg_per_fg").get<double>();
    cfg.mining.selection = parse_selection(j.at("mining").at("selection").get<std::string>());
    return cfg;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed train config: ") + e.what());
  }
}

Json to_json(const TrainingLog& log) {
  Json epochs = Json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"mean_loss", e.mean_loss},
                      {"batches", e.batches},
                      {"skipped", e.skipped}});
  }
  return {{"format_version", kFormatVersion}, {"kind", "training_log"}, {"epochs", epochs}};
}

}  // namespace wce
