#pragma once

// Momentum-SGD training of a small softmax proposal classifier.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wce/class_table.hpp"
#include "wce/dataset.hpp"
#include "wce/json.hpp"
#include "wce/loss.hpp"
#include "wce/sampler.hpp"

namespace wce {

enum class Architecture { Linear, Mlp };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

/// Affine map; `weight` is (outputs x inputs).
struct Layer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// Linear: one layer. Mlp: hidden layer with ReLU, then the output layer.
struct ClassifierModel {
  Architecture arch = Architecture::Linear;
  std::size_t feature_dim = 0;
  std::size_t hidden_dim = 0;
  ClassTable classes = ClassTable::driving();
  std::vector<Layer> layers;

  /// Rows of `features` are proposals.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& features) const;
};

/// Glorot-uniform weights, zero biases.
ClassifierModel init_model(Architecture arch, std::size_t feature_dim, const ClassTable& classes,
                           std::uint64_t seed, std::size_t hidden_dim = 16);

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  /// Images per batch.
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  LossConfigd loss;
  MiningConfig mining;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t batches = 0;
  std::size_t skipped = 0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  ClassifierModel model;
  TrainingLog log;
};

/// Groups consecutive scenes, `images_per_batch` at a time.
std::vector<ProposalBatch> make_batches(const ProposalBatch& proposals, std::size_t images_per_batch);

struct ParameterGradient {
  double loss = 0.0;
  std::vector<Layer> layers;
};

/// batch_loss over the given rows and its gradient for every parameter.
ParameterGradient loss_gradient(const ClassifierModel& model, const Eigen::MatrixXd& features,
                                std::span<const std::size_t> labels, const LossConfigd& loss);

/// v <- mu v - lr g; theta <- theta + v, for every tensor.
void momentum_step(std::vector<Layer>& params, std::vector<Layer>& velocity,
                   const std::vector<Layer>& grads, double lr, double mu);

/// Epoch loop: seeded batch shuffle, mining, mean loss, momentum update.
/// Throws ErrorKind::Divergence on a non-finite loss or parameter.
TrainResult train(ClassifierModel model, std::span<const ProposalBatch> batches,
                  const TrainConfig& cfg);

/// Softmax probabilities, one row per proposal.
Eigen::MatrixXd predict(const ClassifierModel& model, const Eigen::MatrixXd& features);

Json to_json(const ClassifierModel& model);
ClassifierModel model_from_json(const Json& j);
Json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);
Json to_json(const TrainingLog& log);

}  // namespace wce
