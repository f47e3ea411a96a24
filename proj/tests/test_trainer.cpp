#include <doctest.h>

#include <cmath>
#include <random>

#include "wce/error.hpp"
#include "wce/trainer.hpp"

using namespace wce;

namespace {

const ClassTable kTwo = ClassTable::with_background({"A", "B"});

// 60 proposals over 6 scenes: 20 per class, well apart in feature space.
ProposalBatch separable(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  const double centers[3][2] = {{0, 0}, {3, 0}, {0, 3}};
  ProposalBatch p;
  p.features.resize(60, 2);
  for (std::size_t i = 0; i < 60; ++i) {
    const std::size_t label = i % 3;
    const auto r = static_cast<Eigen::Index>(i);
    p.features(r, 0) = centers[label][0] + noise(rng);
    p.features(r, 1) = centers[label][1] + noise(rng);
    p.labels.push_back(label);
    p.scene_index.push_back(i / 10);
    p.source_object.push_back(label ? 0 : -1);
    p.boxes.push_back({0, 0, 1, 1});
  }
  return p;
}

bool same_params(const ClassifierModel& a, const ClassifierModel& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weight != b.layers[i].weight || a.layers[i].bias != b.layers[i].bias) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("initialization") {
  std::vector<std::string> names;
  for (int i = 1; i <= 24; ++i) names.push_back("c" + std::to_string(i));
  const auto table = ClassTable::with_background(names);
  const auto a = init_model(Architecture::Linear, 40, table, 11);
  const auto b = init_model(Architecture::Linear, 40, table, 11);
  CHECK(same_params(a, b));
  CHECK(!same_params(a, init_model(Architecture::Linear, 40, table, 12)));

  const auto& w = a.layers[0].weight;
  CHECK(w.size() == 1000);
  const double bound = std::sqrt(6.0 / (40 + 25));
  CHECK(w.cwiseAbs().maxCoeff() <= bound);
  CHECK(w.cwiseAbs().maxCoeff() > 0.9 * bound);
  CHECK(a.layers[0].bias.isZero(0.0));

  const auto mlp = init_model(Architecture::Mlp, 5, kTwo, 1, 7);
  REQUIRE(mlp.layers.size() == 2);
  CHECK(mlp.layers[0].weight.rows() == 7);
  CHECK(mlp.layers[1].weight.rows() == 3);
  CHECK(mlp.layers[1].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 10));
  CHECK(mlp.layers[1].bias.isZero(0.0));
}

TEST_CASE("predict") {
  ClassifierModel m = init_model(Architecture::Linear, 2, ClassTable::with_background({"A"}), 0);
  SUBCASE("zero weights give uniform probabilities") {
    m.layers[0].weight.setZero();
    const auto p = predict(m, Eigen::MatrixXd::Random(4, 2));
    CHECK((p.array() == 0.5).all());
  }
  SUBCASE("hand 2x2 case") {
    m.layers[0].weight = Eigen::Matrix2d::Identity();
    Eigen::MatrixXd x(1, 2);
    x << std::log(3.0), 0.0;
    const auto p = predict(m, x);
    CHECK(p(0, 0) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(p(0, 1) == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("rows sum to one") {
    const auto p = predict(init_model(Architecture::Mlp, 2, kTwo, 3), Eigen::MatrixXd::Random(20, 2) * 10);
    for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("dimension mismatch") { CHECK_THROWS_AS(predict(m, Eigen::MatrixXd::Ones(1, 3)), Error); }
}

TEST_CASE("parameter gradient matches central differences") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  for (auto arch : {Architecture::Linear, Architecture::Mlp}) {
    auto model = init_model(arch, 3, kTwo, 9, 5);
    for (auto& l : model.layers) l.bias = Eigen::VectorXd::Random(l.bias.size()) * 0.1;
    Eigen::MatrixXd x(6, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    const std::vector<std::size_t> labels{0, 1, 2, 0, 2, 1};
    LossConfigd cfg;
    cfg.static_weights = Eigen::Vector3d(1, 3, 0.5);
    cfg.focal_alpha = 1.5;
    const auto g = loss_gradient(model, x, labels, cfg);

    auto eval = [&](const ClassifierModel& m) {
      std::vector<Eigen::Index> t(labels.begin(), labels.end());
      return batch_loss(m.logits(x), t, cfg);
    };
    const double h = 1e-6;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
      for (Eigen::Index k = 0; k < model.layers[li].weight.size(); ++k) {
        auto up = model, down = model;
        up.layers[li].weight.data()[k] += h;
        down.layers[li].weight.data()[k] -= h;
        const double numeric = (eval(up) - eval(down)) / (2 * h);
        CHECK(g.layers[li].weight.data()[k] == doctest::Approx(numeric).epsilon(1e-6).scale(1e-3));
      }
      for (Eigen::Index k = 0; k < model.layers[li].bias.size(); ++k) {
        auto up = model, down = model;
        up.layers[li].bias[k] += h;
        down.layers[li].bias[k] -= h;
        const double numeric = (eval(up) - eval(down)) / (2 * h);
        CHECK(g.layers[li].bias[k] == doctest::Approx(numeric).epsilon(1e-6).scale(1e-3));
      }
    }
  }
}

TEST_CASE("single hand-computed step") {
  ClassifierModel m = init_model(Architecture::Linear, 2, ClassTable::with_background({"A"}), 0);
  m.layers[0].weight << 0.5, -0.25, -0.5, 1.0;
  m.layers[0].bias << 0.1, -0.1;
  ProposalBatch b;
  b.features.resize(2, 2);
  b.features << 1, 2, -1, 0.5;
  b.labels = {1, 0};
  b.scene_index = {0, 0};
  b.source_object = {0, -1};
  b.boxes.assign(2, {0, 0, 1, 1});

  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 1;
  const std::vector<ProposalBatch> batches{b};
  const auto out = train(m, batches, cfg);
  // Reference from a 40-digit evaluation of the softmax cross-entropy update.
  const auto& w = out.model.layers[0].weight;
  const auto& bias = out.model.layers[0].bias;
  CHECK(w(0, 0) == doctest::Approx(0.44898569604332092462).epsilon(1e-14));
  CHECK(w(0, 1) == doctest::Approx(-0.25126347514134063573).epsilon(1e-14));
  CHECK(w(1, 0) == doctest::Approx(-0.44898569604332092462).epsilon(1e-14));
  CHECK(w(1, 1) == doctest::Approx(1.0012634751413406357).epsilon(1e-14));
  CHECK(bias[0] == doctest::Approx(0.12959780226093493664).epsilon(1e-14));
  CHECK(bias[1] == doctest::Approx(-0.12959780226093493664).epsilon(1e-14));
  CHECK(out.log.epochs.size() == 1);
  CHECK(out.log.epochs[0].batches == 1);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto data = separable(1);
  const auto batches = make_batches(data, 2);
  const auto model = init_model(Architecture::Mlp, 2, kTwo, 5);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 4;
  CHECK(same_params(train(model, batches, cfg).model, model));
}

TEST_CASE("zero momentum is plain SGD") {
  const auto data = separable(2);
  const std::vector<ProposalBatch> batches{data};
  auto model = init_model(Architecture::Linear, 2, kTwo, 5);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.0;
  cfg.epochs = 3;
  const auto trained = train(model, batches, cfg).model;
  // 20 backgrounds against 40 foregrounds: mining keeps every row
  for (int step = 0; step < 3; ++step) {
    const auto g = loss_gradient(model, data.features, data.labels, cfg.loss);
    model.layers[0].weight -= cfg.learning_rate * g.layers[0].weight;
    model.layers[0].bias -= cfg.learning_rate * g.layers[0].bias;
  }
  CHECK(trained.layers[0].weight.isApprox(model.layers[0].weight, 1e-14));
  CHECK(trained.layers[0].bias.isApprox(model.layers[0].bias, 1e-14));
}

TEST_CASE("velocity recurrence under a constant gradient") {
  std::vector<Layer> params{{Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Zero(2)}};
  std::vector<Layer> velocity = params;
  const std::vector<Layer> grads{{Eigen::MatrixXd::Constant(2, 3, 0.7), Eigen::VectorXd::Constant(2, -1.3)}};
  const double lr = 0.05, mu = 0.9;
  for (int k = 1; k <= 25; ++k) {
    momentum_step(params, velocity, grads, lr, mu);
    const double factor = -lr * (1 - std::pow(mu, k)) / (1 - mu);
    CHECK((velocity[0].weight.array() - factor * 0.7).abs().maxCoeff() < 1e-12);
    CHECK((velocity[0].bias.array() - factor * -1.3).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("training loss decreases on a separable problem") {
  const auto data = separable(3);
  const auto batches = make_batches(data, 2);
  CHECK(batches.size() == 3);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.9;
  cfg.epochs = 10;
  cfg.seed = 1;
  const auto out = train(init_model(Architecture::Linear, 2, kTwo, 2), batches, cfg);
  REQUIRE(out.log.epochs.size() == 10);
  for (std::size_t e = 1; e < 10; ++e) {
    CAPTURE(e);
    CHECK(out.log.epochs[e].mean_loss <= out.log.epochs[e - 1].mean_loss + 1e-3);
  }
  CHECK(out.log.epochs.back().mean_loss < 0.5 * out.log.epochs.front().mean_loss);
}

TEST_CASE("training is bit-reproducible") {
  auto cfg = SynthConfig::geometric(3, 2.0, 0.5);
  cfg.seed = 8;
  const auto ds = generate_synthetic(cfg, 120);
  const auto batches = make_batches(ds.proposals, 8);
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 77;
  tc.loss.static_weights = Eigen::Vector4d(1, 1, 2, 4);
  for (auto arch : {Architecture::Linear, Architecture::Mlp}) {
    const auto model = init_model(arch, cfg.feature_dim, ds.classes, 3);
    const auto a = train(model, batches, tc);
    const auto b = train(model, batches, tc);
    CHECK(same_params(a.model, b.model));
    CHECK(to_json(a.log) == to_json(b.log));
  }
}

TEST_CASE("batches without foreground are skipped") {
  auto data = separable(4);
  ProposalBatch bg_only = data.select(std::vector<std::size_t>{0, 3, 6});
  const std::vector<ProposalBatch> batches{bg_only, data};
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto out = train(init_model(Architecture::Linear, 2, kTwo, 0), batches, cfg);
  CHECK(out.log.epochs[0].skipped == 1);
  CHECK(out.log.epochs[0].batches == 1);
}

TEST_CASE("divergence is reported") {
  auto data = separable(5);
  data.features *= 10.0;
  const std::vector<ProposalBatch> batches{data};
  TrainConfig cfg;
  cfg.learning_rate = 1e308;
  cfg.epochs = 3;
  try {
    train(init_model(Architecture::Linear, 2, kTwo, 0), batches, cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Divergence);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("configuration errors") {
  TrainConfig cfg;
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.loss.static_weights = Eigen::Vector2d(1, 1);
  const std::vector<ProposalBatch> batches{separable(0)};
  CHECK_THROWS_AS(train(init_model(Architecture::Linear, 2, kTwo, 0), batches, cfg), Error);
  CHECK_THROWS_AS(train(init_model(Architecture::Linear, 3, kTwo, 0), batches, TrainConfig{}), Error);
  CHECK_THROWS_AS(parse_architecture("cnn"), Error);
}

TEST_CASE("make_batches groups consecutive scenes") {
  const auto data = separable(6);
  const auto batches = make_batches(data, 4);
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].size() == 40);
  CHECK(batches[1].size() == 20);
  CHECK(batches[1].scene_index.front() == 4);
}

TEST_CASE("model and config serialization round trip") {
  const auto model = init_model(Architecture::Mlp, 4, kTwo, 21, 6);
  const auto back = model_from_json(Json::parse(to_json(model).dump()));
  CHECK(same_params(model, back));
  CHECK(back.classes == model.classes);

  TrainConfig cfg;
  cfg.loss.static_weights = Eigen::Vector3d(1, 2.5, 1.0 / 3.0);
  cfg.mining.selection = Selection::Random;
  const auto cfg_back = train_config_from_json(Json::parse(to_json(cfg).dump()));
  CHECK(to_json(cfg_back) == to_json(cfg));
  CHECK_THROWS_AS(model_from_json(Json::parse(R"({"architecture": "linear"})")), Error);
}
