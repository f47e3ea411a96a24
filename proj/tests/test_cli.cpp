#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "../tools/commands.hpp"
#include "wce/dataset.hpp"
#include "wce/io.hpp"
#include "wce/weights.hpp"

using namespace wce;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures{WCE_FIXTURE_DIR};

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Fresh scratch directory per test case.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("wce_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

void small_dataset(const Scratch& s, const std::string& name = "data") {
  const auto r = run({"synth", "--out", s / name, "--train-images", "300", "--eval-images", "100",
                      "--num-classes", "3", "--ratio", "0.5", "--seed", "4"});
  REQUIRE(r.code == 0);
}

}  // namespace

TEST_CASE("stats from a label fixture") {
  Scratch s("stats");
  const auto r = run({"stats", "--labels", (kFixtures / "three_frames.json").string(), "--out",
                      s / "stats.json", "--plot-csv", s / "plot.csv"});
  REQUIRE(r.code == 0);
  const Json doc = read_json(s / "stats.json");
  CHECK(doc.at("format_version") == 1);
  CHECK(doc.at("image_count") == 3);
  const auto stats = class_stats_from_json(doc);
  CHECK(stats.counts[stats.classes.index_of("Car")] == 3);
  CHECK(stats.frequencies[stats.classes.index_of("Car")] == 1.0);
  CHECK(doc.at("skip_report").at("total") == 4);
  CHECK(doc.at("metadata").at("inputs").at("labels").get<std::string>().size() == 64);
  CHECK(read_file(s / "plot.csv").rfind("class,count,frequency,log10_count\nCar,3,1,", 0) == 0);

  const auto jsonl = run({"stats", "--labels", (kFixtures / "three_frames.jsonl").string(), "--format",
                          "simple_jsonl", "--out", s / "stats2.json"});
  REQUIRE(jsonl.code == 0);
  CHECK(read_json(s / "stats2.json").at("classes") == doc.at("classes"));
}

TEST_CASE("stats failures") {
  Scratch s("stats_fail");
  const auto missing = run({"stats", "--labels", s / "nope.json", "--out", s / "x.json"});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("file not found") != std::string::npos);
  CHECK(std::count(missing.err.begin(), missing.err.end(), '\n') == 1);

  const auto empty = run({"stats", "--labels", (kFixtures / "empty.json").string(), "--out", s / "x.json"});
  CHECK(empty.code == 2);
  CHECK(empty.err.find("no scenes") != std::string::npos);
  CHECK(!fs::exists(s / "x.json"));

  CHECK(run({"stats", "--out", s / "x.json"}).code == 1);
  CHECK(run({"stats"}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({}).code == 1);
  CHECK(run({"--version"}).code == 0);
}

TEST_CASE("weights command") {
  Scratch s("weights");
  SUBCASE("balanced") {
    REQUIRE(run({"weights", "--scheme", "balanced", "--manual", "Truck=5", "--manual", "Bus=5", "--manual",
                 "Person=5", "--manual", "Motor=5", "--manual", "Bike=5", "--out", s / "w.json"})
                .code == 0);
    const auto w = weight_vector_from_json(read_json(s / "w.json"));
    CHECK(w[0] == 1.0);
    CHECK(w.at("Car") == 1.0);
    CHECK(w.at("Rider") == 1.0);
    for (auto n : {"Truck", "Bus", "Person", "Motor", "Bike"}) CHECK(w.at(n) == 5.0);
  }
  SUBCASE("uniform") {
    REQUIRE(run({"weights", "--out", s / "w.json"}).code == 0);
    const auto w = weight_vector_from_json(read_json(s / "w.json"));
    CHECK((w.values.array() == 1.0).all());
    CHECK(w.values.size() == 8);
  }
  SUBCASE("effective number matches the library") {
    small_dataset(s);
    REQUIRE(run({"stats", "--dataset", s / "data", "--out", s / "stats.json"}).code == 0);
    REQUIRE(run({"weights", "--stats", s / "stats.json", "--scheme", "effective-number", "--beta", "0.9",
                 "--out", s / "w.json"})
                .code == 0);
    const auto stats = class_stats_from_json(read_json(s / "stats.json"));
    CHECK(weight_vector_from_json(read_json(s / "w.json")).values ==
          effective_number_weights(stats, 0.9).values);
  }
  SUBCASE("usage errors") {
    CHECK(run({"weights", "--scheme", "inverse-linear", "--out", s / "w.json"}).code == 1);
    CHECK(run({"weights", "--scheme", "balanced", "--manual", "Tram=2", "--out", s / "w.json"}).code == 1);
    CHECK(run({"weights", "--scheme", "balanced", "--manual", "Bike", "--out", s / "w.json"}).code == 1);
    CHECK(run({"weights", "--scheme", "sqrt", "--out", s / "w.json"}).code == 1);
    CHECK(run({"weights", "--k", "abc", "--out", s / "w.json"}).code == 1);
  }
}

TEST_CASE("synth, train, eval, report") {
  Scratch s("pipeline");
  small_dataset(s);
  const auto header = read_json(s / "data/dataset.json");
  CHECK(header.at("splits").at("train").at("images") == 300);
  CHECK(header.at("splits").at("eval").at("images") == 100);

  REQUIRE(run({"stats", "--dataset", s / "data", "--out", s / "stats.json"}).code == 0);
  REQUIRE(run({"weights", "--stats", s / "stats.json", "--scheme", "inverse-linear", "--out", s / "w.json"})
              .code == 0);
  const auto trained = run({"train", "--dataset", s / "data", "--weights", s / "w.json", "--epochs", "3",
                            "--out", s / "model.json"});
  REQUIRE(trained.code == 0);
  CHECK(fs::exists(s / "model.json.log.json"));
  const Json model = read_json(s / "model.json");
  CHECK(model.at("weights").at("scheme") == "inverse_linear");
  CHECK(model.at("metadata").at("config").at("seed") == 0);

  REQUIRE(run({"eval", "--model", s / "model.json", "--dataset", s / "data", "--out", s / "r1.json",
               "--dump-detections", s / "dets.jsonl"})
              .code == 0);
  const Json report = read_json(s / "r1.json");
  CHECK(report.at("label") == "inverse_linear");
  CHECK(report.at("calibration").at("achieved_fppi").get<double>() <= 1.0);

  REQUIRE(run({"train", "--dataset", s / "data", "--focal-alpha", "2", "--epochs", "3", "--out",
               s / "focal.json"})
              .code == 0);
  REQUIRE(run({"eval", "--model", s / "focal.json", "--dataset", s / "data", "--out", s / "r2.json"}).code == 0);
  CHECK(read_json(s / "r2.json").at("label") == "focal");

  const auto table = run({"report", s / "r1.json", s / "r2.json", "--format", "markdown"});
  REQUIRE(table.code == 0);
  CHECK(table.out.find("| Object Class") == 0);
  CHECK(table.out.find("inverse_linear") != std::string::npos);
  CHECK(table.out.find("| Overall") != std::string::npos);
  CHECK(std::count(table.out.begin(), table.out.end(), '\n') == 2 + 3 + 2);

  const auto relabeled = run({"report", s / "r1.json", s / "r2.json", "--labels", "A,B", "--format", "csv"});
  CHECK(relabeled.out.rfind("Object Class,A,B\n", 0) == 0);
  CHECK(run({"report", s / "r1.json", "--labels", "A,B"}).code == 1);
  CHECK(run({"report", s / "missing.json"}).code == 2);
}

TEST_CASE("eval from a detections file") {
  Scratch s("eval_dets");
  const auto dets = kFixtures / "three_frames_detections.jsonl";
  const auto r = run({"eval", "--detections", dets.string(), "--labels",
                      (kFixtures / "three_frames.json").string(), "--out", s / "r.json"});
  REQUIRE(r.code == 0);
  const Json doc = read_json(s / "r.json");
  CHECK(doc.at("overall_recall") == 1.0);
  CHECK(doc.at("calibration").at("achieved_fppi") == 0.0);
  CHECK(doc.at("label") == "three_frames_detections");
  CHECK(run({"eval", "--detections", dets.string(), "--out", s / "r.json"}).code == 1);
}

TEST_CASE("zero learning rate keeps the initial model") {
  Scratch s("lr0");
  small_dataset(s);
  REQUIRE(run({"train", "--dataset", s / "data", "--lr", "0", "--epochs", "2", "--out", s / "a.json"}).code == 0);
  REQUIRE(run({"train", "--dataset", s / "data", "--lr", "0", "--epochs", "5", "--out", s / "b.json"}).code == 0);
  CHECK(read_json(s / "a.json").at("model") == read_json(s / "b.json").at("model"));
}

TEST_CASE("divergence exit code") {
  Scratch s("diverge");
  small_dataset(s);
  const auto r = run({"train", "--dataset", s / "data", "--lr", "1e308", "--out", s / "m.json"});
  CHECK(r.code == 3);
  CHECK(r.err.find("non-finite") != std::string::npos);
  CHECK(!fs::exists(s / "m.json"));
}

TEST_CASE("repeated runs are byte-identical") {
  Scratch s("determinism");
  for (const std::string tag : {"a", "b"}) {
    small_dataset(s, "data_" + tag);
    REQUIRE(run({"stats", "--dataset", s / ("data_" + tag), "--out", s / ("stats_" + tag + ".json")}).code == 0);
    REQUIRE(run({"train", "--dataset", s / ("data_" + tag), "--epochs", "2", "--seed", "9", "--arch", "mlp",
                 "--out", s / ("model_" + tag + ".json")})
                .code == 0);
    REQUIRE(run({"eval", "--model", s / ("model_" + tag + ".json"), "--dataset", s / ("data_" + tag),
                 "--out", s / ("report_" + tag + ".json")})
                .code == 0);
  }
  for (const std::string f : {"data_%/train_proposals.csv", "data_%/dataset.json", "stats_%.json",
                              "model_%.json", "report_%.json"}) {
    auto a = f, b = f;
    a.replace(a.find('%'), 1, "a");
    b.replace(b.find('%'), 1, "b");
    CAPTURE(f);
    CHECK(read_file(s / a) == read_file(s / b));
  }
}
