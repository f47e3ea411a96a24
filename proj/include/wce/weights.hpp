#pragma once

// Static per-class loss weights derived from class statistics.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wce/class_table.hpp"
#include "wce/json.hpp"

namespace wce {

/// Instance counts n_j and per-image frequencies f_j = n_j / image_count for
/// the foreground classes. Vectors are indexed by class index; the
/// background slot (0) is unused and held at zero.
struct ClassStats {
  ClassTable classes;
  std::size_t image_count = 0;
  std::vector<std::uint64_t> counts;
  std::vector<double> frequencies;
  std::string split = "all";

  static ClassStats from_counts(ClassTable classes, std::size_t image_count,
                                std::vector<std::uint64_t> counts, std::string split = "all");

  /// Foreground class with the largest count (lowest index on ties).
  std::size_t most_frequent() const;
};

enum class Scheme { Uniform, Balanced, InverseLinear, InverseLog, EffectiveNumber };
enum class CountBasis { Total, PerImage };

std::string to_string(Scheme s);
Scheme parse_scheme(const std::string& s);
std::string to_string(CountBasis b);
CountBasis parse_count_basis(const std::string& s);

struct SchemeConfig {
  Scheme scheme = Scheme::Uniform;
  double k = 0.5;
  double q = 20.0;
  /// Logarithm base for inverse_log; nullopt means natural log.
  std::optional<double> log_base;
  double beta = 0.9;
  std::map<std::string, double> manual_weights;
  /// Class pinned to weight 1 by effective_number. Defaults to the most
  /// frequent class.
  std::optional<std::string> normalize_reference;
  /// Classes clamped to 1 by the inverse-frequency schemes. Defaults to
  /// {most frequent class}.
  std::optional<std::vector<std::string>> majority_floor;
  double min_weight = 0.0;
  CountBasis count_basis = CountBasis::Total;
  /// Use E_j itself instead of its normalized inverse.
  bool literal_effective_number = false;

  void validate() const;
};

/// Per-class weights, background included, with the scheme that produced them.
struct WeightVector {
  ClassTable classes;
  Eigen::VectorXd values;
  std::string scheme;
  Json params = Json::object();

  double operator[](std::size_t i) const { return values[static_cast<Eigen::Index>(i)]; }
  double at(const std::string& name) const { return (*this)[classes.index_of(name)]; }
};

WeightVector uniform_weights(const ClassTable& classes);

WeightVector balanced_weights(const ClassTable& classes, const std::map<std::string, double>& manual);

WeightVector inverse_linear_weights(const ClassStats& stats, double k,
                                    const std::vector<std::string>& majority_floor,
                                    double min_weight = 0.0);

WeightVector inverse_log_weights(const ClassStats& stats, double q,
                                 const std::vector<std::string>& majority_floor,
                                 std::optional<double> log_base = std::nullopt,
                                 double min_weight = 0.0);

/// E_j = (1 - beta^n_j) / (1 - beta); weights are E_ref / E_j so the
/// reference class lands on exactly 1.
WeightVector effective_number_weights(const ClassStats& stats, double beta,
                                      std::optional<std::string> normalize_reference = std::nullopt,
                                      CountBasis basis = CountBasis::Total, bool literal = false);

double effective_number(double n, double beta);

WeightVector scheme_dispatch(const SchemeConfig& cfg, const ClassStats& stats,
                             const ClassTable& classes);

Json to_json(const ClassStats& stats);
ClassStats class_stats_from_json(const Json& j);

Json to_json(const SchemeConfig& cfg);
SchemeConfig scheme_config_from_json(const Json& j);

Json to_json(const WeightVector& w);
WeightVector weight_vector_from_json(const Json& j);

}  // namespace wce
