#include "wce/weights.hpp"

#include <cmath>
#include <set>

#include "wce/error.hpp"

namespace wce {

namespace {

std::set<std::size_t> resolve_floor(const ClassTable& classes,
                                    const std::vector<std::string>& names) {
  std::set<std::size_t> out{ClassTable::kBackground};
  for (const auto& n : names) out.insert(classes.index_of(n));
  return out;
}

void check_stats(const ClassStats& stats) {
  if (stats.counts.size() != stats.classes.size() ||
      stats.frequencies.size() != stats.classes.size()) {
    throw Error(ErrorKind::InvalidInput, "class statistics do not match their class table");
  }
}

WeightVector make_weights(const ClassTable& classes, std::string scheme) {
  return WeightVector{classes, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(classes.size())),
                      std::move(scheme), Json::object()};
}

// Shared shape of the two inverse-frequency schemes.
template <typename Formula>
WeightVector inverse_frequency(const ClassStats& stats, const std::vector<std::string>& floor_names,
                               double min_weight, std::string scheme, Formula&& formula) {
  check_stats(stats);
  const auto floored = resolve_floor(stats.classes, floor_names);
  auto w = make_weights(stats.classes, std::move(scheme));
  for (std::size_t j = 1; j < stats.classes.size(); ++j) {
    if (stats.frequencies[j] <= 0.0) {
      throw Error(ErrorKind::ZeroFrequency,
                  "class '" + stats.classes.name(j) + "' has zero frequency");
    }
    if (floored.count(j)) continue;
    w.values[static_cast<Eigen::Index>(j)] = std::max(formula(j), min_weight);
  }
  w.params["majority_floor"] = floor_names;
  if (min_weight > 0.0) w.params["min_weight"] = min_weight;
  return w;
}

}  // namespace

ClassStats ClassStats::from_counts(ClassTable classes, std::size_t image_count,
                                   std::vector<std::uint64_t> counts, std::string split) {
  if (image_count == 0) throw Error(ErrorKind::EmptyDataset, "class statistics need >= 1 image");
  if (counts.size() != classes.size()) {
    throw Error(ErrorKind::InvalidInput, "count vector does not match class table");
  }
  counts[ClassTable::kBackground] = 0;
  std::vector<double> freq(counts.size(), 0.0);
  for (std::size_t j = 1; j < counts.size(); ++j) {
    freq[j] = static_cast<double>(counts[j]) / static_cast<double>(image_count);
  }
  return ClassStats{std::move(classes), image_count, std::move(counts), std::move(freq),
                    std::move(split)};
}

std::size_t ClassStats::most_frequent() const {
  std::size_t best = 1;
  for (std::size_t j = 2; j < counts.size(); ++j) {
    if (counts[j] > counts[best]) best = j;
  }
  return best;
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::Uniform: return "uniform";
    case Scheme::Balanced: return "balanced";
    case Scheme::InverseLinear: return "inverse_linear";
    case Scheme::InverseLog: return "inverse_log";
    case Scheme::EffectiveNumber: return "effective_number";
  }
  return "?";
}

Scheme parse_scheme(const std::string& s) {
  std::string t = s;
  for (auto& c : t) {
    if (c == '-') c = '_';
  }
  for (auto v : {Scheme::Uniform, Scheme::Balanced, Scheme::InverseLinear, Scheme::InverseLog,
                 Scheme::EffectiveNumber}) {
    if (iequals(t, to_string(v))) return v;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown weight scheme '" + s + "'");
}

std::string to_string(CountBasis b) { return b == CountBasis::Total ? "total" : "per_image"; }

CountBasis parse_count_basis(const std::string& s) {
  if (iequals(s, "total")) return CountBasis::Total;
  if (iequals(s, "per_image") || iequals(s, "per-image")) return CountBasis::PerImage;
  throw Error(ErrorKind::InvalidConfig, "unknown count basis '" + s + "'");
}

void SchemeConfig::validate() const {
  switch (scheme) {
    case Scheme::InverseLinear:
      if (!(k > 0.0) || !std::isfinite(k)) throw Error(ErrorKind::InvalidConfig, "k must be > 0");
      break;
    case Scheme::InverseLog:
      if (!std::isfinite(q)) throw Error(ErrorKind::InvalidConfig, "q must be finite");
      if (log_base && !(*log_base > 0.0 && *log_base != 1.0)) {
        throw Error(ErrorKind::InvalidConfig, "log base must be positive and != 1");
      }
      break;
    case Scheme::EffectiveNumber:
      if (!(beta >= 0.0 && beta < 1.0)) {
        throw Error(ErrorKind::InvalidConfig, "beta must lie in [0, 1)");
      }
      break;
    case Scheme::Balanced:
      for (const auto& [name, w] : manual_weights) {
        if (!std::isfinite(w) || w <= 0.0) {
          throw Error(ErrorKind::InvalidConfig, "manual weight for '" + name + "' must be > 0");
        }
      }
      break;
    case Scheme::Uniform: break;
  }
  if (!(min_weight >= 0.0)) throw Error(ErrorKind::InvalidConfig, "min_weight must be >= 0");
}

WeightVector uniform_weights(const ClassTable& classes) {
  return make_weights(classes, to_string(Scheme::Uniform));
}

WeightVector balanced_weights(const ClassTable& classes,
                              const std::map<std::string, double>& manual) {
  auto w = make_weights(classes, to_string(Scheme::Balanced));
  Json m = Json::object();
  for (const auto& [name, value] : manual) {
    const std::size_t idx = classes.index_of(name);
    if (idx == ClassTable::kBackground) {
      throw Error(ErrorKind::InvalidConfig, "balanced weights apply to foreground classes only");
    }
    w.values[static_cast<Eigen::Index>(idx)] = value;
    m[classes.name(idx)] = value;
  }
  w.params["manual_weights"] = m;
  return w;
}

WeightVector inverse_linear_weights(const ClassStats& stats, double k,
                                    const std::vector<std::string>& majority_floor,
                                    double min_weight) {
  if (!(k > 0.0)) throw Error(ErrorKind::InvalidConfig, "k must be > 0");
  auto w = inverse_frequency(stats, majority_floor, min_weight, to_string(Scheme::InverseLinear),
                             [&](std::size_t j) { return k / stats.frequencies[j]; });
  w.params["k"] = k;
  return w;
}

WeightVector inverse_log_weights(const ClassStats& stats, double q,
                                 const std::vector<std::string>& majority_floor,
                                 std::optional<double> log_base, double min_weight) {
  check_stats(stats);
  for (std::size_t j = 1; j < stats.classes.size(); ++j) {
    if (stats.frequencies[j] > 0.0 && !(q > stats.frequencies[j])) {
      throw Error(ErrorKind::InvalidConfig, "q must exceed the frequency of class '" +
                                                stats.classes.name(j) + "'");
    }
  }
  const double denom = log_base ? std::log(*log_base) : 1.0;
  auto w = inverse_frequency(stats, majority_floor, min_weight, to_string(Scheme::InverseLog),
                             [&](std::size_t j) {
                               const double l = std::log(q / stats.frequencies[j]);
                               return log_base ? l / denom : l;
                             });
  w.params["q"] = q;
  if (log_base) w.params["log_base"] = *log_base;
  return w;
}

double effective_number(double n, double beta) {
  return (1.0 - std::pow(beta, n)) / (1.0 - beta);
}

WeightVector effective_number_weights(const ClassStats& stats, double beta,
                                      std::optional<std::string> normalize_reference,
                                      CountBasis basis, bool literal) {
  check_stats(stats);
  if (!(beta >= 0.0 && beta < 1.0)) throw Error(ErrorKind::InvalidConfig, "beta must lie in [0, 1)");
  const auto& classes = stats.classes;
  std::vector<double> e(classes.size(), 1.0);
  for (std::size_t j = 1; j < classes.size(); ++j) {
    if (stats.counts[j] == 0) {
      throw Error(ErrorKind::ZeroFrequency, "class '" + classes.name(j) + "' has zero samples");
    }
    const double n = basis == CountBasis::Total ? static_cast<double>(stats.counts[j])
                                                : stats.frequencies[j];
    e[j] = effective_number(n, beta);
  }
  const std::size_t ref =
      normalize_reference ? classes.index_of(*normalize_reference) : stats.most_frequent();
  if (ref == ClassTable::kBackground) {
    throw Error(ErrorKind::InvalidConfig, "the normalization reference must be a foreground class");
  }

  auto w = make_weights(classes, to_string(Scheme::EffectiveNumber));
  for (std::size_t j = 1; j < classes.size(); ++j) {
    w.values[static_cast<Eigen::Index>(j)] = literal ? e[j] : e[ref] / e[j];
  }
  w.params["beta"] = beta;
  w.params["count_basis"] = to_string(basis);
  w.params["normalize_reference"] = classes.name(ref);
  if (literal) w.params["literal"] = true;
  return w;
}

WeightVector scheme_dispatch(const SchemeConfig& cfg, const ClassStats& stats,
                             const ClassTable& classes) {
  cfg.validate();
  if (cfg.scheme != Scheme::Uniform && cfg.scheme != Scheme::Balanced &&
      !(stats.classes == classes)) {
    throw Error(ErrorKind::InvalidInput, "class statistics were computed for a different table");
  }
  const std::vector<std::string> floor =
      cfg.majority_floor ? *cfg.majority_floor
                         : std::vector<std::string>{classes.name(stats.most_frequent())};

  WeightVector w = [&] {
    switch (cfg.scheme) {
      case Scheme::Uniform: return uniform_weights(classes);
      case Scheme::Balanced: return balanced_weights(classes, cfg.manual_weights);
      case Scheme::InverseLinear:
        return inverse_linear_weights(stats, cfg.k, floor, cfg.min_weight);
      case Scheme::InverseLog:
        return inverse_log_weights(stats, cfg.q, floor, cfg.log_base, cfg.min_weight);
      case Scheme::EffectiveNumber:
        return effective_number_weights(stats, cfg.beta, cfg.normalize_reference,
                                        cfg.count_basis, cfg.literal_effective_number);
    }
    throw Error(ErrorKind::InvalidConfig, "unhandled scheme");
  }();
  w.params["stats_split"] = stats.split;
  w.params["stats_image_count"] = stats.image_count;
  return w;
}

Json to_json(const ClassStats& stats) {
  Json per_class = Json::array();
  for (std::size_t j = 1; j < stats.classes.size(); ++j) {
    per_class.push_back(
        {{"name", stats.classes.name(j)}, {"count", stats.counts[j]}, {"frequency", stats.frequencies[j]}});
  }
  return {{"format_version", kFormatVersion},
          {"kind", "class_stats"},
          {"split", stats.split},
          {"image_count", stats.image_count},
          {"background", stats.classes.name(0)},
          {"classes", per_class}};
}

ClassStats class_stats_from_json(const Json& j) {
  try {
    std::vector<std::string> names{j.at("background").get<std::string>()};
    std::vector<std::uint64_t> counts{0};
    for (const auto& c : j.at("classes")) {
      names.push_back(c.at("name").get<std::string>());
      counts.push_back(c.at("count").get<std::uint64_t>());
    }
    return ClassStats::from_counts(ClassTable(std::move(names)),
                                   j.at("image_count").get<std::size_t>(), std::move(counts),
                                   j.value("split", std::string("all")));
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed stats document: ") + e.what());
  }
}

Json to_json(const SchemeConfig& cfg) {
  Json j = {{"scheme", to_string(cfg.scheme)},
            {"k", cfg.k},
            {"q", cfg.q},
            {"beta", cfg.beta},
            {"manual_weights", cfg.manual_weights},
            {"min_weight", cfg.min_weight},
            {"count_basis", to_string(cfg.count_basis)},
            {"literal_effective_number", cfg.literal_effective_number}};
  j["log_base"] = cfg.log_base ? Json(*cfg.log_base) : Json(nullptr);
  j["normalize_reference"] = cfg.normalize_reference ? Json(*cfg.normalize_reference) : Json(nullptr);
  j["majority_floor"] = cfg.majority_floor ? Json(*cfg.majority_floor) : Json(nullptr);
  return j;
}

SchemeConfig scheme_config_from_json(const Json& j) {
  SchemeConfig cfg;
  try {
    cfg.scheme = parse_scheme(j.at("scheme").get<std::string>());
    cfg.k = j.value("k", cfg.k);
    cfg.q = j.value("q", cfg.q);
    cfg.beta = j.value("beta", cfg.beta);
    if (j.contains("manual_weights")) {
      cfg.manual_weights = j.at("manual_weights").get<std::map<std::string, double>>();
    }
    cfg.min_weight = j.value("min_weight", cfg.min_weight);
    if (j.contains("count_basis")) cfg.count_basis = parse_count_basis(j.at("count_basis"));
    cfg.literal_effective_number = j.value("literal_effective_number", false);
    if (j.contains("log_base") && !j.at("log_base").is_null()) cfg.log_base = j.at("log_base").get<double>();
    if (j.contains("normalize_reference") && !j.at("normalize_reference").is_null()) {
      cfg.normalize_reference = j.at("normalize_reference").get<std::string>();
    }
    if (j.contains("majority_floor") && !j.at("majority_floor").is_null()) {
      cfg.majority_floor = j.at("majority_floor").get<std::vector<std::string>>();
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed scheme config: ") + e.what());
  }
  return cfg;
}

Json to_json(const WeightVector& w) {
  Json classes = Json::array();
  for (std::size_t i = 0; i < w.classes.size(); ++i) {
    classes.push_back({{"name", w.classes.name(i)}, {"weight", w[i]}});
  }
  return {{"format_version", kFormatVersion},
          {"kind", "weights"},
          {"scheme", w.scheme},
          {"params", w.params},
          {"classes", classes}};
}

WeightVector weight_vector_from_json(const Json& j) {
  try {
    std::vector<std::string> names;
    std::vector<double> values;
    for (const auto& c : j.at("classes")) {
      names.push_back(c.at("name").get<std::string>());
      values.push_back(c.at("weight").get<double>());
    }
    WeightVector w{ClassTable(std::move(names)), Eigen::VectorXd(static_cast<Eigen::Index>(values.size())),
                   j.at("scheme").get<std::string>(), j.value("params", Json::object())};
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i]) || values[i] < 0.0) {
        throw Error(ErrorKind::InvalidInput, "weight for '" + w.classes.name(i) + "' is invalid");
      }
      w.values[static_cast<Eigen::Index>(i)] = values[i];
    }
    return w;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed weight document: ") + e.what());
  }
}

}  // namespace wce
