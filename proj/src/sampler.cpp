#include "wce/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "wce/error.hpp"

namespace wce {

std::string to_string(Selection s) { return s == Selection::Hardest ? "hardest" : "random"; }

Selection parse_selection(const std::string& s) {
  if (iequals(s, "hardest")) return Selection::Hardest;
  if (iequals(s, "random")) return Selection::Random;
  throw Error(ErrorKind::InvalidConfig, "unknown mining selection '" + s + "'");
}

void MiningConfig::validate() const {
  if (!(bg_per_fg > 0.0) || !std::isfinite(bg_per_fg)) {
    throw Error(ErrorKind::InvalidConfig, "bg_per_fg must be finite and > 0");
  }
}

std::vector<std::size_t> mine_batch(std::span<const std::size_t> labels,
                                    std::span<const double> losses, const MiningConfig& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  if (labels.size() != losses.size()) {
    throw Error(ErrorKind::InvalidInput, "losses do not align with proposals");
  }
  std::vector<std::size_t> selected, background;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] == 0 ? background : selected).push_back(i);
  }
  if (selected.empty()) throw Error(ErrorKind::EmptyForeground, "batch has no foreground proposal");

  const auto quota = std::min(
      static_cast<std::size_t>(std::floor(cfg.bg_per_fg * static_cast<double>(selected.size()))),
      background.size());

  if (cfg.selection == Selection::Hardest) {
    std::stable_sort(background.begin(), background.end(),
                     [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  } else {
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: the first `quota` slots become a uniform sample.
    for (std::size_t i = 0; i < quota; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, background.size() - 1);
      std::swap(background[i], background[pick(rng)]);
    }
  }
  selected.insert(selected.end(), background.begin(),
                  background.begin() + static_cast<std::ptrdiff_t>(quota));
  std::sort(selected.begin(), selected.end());
  return selected;
}

}  // namespace wce
