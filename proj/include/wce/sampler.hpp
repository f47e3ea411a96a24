#pragma once

// Hard negative mining at a fixed foreground:background ratio.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wce/dataset.hpp"

namespace wce {

enum class Selection { Hardest, Random };

std::string to_string(Selection s);
Selection parse_selection(const std::string& s);

struct MiningConfig {
  double bg_per_fg = 3.0;
  Selection selection = Selection::Hardest;

  void validate() const;
};

/// Every foreground index plus floor(bg_per_fg * num_fg) backgrounds: the
/// highest-loss ones (ties to the lower index) or a seeded uniform sample.
/// The result is sorted ascending. Throws ErrorKind::EmptyForeground when
/// there is no foreground proposal.
std::vector<std::size_t> mine_batch(std::span<const std::size_t> labels,
                                    std::span<const double> losses, const MiningConfig& cfg,
                                    std::uint64_t seed = 0);

inline std::vector<std::size_t> mine_batch(const ProposalBatch& proposals,
                                           std::span<const double> losses,
                                           const MiningConfig& cfg, std::uint64_t seed = 0) {
  return mine_batch(proposals.labels, losses, cfg, seed);
}

}  // namespace wce
