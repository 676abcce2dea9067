#pragma once

// Representative channel selection. A channel c is indirectly tested by any
// member of its delta set, the same-layer channels whose correlation with c
// reaches theta. Picking the smallest set that meets every delta set is a
// minimum hitting set problem; greedy_select approximates it and
// brute_force_select solves small instances exactly.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <boost/dynamic_bitset.hpp>

#include "chanprobe/correlation.hpp"
#include "chanprobe/trace.hpp"
#include "json.hpp"

namespace chanprobe {

enum class SelectionPolicy {
  greedy_max,  // largest uncovered gain first; carries the ln(n)+1 bound
  greedy_min,  // smallest uncovered gain among uncovered channels
  exact,
};

const char* to_string(SelectionPolicy policy);
SelectionPolicy parse_selection_policy(const std::string& text);

struct SelectionProblem {
  /// Channels under test, sorted by (layer_index, channel_index).
  std::vector<ChannelRef> universe;
  double theta = 1.0;
  CorrelationMode mode = CorrelationMode::absolute;
  /// delta[i]: sorted positions in `universe` that can stand in for universe[i].
  std::vector<std::vector<std::size_t>> delta;
};

struct SelectionResult {
  double theta = 1.0;
  SelectionPolicy policy = SelectionPolicy::greedy_max;
  /// Positions in the problem universe, in pick order.
  std::vector<std::size_t> selected;
  std::vector<ChannelRef> selected_channels;
  boost::dynamic_bitset<> covered;
  bool feasible = false;

  double covered_fraction() const;
};

/// Delta sets over every channel of `layers` at threshold theta in (0, 1].
/// Correlations are computed on the whole trace, within each layer.
SelectionProblem build_delta(const ActivationTrace& trace, std::span<const std::size_t> layers, double theta,
                             CorrelationMode mode = CorrelationMode::absolute);

/// Same, from precomputed per-layer correlations (one entry per layer, all in
/// the same mode). Channels with zero variance get a singleton delta set.
SelectionProblem build_delta(std::span<const PairCorrelations> layers, double theta);

SelectionResult greedy_select(const SelectionProblem& problem,
                              SelectionPolicy policy = SelectionPolicy::greedy_max);

inline constexpr std::size_t kMaxExactUniverse = 20;

/// Minimum hitting set by exhaustive search in order of increasing size; the
/// lexicographically smallest minimum set is returned. Throws
/// std::invalid_argument if the universe exceeds kMaxExactUniverse.
SelectionResult brute_force_select(const SelectionProblem& problem);

/// True when every universe member's delta set contains a selected channel.
bool hits_every_delta(const SelectionProblem& problem, std::span<const std::size_t> selected);

nlohmann::ordered_json to_json(const SelectionResult& result);

}  // namespace chanprobe
