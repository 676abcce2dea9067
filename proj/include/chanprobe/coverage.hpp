#pragma once

// Channel boundary coverage: the share of channels whose training-set maximum
// intensity is strictly exceeded by at least one test input.

#include <cstddef>
#include <string>
#include <vector>

#include "chanprobe/trace.hpp"
#include "json.hpp"

namespace chanprobe {

struct CoverageReport {
  std::vector<ChannelRef> universe;
  /// Training maximum per universe channel.
  std::vector<double> upper_bounds;
  /// Largest test intensity per universe channel; -inf for an empty test suite.
  std::vector<double> test_maxima;
  std::vector<bool> covered;
  double fraction = 0.0;

  /// Coverage over a subset of this report's universe, without recomputation.
  double fraction_over(const std::vector<ChannelRef>& subset) const;
};

/// Per-channel maximum over all training rows. Throws std::invalid_argument
/// for an empty trace.
std::vector<double> upper_bounds(const ActivationTrace& train, const std::vector<ChannelRef>& universe);

/// Throws TraceError(schema) if the schemas differ and std::invalid_argument
/// for an empty universe or empty training trace.
CoverageReport boundary_coverage(const ActivationTrace& train, const ActivationTrace& test,
                                 const std::vector<ChannelRef>& universe);

/// Universe spanning every channel of the named layers, or of all layers when
/// `layer_names` is empty.
std::vector<ChannelRef> coverage_universe(const ActivationTrace& trace, const std::vector<std::string>& layer_names);

nlohmann::ordered_json to_json(const CoverageReport& report);
/// layer,channel,upper_bound,test_max,covered
std::string to_csv(const CoverageReport& report);

}  // namespace chanprobe
