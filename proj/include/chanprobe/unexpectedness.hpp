#pragma once

// Unexpectedness: how far the within-layer channel correlations of generated
// data drift from those of the training data of the same class, measured as
// an L1 distance over the training data's top-k correlated pairs.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "chanprobe/correlation.hpp"
#include "chanprobe/trace.hpp"
#include "json.hpp"

namespace chanprobe {

/// Share of within-layer pairs kept as the reference set.
inline constexpr double kDefaultTopKFraction = 0.05;

enum class ScoreBasis { raw, normalized };
enum class ChannelAggregate { max, mean };

const char* to_string(ScoreBasis basis);
ScoreBasis parse_score_basis(const std::string& text);
const char* to_string(ChannelAggregate aggregate);
ChannelAggregate parse_channel_aggregate(const std::string& text);

struct UnexpectednessScore {
  double raw = 0.0;
  /// raw divided by the number of reference pairs.
  double normalized = 0.0;
  std::size_t topk_size = 0;
};

/// Scores `test` against `train` for one layer and one class of `train`.
/// The test class is matched by name. Throws TraceError(schema) when the
/// layer schemas differ and std::invalid_argument when either side has
/// fewer than kMinCorrelationRows rows of the class.
UnexpectednessScore unexpectedness_score(const ActivationTrace& train, const ActivationTrace& test,
                                         std::size_t layer, std::uint32_t class_id,
                                         double k_fraction = kDefaultTopKFraction);

/// Test data generated while sweeping one channel.
struct TestedTrace {
  std::size_t layer_index = 0;
  /// Unset when the caller does not know which channel produced the data.
  std::optional<std::size_t> channel_index;
  const ActivationTrace* trace = nullptr;
};

struct ReportEntry {
  std::size_t layer_index = 0;
  std::string layer_name;
  std::optional<std::size_t> channel_index;
  std::uint32_t class_id = 0;
  std::string class_name;
  UnexpectednessScore score;
  /// 1-based position in the report ordering.
  std::size_t rank = 0;
};

struct ChannelSummary {
  std::size_t layer_index = 0;
  std::string layer_name;
  std::optional<std::size_t> channel_index;
  double score = 0.0;
  std::size_t rank = 0;
};

struct UnexpectednessReport {
  ScoreBasis basis = ScoreBasis::raw;
  ChannelAggregate aggregate = ChannelAggregate::max;
  double k_fraction = kDefaultTopKFraction;
  /// Sorted by descending basis score; ties by (layer, channel, class).
  std::vector<ReportEntry> entries;
  /// One row per tested channel, aggregated over its classes, ranked the same way.
  std::vector<ChannelSummary> channels;
  /// Classes skipped for having too few rows.
  std::vector<std::string> warnings;
};

double basis_value(const UnexpectednessScore& score, ScoreBasis basis);

/// Scores every (tested channel, class) combination that has enough rows on
/// both sides and ranks them. Throws std::invalid_argument on empty input or
/// when the same channel is listed twice.
UnexpectednessReport rank_channels(const std::vector<TestedTrace>& tests, const ActivationTrace& train,
                                   double k_fraction = kDefaultTopKFraction, ScoreBasis basis = ScoreBasis::raw,
                                   ChannelAggregate aggregate = ChannelAggregate::max);

struct SubgroupDistances {
  /// Distinct subgroup ids, ascending; row/column order of `distance`.
  std::vector<std::uint32_t> groups;
  /// Symmetric, zero diagonal. Entry (g, h) averages the distance over g's
  /// reference pairs and the distance over h's.
  std::vector<std::vector<double>> distance;
};

/// Pairwise correlation distances between subgroups of one trace.
/// `grouping` assigns a subgroup id to every row.
SubgroupDistances subgroup_distance_study(const ActivationTrace& trace, const std::vector<std::uint32_t>& grouping,
                                          std::size_t layer, double k_fraction = kDefaultTopKFraction);

nlohmann::ordered_json to_json(const UnexpectednessReport& report);
/// One line per entry: layer,channel,class,rank,raw,normalized.
std::string to_csv(const UnexpectednessReport& report);

}  // namespace chanprobe
