#pragma once

// Within-layer Pearson correlations of channel intensities and top-k pair
// extraction.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "chanprobe/trace.hpp"
#include "json.hpp"

namespace chanprobe {

enum class CorrelationMode { signed_value, absolute };

const char* to_string(CorrelationMode mode);
CorrelationMode parse_correlation_mode(const std::string& text);

/// Minimum number of rows a correlation source must have.
inline constexpr std::size_t kMinCorrelationRows = 3;

namespace detail {

// Fixed-order reductions shared by every correlation path, so a coefficient
// computed pairwise and one computed inside a layer sweep are bit-identical.
// Rows are summed in blocks of kReduceBlock with four interleaved
// accumulators; block partials are then added in block order.
inline constexpr std::size_t kReduceBlock = 512;

double fixed_sum(const double* x, std::size_t n);
double fixed_dot(const double* x, const double* y, std::size_t n);

/// Centers `values` in place and returns the L2 norm of the result, or 0 when
/// every input value is identical.
double center_and_norm(std::span<double> values);

}  // namespace detail

/// Pearson coefficient in double precision, clamped to [-1, 1].
/// Returns 0 if either input has zero variance. Throws std::invalid_argument
/// on length mismatch or fewer than two elements.
double pearson(std::span<const double> x, std::span<const double> y);

struct ChannelPair {
  std::size_t first = 0;
  std::size_t second = 0;
  double coefficient = 0.0;

  bool operator==(const ChannelPair&) const = default;
};

/// Number of unordered pairs among n channels.
constexpr std::size_t pair_count(std::size_t n) { return n < 2 ? 0 : n * (n - 1) / 2; }

/// Index of pair (i, j), i < j, in row-major upper-triangle order.
constexpr std::size_t pair_index(std::size_t i, std::size_t j, std::size_t n) {
  return i * (2 * n - i - 1) / 2 + (j - i - 1);
}

struct PairCorrelations {
  std::size_t layer_index = 0;
  std::string layer_name;
  std::size_t channels = 0;
  CorrelationMode mode = CorrelationMode::signed_value;
  /// "all" or "class:<name>".
  std::string source;
  /// One coefficient per pair (i < j) in pair_index order.
  std::vector<double> coefficients;
  /// Zero-variance channels; all their pairs carry the sentinel 0.
  std::vector<bool> degenerate;

  double at(std::size_t i, std::size_t j) const;
  bool pair_degenerate(std::size_t i, std::size_t j) const { return degenerate[i] || degenerate[j]; }
  std::vector<ChannelPair> pairs() const;
};

struct TopKPairs {
  std::size_t layer_index = 0;
  std::string layer_name;
  double k_fraction = 0.0;
  std::vector<ChannelPair> pairs;
};

/// All within-layer pairs over the full trace.
PairCorrelations layer_correlations(const ActivationTrace& trace, std::size_t layer,
                                    CorrelationMode mode = CorrelationMode::signed_value);
/// All within-layer pairs over the rows of one class.
PairCorrelations layer_correlations(const ClassSlice& slice, std::size_t layer,
                                    CorrelationMode mode = CorrelationMode::signed_value);
/// Same as above over an explicit row subset of a trace.
PairCorrelations layer_correlations(const ActivationTrace& trace, std::span<const std::size_t> rows,
                                    std::size_t layer, CorrelationMode mode, std::string source);

/// ceil(k_fraction * pairs), with a small tolerance so k*n that is integral
/// up to rounding is not bumped by one.
std::size_t topk_size(double k_fraction, std::size_t pairs);

/// Highest-coefficient pairs, descending, ties by ascending (i, j).
/// Pairs touching a degenerate channel are not eligible; if fewer eligible
/// pairs than the target size exist, all eligible pairs are returned.
TopKPairs topk_pairs(const PairCorrelations& pc, double k_fraction);

/// Sum over `over` of |a(i,j) - b(i,j)|.
double corr_distance(const PairCorrelations& a, const PairCorrelations& b, const TopKPairs& over);

nlohmann::ordered_json to_json(const PairCorrelations& pc);
nlohmann::ordered_json to_json(const TopKPairs& topk);

}  // namespace chanprobe
