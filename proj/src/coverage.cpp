#include "chanprobe/coverage.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace chanprobe {

namespace {

std::vector<double> column_maxima(const ActivationTrace& trace, const std::vector<std::size_t>& columns) {
  std::vector<double> out(columns.size(), -std::numeric_limits<double>::infinity());
  const auto n = static_cast<std::ptrdiff_t>(columns.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto c = columns[static_cast<std::size_t>(k)];
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < trace.num_samples(); ++r) best = std::max(best, static_cast<double>(trace.at(r, c)));
    out[static_cast<std::size_t>(k)] = best;
  }
  return out;
}

std::vector<std::size_t> columns_of(const ActivationTrace& trace, const std::vector<ChannelRef>& universe) {
  std::vector<std::size_t> cols;
  cols.reserve(universe.size());
  for (const auto& c : universe) cols.push_back(trace.column_of(c));
  return cols;
}

}  // namespace

std::vector<double> upper_bounds(const ActivationTrace& train, const std::vector<ChannelRef>& universe) {
  if (train.num_samples() == 0) throw std::invalid_argument("upper bounds need a nonempty training trace");
  return column_maxima(train, columns_of(train, universe));
}

CoverageReport boundary_coverage(const ActivationTrace& train, const ActivationTrace& test,
                                 const std::vector<ChannelRef>& universe) {
  if (!train.same_schema(test)) throw TraceError(TraceErrorKind::schema, "train and test layer schemas differ");
  if (universe.empty()) throw std::invalid_argument("coverage universe is empty");
  CoverageReport report;
  report.universe = universe;
  report.upper_bounds = upper_bounds(train, universe);
  report.test_maxima = column_maxima(test, columns_of(test, universe));
  report.covered.resize(universe.size());
  std::size_t hits = 0;
  for (std::size_t k = 0; k < universe.size(); ++k) {
    report.covered[k] = report.test_maxima[k] > report.upper_bounds[k];
    hits += report.covered[k] ? 1 : 0;
  }
  report.fraction = static_cast<double>(hits) / static_cast<double>(universe.size());
  return report;
}

double CoverageReport::fraction_over(const std::vector<ChannelRef>& subset) const {
  if (subset.empty()) throw std::invalid_argument("coverage subset is empty");
  std::size_t hits = 0;
  for (const auto& c : subset) {
    auto it = std::find(universe.begin(), universe.end(), c);
    if (it == universe.end()) throw std::invalid_argument("channel not in coverage universe");
    hits += covered[static_cast<std::size_t>(it - universe.begin())] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(subset.size());
}

std::vector<ChannelRef> coverage_universe(const ActivationTrace& trace, const std::vector<std::string>& layer_names) {
  if (layer_names.empty()) return trace.all_channels();
  std::vector<std::size_t> layers;
  for (const auto& name : layer_names) layers.push_back(trace.find_layer(name));
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  std::vector<ChannelRef> out;
  for (auto l : layers) {
    for (std::size_t c = 0; c < trace.layers()[l].channels; ++c) out.push_back(ChannelRef{l, c, trace.layers()[l].name});
  }
  return out;
}

namespace {

nlohmann::ordered_json channel_json(const ChannelRef& c) {
  nlohmann::ordered_json j;
  j["layer"] = c.layer_name;
  j["channel"] = c.channel_index;
  return j;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

nlohmann::ordered_json to_json(const CoverageReport& report) {
  nlohmann::ordered_json j;
  j["fraction"] = report.fraction;
  auto covered = nlohmann::ordered_json::array();
  auto bounds = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < report.universe.size(); ++k) {
    if (report.covered[k]) covered.push_back(channel_json(report.universe[k]));
    auto b = channel_json(report.universe[k]);
    b["upper"] = report.upper_bounds[k];
    if (std::isfinite(report.test_maxima[k])) {
      b["test_max"] = report.test_maxima[k];
    } else {
      b["test_max"] = nullptr;
    }
    bounds.push_back(std::move(b));
  }
  j["covered"] = std::move(covered);
  j["bounds"] = std::move(bounds);
  return j;
}

std::string to_csv(const CoverageReport& report) {
  std::string out = "layer,channel,upper_bound,test_max,covered\n";
  for (std::size_t k = 0; k < report.universe.size(); ++k) {
    const auto& c = report.universe[k];
    out += c.layer_name + "," + std::to_string(c.channel_index) + "," + format_double(report.upper_bounds[k]) + "," +
           (std::isfinite(report.test_maxima[k]) ? format_double(report.test_maxima[k]) : std::string()) + "," +
           (report.covered[k] ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace chanprobe
