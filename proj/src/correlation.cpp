#include "chanprobe/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace chanprobe {

const char* to_string(CorrelationMode mode) {
  return mode == CorrelationMode::absolute ? "absolute" : "signed";
}

CorrelationMode parse_correlation_mode(const std::string& text) {
  if (text == "signed") return CorrelationMode::signed_value;
  if (text == "absolute") return CorrelationMode::absolute;
  throw std::invalid_argument("unknown correlation mode '" + text + "' (expected signed|absolute)");
}

namespace detail {

namespace {

double block_sum(const double* x, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc[0] += x[i];
    acc[1] += x[i + 1];
    acc[2] += x[i + 2];
    acc[3] += x[i + 3];
  }
  for (; i < n; ++i) acc[i % 4] += x[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

double block_dot(const double* x, const double* y, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc[0] += x[i] * y[i];
    acc[1] += x[i + 1] * y[i + 1];
    acc[2] += x[i + 2] * y[i + 2];
    acc[3] += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) acc[i % 4] += x[i] * y[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

}  // namespace

double fixed_sum(const double* x, std::size_t n) {
  double total = 0.0;
  for (std::size_t b = 0; b < n; b += kReduceBlock) {
    total += block_sum(x + b, std::min(kReduceBlock, n - b));
  }
  return total;
}

double fixed_dot(const double* x, const double* y, std::size_t n) {
  double total = 0.0;
  for (std::size_t b = 0; b < n; b += kReduceBlock) {
    total += block_dot(x + b, y + b, std::min(kReduceBlock, n - b));
  }
  return total;
}

double center_and_norm(std::span<double> values) {
  if (values.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const bool constant = *lo == *hi;
  const double mean = fixed_sum(values.data(), values.size()) / static_cast<double>(values.size());
  for (double& v : values) v -= mean;
  if (constant) return 0.0;
  return std::sqrt(fixed_dot(values.data(), values.data(), values.size()));
}

}  // namespace detail

namespace {

double coefficient_from(double cross, double norm_x, double norm_y) {
  if (norm_x == 0.0 || norm_y == 0.0) return 0.0;
  return std::clamp(cross / (norm_x * norm_y), -1.0, 1.0);
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("pearson: need at least two observations");
  std::vector<double> cx(x.begin(), x.end());
  std::vector<double> cy(y.begin(), y.end());
  const double nx = detail::center_and_norm(cx);
  const double ny = detail::center_and_norm(cy);
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return coefficient_from(detail::fixed_dot(cx.data(), cy.data(), cx.size()), nx, ny);
}

double PairCorrelations::at(std::size_t i, std::size_t j) const {
  if (i == j || i >= channels || j >= channels) {
    throw std::out_of_range("pair (" + std::to_string(i) + ", " + std::to_string(j) + ") not in layer");
  }
  if (i > j) std::swap(i, j);
  return coefficients[pair_index(i, j, channels)];
}

std::vector<ChannelPair> PairCorrelations::pairs() const {
  std::vector<ChannelPair> out;
  out.reserve(coefficients.size());
  for (std::size_t i = 0; i < channels; ++i) {
    for (std::size_t j = i + 1; j < channels; ++j) {
      out.push_back(ChannelPair{i, j, coefficients[pair_index(i, j, channels)]});
    }
  }
  return out;
}

PairCorrelations layer_correlations(const ActivationTrace& trace, std::span<const std::size_t> rows,
                                    std::size_t layer, CorrelationMode mode, std::string source) {
  if (layer >= trace.layers().size()) {
    throw TraceError(TraceErrorKind::schema, "unknown layer index " + std::to_string(layer));
  }
  if (rows.size() < kMinCorrelationRows) {
    throw std::invalid_argument("correlation source has " + std::to_string(rows.size()) +
                                " rows; at least " + std::to_string(kMinCorrelationRows) + " required");
  }
  const std::size_t n = trace.layers()[layer].channels;
  const std::size_t offset = trace.layer_offset(layer);
  const std::size_t m = rows.size();

  PairCorrelations pc;
  pc.layer_index = layer;
  pc.layer_name = trace.layers()[layer].name;
  pc.channels = n;
  pc.mode = mode;
  pc.source = std::move(source);
  pc.coefficients.assign(pair_count(n), 0.0);
  pc.degenerate.assign(n, false);

  // Column-major, centered copy of the layer.
  std::vector<double> columns(n * m);
  std::vector<double> norms(n, 0.0);
  const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < ni; ++c) {
    double* col = columns.data() + static_cast<std::size_t>(c) * m;
    for (std::size_t r = 0; r < m; ++r) {
      col[r] = static_cast<double>(trace.at(rows[r], offset + static_cast<std::size_t>(c)));
    }
    norms[static_cast<std::size_t>(c)] = detail::center_and_norm(std::span<double>(col, m));
  }
  for (std::size_t c = 0; c < n; ++c) pc.degenerate[c] = norms[c] == 0.0;

  const bool absolute = mode == CorrelationMode::absolute;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t is = 0; is < ni; ++is) {
    const auto i = static_cast<std::size_t>(is);
    const double* ci = columns.data() + i * m;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* cj = columns.data() + j * m;
      double r = coefficient_from(detail::fixed_dot(ci, cj, m), norms[i], norms[j]);
      pc.coefficients[pair_index(i, j, n)] = absolute ? std::fabs(r) : r;
    }
  }
  return pc;
}

PairCorrelations layer_correlations(const ActivationTrace& trace, std::size_t layer, CorrelationMode mode) {
  std::vector<std::size_t> rows(trace.num_samples());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return layer_correlations(trace, rows, layer, mode, "all");
}

PairCorrelations layer_correlations(const ClassSlice& slice, std::size_t layer, CorrelationMode mode) {
  if (slice.parent == nullptr) throw std::invalid_argument("class slice has no parent trace");
  const auto& names = slice.parent->class_names();
  const std::string name = slice.class_id < names.size() ? names[slice.class_id] : std::to_string(slice.class_id);
  return layer_correlations(*slice.parent, slice.rows, layer, mode, "class:" + name);
}

std::size_t topk_size(double k_fraction, std::size_t pairs) {
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) {
    throw std::invalid_argument("k fraction must lie in (0, 1]");
  }
  const double exact = k_fraction * static_cast<double>(pairs);
  auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  return std::clamp<std::size_t>(k, pairs == 0 ? 0 : 1, pairs);
}

TopKPairs topk_pairs(const PairCorrelations& pc, double k_fraction) {
  const std::size_t target = topk_size(k_fraction, pc.coefficients.size());
  std::vector<ChannelPair> eligible;
  eligible.reserve(pc.coefficients.size());
  for (const auto& p : pc.pairs()) {
    if (!pc.pair_degenerate(p.first, p.second)) eligible.push_back(p);
  }
  if (eligible.empty()) {
    throw std::invalid_argument("layer '" + pc.layer_name + "' has no eligible channel pairs");
  }
  const std::size_t k = std::min(target, eligible.size());
  // pairs() yields ascending (i, j), so a stable sort keeps the tie order.
  std::stable_sort(eligible.begin(), eligible.end(),
                   [](const ChannelPair& a, const ChannelPair& b) { return a.coefficient > b.coefficient; });
  eligible.resize(k);
  return TopKPairs{pc.layer_index, pc.layer_name, k_fraction, std::move(eligible)};
}

double corr_distance(const PairCorrelations& a, const PairCorrelations& b, const TopKPairs& over) {
  if (a.layer_index != b.layer_index || a.layer_index != over.layer_index || a.channels != b.channels ||
      a.layer_name != b.layer_name || a.layer_name != over.layer_name) {
    throw std::invalid_argument("corr_distance: layer mismatch");
  }
  double total = 0.0;
  for (const auto& p : over.pairs) total += std::fabs(a.at(p.first, p.second) - b.at(p.first, p.second));
  return total;
}

namespace {

nlohmann::ordered_json pair_array(const std::vector<ChannelPair>& pairs) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& p : pairs) out.push_back({p.first, p.second, p.coefficient});
  return out;
}

}  // namespace

nlohmann::ordered_json to_json(const PairCorrelations& pc) {
  nlohmann::ordered_json j;
  j["layer"] = pc.layer_name;
  j["pairs"] = pair_array(pc.pairs());
  return j;
}

nlohmann::ordered_json to_json(const TopKPairs& topk) {
  nlohmann::ordered_json j;
  j["layer"] = topk.layer_name;
  j["pairs"] = pair_array(topk.pairs);
  return j;
}

}  // namespace chanprobe
