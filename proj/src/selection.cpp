#include "chanprobe/selection.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>

namespace chanprobe {

const char* to_string(SelectionPolicy policy) {
  switch (policy) {
    case SelectionPolicy::greedy_max: return "greedy-max";
    case SelectionPolicy::greedy_min: return "greedy-min";
    case SelectionPolicy::exact: return "exact";
  }
  return "unknown";
}

SelectionPolicy parse_selection_policy(const std::string& text) {
  if (text == "greedy-max") return SelectionPolicy::greedy_max;
  if (text == "greedy-min") return SelectionPolicy::greedy_min;
  throw std::invalid_argument("unknown policy '" + text + "' (expected greedy-max|greedy-min)");
}

double SelectionResult::covered_fraction() const {
  if (covered.empty()) return 0.0;
  return static_cast<double>(covered.count()) / static_cast<double>(covered.size());
}

SelectionProblem build_delta(std::span<const PairCorrelations> layers, double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("theta must lie in (0, 1]");
  SelectionProblem problem;
  problem.theta = theta;
  if (!layers.empty()) problem.mode = layers.front().mode;

  std::vector<const PairCorrelations*> ordered;
  for (const auto& pc : layers) {
    if (pc.mode != problem.mode) throw std::invalid_argument("build_delta: mixed correlation modes");
    ordered.push_back(&pc);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->layer_index < b->layer_index; });
  for (std::size_t k = 1; k < ordered.size(); ++k) {
    if (ordered[k]->layer_index == ordered[k - 1]->layer_index) {
      throw std::invalid_argument("build_delta: layer '" + ordered[k]->layer_name + "' given twice");
    }
  }

  for (const auto* pc : ordered) {
    const std::size_t base = problem.universe.size();
    for (std::size_t c = 0; c < pc->channels; ++c) {
      problem.universe.push_back(ChannelRef{pc->layer_index, c, pc->layer_name});
    }
    for (std::size_t i = 0; i < pc->channels; ++i) {
      std::vector<std::size_t> members;
      for (std::size_t j = 0; j < pc->channels; ++j) {
        if (i == j || (!pc->pair_degenerate(i, j) && pc->at(i, j) >= theta)) members.push_back(base + j);
      }
      problem.delta.push_back(std::move(members));
    }
  }
  return problem;
}

SelectionProblem build_delta(const ActivationTrace& trace, std::span<const std::size_t> layers, double theta,
                             CorrelationMode mode) {
  if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("theta must lie in (0, 1]");
  std::vector<PairCorrelations> correlations;
  correlations.reserve(layers.size());
  for (auto layer : layers) correlations.push_back(layer_correlations(trace, layer, mode));
  return build_delta(correlations, theta);
}

namespace {

std::vector<boost::dynamic_bitset<>> delta_bitsets(const SelectionProblem& problem) {
  const std::size_t n = problem.universe.size();
  if (problem.delta.size() != n) throw std::invalid_argument("delta/universe size mismatch");
  std::vector<boost::dynamic_bitset<>> sets(n, boost::dynamic_bitset<>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : problem.delta[i]) {
      if (j >= n) throw std::invalid_argument("delta member out of range");
      sets[i].set(j);
    }
  }
  return sets;
}

void attach_channels(const SelectionProblem& problem, SelectionResult& result) {
  result.selected_channels.clear();
  for (auto s : result.selected) result.selected_channels.push_back(problem.universe[s]);
}

}  // namespace

SelectionResult greedy_select(const SelectionProblem& problem, SelectionPolicy policy) {
  if (policy == SelectionPolicy::exact) return brute_force_select(problem);
  const std::size_t n = problem.universe.size();
  const auto sets = delta_bitsets(problem);

  SelectionResult result;
  result.theta = problem.theta;
  result.policy = policy;
  result.covered.resize(n);
  boost::dynamic_bitset<> chosen(n);

  while (result.covered.count() < n) {
    std::size_t best = n;
    std::size_t best_gain = 0;
    for (std::size_t c = 0; c < n; ++c) {
      if (chosen.test(c)) continue;
      if (policy == SelectionPolicy::greedy_min && result.covered.test(c)) continue;
      const std::size_t gain = (sets[c] - result.covered).count();
      if (gain == 0) continue;
      const bool better = best == n || (policy == SelectionPolicy::greedy_max ? gain > best_gain : gain < best_gain);
      if (better) {
        best = c;
        best_gain = gain;
      }
    }
    if (best == n) break;  // no pick makes progress: some channel is unreachable
    result.covered |= sets[best];
    chosen.set(best);
    result.selected.push_back(best);
  }
  result.feasible = result.covered.count() == n;
  attach_channels(problem, result);
  return result;
}

bool hits_every_delta(const SelectionProblem& problem, std::span<const std::size_t> selected) {
  std::vector<bool> in_set(problem.universe.size(), false);
  for (auto s : selected) in_set.at(s) = true;
  return std::all_of(problem.delta.begin(), problem.delta.end(), [&](const auto& members) {
    return std::any_of(members.begin(), members.end(), [&](std::size_t m) { return in_set[m]; });
  });
}

SelectionResult brute_force_select(const SelectionProblem& problem) {
  const std::size_t n = problem.universe.size();
  if (n > kMaxExactUniverse) {
    throw std::invalid_argument("exact selection limited to " + std::to_string(kMaxExactUniverse) +
                                " channels, got " + std::to_string(n));
  }
  if (problem.delta.size() != n) throw std::invalid_argument("delta/universe size mismatch");
  std::vector<std::uint32_t> masks(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : problem.delta[i]) masks[i] |= std::uint32_t{1} << j;
  }

  SelectionResult result;
  result.theta = problem.theta;
  result.policy = SelectionPolicy::exact;
  result.covered.resize(n);

  const bool any_empty = std::any_of(masks.begin(), masks.end(), [](auto m) { return m == 0; });
  if (!any_empty) {
    // Combinations of each size are visited in lexicographic order, so the
    // first hit is the lexicographically smallest minimum set.
    std::vector<std::size_t> combo;
    for (std::size_t k = 0; k <= n && !result.feasible; ++k) {
      combo.resize(k);
      std::iota(combo.begin(), combo.end(), std::size_t{0});
      while (true) {
        std::uint32_t set = 0;
        for (auto c : combo) set |= std::uint32_t{1} << c;
        const bool hits = std::all_of(masks.begin(), masks.end(), [&](auto m) { return (m & set) != 0; });
        if (hits) {
          result.selected = combo;
          result.feasible = true;
          break;
        }
        // Advance to the next k-combination of {0..n-1}.
        std::size_t pos = k;
        while (pos > 0 && combo[pos - 1] == n - k + pos - 1) --pos;
        if (pos == 0) break;
        ++combo[pos - 1];
        for (std::size_t q = pos; q < k; ++q) combo[q] = combo[q - 1] + 1;
      }
    }
  }
  for (auto s : result.selected) {
    for (auto m : problem.delta[s]) result.covered.set(m);
  }
  attach_channels(problem, result);
  return result;
}

nlohmann::ordered_json to_json(const SelectionResult& result) {
  nlohmann::ordered_json j;
  j["theta"] = result.theta;
  j["policy"] = to_string(result.policy);
  auto selected = nlohmann::ordered_json::array();
  for (const auto& c : result.selected_channels) {
    nlohmann::ordered_json entry;
    entry["layer"] = c.layer_name;
    entry["channel"] = c.channel_index;
    selected.push_back(std::move(entry));
  }
  j["selected"] = std::move(selected);
  j["covered_fraction"] = result.covered_fraction();
  j["feasible"] = result.feasible;
  return j;
}

}  // namespace chanprobe
