#include "chanprobe/unexpectedness.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <stdexcept>
#include <tuple>

namespace chanprobe {

const char* to_string(ScoreBasis basis) { return basis == ScoreBasis::raw ? "raw" : "normalized"; }

ScoreBasis parse_score_basis(const std::string& text) {
  if (text == "raw") return ScoreBasis::raw;
  if (text == "normalized") return ScoreBasis::normalized;
  throw std::invalid_argument("unknown score basis '" + text + "' (expected raw|normalized)");
}

const char* to_string(ChannelAggregate aggregate) { return aggregate == ChannelAggregate::max ? "max" : "mean"; }

ChannelAggregate parse_channel_aggregate(const std::string& text) {
  if (text == "max") return ChannelAggregate::max;
  if (text == "mean") return ChannelAggregate::mean;
  throw std::invalid_argument("unknown aggregate '" + text + "' (expected max|mean)");
}

double basis_value(const UnexpectednessScore& score, ScoreBasis basis) {
  return basis == ScoreBasis::raw ? score.raw : score.normalized;
}

namespace {

std::optional<std::uint32_t> class_by_name(const ActivationTrace& trace, const std::string& name) {
  const auto& names = trace.class_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<std::uint32_t>(i);
  }
  return std::nullopt;
}

void require_compatible(const ActivationTrace& train, const ActivationTrace& test) {
  if (!train.same_schema(test)) throw TraceError(TraceErrorKind::schema, "train and test layer schemas differ");
  if (!train.has_labels() || !test.has_labels()) {
    throw TraceError(TraceErrorKind::schema, "unexpectedness needs labeled traces");
  }
}

// Rows of `test` whose class carries the given train class's name.
ClassSlice matching_slice(const ActivationTrace& train, const ActivationTrace& test, std::uint32_t class_id) {
  if (class_id >= train.class_names().size()) {
    throw TraceError(TraceErrorKind::schema, "unknown class id " + std::to_string(class_id));
  }
  const auto test_class = class_by_name(test, train.class_names()[class_id]);
  if (!test_class) return ClassSlice{&test, class_id, {}};
  return slice_by_class(test, *test_class);
}

UnexpectednessScore score_from(const PairCorrelations& train_pc, const TopKPairs& topk,
                               const PairCorrelations& test_pc) {
  UnexpectednessScore s;
  s.raw = corr_distance(train_pc, test_pc, topk);
  s.topk_size = topk.pairs.size();
  s.normalized = s.raw / static_cast<double>(s.topk_size);
  return s;
}

}  // namespace

UnexpectednessScore unexpectedness_score(const ActivationTrace& train, const ActivationTrace& test,
                                         std::size_t layer, std::uint32_t class_id, double k_fraction) {
  require_compatible(train, test);
  const auto train_slice = slice_by_class(train, class_id);
  const auto test_slice = matching_slice(train, test, class_id);
  const auto& name = train.class_names()[class_id];
  if (train_slice.rows.size() < kMinCorrelationRows || test_slice.rows.size() < kMinCorrelationRows) {
    throw std::invalid_argument("class '" + name + "' has " + std::to_string(train_slice.rows.size()) +
                                " train rows and " + std::to_string(test_slice.rows.size()) +
                                " test rows; at least " + std::to_string(kMinCorrelationRows) +
                                " needed on each side");
  }
  const auto train_pc = layer_correlations(train_slice, layer, CorrelationMode::signed_value);
  const auto topk = topk_pairs(train_pc, k_fraction);
  const auto test_pc = layer_correlations(test_slice, layer, CorrelationMode::signed_value);
  return score_from(train_pc, topk, test_pc);
}

namespace {

auto entry_key(const ReportEntry& e) {
  return std::tuple(e.layer_index, e.channel_index, e.class_id);
}

}  // namespace

UnexpectednessReport rank_channels(const std::vector<TestedTrace>& tests, const ActivationTrace& train,
                                   double k_fraction, ScoreBasis basis, ChannelAggregate aggregate) {
  if (tests.empty()) throw std::invalid_argument("rank_channels: no test traces");
  topk_size(k_fraction, 1);  // validates the fraction up front

  UnexpectednessReport report;
  report.basis = basis;
  report.aggregate = aggregate;
  report.k_fraction = k_fraction;

  std::set<std::pair<std::size_t, std::optional<std::size_t>>> seen;
  for (const auto& t : tests) {
    if (t.trace == nullptr) throw std::invalid_argument("rank_channels: null test trace");
    require_compatible(train, *t.trace);
    if (t.layer_index >= train.layers().size()) {
      throw TraceError(TraceErrorKind::schema, "unknown layer index " + std::to_string(t.layer_index));
    }
    if (t.channel_index && *t.channel_index >= train.layers()[t.layer_index].channels) {
      throw TraceError(TraceErrorKind::schema, "tested channel out of range");
    }
    if (!seen.emplace(t.layer_index, t.channel_index).second) {
      throw std::invalid_argument("rank_channels: channel listed twice");
    }
  }

  // Reference correlations depend only on (layer, class); compute each once.
  struct Reference {
    PairCorrelations pc;
    TopKPairs topk;
  };
  std::map<std::pair<std::size_t, std::uint32_t>, Reference> references;

  struct Task {
    const TestedTrace* test;
    std::uint32_t class_id;
    ClassSlice slice;
    const Reference* reference;
  };
  std::vector<Task> tasks;
  for (const auto& t : tests) {
    const auto& layer_name = train.layers()[t.layer_index].name;
    const std::string label =
        layer_name + ":" + (t.channel_index ? std::to_string(*t.channel_index) : std::string("?"));
    for (std::uint32_t cls = 0; cls < train.class_names().size(); ++cls) {
      auto slice = matching_slice(train, *t.trace, cls);
      if (slice.rows.empty()) continue;
      const auto& class_name = train.class_names()[cls];
      if (slice.rows.size() < kMinCorrelationRows) {
        report.warnings.push_back(label + " class '" + class_name + "': " + std::to_string(slice.rows.size()) +
                                  " test rows, skipped");
        continue;
      }
      auto key = std::pair(t.layer_index, cls);
      auto it = references.find(key);
      if (it == references.end()) {
        const auto train_slice = slice_by_class(train, cls);
        if (train_slice.rows.size() < kMinCorrelationRows) {
          report.warnings.push_back(label + " class '" + class_name + "': " +
                                    std::to_string(train_slice.rows.size()) + " train rows, skipped");
          continue;
        }
        auto pc = layer_correlations(train_slice, t.layer_index, CorrelationMode::signed_value);
        auto topk = topk_pairs(pc, k_fraction);
        it = references.emplace(key, Reference{std::move(pc), std::move(topk)}).first;
      }
      tasks.push_back(Task{&t, cls, std::move(slice), &it->second});
    }
    const auto test_names = t.trace->class_names();
    for (const auto& name : test_names) {
      if (!class_by_name(train, name)) report.warnings.push_back(label + " class '" + name + "': not in training data, skipped");
    }
  }

  report.entries.resize(tasks.size());
  const auto task_count = static_cast<std::ptrdiff_t>(tasks.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t k = 0; k < task_count; ++k) {
    const auto& task = tasks[static_cast<std::size_t>(k)];
    const auto test_pc = layer_correlations(task.slice, task.test->layer_index, CorrelationMode::signed_value);
    ReportEntry& e = report.entries[static_cast<std::size_t>(k)];
    e.layer_index = task.test->layer_index;
    e.layer_name = train.layers()[e.layer_index].name;
    e.channel_index = task.test->channel_index;
    e.class_id = task.class_id;
    e.class_name = train.class_names()[task.class_id];
    e.score = score_from(task.reference->pc, task.reference->topk, test_pc);
  }

  std::sort(report.entries.begin(), report.entries.end(), [basis](const ReportEntry& a, const ReportEntry& b) {
    const double sa = basis_value(a.score, basis);
    const double sb = basis_value(b.score, basis);
    if (sa != sb) return sa > sb;
    return entry_key(a) < entry_key(b);
  });
  for (std::size_t i = 0; i < report.entries.size(); ++i) report.entries[i].rank = i + 1;

  std::map<std::pair<std::size_t, std::optional<std::size_t>>, std::vector<double>> per_channel;
  for (const auto& e : report.entries) {
    per_channel[{e.layer_index, e.channel_index}].push_back(basis_value(e.score, basis));
  }
  for (const auto& [key, scores] : per_channel) {
    ChannelSummary s;
    s.layer_index = key.first;
    s.layer_name = train.layers()[key.first].name;
    s.channel_index = key.second;
    if (aggregate == ChannelAggregate::max) {
      s.score = *std::max_element(scores.begin(), scores.end());
    } else {
      double total = 0.0;
      for (double v : scores) total += v;
      s.score = total / static_cast<double>(scores.size());
    }
    report.channels.push_back(std::move(s));
  }
  std::stable_sort(report.channels.begin(), report.channels.end(),
                   [](const ChannelSummary& a, const ChannelSummary& b) { return a.score > b.score; });
  for (std::size_t i = 0; i < report.channels.size(); ++i) report.channels[i].rank = i + 1;
  return report;
}

SubgroupDistances subgroup_distance_study(const ActivationTrace& trace, const std::vector<std::uint32_t>& grouping,
                                          std::size_t layer, double k_fraction) {
  if (grouping.size() != trace.num_samples()) {
    throw std::invalid_argument("grouping must assign every row to a subgroup");
  }
  std::map<std::uint32_t, std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < grouping.size(); ++r) rows_of[grouping[r]].push_back(r);

  SubgroupDistances out;
  std::vector<PairCorrelations> pcs;
  std::vector<TopKPairs> topks;
  for (const auto& [group, rows] : rows_of) {
    if (rows.size() < kMinCorrelationRows) {
      throw std::invalid_argument("subgroup " + std::to_string(group) + " has " + std::to_string(rows.size()) +
                                  " rows; at least " + std::to_string(kMinCorrelationRows) + " required");
    }
    out.groups.push_back(group);
    pcs.push_back(layer_correlations(trace, rows, layer, CorrelationMode::signed_value,
                                     "group:" + std::to_string(group)));
    topks.push_back(topk_pairs(pcs.back(), k_fraction));
  }

  const std::size_t g = out.groups.size();
  out.distance.assign(g, std::vector<double>(g, 0.0));
  for (std::size_t a = 0; a < g; ++a) {
    for (std::size_t b = a + 1; b < g; ++b) {
      const double d = 0.5 * (corr_distance(pcs[a], pcs[b], topks[a]) + corr_distance(pcs[a], pcs[b], topks[b]));
      out.distance[a][b] = d;
      out.distance[b][a] = d;
    }
  }
  return out;
}

namespace {

nlohmann::ordered_json channel_value(const std::optional<std::size_t>& channel) {
  if (channel) return *channel;
  return nullptr;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

nlohmann::ordered_json to_json(const UnexpectednessReport& report) {
  nlohmann::ordered_json j;
  j["basis"] = to_string(report.basis);
  j["k_fraction"] = report.k_fraction;
  auto entries = nlohmann::ordered_json::array();
  for (const auto& e : report.entries) {
    nlohmann::ordered_json row;
    row["layer"] = e.layer_name;
    row["channel"] = channel_value(e.channel_index);
    row["class"] = e.class_name;
    row["raw"] = e.score.raw;
    row["normalized"] = e.score.normalized;
    row["topk_size"] = e.score.topk_size;
    row["rank"] = e.rank;
    entries.push_back(std::move(row));
  }
  j["entries"] = std::move(entries);
  auto channels = nlohmann::ordered_json::array();
  for (const auto& c : report.channels) {
    nlohmann::ordered_json row;
    row["layer"] = c.layer_name;
    row["channel"] = channel_value(c.channel_index);
    row["aggregate"] = to_string(report.aggregate);
    row["score"] = c.score;
    row["rank"] = c.rank;
    channels.push_back(std::move(row));
  }
  j["channels"] = std::move(channels);
  j["warnings"] = report.warnings;
  return j;
}

std::string to_csv(const UnexpectednessReport& report) {
  std::string out = "layer,channel,class,rank,raw,normalized\n";
  for (const auto& e : report.entries) {
    out += e.layer_name + "," + (e.channel_index ? std::to_string(*e.channel_index) : std::string()) + "," +
           e.class_name + "," + std::to_string(e.rank) + "," + format_double(e.score.raw) + "," +
           format_double(e.score.normalized) + "\n";
  }
  return out;
}

}  // namespace chanprobe
