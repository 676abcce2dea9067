#include "chanprobe/cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>

#include "CLI11.hpp"
#include "chanprobe/correlation.hpp"
#include "chanprobe/coverage.hpp"
#include "chanprobe/parallel.hpp"
#include "chanprobe/selection.hpp"
#include "chanprobe/trace.hpp"
#include "chanprobe/unexpectedness.hpp"
#include "json.hpp"

namespace chanprobe {

namespace {

struct RunConfig {
  std::string subcommand;
  std::string trace_path;
  std::string train_path;
  std::vector<std::string> test_specs;
  std::string layer;
  std::vector<std::string> layers;
  std::optional<std::string> class_filter;
  std::optional<std::size_t> channel;
  double theta = 0.0;
  double k_fraction = kDefaultTopKFraction;
  std::string mode;
  std::string policy = "greedy-max";
  std::string basis = "raw";
  std::string aggregate = "max";
  std::string format = "json";
  std::string out_path;
  int threads = 0;
};

// Fractions and thresholds live in (0, 1].
const CLI::Validator kUnitInterval(
    [](std::string& value) -> std::string {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || ptr != value.data() + value.size()) return "not a number: " + value;
      if (!(v > 0.0 && v <= 1.0)) return "must lie in (0, 1], got " + value;
      return {};
    },
    "(0,1]");

std::string with_newline(std::string text) {
  if (text.empty() || text.back() != '\n') text.push_back('\n');
  return text;
}

std::string render(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

void emit(const RunConfig& config, const std::string& text, std::ostream& out) {
  if (config.out_path.empty()) {
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("failed writing report to output stream");
    return;
  }
  const std::filesystem::path target(config.out_path);
  auto tmp = target;
  tmp += ".partial";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw TraceError(TraceErrorKind::io, "cannot open '" + tmp.string() + "' for writing");
    file << text;
    file.close();
    if (!file) throw TraceError(TraceErrorKind::io, "failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, target);
}

std::string cmd_corr(const RunConfig& config) {
  const auto trace = read_trace_file(config.trace_path);
  const auto layer = trace.find_layer(config.layer);
  const auto mode = parse_correlation_mode(config.mode.empty() ? "signed" : config.mode);

  PairCorrelations pc;
  if (config.class_filter) {
    const auto slice = slice_by_class(trace, resolve_class(trace, *config.class_filter));
    pc = layer_correlations(slice, layer, mode);
  } else {
    pc = layer_correlations(trace, layer, mode);
  }
  const auto topk = topk_pairs(pc, config.k_fraction);

  if (config.format == "csv") {
    std::vector<bool> in_topk(pc.coefficients.size(), false);
    for (const auto& p : topk.pairs) in_topk[pair_index(p.first, p.second, pc.channels)] = true;
    std::string text = "layer,i,j,coefficient,topk\n";
    for (const auto& p : pc.pairs()) {
      text += pc.layer_name + "," + std::to_string(p.first) + "," + std::to_string(p.second) + "," +
              nlohmann::json(p.coefficient).dump() + "," +
              (in_topk[pair_index(p.first, p.second, pc.channels)] ? "1" : "0") + "\n";
    }
    return text;
  }
  auto j = to_json(pc);
  j["source"] = pc.source;
  j["mode"] = to_string(pc.mode);
  auto top = to_json(topk);
  top.erase("layer");
  top["k_fraction"] = config.k_fraction;
  j["topk"] = std::move(top);
  return render(j);
}

std::string cmd_select(const RunConfig& config) {
  const auto mode = parse_correlation_mode(config.mode.empty() ? "absolute" : config.mode);
  const auto policy = parse_selection_policy(config.policy);
  const auto trace = read_trace_file(config.trace_path);
  std::vector<std::size_t> layers;
  if (config.layers.empty()) {
    for (std::size_t l = 0; l < trace.layers().size(); ++l) layers.push_back(l);
  } else {
    for (const auto& name : config.layers) layers.push_back(trace.find_layer(name));
  }
  const auto problem = build_delta(trace, layers, config.theta, mode);
  const auto result = greedy_select(problem, policy);

  if (config.format == "csv") {
    std::string text = "pick,layer,channel\n";
    for (std::size_t k = 0; k < result.selected_channels.size(); ++k) {
      const auto& c = result.selected_channels[k];
      text += std::to_string(k + 1) + "," + c.layer_name + "," + std::to_string(c.channel_index) + "\n";
    }
    return text;
  }
  auto j = to_json(result);
  j["mode"] = to_string(mode);
  return render(j);
}

struct ParsedTest {
  std::optional<std::string> layer;
  std::optional<std::size_t> channel;
  std::string path;
};

// `[LAYER:INDEX=]PATH`
ParsedTest parse_test_spec(const std::string& spec) {
  ParsedTest t;
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    t.path = spec;
    return t;
  }
  const std::string tag = spec.substr(0, eq);
  t.path = spec.substr(eq + 1);
  const auto colon = tag.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == tag.size()) {
    throw CLI::ValidationError("--test", "expected LAYER:INDEX=PATH, got '" + spec + "'");
  }
  std::size_t index = 0;
  const char* first = tag.data() + colon + 1;
  const char* last = tag.data() + tag.size();
  auto [ptr, ec] = std::from_chars(first, last, index);
  if (ec != std::errc() || ptr != last) {
    throw CLI::ValidationError("--test", "bad channel index in '" + spec + "'");
  }
  t.layer = tag.substr(0, colon);
  t.channel = index;
  return t;
}

std::string cmd_score(const RunConfig& config) {
  const auto basis = parse_score_basis(config.basis);
  const auto aggregate = parse_channel_aggregate(config.aggregate);
  std::vector<ParsedTest> specs;
  std::size_t untagged = 0;
  for (const auto& s : config.test_specs) {
    specs.push_back(parse_test_spec(s));
    if (!specs.back().layer) ++untagged;
  }
  if (untagged > 0 && config.layer.empty()) {
    throw CLI::ValidationError("--layer", "required for --test files given without a LAYER:INDEX= tag");
  }
  if (untagged > 1) throw CLI::ValidationError("--test", "at most one untagged test file is allowed");

  const auto train = read_trace_file(config.train_path);
  std::vector<std::unique_ptr<ActivationTrace>> owned;
  std::vector<TestedTrace> tests;
  for (const auto& spec : specs) {
    owned.push_back(std::make_unique<ActivationTrace>(read_trace_file(spec.path)));
    TestedTrace t;
    t.trace = owned.back().get();
    t.layer_index = train.find_layer(spec.layer ? *spec.layer : config.layer);
    t.channel_index = spec.layer ? spec.channel : config.channel;
    tests.push_back(t);
  }
  const auto report = rank_channels(tests, train, config.k_fraction, basis, aggregate);
  return config.format == "csv" ? to_csv(report) : render(to_json(report));
}

std::string cmd_coverage(const RunConfig& config) {
  const auto train = read_trace_file(config.train_path);
  if (config.test_specs.size() != 1) throw CLI::ValidationError("--test", "coverage takes exactly one test trace");
  const auto test = read_trace_file(config.test_specs.front());
  const auto universe = coverage_universe(train, config.layers);
  const auto report = boundary_coverage(train, test, universe);
  return config.format == "csv" ? to_csv(report) : render(to_json(report));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig config;
  CLI::App app{"Channel-wise CNN test analytics over activation-intensity traces (CTRC v1)", "chanprobe"};
  app.require_subcommand(1, 1);
  app.option_defaults()->always_capture_default();

  const auto add_common = [&config](CLI::App* sub) {
    sub->add_option("--out,-o", config.out_path, "Write the report here instead of stdout");
    sub->add_option("--format", config.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--threads", config.threads, "Worker cap; results do not depend on it")
        ->envname("CHANPROBE_THREADS")
        ->check(CLI::PositiveNumber);
  };

  auto* corr = app.add_subcommand("corr", "Within-layer channel correlations and top-k pairs");
  corr->add_option("--trace", config.trace_path, "Trace file")->required();
  corr->add_option("--layer", config.layer, "Layer name")->required();
  corr->add_option("--class", config.class_filter, "Restrict to one class (name or id)");
  corr->add_option("--top-frac,--k-frac", config.k_fraction, "Fraction of pairs kept as top-k")
      ->check(kUnitInterval);
  corr->add_option("--mode", config.mode, "signed|absolute (default signed)")
      ->check(CLI::IsMember({"signed", "absolute"}));
  add_common(corr);

  auto* select = app.add_subcommand("select", "Greedy representative channel selection");
  select->add_option("--trace", config.trace_path, "Trace file (training distribution)")->required();
  select->add_option("--theta", config.theta, "Correlation threshold in (0,1]; no default")
      ->required()
      ->check(kUnitInterval);
  select->add_option("--policy", config.policy, "greedy-max|greedy-min")
      ->check(CLI::IsMember({"greedy-max", "greedy-min"}));
  select->add_option("--mode", config.mode, "signed|absolute (default absolute)")
      ->check(CLI::IsMember({"signed", "absolute"}));
  select->add_option("--layers", config.layers, "Restrict to these layers (default: all)")->delimiter(',');
  add_common(select);

  auto* score = app.add_subcommand(
      "score",
      "Rank test data by unexpectedness. Test traces are typically generated by sweeping a channel's "
      "intensity between 0.33x and 3x of the seed images.");
  score->add_option("--train", config.train_path, "Training trace")->required();
  score->add_option("--test", config.test_specs, "Test trace, optionally tagged LAYER:INDEX=PATH; repeatable")
      ->required();
  score->add_option("--layer", config.layer, "Layer of an untagged test trace");
  score->add_option("--channel", config.channel, "Tested channel of an untagged test trace");
  score->add_option("--k-frac,--top-frac", config.k_fraction, "Fraction of pairs kept as top-k")
      ->check(kUnitInterval);
  score->add_option("--basis", config.basis, "raw|normalized")->check(CLI::IsMember({"raw", "normalized"}));
  score->add_option("--aggregate", config.aggregate, "Per-channel aggregate over classes: max|mean")
      ->check(CLI::IsMember({"max", "mean"}));
  add_common(score);

  auto* coverage = app.add_subcommand("coverage", "Channel boundary coverage of a test suite");
  coverage->add_option("--train", config.train_path, "Training trace")->required();
  coverage->add_option("--test", config.test_specs, "Test trace")->required();
  coverage->add_option("--layers", config.layers, "Restrict to these layers (default: all)")->delimiter(',');
  add_common(coverage);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (config.threads > 0) set_worker_count(config.threads);
  try {
    std::string text;
    if (corr->parsed()) {
      text = cmd_corr(config);
    } else if (select->parsed()) {
      text = cmd_select(config);
    } else if (score->parsed()) {
      text = cmd_score(config);
    } else {
      text = cmd_coverage(config);
    }
    emit(config, with_newline(std::move(text)), out);
    return kExitOk;
  } catch (const CLI::Error& e) {
    err << "chanprobe: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TraceError& e) {
    err << "chanprobe: " << e.what() << "\n";
    return e.kind() == TraceErrorKind::io ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "chanprobe: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace chanprobe
