#include "chanprobe/trace.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace chanprobe {

const char* to_string(TraceErrorKind kind) {
  switch (kind) {
    case TraceErrorKind::bad_magic: return "bad magic";
    case TraceErrorKind::bad_header: return "bad header";
    case TraceErrorKind::length_mismatch: return "length mismatch";
    case TraceErrorKind::non_finite: return "non-finite intensity";
    case TraceErrorKind::label_out_of_range: return "label out of range";
    case TraceErrorKind::schema: return "schema";
    case TraceErrorKind::io: return "io";
  }
  return "unknown";
}

ActivationTrace::ActivationTrace(std::vector<LayerInfo> layers, std::size_t num_samples,
                                 std::vector<float> intensities,
                                 std::optional<std::vector<std::uint32_t>> labels,
                                 std::vector<std::string> class_names)
    : layers_(std::move(layers)),
      num_samples_(num_samples),
      intensities_(std::move(intensities)),
      labels_(std::move(labels)),
      class_names_(std::move(class_names)) {
  if (layers_.empty()) {
    throw TraceError(TraceErrorKind::schema, "trace needs at least one layer");
  }
  offsets_.reserve(layers_.size());
  for (const auto& layer : layers_) {
    if (layer.channels == 0) {
      throw TraceError(TraceErrorKind::schema, "layer '" + layer.name + "' has no channels");
    }
    for (std::size_t i = 0; i < offsets_.size(); ++i) {
      if (layers_[i].name == layer.name) {
        throw TraceError(TraceErrorKind::schema, "duplicate layer name '" + layer.name + "'");
      }
    }
    offsets_.push_back(total_channels_);
    total_channels_ += layer.channels;
  }
  if (intensities_.size() != num_samples_ * total_channels_) {
    throw TraceError(TraceErrorKind::length_mismatch,
                     "intensity matrix has " + std::to_string(intensities_.size()) +
                         " entries, expected " + std::to_string(num_samples_ * total_channels_));
  }
  for (std::size_t i = 0; i < intensities_.size(); ++i) {
    if (!std::isfinite(intensities_[i])) {
      throw TraceError(TraceErrorKind::non_finite,
                       "non-finite intensity at row " + std::to_string(i / total_channels_) +
                           ", column " + std::to_string(i % total_channels_));
    }
  }
  if (labels_) {
    if (labels_->size() != num_samples_) {
      throw TraceError(TraceErrorKind::length_mismatch, "label count differs from sample count");
    }
    for (auto label : *labels_) {
      if (label >= class_names_.size()) {
        throw TraceError(TraceErrorKind::label_out_of_range,
                         "label " + std::to_string(label) + " has no class name (" +
                             std::to_string(class_names_.size()) + " classes)");
      }
    }
  }
}

const std::vector<std::uint32_t>& ActivationTrace::labels() const {
  if (!labels_) throw TraceError(TraceErrorKind::schema, "trace has no labels");
  return *labels_;
}

std::size_t ActivationTrace::layer_offset(std::size_t layer_index) const {
  if (layer_index >= layers_.size()) {
    throw TraceError(TraceErrorKind::schema, "layer index " + std::to_string(layer_index) + " out of range");
  }
  return offsets_[layer_index];
}

std::size_t ActivationTrace::column_of(const ChannelRef& c) const {
  const std::size_t offset = layer_offset(c.layer_index);
  if (c.channel_index >= layers_[c.layer_index].channels) {
    throw TraceError(TraceErrorKind::schema, "channel " + std::to_string(c.channel_index) +
                                                 " out of range for layer '" +
                                                 layers_[c.layer_index].name + "'");
  }
  return offset + c.channel_index;
}

ChannelRef ActivationTrace::channel_at(std::size_t column) const {
  if (column >= total_channels_) {
    throw TraceError(TraceErrorKind::schema, "column " + std::to_string(column) + " out of range");
  }
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), column);
  const auto layer = static_cast<std::size_t>(std::distance(offsets_.begin(), it)) - 1;
  return ChannelRef{layer, column - offsets_[layer], layers_[layer].name};
}

std::size_t ActivationTrace::find_layer(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw TraceError(TraceErrorKind::schema, "unknown layer '" + name + "'");
}

std::vector<ChannelRef> ActivationTrace::all_channels() const {
  std::vector<ChannelRef> out;
  out.reserve(total_channels_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (std::size_t c = 0; c < layers_[l].channels; ++c) {
      out.push_back(ChannelRef{l, c, layers_[l].name});
    }
  }
  return out;
}

bool ActivationTrace::operator==(const ActivationTrace& other) const {
  if (layers_ != other.layers_ || num_samples_ != other.num_samples_ ||
      labels_ != other.labels_ || class_names_ != other.class_names_) {
    return false;
  }
  // Bitwise, so that -0.0f and 0.0f are told apart.
  return intensities_.size() == other.intensities_.size() &&
         std::memcmp(intensities_.data(), other.intensities_.data(),
                     intensities_.size() * sizeof(float)) == 0;
}

ClassSlice slice_by_class(const ActivationTrace& trace, std::uint32_t class_id) {
  const auto& labels = trace.labels();
  if (class_id >= trace.class_names().size()) {
    throw TraceError(TraceErrorKind::schema, "unknown class id " + std::to_string(class_id));
  }
  ClassSlice slice{&trace, class_id, {}};
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] == class_id) slice.rows.push_back(r);
  }
  return slice;
}

std::uint32_t resolve_class(const ActivationTrace& trace, const std::string& name_or_id) {
  const auto& names = trace.class_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name_or_id) return static_cast<std::uint32_t>(i);
  }
  std::uint32_t id = 0;
  const char* end = name_or_id.data() + name_or_id.size();
  auto [ptr, ec] = std::from_chars(name_or_id.data(), end, id);
  if (ec != std::errc() || ptr != end || id >= names.size()) {
    throw TraceError(TraceErrorKind::schema, "unknown class '" + name_or_id + "'");
  }
  return id;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<char>((v >> shift) & 0xFFu));
  }
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string header_json(const ActivationTrace& trace) {
  nlohmann::ordered_json header;
  header["version"] = 1;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& layer : trace.layers()) {
    nlohmann::ordered_json entry;
    entry["name"] = layer.name;
    entry["channels"] = layer.channels;
    layers.push_back(std::move(entry));
  }
  header["layers"] = std::move(layers);
  header["num_samples"] = trace.num_samples();
  header["has_labels"] = trace.has_labels();
  if (!trace.class_names().empty()) header["class_names"] = trace.class_names();
  return header.dump();
}

}  // namespace

std::size_t write_trace(const ActivationTrace& trace, std::ostream& sink) {
  // Traces are validated on construction, so nothing below can fail on data.
  const std::string header = header_json(trace);
  if (header.size() > UINT32_MAX) {
    throw TraceError(TraceErrorKind::bad_header, "header too large");
  }
  std::string out;
  const auto values = trace.intensities();
  out.reserve(sizeof(kTraceMagic) + 4 + header.size() + values.size() * 4 +
              (trace.has_labels() ? trace.num_samples() * 4 : 0));
  out.append(kTraceMagic, sizeof(kTraceMagic));
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.append(header);
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (trace.has_labels()) {
    for (auto label : trace.labels()) put_u32(out, label);
  }
  sink.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!sink) throw TraceError(TraceErrorKind::io, "failed writing trace");
  return out.size();
}

ActivationTrace read_trace(std::istream& source) {
  const std::string bytes((std::istreambuf_iterator<char>(source)), std::istreambuf_iterator<char>());
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t magic_size = sizeof(kTraceMagic);

  if (bytes.size() < magic_size || std::memcmp(bytes.data(), kTraceMagic, magic_size) != 0) {
    throw TraceError(TraceErrorKind::bad_magic, "not a CTRC v1 trace");
  }
  if (bytes.size() < magic_size + 4) {
    throw TraceError(TraceErrorKind::length_mismatch, "truncated header length");
  }
  const std::size_t header_len = get_u32(data + magic_size);
  const std::size_t header_begin = magic_size + 4;
  if (bytes.size() - header_begin < header_len) {
    throw TraceError(TraceErrorKind::length_mismatch, "truncated header");
  }

  std::vector<LayerInfo> layers;
  std::size_t num_samples = 0;
  bool has_labels = false;
  std::vector<std::string> class_names;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_begin),
                                              bytes.begin() + static_cast<std::ptrdiff_t>(header_begin + header_len));
    if (header.at("version").get<int>() != 1) {
      throw TraceError(TraceErrorKind::bad_header, "unsupported version");
    }
    for (const auto& layer : header.at("layers")) {
      layers.push_back(LayerInfo{layer.at("name").get<std::string>(), layer.at("channels").get<std::size_t>()});
    }
    num_samples = header.at("num_samples").get<std::size_t>();
    has_labels = header.at("has_labels").get<bool>();
    if (header.contains("class_names")) class_names = header["class_names"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(TraceErrorKind::bad_header, std::string("malformed header: ") + e.what());
  }

  std::size_t total_channels = 0;
  for (const auto& layer : layers) total_channels += layer.channels;
  const std::size_t count = num_samples * total_channels;
  if (total_channels != 0 && count / total_channels != num_samples) {
    throw TraceError(TraceErrorKind::length_mismatch, "matrix size overflows");
  }
  const std::size_t payload = bytes.size() - header_begin - header_len;
  const std::size_t expected = count * 4 + (has_labels ? num_samples * 4 : 0);
  if (payload != expected) {
    throw TraceError(TraceErrorKind::length_mismatch,
                     "payload is " + std::to_string(payload) + " bytes, header implies " +
                         std::to_string(expected));
  }

  const unsigned char* p = data + header_begin + header_len;
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i, p += 4) {
    values[i] = std::bit_cast<float>(get_u32(p));
  }
  std::optional<std::vector<std::uint32_t>> labels;
  if (has_labels) {
    labels.emplace(num_samples);
    for (std::size_t i = 0; i < num_samples; ++i, p += 4) (*labels)[i] = get_u32(p);
  }
  return ActivationTrace(std::move(layers), num_samples, std::move(values), std::move(labels),
                         std::move(class_names));
}

std::size_t write_trace_file(const ActivationTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceError(TraceErrorKind::io, "cannot open '" + path.string() + "' for writing");
  const std::size_t n = write_trace(trace, out);
  out.close();
  if (!out) throw TraceError(TraceErrorKind::io, "failed writing '" + path.string() + "'");
  return n;
}

ActivationTrace read_trace_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError(TraceErrorKind::io, "cannot open '" + path.string() + "'");
  return read_trace(in);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    const auto first = c.find_first_not_of(" \t\r");
    const auto last = c.find_last_not_of(" \t\r");
    c = first == std::string::npos ? std::string() : c.substr(first, last - first + 1);
  }
  return cells;
}

}  // namespace

ActivationTrace ingest_csv(std::istream& source, const std::vector<LayerInfo>& layer_spec) {
  std::size_t total_channels = 0;
  for (const auto& layer : layer_spec) total_channels += layer.channels;

  std::string line;
  if (!std::getline(source, line)) throw TraceError(TraceErrorKind::schema, "CSV has no header line");
  const auto header = split_csv(line);
  const bool has_labels = !header.empty() && header.front() == "label";
  const std::size_t expected_cols = total_channels + (has_labels ? 1 : 0);
  if (header.size() != expected_cols) {
    throw TraceError(TraceErrorKind::schema, "CSV header has " + std::to_string(header.size()) +
                                                 " columns, layer spec implies " +
                                                 std::to_string(expected_cols));
  }

  std::vector<float> values;
  std::vector<std::uint32_t> labels;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(source, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (cells.size() != expected_cols) {
      throw TraceError(TraceErrorKind::schema, "line " + std::to_string(line_no) + " has " +
                                                   std::to_string(cells.size()) + " columns, expected " +
                                                   std::to_string(expected_cols));
    }
    std::size_t col = 0;
    if (has_labels) {
      std::uint32_t label = 0;
      const auto& cell = cells[0];
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw TraceError(TraceErrorKind::schema, "line " + std::to_string(line_no) + ": bad label '" + cell + "'");
      }
      labels.push_back(label);
      col = 1;
    }
    for (; col < cells.size(); ++col) {
      const auto& cell = cells[col];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
        throw TraceError(TraceErrorKind::schema, "line " + std::to_string(line_no) +
                                                     ": cannot parse '" + cell + "' as a number");
      }
      values.push_back(static_cast<float>(v));
    }
    ++rows;
  }

  std::optional<std::vector<std::uint32_t>> label_vec;
  std::vector<std::string> class_names;
  if (has_labels) {
    std::uint32_t max_label = 0;
    for (auto l : labels) max_label = std::max(max_label, l);
    if (!labels.empty()) {
      for (std::uint32_t i = 0; i <= max_label; ++i) class_names.push_back(std::to_string(i));
    }
    label_vec = std::move(labels);
  }
  return ActivationTrace(layer_spec, rows, std::move(values), std::move(label_vec), std::move(class_names));
}

}  // namespace chanprobe
