#pragma once

// Activation-intensity traces: one row per input sample, one column per
// convolutional channel. Each entry is the sum of that channel's neuron
// values for the sample, as recorded by the exporter.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace chanprobe {

enum class TraceErrorKind {
  bad_magic,
  bad_header,
  length_mismatch,
  non_finite,
  label_out_of_range,
  schema,
  io,
};

const char* to_string(TraceErrorKind kind);

class TraceError : public std::runtime_error {
public:
  TraceError(TraceErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  TraceErrorKind kind() const noexcept { return kind_; }

private:
  TraceErrorKind kind_;
};

struct LayerInfo {
  std::string name;
  std::size_t channels = 0;

  bool operator==(const LayerInfo&) const = default;
};

struct ChannelRef {
  std::size_t layer_index = 0;
  std::size_t channel_index = 0;
  std::string layer_name;

  // Identity is positional; the name is carried along for reports.
  bool operator==(const ChannelRef& o) const {
    return layer_index == o.layer_index && channel_index == o.channel_index;
  }
  bool operator<(const ChannelRef& o) const {
    return std::pair(layer_index, channel_index) < std::pair(o.layer_index, o.channel_index);
  }
};

/// Immutable, validated matrix of channel intensities.
///
/// Values are stored as 32-bit floats, the on-disk precision; every consumer
/// widens to double before doing arithmetic. Construction throws TraceError
/// if any invariant is broken (non-finite entry, label without a class name,
/// matrix size not matching the layer schema).
class ActivationTrace {
public:
  ActivationTrace() = default;
  ActivationTrace(std::vector<LayerInfo> layers, std::size_t num_samples,
                  std::vector<float> intensities,
                  std::optional<std::vector<std::uint32_t>> labels = std::nullopt,
                  std::vector<std::string> class_names = {});

  const std::vector<LayerInfo>& layers() const noexcept { return layers_; }
  std::size_t num_samples() const noexcept { return num_samples_; }
  std::size_t total_channels() const noexcept { return total_channels_; }
  bool has_labels() const noexcept { return labels_.has_value(); }
  const std::vector<std::uint32_t>& labels() const;
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  std::span<const float> intensities() const noexcept { return intensities_; }

  float at(std::size_t row, std::size_t column) const {
    return intensities_[row * total_channels_ + column];
  }
  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(intensities_).subspan(r * total_channels_, total_channels_);
  }

  /// First global column of a layer.
  std::size_t layer_offset(std::size_t layer_index) const;
  std::size_t column_of(const ChannelRef& c) const;
  ChannelRef channel_at(std::size_t column) const;
  /// Layer index by name; throws TraceError(schema) when absent.
  std::size_t find_layer(const std::string& name) const;
  /// Every channel of every layer, in column order.
  std::vector<ChannelRef> all_channels() const;

  bool same_schema(const ActivationTrace& other) const { return layers_ == other.layers_; }

  bool operator==(const ActivationTrace& other) const;

private:
  std::vector<LayerInfo> layers_;
  std::vector<std::size_t> offsets_;
  std::size_t num_samples_ = 0;
  std::size_t total_channels_ = 0;
  std::vector<float> intensities_;
  std::optional<std::vector<std::uint32_t>> labels_;
  std::vector<std::string> class_names_;
};

/// Rows of a labeled trace that carry one class id, in original order.
struct ClassSlice {
  const ActivationTrace* parent = nullptr;
  std::uint32_t class_id = 0;
  std::vector<std::size_t> rows;
};

/// Throws TraceError(schema) if the trace has no labels or class_id has no
/// class name. A known class with no rows yields an empty slice.
ClassSlice slice_by_class(const ActivationTrace& trace, std::uint32_t class_id);

/// Resolves a class given either its name or its numeric id.
std::uint32_t resolve_class(const ActivationTrace& trace, const std::string& name_or_id);

// CTRC v1 container.
inline constexpr char kTraceMagic[] = {'C', 'T', 'R', 'C', '1', '\n'};

std::size_t write_trace(const ActivationTrace& trace, std::ostream& sink);
ActivationTrace read_trace(std::istream& source);

std::size_t write_trace_file(const ActivationTrace& trace, const std::filesystem::path& path);
ActivationTrace read_trace_file(const std::filesystem::path& path);

/// Parses a CSV whose columns are an optional leading `label` column followed
/// by one column per channel in layer order. The first line is a header.
/// Labels are non-negative integers; class names become their decimal form.
ActivationTrace ingest_csv(std::istream& source, const std::vector<LayerInfo>& layer_spec);

}  // namespace chanprobe
