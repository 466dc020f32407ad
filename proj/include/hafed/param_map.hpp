#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hafed/arch.hpp"

namespace hafed {

enum class Partition : std::uint8_t { stem = 0, stack = 1, decoder = 2 };

struct LayerInfo {
  std::string id;
  Partition partition = Partition::decoder;
  int modality = -1;  // -1 for decoder layers
  std::vector<std::size_t> shape;

  std::size_t count() const {
    std::size_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
  }
  bool operator==(const LayerInfo&) const = default;
};

// Ordered layer-id -> flat vector of doubles. The unit of every exchange
// between client, server and disk. Layout (key set, order, shapes) is fixed
// by the ArchSpec that produced it; arithmetic requires identical layouts.
class ParamMap {
 public:
  void add_layer(LayerInfo info, std::vector<double> values);

  std::size_t layer_count() const { return infos_.size(); }
  std::size_t total_elements() const;

  const LayerInfo& info(std::size_t i) const { return infos_[i]; }
  std::span<double> values(std::size_t i) { return values_[i]; }
  std::span<const double> values(std::size_t i) const { return values_[i]; }

  bool has(const std::string& id) const { return index_.contains(id); }
  std::size_t index_of(const std::string& id) const;
  std::span<double> at(const std::string& id);
  std::span<const double> at(const std::string& id) const;

  bool same_layout(const ParamMap& o) const;

  ParamMap zeros_like() const;
  void fill(double v);
  void scale(double s);
  // this += a * other (layouts must match)
  void axpy(double a, const ParamMap& other);
  bool all_finite() const;
  double max_abs_diff(const ParamMap& other) const;

  // layers whose partition is `p` (and modality m when m >= 0), same order
  ParamMap slice(Partition p, int m = -1) const;
  // overwrite every layer that also exists in `src`
  void assign_from(const ParamMap& src);

  bool operator==(const ParamMap& o) const {
    return infos_ == o.infos_ && values_ == o.values_;
  }

 private:
  std::vector<LayerInfo> infos_;
  std::vector<std::vector<double>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Deterministic init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per layer,
// layernorm gains 1 / offsets 0, LSTM forget-gate bias 1.
ParamMap init_params(const ArchSpec& spec, std::uint64_t seed);

// Empty (zero-valued) map with the full ArchSpec layout.
ParamMap layout_params(const ArchSpec& spec);

// Binary checkpoint (self-describing: arch header + per-layer id, tag,
// shape, little-endian doubles) plus a .json debug mirror alongside.
void save_checkpoint(const std::filesystem::path& path, const ArchSpec& spec,
                     const ParamMap& params);
std::pair<ArchSpec, ParamMap> load_checkpoint(
    const std::filesystem::path& path);

}  // namespace hafed
