#include "hafed/param_map.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "hafed/io_util.hpp"
#include "hafed/json_conv.hpp"
#include "hafed/rng.hpp"

namespace hafed {

void ParamMap::add_layer(LayerInfo info, std::vector<double> values) {
  if (index_.contains(info.id))
    throw std::invalid_argument("duplicate layer id: " + info.id);
  if (info.count() != values.size())
    throw std::invalid_argument("layer " + info.id +
                                ": shape/value count mismatch");
  index_.emplace(info.id, infos_.size());
  infos_.push_back(std::move(info));
  values_.push_back(std::move(values));
}

std::size_t ParamMap::total_elements() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::size_t ParamMap::index_of(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end())
    throw std::out_of_range("no such layer: " + id);
  return it->second;
}

std::span<double> ParamMap::at(const std::string& id) {
  return values_[index_of(id)];
}

std::span<const double> ParamMap::at(const std::string& id) const {
  return values_[index_of(id)];
}

bool ParamMap::same_layout(const ParamMap& o) const {
  return infos_ == o.infos_;
}

ParamMap ParamMap::zeros_like() const {
  ParamMap z;
  for (std::size_t i = 0; i < infos_.size(); ++i) {
    z.add_layer(infos_[i], std::vector<double>(values_[i].size(), 0.0));
  }
  return z;
}

void ParamMap::fill(double v) {
  for (auto& layer : values_)
    for (auto& x : layer) x = v;
}

void ParamMap::scale(double s) {
  for (auto& layer : values_)
    for (auto& x : layer) x *= s;
}

void ParamMap::axpy(double a, const ParamMap& other) {
  if (!same_layout(other))
    throw std::invalid_argument("axpy: layout mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const auto& src = other.values_[i];
    auto& dst = values_[i];
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += a * src[j];
  }
}

bool ParamMap::all_finite() const {
  for (const auto& layer : values_)
    for (const double x : layer)
      if (!std::isfinite(x)) return false;
  return true;
}

double ParamMap::max_abs_diff(const ParamMap& other) const {
  if (!same_layout(other))
    throw std::invalid_argument("max_abs_diff: layout mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    for (std::size_t j = 0; j < values_[i].size(); ++j) {
      m = std::max(m, std::abs(values_[i][j] - other.values_[i][j]));
    }
  }
  return m;
}

ParamMap ParamMap::slice(Partition p, int m) const {
  ParamMap out;
  for (std::size_t i = 0; i < infos_.size(); ++i) {
    if (infos_[i].partition != p) continue;
    if (m >= 0 && infos_[i].modality != m) continue;
    out.add_layer(infos_[i], values_[i]);
  }
  return out;
}

void ParamMap::assign_from(const ParamMap& src) {
  for (std::size_t i = 0; i < src.infos_.size(); ++i) {
    const auto it = index_.find(src.infos_[i].id);
    if (it == index_.end()) continue;
    if (infos_[it->second].shape != src.infos_[i].shape)
      throw std::invalid_argument("assign_from: shape mismatch at " +
                                  src.infos_[i].id);
    values_[it->second] = src.values_[i];
  }
}

namespace {

struct LayerPlan {
  LayerInfo info;
  double init_bound;      // uniform +-bound; 0 means constant init
  double init_const = 0;  // used when init_bound == 0
};

std::vector<LayerPlan> layer_plan(const ArchSpec& spec) {
  spec.validate();
  std::vector<LayerPlan> plan;
  const std::size_t D = spec.d_model;
  auto bound = [](std::size_t fan_in) {
    return 1.0 / std::sqrt(static_cast<double>(fan_in));
  };

  for (std::size_t m = 0; m < spec.modalities; ++m) {
    const std::string lbl = spec.modality_label(m);
    const std::size_t dm = spec.input_dims[m];
    plan.push_back({{"stem." + lbl + ".w", Partition::stem, (int)m, {D, dm}},
                    bound(dm)});
    plan.push_back(
        {{"stem." + lbl + ".b", Partition::stem, (int)m, {D}}, bound(dm)});
  }
  for (std::size_t m = 0; m < spec.modalities; ++m) {
    const std::string lbl = spec.modality_label(m);
    for (std::size_t l = 0; l < spec.encoder_layers; ++l) {
      const std::string pre = "stack." + lbl + "." + std::to_string(l) + ".";
      for (const char* nm : {"wq", "wk", "wv", "wo"}) {
        plan.push_back(
            {{pre + "attn." + nm, Partition::stack, (int)m, {D, D}}, bound(D)});
      }
      for (const char* nm : {"bq", "bk", "bv", "bo"}) {
        plan.push_back(
            {{pre + "attn." + nm, Partition::stack, (int)m, {D}}, bound(D)});
      }
      plan.push_back({{pre + "ln.g", Partition::stack, (int)m, {D}}, 0.0, 1.0});
      plan.push_back({{pre + "ln.b", Partition::stack, (int)m, {D}}, 0.0, 0.0});
    }
  }
  const std::size_t H = spec.lstm_hidden;
  plan.push_back({{"dec.lstm.wx", Partition::decoder, -1, {4 * H, D}}, bound(D)});
  plan.push_back({{"dec.lstm.wh", Partition::decoder, -1, {4 * H, H}}, bound(H)});
  plan.push_back({{"dec.lstm.b", Partition::decoder, -1, {4 * H}}, bound(H)});
  std::size_t prev = H;
  for (std::size_t i = 0; i < spec.decoder_widths.size(); ++i) {
    const std::size_t w = spec.decoder_widths[i];
    const std::string pre = "dec.fc." + std::to_string(i) + ".";
    plan.push_back({{pre + "w", Partition::decoder, -1, {w, prev}}, bound(prev)});
    plan.push_back({{pre + "b", Partition::decoder, -1, {w}}, bound(prev)});
    prev = w;
  }
  plan.push_back({{"dec.out.w", Partition::decoder, -1, {1, prev}}, bound(prev)});
  plan.push_back({{"dec.out.b", Partition::decoder, -1, {1}}, bound(prev)});
  return plan;
}

}  // namespace

ParamMap init_params(const ArchSpec& spec, std::uint64_t seed) {
  ParamMap p;
  for (auto& lp : layer_plan(spec)) {
    std::vector<double> v(lp.info.count());
    if (lp.init_bound == 0.0) {
      for (auto& x : v) x = lp.init_const;
    } else {
      // per-layer stream keyed by id, so layer order never matters
      Rng rng(derive_seed(seed, "init", lp.info.id));
      for (auto& x : v) x = rng.uniform(-lp.init_bound, lp.init_bound);
    }
    if (lp.info.id == "dec.lstm.b") {
      const std::size_t H = spec.lstm_hidden;
      for (std::size_t i = H; i < 2 * H; ++i) v[i] = 1.0;  // forget gate
    }
    p.add_layer(std::move(lp.info), std::move(v));
  }
  return p;
}

ParamMap layout_params(const ArchSpec& spec) {
  ParamMap p;
  for (auto& lp : layer_plan(spec)) {
    std::vector<double> v(lp.info.count(), 0.0);
    p.add_layer(std::move(lp.info), std::move(v));
  }
  return p;
}

namespace {

constexpr char kMagic[8] = {'H', 'A', 'F', 'E', 'D', 'C', 'K', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ArchSpec& spec,
                     const ParamMap& params) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  const std::string arch = arch_to_json(spec).dump();
  put_u32(out, static_cast<std::uint32_t>(arch.size()));
  out += arch;
  put_u32(out, static_cast<std::uint32_t>(params.layer_count()));
  for (std::size_t i = 0; i < params.layer_count(); ++i) {
    const auto& info = params.info(i);
    put_u32(out, static_cast<std::uint32_t>(info.id.size()));
    out += info.id;
    out.push_back(static_cast<char>(info.partition));
    put_u32(out, static_cast<std::uint32_t>(info.modality + 1));
    put_u32(out, static_cast<std::uint32_t>(info.shape.size()));
    for (const auto d : info.shape) put_u64(out, d);
    const auto vals = params.values(i);
    put_u64(out, vals.size());
    for (const double x : vals) put_u64(out, std::bit_cast<std::uint64_t>(x));
  }
  atomic_write_file(path, out);

  nlohmann::json mirror;
  mirror["arch"] = arch_to_json(spec);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < params.layer_count(); ++i) {
    const auto& info = params.info(i);
    nlohmann::json jl;
    jl["id"] = info.id;
    jl["partition"] = static_cast<int>(info.partition);
    jl["modality"] = info.modality;
    jl["shape"] = info.shape;
    const auto vals = params.values(i);
    jl["values"] = std::vector<double>(vals.begin(), vals.end());
    layers.push_back(std::move(jl));
  }
  mirror["layers"] = std::move(layers);
  auto mirror_path = path;
  mirror_path += ".json";
  atomic_write_file(mirror_path, mirror.dump(2) + "\n");
}

std::pair<ArchSpec, ParamMap> load_checkpoint(
    const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  Reader r(buf);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  const auto arch_len = r.u32();
  const ArchSpec spec = arch_from_json(nlohmann::json::parse(r.bytes(arch_len)));
  const auto n_layers = r.u32();
  ParamMap p;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerInfo info;
    info.id = r.bytes(r.u32());
    info.partition = static_cast<Partition>(r.bytes(1)[0]);
    info.modality = static_cast<int>(r.u32()) - 1;
    const auto ndim = r.u32();
    info.shape.resize(ndim);
    for (auto& d : info.shape) d = r.u64();
    const auto count = r.u64();
    std::vector<double> vals(count);
    for (auto& x : vals) x = std::bit_cast<double>(r.u64());
    p.add_layer(std::move(info), std::move(vals));
  }
  return {spec, std::move(p)};
}

}  // namespace hafed
