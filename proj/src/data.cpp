#include "hafed/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "hafed/io_util.hpp"
#include "hafed/rng.hpp"

namespace hafed {

void SynthSpec::validate(const ArchSpec& arch) const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("data: " + msg);
  };
  if (n_samples < 1) fail("n_samples: must be >= 1");
  if (noise_sigma.size() != arch.modalities)
    fail("noise_sigma: need one entry per modality");
  for (std::size_t m = 0; m < noise_sigma.size(); ++m) {
    if (noise_sigma[m] < 0.0)
      fail("noise_sigma[" + std::to_string(m) + "]: must be >= 0");
  }
  if (label_weights.size() != 7) fail("label_weights: need exactly 7 bins");
  double total = 0.0;
  for (const double w : label_weights) {
    if (w < 0.0) fail("label_weights: must be >= 0");
    total += w;
  }
  if (total <= 0.0) fail("label_weights: must not all be zero");
  if (pattern_freqs.empty()) fail("pattern_freqs: must be nonempty");
  for (const auto f : pattern_freqs) {
    // integer cycles below t_min keep sinusoids zero-mean over any window
    if (f < 1 || f >= arch.t_min)
      fail("pattern_freqs: each must be in [1, t_min)");
  }
  if (!(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0))
    fail("train_frac/val_frac: need train>0, val>=0, train+val<1");
}

int label_bin(double y) {
  const double c = std::clamp(y, -3.0, 3.0);
  return static_cast<int>(std::lround(c));
}

namespace {

// label-scaled base features: [y, y*sin_j(t), y*cos_j(t) ...]
std::vector<double> base_features(double y, std::size_t t, std::size_t t_len,
                                  const std::vector<std::size_t>& freqs,
                                  const std::vector<double>& phases) {
  std::vector<double> u(1 + 2 * freqs.size());
  u[0] = y;
  for (std::size_t j = 0; j < freqs.size(); ++j) {
    const double arg = 2.0 * std::numbers::pi * static_cast<double>(freqs[j]) *
                           static_cast<double>(t) / static_cast<double>(t_len) +
                       phases[j];
    u[1 + 2 * j] = y * std::sin(arg);
    u[2 + 2 * j] = y * std::cos(arg);
  }
  return u;
}

}  // namespace

Dataset generate(const ArchSpec& arch, const SynthSpec& spec,
                 std::uint64_t seed) {
  arch.validate();
  spec.validate(arch);
  const std::size_t M = arch.modalities;
  const std::size_t F = 1 + 2 * spec.pattern_freqs.size();

  // fixed per-modality projections and phases
  std::vector<Matrix> proj(M);
  std::vector<std::vector<double>> phases(M);
  for (std::size_t m = 0; m < M; ++m) {
    Rng rng(derive_seed(seed, "projection", std::uint64_t(m)));
    proj[m] = Matrix(arch.input_dims[m], F);
    const double scale = 1.0 / std::sqrt(static_cast<double>(F));
    for (auto& v : proj[m].data) v = rng.normal() * scale;
    phases[m].resize(spec.pattern_freqs.size());
    for (auto& p : phases[m]) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  double weight_total = 0.0;
  for (const double w : spec.label_weights) weight_total += w;

  std::vector<AlignedSample> all(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    Rng rng(derive_seed(seed, "sample", std::uint64_t(i)));
    // categorical bin, then jitter that keeps round(y) in the bin
    double pick = rng.uniform() * weight_total;
    int bin = -3;
    for (std::size_t b = 0; b < 7; ++b) {
      pick -= spec.label_weights[b];
      if (pick < 0.0) {
        bin = static_cast<int>(b) - 3;
        break;
      }
    }
    double y = static_cast<double>(bin) + rng.uniform(-0.49, 0.49);
    if (bin == -3) y = -3.0 + rng.uniform(0.0, 0.49);
    if (bin == 3) y = 3.0 - rng.uniform(0.0, 0.49);

    AlignedSample& s = all[i];
    s.label = y;
    s.views.resize(M);
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t t_len =
          arch.t_min + rng.below(arch.t_max - arch.t_min + 1);
      Matrix x(t_len, arch.input_dims[m]);
      for (std::size_t t = 0; t < t_len; ++t) {
        const auto u =
            base_features(y, t, t_len, spec.pattern_freqs, phases[m]);
        for (std::size_t d = 0; d < arch.input_dims[m]; ++d) {
          double v = 0.0;
          for (std::size_t f = 0; f < F; ++f) v += proj[m](d, f) * u[f];
          x(t, d) = v + spec.noise_sigma[m] * rng.normal();
        }
      }
      s.views[m] = std::move(x);
    }
  }

  Dataset out;
  const std::size_t n_val =
      static_cast<std::size_t>(spec.val_frac * static_cast<double>(spec.n_samples));
  const std::size_t n_test = static_cast<std::size_t>(
      (1.0 - spec.train_frac - spec.val_frac) * static_cast<double>(spec.n_samples));
  const std::size_t n_train = spec.n_samples - n_val - n_test;
  out.train.assign(all.begin(), all.begin() + n_train);
  out.val.assign(all.begin() + n_train, all.begin() + n_train + n_val);
  out.test.assign(all.begin() + n_train + n_val, all.end());
  return out;
}

namespace {

// largest-remainder allocation of `total` items to weights
std::vector<std::size_t> apportion(std::size_t total,
                                   const std::vector<double>& weights) {
  double wsum = 0.0;
  for (const double w : weights) wsum += w;
  std::vector<std::size_t> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / wsum;
    counts[i] = static_cast<std::size_t>(exact);
    assigned += counts[i];
    rema.push_back({exact - std::floor(exact), i});
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) {
    counts[rema[i % rema.size()].second]++;
  }
  return counts;
}

void dirichlet_assign(const std::vector<AlignedSample>& train,
                      std::span<PartitionPlan::Shard> shards, double alpha,
                      std::uint64_t seed) {
  // bucket sample indices by label bin
  std::array<std::vector<std::size_t>, 7> bins;
  for (std::size_t i = 0; i < train.size(); ++i) {
    bins[label_bin(train[i].label) + 3].push_back(i);
  }
  Rng shuffle_rng(derive_seed(seed, "bin_shuffle"));
  for (auto& b : bins) shuffle_rng.shuffle(b);

  const std::size_t n_clients = shards.size();
  std::vector<std::vector<double>> props(n_clients);
  for (std::size_t c = 0; c < n_clients; ++c) {
    Rng rng(derive_seed(seed, "dirichlet", std::uint64_t(shards[c].client)));
    props[c] = rng.dirichlet(alpha, 7);
  }
  for (std::size_t b = 0; b < 7; ++b) {
    if (bins[b].empty()) continue;
    std::vector<double> w(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) w[c] = props[c][b];
    const auto counts = apportion(bins[b].size(), w);
    std::size_t off = 0;
    for (std::size_t c = 0; c < n_clients; ++c) {
      for (std::size_t i = 0; i < counts[c]; ++i)
        shards[c].indices.push_back(bins[b][off + i]);
      off += counts[c];
    }
  }
  // no empty shards: move one sample over from the largest
  for (auto& s : shards) {
    if (!s.indices.empty()) continue;
    auto* biggest = &shards[0];
    for (auto& o : shards)
      if (o.indices.size() > biggest->indices.size()) biggest = &o;
    if (biggest->indices.size() < 2)
      throw std::invalid_argument("partition: fewer samples than clients");
    s.indices.push_back(biggest->indices.back());
    biggest->indices.pop_back();
  }
  for (auto& s : shards) std::sort(s.indices.begin(), s.indices.end());
}

}  // namespace

PartitionPlan partition(const std::vector<AlignedSample>& train,
                        std::size_t clients, std::size_t modalities,
                        double alpha, std::uint64_t seed) {
  if (clients == 0 || modalities == 0 || clients % modalities != 0)
    throw std::invalid_argument("partition: clients must divide evenly across modalities");
  if (alpha <= 0.0) throw std::invalid_argument("partition: alpha must be > 0");
  if (train.size() < clients / modalities)
    throw std::invalid_argument("partition: fewer samples than clients");

  PartitionPlan plan;
  plan.alpha = alpha;
  plan.shards.resize(clients);
  const std::size_t per = clients / modalities;
  for (std::size_t k = 0; k < clients; ++k) {
    plan.shards[k].client = static_cast<int>(k);
    plan.shards[k].modality = static_cast<int>(k / per);
  }
  for (std::size_t m = 0; m < modalities; ++m) {
    dirichlet_assign(train, {plan.shards.data() + m * per, per}, alpha,
                     derive_seed(seed, "modality", std::uint64_t(m)));
  }
  return plan;
}

PartitionPlan partition_aligned(const std::vector<AlignedSample>& train,
                                std::size_t clients, double alpha,
                                std::uint64_t seed) {
  if (clients == 0) throw std::invalid_argument("partition: need >= 1 client");
  if (alpha <= 0.0) throw std::invalid_argument("partition: alpha must be > 0");
  if (train.size() < clients)
    throw std::invalid_argument("partition: fewer samples than clients");
  PartitionPlan plan;
  plan.alpha = alpha;
  plan.shards.resize(clients);
  for (std::size_t k = 0; k < clients; ++k) {
    plan.shards[k].client = static_cast<int>(k);
    plan.shards[k].modality = -1;  // holds all modalities
  }
  dirichlet_assign(train, plan.shards, alpha, derive_seed(seed, "aligned"));
  return plan;
}

std::vector<AlignedSample> mask_modalities(std::vector<AlignedSample> samples,
                                           double xi, std::uint64_t seed) {
  if (xi < 0.0 || xi >= 1.0)
    throw std::invalid_argument("mask_modalities: xi must be in [0, 1)");
  if (xi == 0.0) return samples;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(derive_seed(seed, "mask", std::uint64_t(i)));
    auto& s = samples[i];
    const std::size_t m_count = s.views.size();
    std::vector<bool> drop(m_count);
    for (;;) {
      bool any_left = false;
      for (std::size_t m = 0; m < m_count; ++m) {
        drop[m] = s.views[m].has_value() && rng.uniform() < xi;
        if (s.views[m].has_value() && !drop[m]) any_left = true;
      }
      if (any_left) break;  // redraw masks that would empty the sample
    }
    for (std::size_t m = 0; m < m_count; ++m) {
      if (drop[m]) s.views[m].reset();
    }
  }
  return samples;
}

// ---- CSV dataset container ---------------------------------------------

namespace {

const char* kSplits[] = {"train", "val", "test"};

std::string labels_csv(const std::vector<AlignedSample>& split) {
  std::string out = "id,y\n";
  for (std::size_t i = 0; i < split.size(); ++i) {
    out += std::to_string(i);
    out += ',';
    out += format_double(split[i].label);
    out += '\n';
  }
  return out;
}

std::string modality_csv(const std::vector<AlignedSample>& split,
                         std::size_t m, std::size_t dim) {
  std::string out = "id,t";
  for (std::size_t d = 0; d < dim; ++d) out += ",f" + std::to_string(d);
  out += '\n';
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (!split[i].views[m].has_value()) continue;
    const Matrix& x = *split[i].views[m];
    for (std::size_t t = 0; t < x.rows; ++t) {
      out += std::to_string(i);
      out += ',';
      out += std::to_string(t);
      for (std::size_t d = 0; d < dim; ++d) {
        out += ',';
        out += format_double(x(t, d));
      }
      out += '\n';
    }
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw std::runtime_error(where + ": bad numeric field '" + s + "'");
  return v;
}

std::size_t parse_index(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || v < 0)
    throw std::runtime_error(where + ": bad id field '" + s + "'");
  return static_cast<std::size_t>(v);
}

std::vector<AlignedSample> ingest_split(const std::filesystem::path& dir,
                                        const ArchSpec& arch,
                                        const std::string& split) {
  const auto labels_path = dir / (split + "_labels.csv");
  std::istringstream labels_in(read_file(labels_path));
  std::string line;
  if (!std::getline(labels_in, line))
    throw std::runtime_error(labels_path.string() + ": empty file");
  std::map<std::size_t, double> labels;
  std::size_t row = 1;
  while (std::getline(labels_in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where =
        labels_path.string() + " row " + std::to_string(row);
    if (fields.size() != 2)
      throw std::runtime_error(where + ": expected 2 fields");
    const std::size_t id = parse_index(fields[0], where);
    if (!labels.emplace(id, parse_double(fields[1], where)).second)
      throw std::runtime_error(where + ": duplicate id");
  }

  std::vector<AlignedSample> out(labels.size());
  for (const auto& [id, y] : labels) {
    if (id >= out.size())
      throw std::runtime_error(labels_path.string() +
                               ": ids must be dense 0..n-1");
    out[id].label = y;
    out[id].views.resize(arch.modalities);
  }

  for (std::size_t m = 0; m < arch.modalities; ++m) {
    const auto path = dir / (split + "_" + arch.modality_label(m) + ".csv");
    std::istringstream in(read_file(path));
    if (!std::getline(in, line))
      throw std::runtime_error(path.string() + ": empty file");
    // (id, t) -> feature row; map keeps t ascending regardless of file order
    std::map<std::size_t, std::map<std::size_t, std::vector<double>>> rows;
    row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (line.empty()) continue;
      const auto fields = split_csv_line(line);
      const std::string where = path.string() + " row " + std::to_string(row);
      if (fields.size() != 2 + arch.input_dims[m])
        throw std::runtime_error(
            where + ": dimension mismatch, expected " +
            std::to_string(arch.input_dims[m]) + " features, got " +
            std::to_string(fields.size() - 2));
      const std::size_t id = parse_index(fields[0], where);
      const std::size_t t = parse_index(fields[1], where);
      if (!labels.contains(id))
        throw std::runtime_error(where + ": id has no label");
      std::vector<double> feat(arch.input_dims[m]);
      for (std::size_t d = 0; d < feat.size(); ++d)
        feat[d] = parse_double(fields[2 + d], where);
      if (!rows[id].emplace(t, std::move(feat)).second)
        throw std::runtime_error(where + ": duplicate (id,t)");
    }
    for (auto& [id, trows] : rows) {
      Matrix x(trows.size(), arch.input_dims[m]);
      std::size_t t = 0;
      for (auto& [t_orig, feat] : trows) {
        for (std::size_t d = 0; d < feat.size(); ++d) x(t, d) = feat[d];
        ++t;
      }
      out[id].views[m] = std::move(x);
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].present_count() == 0)
      throw std::runtime_error(labels_path.string() + ": sample " +
                               std::to_string(i) + " has no modality data");
  }
  return out;
}

}  // namespace

void export_csv(const std::filesystem::path& dir, const ArchSpec& arch,
                const Dataset& data, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const std::vector<AlignedSample>* splits[] = {&data.train, &data.val,
                                                &data.test};
  for (int s = 0; s < 3; ++s) {
    atomic_write_file(dir / (std::string(kSplits[s]) + "_labels.csv"),
                      labels_csv(*splits[s]));
    for (std::size_t m = 0; m < arch.modalities; ++m) {
      atomic_write_file(
          dir / (std::string(kSplits[s]) + "_" + arch.modality_label(m) +
                 ".csv"),
          modality_csv(*splits[s], m, arch.input_dims[m]));
    }
  }
  (void)seed;
}

Dataset ingest_csv(const std::filesystem::path& dir, const ArchSpec& arch) {
  arch.validate();
  Dataset out;
  out.train = ingest_split(dir, arch, "train");
  out.val = ingest_split(dir, arch, "val");
  out.test = ingest_split(dir, arch, "test");
  return out;
}

std::string dataset_content_hash(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    all += f.filename().string();
    all += '\0';
    all += read_file(f);
  }
  return fnv1a_hex(all);
}

}  // namespace hafed
