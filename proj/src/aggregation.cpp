#include "hafed/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hafed {

void AggregationPolicy::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("aggregation: " + msg);
  };
  if (eta <= 0.0) fail("eta must be > 0");
  if (norm_p < 1.0) fail("norm_p must be >= 1");
  if (var_floor <= 0.0) fail("var_floor must be > 0");
}

ParamMap pbea_server_update(const ParamMap& global,
                            const std::vector<DeltaReport>& reports,
                            double beta) {
  if (reports.empty())
    throw std::invalid_argument("pbea_server_update: no reports");
  ParamMap mean_delta = global.zeros_like();
  for (const auto& r : reports) {
    if (!r.delta.same_layout(global))
      throw std::invalid_argument("pbea_server_update: report layout mismatch");
    mean_delta.axpy(1.0, r.delta);
  }
  mean_delta.scale(1.0 / static_cast<double>(reports.size()));
  ParamMap next = global;
  next.axpy(-beta, mean_delta);
  return next;
}

ParamMap pbea_fixed_point(const std::vector<SampleStats>& stats,
                          double var_floor) {
  if (stats.empty())
    throw std::invalid_argument("pbea_fixed_point: no stats");
  if (var_floor <= 0.0)
    throw std::invalid_argument("pbea_fixed_point: var_floor must be > 0");
  ParamMap num = stats[0].mean.zeros_like();
  ParamMap den = stats[0].mean.zeros_like();
  for (const auto& s : stats) {
    for (std::size_t i = 0; i < num.layer_count(); ++i) {
      auto n = num.values(i);
      auto d = den.values(i);
      const auto mu = s.mean.values(i);
      const auto v = s.variance.values(i);
      for (std::size_t j = 0; j < n.size(); ++j) {
        const double prec = 1.0 / (v[j] + var_floor);
        n[j] += prec * mu[j];
        d[j] += prec;
      }
    }
  }
  for (std::size_t i = 0; i < num.layer_count(); ++i) {
    auto n = num.values(i);
    const auto d = den.values(i);
    for (std::size_t j = 0; j < n.size(); ++j) n[j] /= d[j];
  }
  return num;
}

ParamMap simplified_aggregate(const std::vector<SampleStats>& stats) {
  if (stats.empty())
    throw std::invalid_argument("simplified_aggregate: no stats");
  double total = 0.0;
  for (const auto& s : stats) total += static_cast<double>(s.dataset_size);
  if (total <= 0.0)
    throw std::invalid_argument("simplified_aggregate: zero total size");
  ParamMap out = stats[0].mean.zeros_like();
  for (const auto& s : stats) {
    out.axpy(static_cast<double>(s.dataset_size) / total, s.mean);
  }
  return out;
}

ParamMap fedavg_aggregate(const std::vector<const ParamMap*>& params,
                          const std::vector<double>& weights) {
  if (params.empty() || params.size() != weights.size())
    throw std::invalid_argument("fedavg_aggregate: bad arguments");
  double total = 0.0;
  for (const double w : weights) total += w;
  if (total <= 0.0)
    throw std::invalid_argument("fedavg_aggregate: weight sum must be > 0");
  ParamMap out = params[0]->zeros_like();
  for (std::size_t k = 0; k < params.size(); ++k) {
    out.axpy(weights[k] / total, *params[k]);
  }
  return out;
}

double default_beta(const std::vector<SampleStats>& stats, double var_floor) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : stats) {
    for (std::size_t i = 0; i < s.variance.layer_count(); ++i) {
      for (const double v : s.variance.values(i)) {
        sum += 1.0 / (v + var_floor);
        ++n;
      }
    }
  }
  if (n == 0) return 1e-3;
  const double beta = 0.5 / (sum / static_cast<double>(n));
  return std::clamp(beta, 1e-3, 1.0);
}

std::vector<double> cmda_coefficients(const ParamMap& query,
                                      const ParamMap& key, double norm_p) {
  if (!query.same_layout(key))
    throw std::invalid_argument("cmda_coefficients: layout mismatch");
  const std::size_t L = query.layer_count();
  std::vector<double> gamma(L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto q = query.values(l);
    const auto k = key.values(l);
    double acc = 0.0;
    double max_abs = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double d = std::abs(q[j] - k[j]);
      acc += std::pow(d, norm_p);
      max_abs = std::max(max_abs, d);
    }
    gamma[l] = std::isinf(norm_p) ? max_abs : std::pow(acc, 1.0 / norm_p);
  }
  // softmax over the layer axis
  double g_max = *std::max_element(gamma.begin(), gamma.end());
  double denom = 0.0;
  std::vector<double> psi(L);
  for (std::size_t l = 0; l < L; ++l) {
    psi[l] = std::exp(gamma[l] - g_max);
    denom += psi[l];
  }
  for (auto& p : psi) p /= denom;
  return psi;
}

ParamMap cmda_pair_update(const ParamMap& query, const ParamMap& key,
                          const std::vector<double>& psi, double eta) {
  if (!query.same_layout(key))
    throw std::invalid_argument("cmda_pair_update: layout mismatch");
  if (psi.size() != query.layer_count())
    throw std::invalid_argument("cmda_pair_update: psi size mismatch");
  ParamMap out = query;
  for (std::size_t l = 0; l < out.layer_count(); ++l) {
    auto o = out.values(l);
    const auto k = key.values(l);
    const double step = eta * psi[l];
    for (std::size_t j = 0; j < o.size(); ++j) {
      o[j] -= step * (o[j] - k[j]);
    }
  }
  return out;
}

ParamMap cmda_aggregate(const std::vector<ParamMap>& decoders, double eta,
                        double norm_p) {
  const std::size_t m = decoders.size();
  if (m < 2) throw std::invalid_argument("cmda_aggregate: need >= 2 decoders");
  ParamMap acc = decoders[0].zeros_like();
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto psi = cmda_coefficients(decoders[i], decoders[j], norm_p);
      acc.axpy(1.0, cmda_pair_update(decoders[i], decoders[j], psi, eta));
      ++pairs;
    }
  }
  acc.scale(1.0 / static_cast<double>(pairs));
  return acc;
}

ParamMap concatenate_global(const std::vector<ModalityAggregate>& aggregates,
                            const ParamMap& global_decoder) {
  if (aggregates.empty())
    throw std::invalid_argument("concatenate_global: no aggregates");
  ParamMap global = aggregates[0].params;  // layout donor
  std::vector<bool> seen(aggregates.size(), false);
  for (const auto& agg : aggregates) {
    const int m = agg.modality;
    if (m < 0 || static_cast<std::size_t>(m) >= aggregates.size() || seen[m])
      throw std::invalid_argument("concatenate_global: bad modality set");
    seen[m] = true;
    global.assign_from(agg.params.slice(Partition::stem, m));
    global.assign_from(agg.params.slice(Partition::stack, m));
  }
  for (const bool s : seen) {
    if (!s)
      throw std::invalid_argument("concatenate_global: missing modality aggregate");
  }
  global.assign_from(global_decoder);
  return global;
}

}  // namespace hafed
