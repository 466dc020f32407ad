#pragma once

#include <vector>

#include "hafed/client.hpp"
#include "hafed/param_map.hpp"

namespace hafed {

enum class EncoderPolicy { pbea, pbea_simplified, fedavg };
enum class DecoderPolicy { cmda, plain_average };

struct AggregationPolicy {
  EncoderPolicy encoder = EncoderPolicy::pbea;
  DecoderPolicy decoder = DecoderPolicy::cmda;
  double beta_override = 0.0;  // <= 0 means derive from reported precisions
  double eta = 0.5;
  double norm_p = 2.0;
  double var_floor = 1e-4;

  void validate() const;
};

struct ModalityAggregate {
  int modality = 0;
  ParamMap params;
  std::vector<int> client_ids;
};

// One quadratic-surrogate descent step: theta' = theta - beta * mean(delta_k)
ParamMap pbea_server_update(const ParamMap& global,
                            const std::vector<DeltaReport>& reports,
                            double beta);

// Closed-form precision-weighted mean, per coordinate. Serves as the
// one-shot aggregation mode and as the oracle the iterative path must
// converge to.
ParamMap pbea_fixed_point(const std::vector<SampleStats>& stats,
                          double var_floor);

// Dataset-size-weighted average of the posterior means.
ParamMap simplified_aggregate(const std::vector<SampleStats>& stats);

ParamMap fedavg_aggregate(const std::vector<const ParamMap*>& params,
                          const std::vector<double>& weights);

// beta = 0.5 / mean diagonal precision, clamped to [1e-3, 1]
double default_beta(const std::vector<SampleStats>& stats, double var_floor);

// softmax over per-layer p-norm distances; one coefficient per layer
std::vector<double> cmda_coefficients(const ParamMap& query,
                                      const ParamMap& key, double norm_p);

// per layer: theta_c = theta_q - eta * psi_l * (theta_q - theta_k)
ParamMap cmda_pair_update(const ParamMap& query, const ParamMap& key,
                          const std::vector<double>& psi, double eta);

// all C(M,2) unordered pairs, lower index as query, plain mean of results
ParamMap cmda_aggregate(const std::vector<ParamMap>& decoders, double eta,
                        double norm_p);

// global = per-modality encoders from their own aggregates + given decoder
ParamMap concatenate_global(const std::vector<ModalityAggregate>& aggregates,
                            const ParamMap& global_decoder);

}  // namespace hafed
