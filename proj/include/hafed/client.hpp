#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "hafed/param_map.hpp"
#include "hafed/rng.hpp"

namespace hafed {

// Anything minibatch SGD can descend: a dataset of indexable examples with
// a mean loss and mean gradient over an index batch. The federated model
// provides the real implementations; tests plug in closed-form toys.
class SgdObjective {
 public:
  virtual ~SgdObjective() = default;
  virtual std::size_t size() const = 0;
  virtual double batch_loss(const ParamMap& params,
                            std::span<const std::size_t> batch) const = 0;
  // returns mean loss; writes the mean gradient into `grad` (zeroed first)
  virtual double batch_loss_grad(const ParamMap& params,
                                 std::span<const std::size_t> batch,
                                 ParamMap& grad) const = 0;
};

struct ClientState {
  int id = 0;
  int modality = 0;
  std::shared_ptr<const SgdObjective> data;
  double lr = 0.05;          // phi
  int update_steps = 3;      // T
  int sample_times = 5;      // S
  double mu_prox = 0.0;
  std::uint64_t seed = 0;
  std::size_t batch_size = 16;

  void validate() const;  // throws std::invalid_argument
};

// Per-layer posterior moments over S short runs. Variance is the diagonal
// population variance (divisor S), so S=1 gives exact zeros.
struct SampleStats {
  int client_id = 0;
  int modality = 0;
  std::size_t dataset_size = 0;
  int sample_count = 0;
  ParamMap mean;
  ParamMap variance;
};

struct DeltaReport {
  int client_id = 0;
  int modality = 0;
  std::size_t dataset_size = 0;
  ParamMap delta;
};

// theta <- theta - lr * grad[ loss(batch) + (mu_prox/2)*||theta-anchor||^2 ]
ParamMap client_opt_step(const ParamMap& params,
                         std::span<const std::size_t> batch,
                         const ClientState& state,
                         const ParamMap* anchor = nullptr);

// `epochs` passes of shuffled minibatches; deterministic under state.seed
ParamMap local_train(const ParamMap& params, const ClientState& state,
                     int epochs);

// S independent short runs, each branching from `start_params` on a fresh
// half-dataset shard; per-layer mean and diagonal variance of the results.
SampleStats sample_posterior(const ParamMap& start_params,
                             const ClientState& state);

// delta = (global - mean) / (variance + var_floor), elementwise
DeltaReport compute_delta(const ParamMap& global_params,
                          const SampleStats& stats, double var_floor);

}  // namespace hafed
