#include "hafed/client.hpp"

#include <stdexcept>

#include "hafed/nn.hpp"

namespace hafed {

void ClientState::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("client: " + msg);
  };
  if (!data || data->size() == 0) fail("dataset must be nonempty");
  if (lr <= 0.0) fail("lr must be > 0");
  if (update_steps < 0) fail("update_steps must be >= 0");
  if (sample_times < 1) fail("sample_times must be >= 1");
  if (mu_prox < 0.0) fail("mu_prox must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
}

ParamMap client_opt_step(const ParamMap& params,
                         std::span<const std::size_t> batch,
                         const ClientState& state, const ParamMap* anchor) {
  ParamMap grad = params.zeros_like();
  state.data->batch_loss_grad(params, batch, grad);
  if (state.mu_prox > 0.0 && anchor != nullptr) {
    grad.axpy(state.mu_prox, params);
    grad.axpy(-state.mu_prox, *anchor);
  }
  if (!grad.all_finite())
    throw nn::DivergenceError("client step: non-finite gradient");
  ParamMap next = params;
  next.axpy(-state.lr, grad);
  if (!next.all_finite())
    throw nn::DivergenceError("client step: non-finite parameter update");
  return next;
}

ParamMap local_train(const ParamMap& params, const ClientState& state,
                     int epochs) {
  state.validate();
  if (epochs < 0) throw std::invalid_argument("local_train: epochs < 0");
  Rng rng(derive_seed(state.seed, "local_train"));
  const std::size_t n = state.data->size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  ParamMap cur = params;
  const ParamMap anchor = params;  // FedProx pulls toward the download
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t off = 0; off < n; off += state.batch_size) {
      const std::size_t len = std::min(state.batch_size, n - off);
      cur = client_opt_step(cur, {order.data() + off, len}, state,
                            state.mu_prox > 0.0 ? &anchor : nullptr);
    }
  }
  return cur;
}

SampleStats sample_posterior(const ParamMap& start_params,
                             const ClientState& state) {
  state.validate();
  const std::size_t n = state.data->size();
  const std::size_t shard_size = std::max<std::size_t>(1, n / 2);

  std::vector<ParamMap> samples;
  samples.reserve(state.sample_times);
  for (int s = 0; s < state.sample_times; ++s) {
    // every run branches from the same start; shard keyed by s alone
    Rng rng(derive_seed(state.seed, "posterior_sample", std::uint64_t(s)));
    const std::vector<std::size_t> shard =
        rng.sample_without_replacement(n, shard_size);
    ParamMap theta = start_params;
    for (int t = 0; t < state.update_steps; ++t) {
      theta = client_opt_step(theta, shard, state,
                              state.mu_prox > 0.0 ? &start_params : nullptr);
    }
    samples.push_back(std::move(theta));
  }

  SampleStats stats;
  stats.client_id = state.id;
  stats.modality = state.modality;
  stats.dataset_size = n;
  stats.sample_count = state.sample_times;
  stats.mean = start_params.zeros_like();
  for (const auto& s : samples) stats.mean.axpy(1.0, s);
  stats.mean.scale(1.0 / static_cast<double>(samples.size()));

  stats.variance = start_params.zeros_like();
  for (std::size_t i = 0; i < stats.variance.layer_count(); ++i) {
    auto var = stats.variance.values(i);
    const auto mean = stats.mean.values(i);
    for (const auto& s : samples) {
      const auto v = s.values(i);
      for (std::size_t j = 0; j < var.size(); ++j) {
        const double d = v[j] - mean[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < var.size(); ++j)
      var[j] /= static_cast<double>(samples.size());
  }
  return stats;
}

DeltaReport compute_delta(const ParamMap& global_params,
                          const SampleStats& stats, double var_floor) {
  if (var_floor <= 0.0)
    throw std::invalid_argument("compute_delta: var_floor must be > 0");
  if (!global_params.same_layout(stats.mean))
    throw std::invalid_argument("compute_delta: layout mismatch");
  DeltaReport report;
  report.client_id = stats.client_id;
  report.modality = stats.modality;
  report.dataset_size = stats.dataset_size;
  report.delta = global_params.zeros_like();
  for (std::size_t i = 0; i < report.delta.layer_count(); ++i) {
    auto d = report.delta.values(i);
    const auto g = global_params.values(i);
    const auto mu = stats.mean.values(i);
    const auto v = stats.variance.values(i);
    for (std::size_t j = 0; j < d.size(); ++j) {
      d[j] = (g[j] - mu[j]) / (v[j] + var_floor);
    }
  }
  return report;
}

}  // namespace hafed
