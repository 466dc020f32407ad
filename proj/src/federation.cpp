#include "hafed/federation.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <span>
#include <stdexcept>
#include <thread>

#include "hafed/objectives.hpp"

namespace hafed {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::base: return "base";
    case Variant::plus: return "plus";
    case Variant::plus_plus_s: return "plus_plus_s";
    case Variant::plus_plus: return "plus_plus";
  }
  return "?";
}

const char* setting_name(Setting s) {
  return s == Setting::utmp ? "utmp" : "vanilla_multimodal";
}

void ExperimentConfig::validate() const {
  arch.validate();
  synth.validate(arch);
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("federation: " + msg);
  };
  if (clients_total < 1) fail("clients: must be >= 1");
  if (clients_per_round < 1 || clients_per_round > clients_total)
    fail("clients_per_round: must be in [1, clients]");
  if (setting == Setting::utmp && clients_total % arch.modalities != 0)
    fail("clients: must divide evenly across modalities");
  if (local_epochs < 0) fail("local_epochs: must be >= 0");
  if (batch_size < 1) fail("batch_size: must be >= 1");
  if (lr <= 0.0) fail("lr: must be > 0");
  if (update_steps < 1) fail("update_steps: must be >= 1");
  if (sample_times < 1) fail("sample_times: must be >= 1");
  if (mu_prox < 0.0) fail("mu_prox: must be >= 0");
  if (alpha_skew <= 0.0) fail("alpha_skew: must be > 0");
  if (missing_rate < 0.0 || missing_rate >= 1.0)
    fail("missing_rate: must be in [0, 1)");
  if (eta <= 0.0) fail("eta: must be > 0");
  if (norm_p < 1.0) fail("norm_p: must be >= 1");
  if (var_floor <= 0.0) fail("var_floor: must be > 0");
  if (eval_samples < 1) fail("eval_samples: must be >= 1");
  if (probe_samples < 1) fail("probe_samples: must be >= 1");
  if (workers < 1) fail("workers: must be >= 1");
  if (!active_modalities.empty()) {
    std::set<std::size_t> seen;
    for (const std::size_t m : active_modalities) {
      if (m >= arch.modalities)
        fail("active_modalities: id out of range");
      if (!seen.insert(m).second) fail("active_modalities: duplicate id");
    }
    if (setting == Setting::utmp && clients_total % seen.size() != 0)
      fail("clients: must divide evenly across active modalities");
  }
  for (const double xi : robustness_xi) {
    if (xi < 0.0 || xi >= 1.0) fail("robustness_xi: entries must be in [0, 1)");
  }
  if (robustness_seeds < 1) fail("robustness_seeds: must be >= 1");
}

AggregationPolicy ExperimentConfig::policy() const {
  AggregationPolicy p;
  switch (variant) {
    case Variant::base:
      p.encoder = EncoderPolicy::fedavg;
      p.decoder = DecoderPolicy::plain_average;
      break;
    case Variant::plus:
      p.encoder = EncoderPolicy::fedavg;
      p.decoder = DecoderPolicy::cmda;
      break;
    case Variant::plus_plus_s:
      p.encoder = EncoderPolicy::pbea_simplified;
      p.decoder = DecoderPolicy::cmda;
      break;
    case Variant::plus_plus:
      p.encoder = EncoderPolicy::pbea;
      p.decoder = DecoderPolicy::cmda;
      break;
  }
  p.beta_override = beta_override;
  p.eta = eta;
  p.norm_p = norm_p;
  p.var_floor = var_floor;
  return p;
}

std::vector<std::size_t> ExperimentConfig::active_set() const {
  if (active_modalities.empty()) {
    std::vector<std::size_t> all(arch.modalities);
    for (std::size_t m = 0; m < all.size(); ++m) all[m] = m;
    return all;
  }
  std::vector<std::size_t> out = active_modalities;
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> sample_clients(std::size_t total, std::size_t n,
                                std::uint64_t round_seed) {
  if (n > total)
    throw std::invalid_argument("sample_clients: n exceeds client count");
  Rng rng(round_seed);
  const auto picked = rng.sample_without_replacement(total, n);
  std::vector<int> out(picked.size());
  for (std::size_t i = 0; i < picked.size(); ++i)
    out[i] = static_cast<int>(picked[i]);
  return out;
}

namespace {

// first rounds: cover every populated modality (round-robin when n is
// smaller), remainder filled uniformly
std::vector<int> sample_clients_stratified(const PartitionPlan& plan,
                                           std::span<const std::size_t> active,
                                           std::size_t n, int round_idx,
                                           std::uint64_t round_seed) {
  Rng rng(round_seed);
  std::vector<std::vector<int>> groups(active.size());
  for (const auto& s : plan.shards) {
    for (std::size_t g = 0; g < active.size(); ++g) {
      if (static_cast<std::size_t>(s.modality) == active[g])
        groups[g].push_back(s.client);
    }
  }

  std::set<int> chosen;
  const std::size_t cover = std::min(n, active.size());
  for (std::size_t i = 0; i < cover; ++i) {
    const std::size_t g =
        (static_cast<std::size_t>(round_idx - 1) + i) % active.size();
    chosen.insert(groups[g][rng.below(groups[g].size())]);
  }
  std::vector<int> rest;
  for (const auto& s : plan.shards) {
    if (!chosen.contains(s.client)) rest.push_back(s.client);
  }
  while (chosen.size() < n) {
    const std::size_t i = rng.below(rest.size());
    chosen.insert(rest[i]);
    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(i));
  }
  return {chosen.begin(), chosen.end()};
}

struct ClientRoundResult {
  int client_id = 0;
  int modality = 0;
  std::size_t dataset_size = 0;
  double train_loss = 0.0;
  ParamMap trained;
  SampleStats stats;
  DeltaReport delta;
  bool has_stats = false;
  std::string error;
};

template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const int t_count = std::min<std::size_t>(workers, count);
  std::vector<std::thread> pool;
  pool.reserve(t_count);
  for (int t = 0; t < t_count; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += static_cast<std::size_t>(t_count))
        fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

ExperimentRunner::ExperimentRunner(ExperimentConfig config, Dataset dataset)
    : cfg_(std::move(config)), data_(std::move(dataset)) {
  cfg_.validate();
  if (data_.train.empty() || data_.val.empty())
    throw std::invalid_argument("experiment: dataset has empty splits");

  const std::vector<std::size_t> active = cfg_.active_set();
  if (cfg_.setting == Setting::utmp) {
    plan_ = partition(data_.train, cfg_.clients_total, active.size(),
                      cfg_.alpha_skew, derive_seed(cfg_.master_seed, "plan"));
    // remap group index -> actual modality id
    for (auto& shard : plan_.shards)
      shard.modality = static_cast<int>(active[shard.modality]);
  } else {
    plan_ = partition_aligned(data_.train, cfg_.clients_total, cfg_.alpha_skew,
                              derive_seed(cfg_.master_seed, "plan"));
  }

  clients_.resize(cfg_.clients_total);
  for (const auto& shard : plan_.shards) {
    ClientState st;
    st.id = shard.client;
    st.modality = shard.modality;
    st.lr = cfg_.lr;
    st.update_steps = cfg_.update_steps;
    st.sample_times = cfg_.sample_times;
    st.mu_prox = cfg_.mu_prox;
    st.batch_size = cfg_.batch_size;
    if (cfg_.setting == Setting::utmp) {
      std::vector<SeqSample> samples;
      samples.reserve(shard.indices.size());
      for (const std::size_t idx : shard.indices) {
        const auto& view = data_.train[idx].views[shard.modality];
        if (!view.has_value()) continue;
        samples.push_back(SeqSample{*view, shard.modality,
                                    data_.train[idx].label});
      }
      st.data = std::make_shared<UnimodalObjective>(std::move(samples),
                                                    cfg_.arch, cfg_.loss);
    } else {
      std::vector<AlignedSample> samples;
      samples.reserve(shard.indices.size());
      for (const std::size_t idx : shard.indices)
        samples.push_back(data_.train[idx]);
      st.data = std::make_shared<MultimodalObjective>(std::move(samples),
                                                      cfg_.arch, cfg_.loss);
    }
    clients_[shard.client] = std::move(st);
  }

  init_ = init_params(cfg_.arch, derive_seed(cfg_.master_seed, "init"));
  last_aggregate_.assign(cfg_.arch.modalities, init_);

  const std::size_t n_eval = std::min(cfg_.eval_samples, data_.val.size());
  eval_set_.assign(data_.val.begin(), data_.val.begin() + n_eval);
  if (cfg_.missing_rate > 0.0) {
    eval_set_ = mask_modalities(std::move(eval_set_), cfg_.missing_rate,
                                derive_seed(cfg_.master_seed, "eval_mask"));
  }
  const std::size_t n_probe = std::min(cfg_.probe_samples, data_.val.size());
  probe_set_.assign(data_.val.begin(), data_.val.begin() + n_probe);

  if (active.size() < cfg_.arch.modalities) {
    // untrained encoders stay at their init; keep them out of evaluation
    std::vector<bool> keep(cfg_.arch.modalities, false);
    for (const std::size_t m : active) keep[m] = true;
    auto strip = [&](std::vector<AlignedSample>& set) {
      for (auto& s : set) {
        for (std::size_t m = 0; m < keep.size(); ++m) {
          if (!keep[m]) s.views[m].reset();
        }
      }
    };
    strip(eval_set_);
    strip(probe_set_);
  }
}

RoundLog ExperimentRunner::evaluate(const ParamMap& global, int round_idx,
                                    const std::vector<int>& participants,
                                    double train_loss, double seconds) const {
  RoundLog log;
  log.round = round_idx;
  log.participants = participants;
  log.train_loss = train_loss;
  log.metrics = evaluate_global(global, cfg_.arch, eval_set_);
  log.shrinkage = shrinkage_diagnostic(global, cfg_.arch, probe_set_);
  log.wall_seconds = seconds;
  return log;
}

std::pair<ParamMap, RoundLog> ExperimentRunner::run_round(
    const ParamMap& global, int round_idx, RoundDebug* debug) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t M = cfg_.arch.modalities;
  const AggregationPolicy policy = cfg_.policy();
  const std::vector<std::size_t> active = cfg_.active_set();
  const std::uint64_t round_seed =
      derive_seed(cfg_.master_seed, "sample_clients", std::uint64_t(round_idx));

  std::vector<int> selected;
  if (cfg_.setting == Setting::utmp &&
      round_idx <= static_cast<int>(active.size())) {
    selected = sample_clients_stratified(plan_, active, cfg_.clients_per_round,
                                         round_idx, round_seed);
  } else {
    selected =
        sample_clients(cfg_.clients_total, cfg_.clients_per_round, round_seed);
  }

  const bool needs_sampling =
      cfg_.setting == Setting::utmp &&
      policy.encoder != EncoderPolicy::fedavg;

  std::vector<ClientRoundResult> results(selected.size());
  parallel_for(selected.size(), cfg_.workers, [&](std::size_t i) {
    const int k = selected[i];
    ClientState state = clients_[k];
    state.seed = derive_seed(cfg_.master_seed, "round", std::uint64_t(round_idx),
                             "client", std::uint64_t(k));
    ClientRoundResult& res = results[i];
    res.client_id = k;
    res.modality = state.modality;
    res.dataset_size = state.data->size();
    try {
      res.trained = local_train(global, state, cfg_.local_epochs);
      std::vector<std::size_t> all(state.data->size());
      for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
      res.train_loss = state.data->batch_loss(res.trained, all);
      if (needs_sampling) {
        res.stats = sample_posterior(res.trained, state);
        res.has_stats = true;
        // delta anchors at the downloaded global, so local training enters
        // the server update through the posterior mean
        if (policy.encoder == EncoderPolicy::pbea)
          res.delta = compute_delta(global, res.stats, policy.var_floor);
      }
    } catch (const std::exception& e) {
      res.error = e.what();
    }
  });
  for (const auto& res : results) {
    if (!res.error.empty())
      throw nn::DivergenceError("client " + std::to_string(res.client_id) +
                                ": " + res.error);
  }

  double train_loss = 0.0;
  for (const auto& r : results) train_loss += r.train_loss;
  train_loss /= static_cast<double>(results.size());

  ParamMap next_global;
  if (cfg_.setting == Setting::vanilla_multimodal) {
    // plain dataset-size-weighted FedAvg; no cross-modality stage
    std::vector<const ParamMap*> ps;
    std::vector<double> ws;
    for (const auto& r : results) {
      ps.push_back(&r.trained);
      ws.push_back(static_cast<double>(r.dataset_size));
    }
    next_global = fedavg_aggregate(ps, ws);
    if (debug) debug->beta_used = 0.0;
  } else {
    double beta = policy.beta_override;
    if (policy.encoder == EncoderPolicy::pbea && beta <= 0.0) {
      std::vector<SampleStats> all_stats;
      for (const auto& r : results) all_stats.push_back(r.stats);
      beta = default_beta(all_stats, policy.var_floor);
    }

    std::vector<ModalityAggregate> aggregates(M);
    for (std::size_t m = 0; m < M; ++m) {
      std::vector<const ParamMap*> ps;
      std::vector<double> ws;
      std::vector<SampleStats> stats;
      std::vector<DeltaReport> deltas;
      std::vector<int> ids;
      for (const auto& r : results) {
        if (r.modality != static_cast<int>(m)) continue;
        ids.push_back(r.client_id);
        ps.push_back(&r.trained);
        ws.push_back(static_cast<double>(r.dataset_size));
        if (r.has_stats) stats.push_back(r.stats);
        if (policy.encoder == EncoderPolicy::pbea) deltas.push_back(r.delta);
      }
      aggregates[m].modality = static_cast<int>(m);
      aggregates[m].client_ids = ids;
      if (ids.empty()) {
        aggregates[m].params = last_aggregate_[m];  // carry forward
        continue;
      }
      switch (policy.encoder) {
        case EncoderPolicy::fedavg:
          aggregates[m].params = fedavg_aggregate(ps, ws);
          break;
        case EncoderPolicy::pbea_simplified:
          aggregates[m].params = simplified_aggregate(stats);
          break;
        case EncoderPolicy::pbea:
          aggregates[m].params = pbea_server_update(global, deltas, beta);
          break;
      }
      last_aggregate_[m] = aggregates[m].params;
    }

    // decoder stage runs over the active modality aggregates only
    std::vector<ParamMap> decoders;
    decoders.reserve(active.size());
    for (const std::size_t m : active)
      decoders.push_back(aggregates[m].params.slice(Partition::decoder));

    ParamMap global_decoder;
    if (decoders.size() == 1) {
      global_decoder = decoders[0];
    } else if (policy.decoder == DecoderPolicy::cmda) {
      global_decoder = cmda_aggregate(decoders, policy.eta, policy.norm_p);
      if (debug) {
        for (std::size_t i = 0; i < decoders.size(); ++i) {
          for (std::size_t j = i + 1; j < decoders.size(); ++j) {
            debug->psi[cfg_.arch.modality_label(active[i]) + "-" +
                       cfg_.arch.modality_label(active[j])] =
                cmda_coefficients(decoders[i], decoders[j], policy.norm_p);
          }
        }
      }
    } else {
      std::vector<const ParamMap*> ps;
      std::vector<double> ws;
      for (const auto& d : decoders) {
        ps.push_back(&d);
        ws.push_back(1.0);
      }
      global_decoder = fedavg_aggregate(ps, ws);
    }
    next_global = concatenate_global(aggregates, global_decoder);

    if (debug) {
      debug->aggregates = aggregates;
      debug->beta_used = policy.encoder == EncoderPolicy::pbea ? beta : 0.0;
      for (const auto& r : results) {
        if (!r.has_stats) continue;
        RoundDebug::StatsDigest d;
        d.client_id = r.client_id;
        d.modality = r.modality;
        d.dataset_size = r.dataset_size;
        double acc = 0.0;
        std::size_t n = 0;
        for (std::size_t l = 0; l < r.stats.variance.layer_count(); ++l) {
          for (const double v : r.stats.variance.values(l)) {
            acc += 1.0 / (v + policy.var_floor);
            ++n;
          }
        }
        d.mean_precision = n ? acc / static_cast<double>(n) : 0.0;
        debug->stats.push_back(d);
      }
    }
  }

  if (!next_global.all_finite())
    throw nn::DivergenceError("aggregated global has non-finite parameters");

  const auto t1 = std::chrono::steady_clock::now();
  const double secs = std::chrono::duration<double>(t1 - t0).count();
  RoundLog log = evaluate(next_global, round_idx, selected, train_loss, secs);
  return {std::move(next_global), std::move(log)};
}

RunResult ExperimentRunner::run(
    const std::function<void(const RoundLog&, const RoundDebug&)>& on_round) {
  RunResult result;
  ParamMap global = init_;
  last_aggregate_.assign(cfg_.arch.modalities, init_);

  RoundDebug init_debug;
  RoundLog init_log = evaluate(global, 0, {}, 0.0, 0.0);
  if (on_round) on_round(init_log, init_debug);
  result.logs.push_back(std::move(init_log));

  for (std::size_t r = 1; r <= cfg_.rounds; ++r) {
    RoundDebug debug;
    try {
      auto [next, log] = run_round(global, static_cast<int>(r), &debug);
      global = std::move(next);
      if (on_round) on_round(log, debug);
      result.logs.push_back(std::move(log));
    } catch (const nn::DivergenceError& e) {
      result.diverged = true;
      result.diagnostic =
          "diverged at round " + std::to_string(r) + ": " + e.what();
      break;
    }
  }
  result.final_params = std::move(global);
  return result;
}

}  // namespace hafed
