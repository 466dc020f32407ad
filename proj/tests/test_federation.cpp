#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <set>

#include "hafed/federation.hpp"
#include "hafed/objectives.hpp"

using namespace hafed;

namespace {

// small-but-real configuration for orchestration tests
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.arch.modalities = 3;
  cfg.arch.input_dims = {4, 3, 2};
  cfg.arch.t_min = 4;
  cfg.arch.t_max = 6;
  cfg.arch.d_model = 4;
  cfg.arch.heads = 2;
  cfg.arch.encoder_layers = 1;
  cfg.arch.lstm_hidden = 3;
  cfg.arch.decoder_widths = {3};
  cfg.synth.n_samples = 120;
  cfg.synth.noise_sigma = {0.3, 0.3, 0.3};
  cfg.synth.pattern_freqs = {1, 2};
  cfg.clients_total = 6;
  cfg.clients_per_round = 3;
  cfg.rounds = 2;
  cfg.local_epochs = 1;
  cfg.batch_size = 8;
  cfg.lr = 0.02;
  cfg.update_steps = 2;
  cfg.sample_times = 3;
  cfg.alpha_skew = 1.0;
  cfg.eval_samples = 18;
  cfg.probe_samples = 8;
  cfg.master_seed = 777;
  cfg.data_seed = 4242;
  return cfg;
}

Dataset tiny_data(const ExperimentConfig& cfg) {
  return generate(cfg.arch, cfg.synth, cfg.data_seed);
}

}  // namespace

TEST_CASE("sample_clients returns all ids sorted when n equals K") {
  const auto ids = sample_clients(8, 8, 123);
  REQUIRE(ids.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(ids[i] == i);
}

TEST_CASE("sample_clients is deterministic per seed") {
  CHECK(sample_clients(30, 10, 55) == sample_clients(30, 10, 55));
  CHECK(sample_clients(30, 10, 55) != sample_clients(30, 10, 56));
  CHECK_THROWS_AS(sample_clients(5, 6, 1), std::invalid_argument);
}

TEST_CASE("selection frequency stays within three sigma of n/K") {
  const std::size_t K = 30, n = 10, rounds = 10000;
  std::vector<std::size_t> counts(K, 0);
  for (std::size_t r = 0; r < rounds; ++r) {
    for (const int id : sample_clients(K, n, derive_seed(9, "freq", r)))
      counts[id]++;
  }
  const double p = static_cast<double>(n) / K;
  const double sigma = std::sqrt(p * (1 - p) / rounds);
  for (const auto c : counts) {
    const double freq = static_cast<double>(c) / rounds;
    CHECK(std::abs(freq - p) < 3.0 * sigma + 1e-12);
  }
}

TEST_CASE("no-op round leaves the global untouched") {
  // one client per modality, no local epochs, fedavg + plain average
  ExperimentConfig cfg = tiny_config();
  cfg.clients_total = 3;
  cfg.clients_per_round = 3;
  cfg.variant = Variant::base;
  cfg.local_epochs = 0;
  ExperimentRunner runner(cfg, tiny_data(cfg));
  const ParamMap& init = runner.initial_params();
  auto [next, log] = runner.run_round(init, 1);
  // the decoder average of identical copies is exact up to rounding of 1/M
  CHECK(next.max_abs_diff(init) < 1e-15);
  CHECK(log.participants.size() == 3);
}

TEST_CASE("a one-client modality group aggregates to that client's result") {
  ExperimentConfig cfg = tiny_config();
  cfg.clients_total = 3;  // exactly one client per modality
  cfg.clients_per_round = 3;
  cfg.variant = Variant::base;
  Dataset data = tiny_data(cfg);
  ExperimentRunner runner(cfg, data);
  RoundDebug debug;
  auto [next, log] = runner.run_round(runner.initial_params(), 1, &debug);

  // rebuild each client's local training independently and compare
  const PartitionPlan& plan = runner.plan();
  for (const auto& agg : debug.aggregates) {
    REQUIRE(agg.client_ids.size() == 1);
    const int k = agg.client_ids[0];
    std::vector<SeqSample> samples;
    for (const std::size_t idx : plan.shards[k].indices) {
      samples.push_back(SeqSample{*data.train[idx].views[agg.modality],
                                  agg.modality, data.train[idx].label});
    }
    ClientState st;
    st.id = k;
    st.modality = agg.modality;
    st.data = std::make_shared<UnimodalObjective>(samples, cfg.arch, cfg.loss);
    st.lr = cfg.lr;
    st.update_steps = cfg.update_steps;
    st.sample_times = cfg.sample_times;
    st.batch_size = cfg.batch_size;
    st.seed = derive_seed(cfg.master_seed, "round", std::uint64_t(1), "client",
                          std::uint64_t(k));
    const ParamMap trained =
        local_train(runner.initial_params(), st, cfg.local_epochs);
    CHECK(agg.params == trained);
  }
}

TEST_CASE("two-round run replays bit-identically") {
  const ExperimentConfig cfg = tiny_config();
  ExperimentRunner r1(cfg, tiny_data(cfg));
  ExperimentRunner r2(cfg, tiny_data(cfg));
  const RunResult a = r1.run();
  const RunResult b = r2.run();
  CHECK(a.final_params == b.final_params);
  REQUIRE(a.logs.size() == b.logs.size());
  for (std::size_t i = 0; i < a.logs.size(); ++i) {
    CHECK(a.logs[i].metrics.mae == b.logs[i].metrics.mae);
    CHECK(a.logs[i].train_loss == b.logs[i].train_loss);
    CHECK(a.logs[i].shrinkage == b.logs[i].shrinkage);
    CHECK(a.logs[i].participants == b.logs[i].participants);
  }
}

TEST_CASE("worker count does not change the result") {
  ExperimentConfig cfg = tiny_config();
  cfg.workers = 1;
  ExperimentRunner r1(cfg, tiny_data(cfg));
  cfg.workers = 4;
  ExperimentRunner r4(cfg, tiny_data(cfg));
  CHECK(r1.run().final_params == r4.run().final_params);
}

TEST_CASE("every stack in the global traces to its modality aggregate") {
  for (const Variant v :
       {Variant::base, Variant::plus, Variant::plus_plus_s, Variant::plus_plus}) {
    ExperimentConfig cfg = tiny_config();
    cfg.variant = v;
    ExperimentRunner runner(cfg, tiny_data(cfg));
    RoundDebug debug;
    auto [next, log] = runner.run_round(runner.initial_params(), 1, &debug);
    for (const auto& agg : debug.aggregates) {
      CHECK(next.slice(Partition::stack, agg.modality) ==
            agg.params.slice(Partition::stack, agg.modality));
      CHECK(next.slice(Partition::stem, agg.modality) ==
            agg.params.slice(Partition::stem, agg.modality));
    }
  }
}

TEST_CASE("first rounds cover every modality and later rounds carry forward") {
  ExperimentConfig cfg = tiny_config();
  cfg.clients_per_round = 3;
  ExperimentRunner runner(cfg, tiny_data(cfg));
  RoundDebug debug;
  auto [g1, log1] = runner.run_round(runner.initial_params(), 1, &debug);
  std::set<int> mods;
  for (const int id : log1.participants)
    mods.insert(runner.plan().shards[id].modality);
  CHECK(mods.size() == 3);  // stratified coverage in round 1
}

TEST_CASE("rounds=0 evaluates the initialized model only") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 0;
  ExperimentRunner runner(cfg, tiny_data(cfg));
  const RunResult res = runner.run();
  REQUIRE(res.logs.size() == 1);
  CHECK(res.logs[0].round == 0);
  CHECK(res.logs[0].participants.empty());
  CHECK(res.final_params == runner.initial_params());
  CHECK(std::isfinite(res.logs[0].metrics.mae));
}

TEST_CASE("vanilla multimodal with one client returns that client's model") {
  ExperimentConfig cfg = tiny_config();
  cfg.setting = Setting::vanilla_multimodal;
  cfg.clients_total = 1;
  cfg.clients_per_round = 1;
  ExperimentRunner runner(cfg, tiny_data(cfg));
  auto [next, log] = runner.run_round(runner.initial_params(), 1);
  CHECK(log.participants == std::vector<int>{0});
  CHECK(next.all_finite());

  // fedavg of a single report is that report: training again from the same
  // download must land on the same parameters
  auto [again, log2] = runner.run_round(runner.initial_params(), 1);
  CHECK(next == again);
}

TEST_CASE("vanilla rounds fedavg the locally trained models") {
  ExperimentConfig cfg = tiny_config();
  cfg.setting = Setting::vanilla_multimodal;
  cfg.clients_total = 2;
  cfg.clients_per_round = 2;
  Dataset data = tiny_data(cfg);
  ExperimentRunner runner(cfg, data);
  auto [avg, log] = runner.run_round(runner.initial_params(), 1);

  // recompute both clients independently and average by dataset size
  std::vector<ParamMap> trained;
  std::vector<double> weights;
  for (const auto& shard : runner.plan().shards) {
    std::vector<AlignedSample> samples;
    for (const std::size_t idx : shard.indices)
      samples.push_back(data.train[idx]);
    ClientState st;
    st.id = shard.client;
    st.modality = -1;
    st.data = std::make_shared<MultimodalObjective>(samples, cfg.arch, cfg.loss);
    st.lr = cfg.lr;
    st.update_steps = cfg.update_steps;
    st.sample_times = cfg.sample_times;
    st.batch_size = cfg.batch_size;
    st.seed = derive_seed(cfg.master_seed, "round", std::uint64_t(1), "client",
                          std::uint64_t(shard.client));
    trained.push_back(
        local_train(runner.initial_params(), st, cfg.local_epochs));
    weights.push_back(static_cast<double>(samples.size()));
  }
  const ParamMap expect =
      fedavg_aggregate({&trained[0], &trained[1]}, weights);
  CHECK(avg == expect);
}

TEST_CASE("config validation produces path-qualified messages") {
  ExperimentConfig cfg = tiny_config();
  cfg.clients_per_round = 99;
  CHECK_THROWS_WITH_AS(cfg.validate(),
                       "federation: clients_per_round: must be in [1, clients]",
                       std::invalid_argument);
  cfg = tiny_config();
  cfg.missing_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.clients_total = 7;  // not divisible by 3 modalities
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.active_modalities = {0, 0};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("active-modality subsets drop the excluded clients") {
  ExperimentConfig cfg = tiny_config();
  cfg.active_modalities = {0, 1};  // drop V
  cfg.clients_total = 6;
  cfg.clients_per_round = 4;
  ExperimentRunner runner(cfg, tiny_data(cfg));
  for (const auto& shard : runner.plan().shards) {
    CHECK(shard.modality != 2);
  }
  const RunResult res = runner.run();
  CHECK(!res.diverged);
  // the dropped modality stays masked out of evaluation
  for (const auto& s : runner.eval_set()) CHECK(!s.views[2].has_value());
}

TEST_CASE("short training run reduces validation mae") {
  ExperimentConfig cfg = tiny_config();
  cfg.synth.n_samples = 400;
  cfg.rounds = 8;
  cfg.clients_total = 6;
  cfg.clients_per_round = 4;
  cfg.lr = 0.03;
  cfg.variant = Variant::base;
  ExperimentRunner runner(cfg, tiny_data(cfg));
  const RunResult res = runner.run();
  REQUIRE(!res.diverged);
  REQUIRE(res.logs.size() == 9);
  CHECK(res.logs.back().metrics.mae < res.logs[1].metrics.mae);
}
