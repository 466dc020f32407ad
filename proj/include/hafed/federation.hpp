#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hafed/aggregation.hpp"
#include "hafed/client.hpp"
#include "hafed/data.hpp"
#include "hafed/eval.hpp"
#include "hafed/nn.hpp"

namespace hafed {

// Aggregation ladder: base = (fedavg, plain average), plus adds CmDA,
// plus_plus_s swaps in mean-of-samples aggregation, plus_plus is the full
// posterior-weighted scheme.
enum class Variant { base, plus, plus_plus_s, plus_plus };
enum class Setting { utmp, vanilla_multimodal };

const char* variant_name(Variant v);
const char* setting_name(Setting s);

struct ExperimentConfig {
  ArchSpec arch;
  SynthSpec synth;
  std::uint64_t data_seed = 9000;

  std::size_t clients_total = 30;   // K
  std::size_t clients_per_round = 10;
  std::size_t rounds = 30;          // R
  int local_epochs = 1;
  std::size_t batch_size = 16;
  double lr = 0.05;                 // phi
  int update_steps = 3;             // T
  int sample_times = 5;             // S
  double mu_prox = 0.0;
  nn::LossKind loss = nn::LossKind::squared;

  Variant variant = Variant::plus_plus;
  Setting setting = Setting::utmp;
  double alpha_skew = 0.3;          // Dirichlet skew
  double missing_rate = 0.0;        // Xi, applied to held-out evaluation

  double eta = 0.5;
  double beta_override = 0.0;       // <= 0: derive from reported precisions
  double norm_p = 2.0;
  double var_floor = 1e-4;

  std::uint64_t master_seed = 1234;
  std::size_t eval_samples = 512;
  std::size_t probe_samples = 64;
  int workers = 1;

  // modality-subset ablations: clients exist only for these modalities and
  // evaluation masks the rest; empty means all modalities
  std::vector<std::size_t> active_modalities;

  std::vector<double> robustness_xi{0.0, 0.3, 0.5, 0.7};
  std::size_t robustness_seeds = 3;

  void validate() const;  // throws std::invalid_argument, path-qualified
  AggregationPolicy policy() const;
  std::vector<std::size_t> active_set() const;  // resolved, sorted
};

struct RoundLog {
  int round = 0;
  std::vector<int> participants;
  double train_loss = 0.0;
  MetricsRecord metrics;
  double shrinkage = 0.0;
  double wall_seconds = 0.0;
};

// Introspection for tests and the optional JSONL dump.
struct RoundDebug {
  std::vector<ModalityAggregate> aggregates;
  std::map<std::string, std::vector<double>> psi;  // pair label -> psi
  double beta_used = 0.0;
  struct StatsDigest {
    int client_id = 0;
    int modality = 0;
    std::size_t dataset_size = 0;
    double mean_precision = 0.0;
  };
  std::vector<StatsDigest> stats;
};

struct RunResult {
  std::vector<RoundLog> logs;
  ParamMap final_params;
  bool diverged = false;
  std::string diagnostic;
};

// Uniform sample of n distinct clients from [0, K), sorted.
std::vector<int> sample_clients(std::size_t total, std::size_t n,
                                std::uint64_t round_seed);

class ExperimentRunner {
 public:
  ExperimentRunner(ExperimentConfig config, Dataset dataset);

  // one communication round; round_idx counts from 1
  std::pair<ParamMap, RoundLog> run_round(const ParamMap& global,
                                          int round_idx,
                                          RoundDebug* debug = nullptr);

  // full experiment: round 0 logs the freshly initialized model, then
  // config.rounds training rounds; on_round fires after each log entry
  RunResult run(
      const std::function<void(const RoundLog&, const RoundDebug&)>& on_round =
          nullptr);

  const ParamMap& initial_params() const { return init_; }
  const std::vector<AlignedSample>& eval_set() const { return eval_set_; }
  const std::vector<AlignedSample>& probe_set() const { return probe_set_; }
  const PartitionPlan& plan() const { return plan_; }

 private:
  RoundLog evaluate(const ParamMap& global, int round_idx,
                    const std::vector<int>& participants, double train_loss,
                    double seconds) const;

  ExperimentConfig cfg_;
  Dataset data_;
  PartitionPlan plan_;
  std::vector<ClientState> clients_;  // indexed by client id
  ParamMap init_;
  std::vector<ParamMap> last_aggregate_;  // per modality carry-forward
  std::vector<AlignedSample> eval_set_;
  std::vector<AlignedSample> probe_set_;
};

}  // namespace hafed
