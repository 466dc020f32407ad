#include "hafed/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hafed/config.hpp"
#include "hafed/io_util.hpp"
#include "hafed/json_conv.hpp"

namespace hafed::cli {

namespace {

constexpr const char* kVersion = "hafed 0.1.0";

std::string now_iso() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string opt_field(const std::optional<double>& v) {
  return v.has_value() ? format_double(*v) : std::string();
}

constexpr const char* kRoundHeader =
    "round,loss,acc7,acc2,f1,mae,corr,shrinkage\n";

std::string round_row(const RoundLog& log) {
  std::string row = std::to_string(log.round);
  row += ',' + format_double(log.train_loss);
  row += ',' + format_double(log.metrics.acc7);
  row += ',' + opt_field(log.metrics.acc2);
  row += ',' + opt_field(log.metrics.f1);
  row += ',' + format_double(log.metrics.mae);
  row += ',' + opt_field(log.metrics.corr);
  row += ',' + format_double(log.shrinkage);
  row += '\n';
  return row;
}

void apply_flags(ExperimentConfig& cfg, const CommonFlags& flags) {
  if (flags.seed) cfg.master_seed = *flags.seed;
  if (flags.workers) cfg.workers = *flags.workers;
}

double param_l2(const ParamMap& p) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.layer_count(); ++i)
    for (const double v : p.values(i)) acc += v * v;
  return std::sqrt(acc);
}

struct RunArtifacts {
  RunResult result;
  nlohmann::json participants = nlohmann::json::array();
  nlohmann::json seconds = nlohmann::json::array();
};

// execute one experiment, streaming rounds.csv[.partial] and the optional
// debug JSONL under `out`; pass an empty `out` to keep it purely in memory
RunArtifacts execute_run(const ExperimentConfig& cfg, Dataset dataset,
                         const std::filesystem::path& out, bool debug_jsonl) {
  ExperimentRunner runner(cfg, std::move(dataset));
  RunArtifacts art;

  std::ofstream rounds_out;
  std::ofstream debug_out;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    rounds_out.open(out / "rounds.csv.partial", std::ios::trunc);
    rounds_out << kRoundHeader << std::flush;
    if (debug_jsonl)
      debug_out.open(out / "rounds_debug.jsonl", std::ios::trunc);
  }

  auto on_round = [&](const RoundLog& log, const RoundDebug& debug) {
    art.participants.push_back(log.participants);
    art.seconds.push_back(log.wall_seconds);
    if (rounds_out.is_open()) rounds_out << round_row(log) << std::flush;
    if (debug_out.is_open()) {
      nlohmann::json line;
      line["round"] = log.round;
      line["beta"] = debug.beta_used;
      line["stats"] = nlohmann::json::array();
      for (const auto& d : debug.stats) {
        line["stats"].push_back({{"client", d.client_id},
                                 {"modality", d.modality},
                                 {"size", d.dataset_size},
                                 {"mean_precision", d.mean_precision}});
      }
      line["psi"] = debug.psi;
      nlohmann::json norms;
      for (const auto& agg : debug.aggregates)
        norms[std::to_string(agg.modality)] = param_l2(agg.params);
      line["aggregate_norms"] = std::move(norms);
      debug_out << line.dump() << '\n' << std::flush;
    }
    std::printf("round %d: loss=%.4f mae=%.4f acc7=%.3f shrink=%.4f\n",
                log.round, log.train_loss, log.metrics.mae, log.metrics.acc7,
                log.shrinkage);
  };

  art.result = runner.run(on_round);
  if (rounds_out.is_open()) {
    rounds_out.close();
    std::filesystem::rename(out / "rounds.csv.partial", out / "rounds.csv");
  }
  return art;
}

nlohmann::json base_manifest(const ExperimentConfig& cfg,
                             const std::string& started) {
  nlohmann::json m;
  m["version"] = kVersion;
  m["config"] = config_to_json(cfg);
  m["started"] = started;
  return m;
}

int guard(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error at %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  }
}

Dataset load_dataset(const ExperimentConfig& cfg,
                     const std::filesystem::path& data) {
  if (!std::filesystem::exists(data / "train_labels.csv")) {
    throw ConfigError("dataset not found under '" + data.string() +
                      "'; run the generate subcommand first");
  }
  return ingest_csv(data, cfg.arch);
}

}  // namespace

int cmd_generate(const std::filesystem::path& config,
                 const std::filesystem::path& out) {
  return guard([&] {
    const ExperimentConfig cfg = load_config(config);
    const std::string started = now_iso();
    const Dataset data = generate(cfg.arch, cfg.synth, cfg.data_seed);
    export_csv(out, cfg.arch, data, cfg.data_seed);

    nlohmann::json m;
    m["version"] = kVersion;
    m["arch"] = arch_to_json(cfg.arch);
    m["data"] = config_to_json(cfg)["data"];
    m["seed"] = cfg.data_seed;
    m["split_sizes"] = {{"train", data.train.size()},
                        {"val", data.val.size()},
                        {"test", data.test.size()}};
    m["content_hash"] = dataset_content_hash(out);
    m["generator"] = "synthetic stand-in; no external corpus";
    m["started"] = started;
    m["finished"] = now_iso();
    atomic_write_file(out / "manifest.json", m.dump(2) + "\n");
    std::printf("dataset written to %s (hash %s)\n", out.string().c_str(),
                m["content_hash"].get<std::string>().c_str());
    return kOk;
  });
}

int cmd_run(const std::filesystem::path& config,
            const std::filesystem::path& data,
            const std::filesystem::path& out, const CommonFlags& flags) {
  return guard([&] {
    ExperimentConfig cfg = load_config(config);
    apply_flags(cfg, flags);
    const std::string started = now_iso();
    Dataset dataset = load_dataset(cfg, data);
    const std::string data_hash = dataset_content_hash(data);

    RunArtifacts art = execute_run(cfg, std::move(dataset), out,
                                   flags.debug_jsonl);
    save_checkpoint(out / "final.ckpt", cfg.arch, art.result.final_params);

    nlohmann::json m = base_manifest(cfg, started);
    m["dataset_hash"] = data_hash;
    m["status"] = art.result.diverged ? "diverged" : "ok";
    m["diagnostic"] = art.result.diagnostic;
    m["participants"] = art.participants;
    m["round_seconds"] = art.seconds;
    m["outputs"] = {"rounds.csv", "final.ckpt", "final.ckpt.json"};
    m["finished"] = now_iso();
    atomic_write_file(out / "manifest.json", m.dump(2) + "\n");

    if (art.result.diverged) {
      std::fprintf(stderr, "%s\n", art.result.diagnostic.c_str());
      return kDiverged;
    }
    return kOk;
  });
}

namespace {

constexpr const char* kLongHeader = "study,condition,seed,metric,value\n";

void emit_metrics_rows(std::string& csv, const std::string& study,
                       const std::string& condition, std::uint64_t seed,
                       const RoundLog& final_log) {
  auto row = [&](const char* metric, const std::string& value) {
    csv += study + ',' + condition + ',' + std::to_string(seed) + ',' +
           metric + ',' + value + '\n';
  };
  row("acc7", format_double(final_log.metrics.acc7));
  row("acc2", opt_field(final_log.metrics.acc2));
  row("f1", opt_field(final_log.metrics.f1));
  row("mae", format_double(final_log.metrics.mae));
  row("corr", opt_field(final_log.metrics.corr));
  row("shrinkage", format_double(final_log.shrinkage));
}

}  // namespace

int cmd_ablate(const std::filesystem::path& config,
               const std::filesystem::path& out, const CommonFlags& flags) {
  return guard([&] {
    ExperimentConfig cfg = load_config(config);
    apply_flags(cfg, flags);
    const std::string started = now_iso();
    const Dataset dataset = generate(cfg.arch, cfg.synth, cfg.data_seed);

    std::string csv = kLongHeader;
    bool any_diverged = false;
    std::string diagnostic;

    auto run_condition = [&](const std::string& study,
                             const std::string& condition,
                             ExperimentConfig run_cfg) {
      std::printf("== %s / %s / seed %llu ==\n", study.c_str(),
                  condition.c_str(),
                  static_cast<unsigned long long>(run_cfg.master_seed));
      RunArtifacts art = execute_run(run_cfg, dataset, {}, false);
      if (art.result.diverged) {
        any_diverged = true;
        diagnostic = study + "/" + condition + ": " + art.result.diagnostic;
        return;
      }
      emit_metrics_rows(csv, study, condition, run_cfg.master_seed,
                        art.result.logs.back());
    };

    const Variant ladder[] = {Variant::base, Variant::plus,
                              Variant::plus_plus_s, Variant::plus_plus};
    for (const Variant v : ladder) {
      for (std::uint64_t i = 0; i < 3; ++i) {
        ExperimentConfig c = cfg;
        c.variant = v;
        c.master_seed = cfg.master_seed + i;
        run_condition("ladder", variant_name(v), std::move(c));
      }
    }

    for (std::size_t drop = 0; drop < cfg.arch.modalities; ++drop) {
      std::vector<std::size_t> active;
      std::string label;
      for (std::size_t m = 0; m < cfg.arch.modalities; ++m) {
        if (m == drop) continue;
        active.push_back(m);
        if (!label.empty()) label += '&';
        label += cfg.arch.modality_label(m);
      }
      for (std::uint64_t i = 0; i < 3; ++i) {
        ExperimentConfig c = cfg;
        c.active_modalities = active;
        c.master_seed = cfg.master_seed + i;
        run_condition("modality_subset", label, std::move(c));
      }
    }

    for (const int s : {1, 3, 5, 7, 10}) {
      ExperimentConfig c = cfg;
      c.sample_times = s;
      run_condition("sample_times", std::to_string(s), std::move(c));
    }

    std::filesystem::create_directories(out);
    atomic_write_file(out / "ablation.csv", csv);
    nlohmann::json m = base_manifest(cfg, started);
    m["status"] = any_diverged ? "diverged" : "ok";
    m["diagnostic"] = diagnostic;
    m["outputs"] = {"ablation.csv"};
    m["finished"] = now_iso();
    atomic_write_file(out / "manifest.json", m.dump(2) + "\n");
    return any_diverged ? kDiverged : kOk;
  });
}

int cmd_robustness(const std::filesystem::path& config,
                   const std::filesystem::path& out,
                   const std::filesystem::path& checkpoint,
                   const CommonFlags& flags) {
  return guard([&] {
    ExperimentConfig cfg = load_config(config);
    apply_flags(cfg, flags);
    const std::string started = now_iso();
    const Dataset dataset = generate(cfg.arch, cfg.synth, cfg.data_seed);

    ParamMap model;
    if (!checkpoint.empty()) {
      auto [arch, params] = load_checkpoint(checkpoint);
      if (!(arch == cfg.arch))
        throw ConfigError("checkpoint arch does not match the config");
      model = std::move(params);
    } else {
      RunArtifacts art = execute_run(cfg, dataset, {}, false);
      if (art.result.diverged) {
        std::fprintf(stderr, "%s\n", art.result.diagnostic.c_str());
        return kDiverged;
      }
      model = std::move(art.result.final_params);
    }

    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < cfg.robustness_seeds; ++i)
      seeds.push_back(derive_seed(cfg.master_seed, "robustness_mask", i));
    const auto rows = missing_rate_sweep(model, cfg.arch, dataset.test,
                                         cfg.robustness_xi, seeds);

    std::string csv = "xi,seed,metric,value\n";
    for (const auto& r : rows) {
      auto row = [&](const char* metric, const std::string& value) {
        csv += format_double(r.xi) + ',' + std::to_string(r.seed) + ',' +
               metric + ',' + value + '\n';
      };
      row("acc7", format_double(r.metrics.acc7));
      row("acc2", opt_field(r.metrics.acc2));
      row("f1", opt_field(r.metrics.f1));
      row("mae", format_double(r.metrics.mae));
      row("corr", opt_field(r.metrics.corr));
    }

    // summary: mean and variance over seeds per (xi, metric)
    std::string summary = "xi,metric,mean,variance\n";
    for (const double xi : cfg.robustness_xi) {
      auto stat_of = [&](auto getter, const char* name) {
        std::vector<double> vals;
        for (const auto& r : rows) {
          if (r.xi != xi) continue;
          const auto v = getter(r.metrics);
          if (v.has_value()) vals.push_back(*v);
        }
        if (vals.empty()) return;
        double mean = 0.0;
        for (const double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0.0;
        for (const double v : vals) var += (v - mean) * (v - mean);
        var /= static_cast<double>(vals.size());
        summary += format_double(xi) + ',' + name + ',' +
                   format_double(mean) + ',' + format_double(var) + '\n';
      };
      using MR = const MetricsRecord&;
      stat_of([](MR m) { return std::optional<double>(m.acc7); }, "acc7");
      stat_of([](MR m) { return m.acc2; }, "acc2");
      stat_of([](MR m) { return m.f1; }, "f1");
      stat_of([](MR m) { return std::optional<double>(m.mae); }, "mae");
      stat_of([](MR m) { return m.corr; }, "corr");
    }

    std::filesystem::create_directories(out);
    atomic_write_file(out / "sweep.csv", csv);
    atomic_write_file(out / "summary.csv", summary);
    nlohmann::json m = base_manifest(cfg, started);
    m["status"] = "ok";
    m["outputs"] = {"sweep.csv", "summary.csv"};
    m["finished"] = now_iso();
    atomic_write_file(out / "manifest.json", m.dump(2) + "\n");
    return kOk;
  });
}

int cmd_eval_checkpoint(const std::filesystem::path& checkpoint,
                        const std::filesystem::path& data,
                        const std::filesystem::path& out) {
  return guard([&] {
    auto [arch, params] = load_checkpoint(checkpoint);
    const Dataset dataset = ingest_csv(data, arch);
    const MetricsRecord rec = evaluate_global(params, arch, dataset.test);

    std::string csv = "metric,value\n";
    csv += "acc7," + format_double(rec.acc7) + '\n';
    csv += "acc2," + opt_field(rec.acc2) + '\n';
    csv += "f1," + opt_field(rec.f1) + '\n';
    csv += "mae," + format_double(rec.mae) + '\n';
    csv += "corr," + opt_field(rec.corr) + '\n';
    csv += "n," + std::to_string(rec.n) + '\n';
    std::filesystem::create_directories(out);
    atomic_write_file(out / "metrics.csv", csv);
    std::printf("test: acc7=%.4f mae=%.4f n=%zu\n", rec.acc7, rec.mae, rec.n);
    return kOk;
  });
}

}  // namespace hafed::cli
