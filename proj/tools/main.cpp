#include <CLI11.hpp>

#include "hafed/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "hafed: federated unimodal-training / multimodal-prediction simulator"};
  app.require_subcommand(1);

  std::string config, data, out, checkpoint;
  std::uint64_t seed = 0;
  int workers = 0;
  bool debug_jsonl = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON config path")->required();
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_option("--seed", seed, "master seed override");
    cmd->add_option("--workers", workers, "client fan-out workers");
  };

  auto* gen = app.add_subcommand("generate", "write the synthetic dataset");
  gen->add_option("--config", config, "JSON config path")->required();
  gen->add_option("--out", out, "output directory")->required();

  auto* run = app.add_subcommand("run", "run one federated experiment");
  add_common(run);
  run->add_option("--data", data, "dataset directory")->required();
  run->add_flag("--debug-jsonl", debug_jsonl,
                "dump per-round stats/psi/norms as JSON lines");

  auto* ablate =
      app.add_subcommand("ablate", "variant ladder, modality subsets, S sweep");
  add_common(ablate);

  auto* robust =
      app.add_subcommand("robustness", "missing-rate sweep on a trained model");
  add_common(robust);
  robust->add_option("--checkpoint", checkpoint,
                     "evaluate this checkpoint instead of training");

  auto* evalck = app.add_subcommand("eval-checkpoint",
                                    "metrics of a checkpoint on a dataset");
  evalck->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  evalck->add_option("--data", data, "dataset directory")->required();
  evalck->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  hafed::cli::CommonFlags flags;
  if (seed != 0) flags.seed = seed;
  if (workers != 0) flags.workers = workers;
  flags.debug_jsonl = debug_jsonl;

  if (gen->parsed()) return hafed::cli::cmd_generate(config, out);
  if (run->parsed()) return hafed::cli::cmd_run(config, data, out, flags);
  if (ablate->parsed()) return hafed::cli::cmd_ablate(config, out, flags);
  if (robust->parsed())
    return hafed::cli::cmd_robustness(config, out, checkpoint, flags);
  if (evalck->parsed())
    return hafed::cli::cmd_eval_checkpoint(checkpoint, data, out);
  return 1;
}
