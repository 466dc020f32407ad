#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace hafed::cli {

// exit codes shared by every subcommand
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kDiverged = 3;

struct CommonFlags {
  std::optional<std::uint64_t> seed;  // master seed override
  std::optional<int> workers;
  bool debug_jsonl = false;  // per-round stats/psi/norm dump (run only)
};

int cmd_generate(const std::filesystem::path& config,
                 const std::filesystem::path& out);

int cmd_run(const std::filesystem::path& config,
            const std::filesystem::path& data,
            const std::filesystem::path& out, const CommonFlags& flags = {});

int cmd_ablate(const std::filesystem::path& config,
               const std::filesystem::path& out, const CommonFlags& flags = {});

int cmd_robustness(const std::filesystem::path& config,
                   const std::filesystem::path& out,
                   const std::filesystem::path& checkpoint = {},
                   const CommonFlags& flags = {});

int cmd_eval_checkpoint(const std::filesystem::path& checkpoint,
                        const std::filesystem::path& data,
                        const std::filesystem::path& out);

}  // namespace hafed::cli
