#pragma once

// The four subcommands. Each reads and writes files under config.out and
// reports progress on `log`. Errors propagate as exceptions; run_cli maps
// them to exit codes.

#include "ropdda/cli/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace ropdda::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// File names inside the output directory.
struct OutputLayout {
    std::filesystem::path dir;

    std::filesystem::path config() const { return dir / "config.txt"; }
    std::filesystem::path dataset() const { return dir / "dataset.txt"; }
    std::filesystem::path image(Domain d) const { return dir / (std::string(to_string(d)) + "_image"); }
    std::filesystem::path checkpoint(trainer::TrainMode m) const { return dir / (stem(m) + ".ckpt"); }
    std::filesystem::path log(trainer::TrainMode m) const { return dir / (stem(m) + "_log.tsv"); }
    std::filesystem::path trace(trainer::TrainMode m) const { return dir / (stem(m) + "_trace.tsv"); }
    std::filesystem::path report() const { return dir / "report.tsv"; }
    std::filesystem::path sweep() const { return dir / "sweep.tsv"; }
    std::filesystem::path lcs() const { return dir / "lcs.tsv"; }
    std::filesystem::path embedding() const { return dir / "embedding.tsv"; }

    static std::string stem(trainer::TrainMode m) { return m == trainer::TrainMode::Baseline ? "baseline" : "da"; }
};

void cmd_gen_data(const ExperimentConfig &config, std::ostream &log);
void cmd_train(const ExperimentConfig &config, std::ostream &log);
/// With no checkpoints given, the baseline and DA checkpoints of the output
/// directory are compared. Two paths are read as (baseline, DA); a single
/// path is scored on its own in both columns.
void cmd_eval(const ExperimentConfig &config, const std::vector<std::filesystem::path> &checkpoints,
              std::ostream &log);
/// Embedding distances use every given checkpoint (default: those of the
/// configured mode that exist).
void cmd_analyze(const ExperimentConfig &config, const std::vector<std::filesystem::path> &checkpoints,
                 std::ostream &log);

/// Parses arguments, dispatches and maps errors to exit codes: 2 for usage and
/// configuration errors, 3 for failures while running a command.
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace ropdda::cli
