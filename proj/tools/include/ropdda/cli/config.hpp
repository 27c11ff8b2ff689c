#pragma once

// Experiment configuration: everything needed to regenerate data, train and
// analyze from one root seed. Read from `key = value` files; unknown keys are
// rejected. Command-line flags are applied on top as Overrides.

#include "ropdda/datagen.hpp"
#include "ropdda/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ropdda::cli {

enum class ExperimentMode : std::uint8_t { Baseline, DomainAdaptation, Both };

std::string_view to_string(ExperimentMode m);
/// Accepts baseline, da (or domain_adaptation) and both; throws ConfigError.
ExperimentMode parse_mode(std::string_view s);

/// Budget 0 stands for the full validation pool ("full" in files).
inline constexpr std::size_t kFullBudget = 0;

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out;
    ExperimentMode mode = ExperimentMode::Both;
    /// Counts are default_counts(count_divisor) with count.* keys on top.
    double count_divisor = 10;
    /// Starts from the shifted-domain preset; keys override single fields.
    datagen::DatasetSpec dataset = datagen::shifted_domains(datagen::default_counts(10), 0);
    trainer::TrainConfig train;
    std::vector<std::size_t> budgets = {10, 50, 100, kFullBudget};
    std::size_t sweep_seeds = 3;
    /// Per-set cap on samples fed to the LCS and embedding analyses.
    std::size_t analysis_samples = 200;

    /// The dataset and training seeds derived from `seed`.
    void derive_seeds();
    /// Sweep seeds derived from `seed`.
    std::vector<std::uint64_t> sweep_seed_list() const;

    bool operator==(const ExperimentConfig &) const = default;
};

/// Keys that must appear in the file or be supplied by a flag.
inline constexpr std::string_view kRequiredKeys[] = {"seed", "out", "count_divisor"};

/// Flag values; set fields win over the file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<std::filesystem::path> out;
    std::optional<std::string> budgets;
};

/// Throws ConfigError naming the offending key or line.
ExperimentConfig parse_config(std::string_view text, const Overrides &overrides = {});
/// Throws ConfigError, also when the file cannot be read.
ExperimentConfig load_config(const std::filesystem::path &path, const Overrides &overrides = {});

/// Complete rendering of every key; parse_config(format_config(c)) == c.
std::string format_config(const ExperimentConfig &config);

/// Parses "10,50,full"; throws ConfigError.
std::vector<std::size_t> parse_budgets(std::string_view value, std::string_view key = "budgets");

} // namespace ropdda::cli
