#pragma once

// Two-phase training loop for a target domain without benign training data.
// Each epoch runs a cross-entropy phase over balanced source data, then (in
// domain-adaptation mode) an MMD phase that pulls the malicious feature
// distributions of both domains together. The model with the best balanced
// validation accuracy is kept.

#include "ropdda/mmd.hpp"
#include "ropdda/nn/model.hpp"
#include "ropdda/sample.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace ropdda::trainer {

enum class TrainMode : std::uint8_t { Baseline, DomainAdaptation };

std::string_view to_string(TrainMode m);

struct TrainConfig {
    std::size_t max_epochs = 25;
    std::size_t batch_size = 32;
    double learning_rate = 0.001;
    mmd::KernelConfig kernel;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::DomainAdaptation;
    nn::Architecture arch;
    /// Batch-norm statistics used by the MMD phase.
    nn::NormStats mmd_norm = nn::NormStats::Batch;

    /// Throws ConfigError.
    void validate() const;
    bool operator==(const TrainConfig &) const = default;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double ce_loss = 0;
    /// Epoch means of MMD (not squared) before and after each update; zero in
    /// baseline mode.
    double mmd_before = 0;
    double mmd_after = 0;
    double sigma = 0;
    double val_acc = 0;

    bool operator==(const EpochRecord &) const = default;
};

struct TracePoint {
    std::uint64_t step = 0; ///< optimizer step count after the update
    double mmd = 0;         ///< MMD of the batch before the update

    bool operator==(const TracePoint &) const = default;
};

struct TrainReport {
    TrainMode mode = TrainMode::DomainAdaptation;
    std::vector<EpochRecord> epochs;
    std::optional<std::size_t> best_epoch; ///< empty if no epoch beat accuracy 0
    double best_validation_accuracy = 0;
    std::vector<TracePoint> mmd_trace;
    /// Target-domain benign samples that went through a train-mode forward.
    std::size_t target_benign_exposures = 0;

    bool operator==(const TrainReport &) const = default;
};

/// Counts samples seen by train-mode forwards, per (domain, label).
struct ExposureCounter {
    std::size_t counts[2][2] = {};

    void add(const Sample &s) { ++counts[static_cast<int>(s.domain)][static_cast<int>(s.label)]; }
    std::size_t target_benign() const { return counts[1][0]; }
};

/// One pass of shuffled mini-batches with BCE loss and Adam over all
/// parameters. Returns the sample-weighted mean loss. A trailing batch of a
/// single sample is skipped since batch statistics are undefined for it.
/// Throws UnbalancedData.
double train_epoch_ce(nn::ModelState &state, nn::AdamState &adam, std::span<const Sample> source_train,
                      std::size_t batch_size, Rng &rng, ExposureCounter *exposure = nullptr);

struct MmdPhaseResult {
    double mmd_before = 0;
    double mmd_after = 0;
    double sigma = 0;
    std::vector<TracePoint> trace;
};

/// One pass over the source set in mini-batches paired with target batches
/// (independent shuffles, the smaller set cycled). Both batches go through
/// one train-mode forward; the MMD^2 gradient at the features updates the
/// feature extractor only. The median-heuristic bandwidth is fixed from the
/// first batch of the phase. mmd_after re-evaluates each batch with the same
/// dropout masks after its update. Throws LabelLeak, EmptySet.
MmdPhaseResult train_step_mmd(nn::ModelState &state, nn::AdamState &adam, std::span<const Sample> source_malicious,
                              std::span<const Sample> target_malicious, const mmd::KernelConfig &kernel,
                              std::size_t batch_size, Rng &rng, ExposureCounter *exposure = nullptr,
                              nn::NormStats norm = nn::NormStats::Batch);

/// Fraction correct at threshold 0.5 with eval-mode features. Throws
/// MissingValidation on an empty set.
double evaluate_validation(const nn::ModelState &state, std::span<const Sample> validation);

struct TrainData {
    std::vector<Sample> source_train;      ///< balanced
    std::vector<Sample> target_malicious;  ///< used in DA mode only
    std::vector<Sample> validation;        ///< balanced, target domain
};

/// Collects the training sets from a train partition: all source-domain
/// samples, and the malicious target-domain samples.
TrainData make_train_data(std::span<const Sample> train, std::vector<Sample> validation);

/// The untrained model of a run (eval mode), initialized from config.seed.
nn::ModelState initial_model(const TrainConfig &config);

/// Called after each epoch's validation with the current (train-mode) model.
using EpochCallback = std::function<void(const EpochRecord &, const nn::ModelState &)>;

struct TrainResult {
    nn::ModelState best; ///< eval mode
    TrainReport report;
};

/// Throws MissingValidation, ConfigError, and whatever the phases raise.
TrainResult run_training(const TrainConfig &config, const TrainData &data, const EpochCallback &on_epoch = {});

/// Columns: epoch ce_loss mmd_before mmd_after sigma val_acc.
void write_training_log(const std::filesystem::path &path, const TrainReport &report);
/// Columns: step mmd.
void write_mmd_trace(const std::filesystem::path &path, const TrainReport &report);

} // namespace ropdda::trainer
