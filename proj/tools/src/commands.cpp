#include "ropdda/cli/commands.hpp"

#include "ropdda/dataset_io.hpp"
#include "ropdda/error.hpp"
#include "ropdda/evalkit.hpp"
#include "ropdda/keyvalue.hpp"

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <fstream>
#include <ostream>

namespace ropdda::cli {

namespace {

using datagen::Split;
using trainer::TrainMode;

/// A library error annotated with the step that raised it.
class PhaseFailure : public std::runtime_error {
public:
    PhaseFailure(const std::string &phase, const std::string &what)
        : std::runtime_error("[" + phase + "] " + what) {}
};

template <class F> auto phase(const std::string &name, F &&f) {
    try {
        return f();
    } catch (const ConfigError &) {
        throw;
    } catch (const PhaseFailure &) {
        throw;
    } catch (const std::exception &e) {
        throw PhaseFailure(name, e.what());
    }
}

std::vector<TrainMode> modes_of(ExperimentMode m) {
    switch (m) {
    case ExperimentMode::Baseline: return {TrainMode::Baseline};
    case ExperimentMode::DomainAdaptation: return {TrainMode::DomainAdaptation};
    case ExperimentMode::Both: return {TrainMode::Baseline, TrainMode::DomainAdaptation};
    }
    return {};
}

io::DatasetFile load_dataset(const ExperimentConfig &config) {
    const OutputLayout layout{config.out};
    return phase("load-data", [&] {
        if (!std::filesystem::exists(layout.dataset())) {
            throw IoError("no dataset at " + layout.dataset().string() + "; run gen-data first");
        }
        auto file = io::read_dataset(layout.dataset());
        if (file.seed != config.dataset.seed) {
            throw FormatError(layout.dataset().string() + " was generated with seed " + std::to_string(file.seed) +
                              ", config has " + std::to_string(config.dataset.seed));
        }
        return file;
    });
}

std::vector<Sample> select(std::span<const Sample> samples, Domain d, Label l, std::size_t limit) {
    std::vector<Sample> out;
    for (const auto &s : samples) {
        if (out.size() == limit) break;
        if (s.domain == d && s.label == l) out.push_back(s);
    }
    return out;
}

nn::ModelState load_model(const std::filesystem::path &path) {
    return phase("load-checkpoint", [&] {
        if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
        return nn::load_checkpoint<float>(path);
    });
}

std::vector<std::filesystem::path> default_checkpoints(const ExperimentConfig &config) {
    const OutputLayout layout{config.out};
    std::vector<std::filesystem::path> out;
    for (TrainMode m : modes_of(config.mode)) out.push_back(layout.checkpoint(m));
    return out;
}

std::ofstream open_table(const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void write_pairwise_row(std::ostream &out, const std::string &a, const std::string &b,
                        const evalkit::PairwiseAverage &avg) {
    out << a << '\t' << b << '\t' << kv::format_double(avg.mean) << '\t' << avg.pairs << '\t'
        << (avg.subsampled ? 1 : 0) << '\n';
}

} // namespace

void cmd_gen_data(const ExperimentConfig &config, std::ostream &log) {
    const OutputLayout layout{config.out};
    auto data = phase("gen-data", [&] { return datagen::build_dataset(config.dataset); });
    phase("write-data", [&] {
        std::filesystem::create_directories(layout.dir);
        std::ofstream cfg(layout.config(), std::ios::binary);
        cfg << format_config(config);
        if (!cfg) throw IoError("cannot write " + layout.config().string());
        io::write_image(layout.image(Domain::Source), data.source);
        io::write_image(layout.image(Domain::Target), data.target);
        io::write_dataset(layout.dataset(), io::DatasetFile{config.dataset.seed, data.partitions});
    });

    log << "domain\tlabel\ttrain\tvalidation\ttest\n";
    for (Domain d : {Domain::Source, Domain::Target}) {
        for (Label l : {Label::Benign, Label::Malicious}) {
            log << to_string(d) << '\t' << (l == Label::Malicious ? "malicious" : "benign");
            for (Split s : {Split::Train, Split::Validation, Split::Test}) {
                std::size_t n = 0;
                for (const auto &x : data.partitions.of(s)) n += x.domain == d && x.label == l;
                log << '\t' << n;
            }
            log << '\n';
        }
    }
    log << "wrote " << layout.dataset().string() << '\n';
}

void cmd_train(const ExperimentConfig &config, std::ostream &log) {
    const OutputLayout layout{config.out};
    auto file = load_dataset(config);
    const auto data = trainer::make_train_data(file.partitions.train, file.partitions.validation);
    for (TrainMode m : modes_of(config.mode)) {
        const std::string tag = "train/" + OutputLayout::stem(m);
        trainer::TrainConfig tc = config.train;
        tc.mode = m;
        auto result = phase(tag, [&] {
            return trainer::run_training(tc, data, [&](const trainer::EpochRecord &r, const nn::ModelState &) {
                log << OutputLayout::stem(m) << " epoch " << r.epoch << " ce " << kv::format_double(r.ce_loss);
                if (m == TrainMode::DomainAdaptation) {
                    log << " mmd " << kv::format_double(r.mmd_before) << " -> " << kv::format_double(r.mmd_after);
                }
                log << " val " << kv::format_double(r.val_acc) << '\n';
            });
        });
        phase(tag, [&] {
            nn::save_checkpoint(layout.checkpoint(m), result.best);
            trainer::write_training_log(layout.log(m), result.report);
            trainer::write_mmd_trace(layout.trace(m), result.report);
        });
        log << OutputLayout::stem(m) << " best epoch ";
        if (result.report.best_epoch) {
            log << *result.report.best_epoch;
        } else {
            log << "none";
        }
        log << " val " << kv::format_double(result.report.best_validation_accuracy) << " -> "
            << layout.checkpoint(m).string() << '\n';
    }
}

void cmd_eval(const ExperimentConfig &config, const std::vector<std::filesystem::path> &checkpoints,
              std::ostream &log) {
    const OutputLayout layout{config.out};
    std::filesystem::path a = layout.checkpoint(TrainMode::Baseline);
    std::filesystem::path b = layout.checkpoint(TrainMode::DomainAdaptation);
    if (checkpoints.size() > 2) throw ConfigError("eval takes at most two checkpoints (baseline, da)");
    if (checkpoints.size() == 2) {
        a = checkpoints[0];
        b = checkpoints[1];
    } else if (checkpoints.size() == 1) {
        a = b = checkpoints[0];
    }
    const auto model_a = load_model(a);
    const auto model_b = load_model(b);
    auto file = load_dataset(config);
    std::vector<Sample> test;
    for (const auto &s : file.partitions.test) {
        if (s.domain == Domain::Target) test.push_back(s);
    }
    const auto report = phase("eval", [&] {
        const auto ca = evalkit::run_test(model_a, test);
        const auto cb = evalkit::run_test(model_b, test);
        return evalkit::make_transfer_report("source", "target", ca, cb);
    });
    phase("eval", [&] { evalkit::write_transfer_report(layout.report(), std::span(&report, 1)); });
    log << "A (" << a.string() << "): fpr " << kv::format_double(report.a.fpr) << " f1 "
        << kv::format_double(report.a.f1) << " dr " << kv::format_double(report.a.dr) << '\n'
        << "B (" << b.string() << "): fpr " << kv::format_double(report.b.fpr) << " f1 "
        << kv::format_double(report.b.f1) << " dr " << kv::format_double(report.b.dr) << '\n';
    if (report.fp_change) log << "false positives change " << kv::format_double(*report.fp_change * 100) << "%\n";
    if (report.detected_change) {
        log << "detected malicious change " << kv::format_double(*report.detected_change * 100) << "%\n";
    }
    log << "wrote " << layout.report().string() << '\n';
}

void cmd_analyze(const ExperimentConfig &config, const std::vector<std::filesystem::path> &checkpoints,
                 std::ostream &log) {
    const OutputLayout layout{config.out};
    std::vector<std::filesystem::path> paths = checkpoints;
    if (paths.empty()) {
        for (auto &p : default_checkpoints(config)) {
            if (std::filesystem::exists(p)) paths.push_back(p);
        }
        if (paths.empty()) throw PhaseFailure("load-checkpoint", "no checkpoint in " + layout.dir.string() +
                                                                     "; run train first");
    }
    std::vector<nn::ModelState> models;
    for (const auto &p : paths) models.push_back(load_model(p));
    auto file = load_dataset(config);
    const auto &parts = file.partitions;
    const auto data = trainer::make_train_data(parts.train, parts.validation);

    std::vector<std::size_t> budgets;
    for (auto b : config.budgets) budgets.push_back(b == kFullBudget ? data.validation.size() : b);
    const auto seeds = config.sweep_seed_list();
    trainer::TrainConfig tc = config.train;
    tc.mode = config.mode == ExperimentMode::Baseline ? TrainMode::Baseline : TrainMode::DomainAdaptation;
    std::vector<Sample> test;
    for (const auto &s : parts.test) {
        if (s.domain == Domain::Target) test.push_back(s);
    }
    log << "sweep: " << budgets.size() << " budgets x " << seeds.size() << " seeds (" << OutputLayout::stem(tc.mode)
        << ")\n";
    const auto sweep = phase("analyze/sweep", [&] {
        return evalkit::validation_budget_sweep(tc, data, test, budgets, seeds);
    });
    phase("analyze/sweep", [&] { evalkit::write_sweep(layout.sweep(), sweep); });
    for (const auto &m : sweep.means) {
        log << "budget " << m.budget << " mean fpr " << kv::format_double(m.fpr) << " f1 " << kv::format_double(m.f1)
            << '\n';
    }

    const std::size_t cap = config.analysis_samples;
    const auto src_mal = select(parts.train, Domain::Source, Label::Malicious, cap);
    const auto src_ben = select(parts.train, Domain::Source, Label::Benign, cap);
    const auto tgt_mal = select(parts.train, Domain::Target, Label::Malicious, cap);
    const std::uint64_t seed = derive_seed(config.seed, "analysis");

    phase("analyze/lcs", [&] {
        auto out = open_table(layout.lcs());
        out << "set_a\tset_b\tmean_lcs\tpairs\tsubsampled\n";
        write_pairwise_row(out, "source_malicious", "target_malicious",
                           evalkit::avg_pairwise_lcs(src_mal, tgt_mal, seed));
        write_pairwise_row(out, "source_malicious", "source_malicious",
                           evalkit::avg_pairwise_lcs(src_mal, src_mal, seed));
        write_pairwise_row(out, "target_malicious", "target_malicious",
                           evalkit::avg_pairwise_lcs(tgt_mal, tgt_mal, seed));
        if (!out) throw IoError("write failed for " + layout.lcs().string());
    });

    phase("analyze/embedding", [&] {
        auto out = open_table(layout.embedding());
        out << "checkpoint\tset_a\tset_b\tmean_distance\tpairs\tsubsampled\n";
        for (std::size_t i = 0; i < models.size(); ++i) {
            const std::string name = paths[i].filename().string();
            const auto row = [&](const char *a, const char *b, std::span<const Sample> sa,
                                 std::span<const Sample> sb) {
                const auto avg = evalkit::avg_pairwise_embedding_distance(models[i], sa, sb, seed);
                out << name << '\t';
                write_pairwise_row(out, a, b, avg);
                log << name << ' ' << a << " vs " << b << " distance " << kv::format_double(avg.mean) << '\n';
            };
            row("source_malicious", "target_malicious", src_mal, tgt_mal);
            row("source_benign", "target_malicious", src_ben, tgt_mal);
        }
        if (!out) throw IoError("write failed for " + layout.embedding().string());
    });
    log << "wrote " << layout.sweep().string() << ", " << layout.lcs().string() << ", "
        << layout.embedding().string() << '\n';
}

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Gadget-chain detection with domain adaptation: data generation, training, evaluation"};
    app.fallthrough();
    app.require_subcommand(1);

    std::filesystem::path config_path;
    Overrides overrides;
    std::uint64_t seed = 0;
    std::string mode;
    std::filesystem::path out_dir;
    std::string budgets;
    app.add_option("--config", config_path, "configuration file (key = value lines)")->required();
    auto *seed_opt = app.add_option("--seed", seed, "root seed");
    auto *mode_opt = app.add_option("--mode", mode, "baseline, da or both");
    auto *out_opt = app.add_option("--out", out_dir, "output directory");
    auto *budgets_opt = app.add_option("--budgets", budgets, "validation budgets, e.g. 10,50,100,full");

    std::vector<std::filesystem::path> eval_ckpts;
    std::vector<std::filesystem::path> analyze_ckpts;
    auto *gen = app.add_subcommand("gen-data", "generate images and dataset partitions");
    auto *train = app.add_subcommand("train", "train the baseline and/or DA model");
    auto *eval = app.add_subcommand("eval", "score checkpoints on the target test set");
    eval->add_option("checkpoints", eval_ckpts, "baseline and DA checkpoints");
    auto *analyze = app.add_subcommand("analyze", "validation-budget sweep, LCS and embedding analyses");
    analyze->add_option("checkpoints", analyze_ckpts, "checkpoints for the embedding analysis");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (*seed_opt) overrides.seed = seed;
    if (*mode_opt) overrides.mode = mode;
    if (*out_opt) overrides.out = out_dir;
    if (*budgets_opt) overrides.budgets = budgets;

    std::string command = "config";
    try {
        const auto config = load_config(config_path, overrides);
        if (*gen) {
            command = "gen-data";
            cmd_gen_data(config, out);
        } else if (*train) {
            command = "train";
            cmd_train(config, out);
        } else if (*eval) {
            command = "eval";
            cmd_eval(config, eval_ckpts, out);
        } else if (*analyze) {
            command = "analyze";
            cmd_analyze(config, analyze_ckpts, out);
        }
    } catch (const ConfigError &e) {
        err << "error [" << command << "] " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception &e) {
        err << "error " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

} // namespace ropdda::cli
