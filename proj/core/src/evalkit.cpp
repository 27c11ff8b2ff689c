#include "ropdda/evalkit.hpp"

#include "ropdda/error.hpp"
#include "ropdda/keyvalue.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace ropdda::evalkit {

namespace {

using Index = Eigen::Index;

double ratio(std::uint64_t num, std::uint64_t den, const char *what) {
    if (den == 0) throw UndefinedMetric(std::string(what) + " has zero denominator");
    return static_cast<double>(num) / static_cast<double>(den);
}

// Calls f(i, j) for every pair of the cross product, or for kMaxPairs pairs
// drawn uniformly with replacement when the product is larger.
template <class F> PairwiseAverage average_pairs(std::size_t m, std::size_t n, std::uint64_t seed, F &&f) {
    if (m == 0 || n == 0) throw EmptySet("pairwise average over an empty set");
    PairwiseAverage out;
    double sum = 0;
    const std::uint64_t product = static_cast<std::uint64_t>(m) * n;
    if (product <= kMaxPairs) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) sum += f(i, j);
        }
        out.pairs = product;
    } else {
        Rng rng(seed);
        for (std::uint64_t k = 0; k < kMaxPairs; ++k) {
            const auto i = static_cast<std::size_t>(uniform_index(rng, m));
            const auto j = static_cast<std::size_t>(uniform_index(rng, n));
            sum += f(i, j);
        }
        out.pairs = kMaxPairs;
        out.subsampled = true;
    }
    out.mean = sum / static_cast<double>(out.pairs);
    return out;
}

std::vector<std::vector<disasm::OpcodeClass>> decode_set(std::span<const Sample> set, const char *name) {
    std::vector<std::vector<disasm::OpcodeClass>> out;
    out.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        try {
            out.push_back(opcode_sequence(set[i]));
        } catch (const Error &e) {
            throw UndecodableSample(std::string(name) + " index " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

std::ofstream open_table(const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void finish(std::ofstream &out, const std::filesystem::path &path) {
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

std::string fmt(const std::optional<double> &v) { return v ? kv::format_double(*v) : "na"; }

} // namespace

double false_positive_rate(const ConfusionCounts &c) { return ratio(c.fp, c.fp + c.tn, "fpr (fp + tn)"); }
double detection_rate(const ConfusionCounts &c) { return ratio(c.tp, c.tp + c.fn, "dr (tp + fn)"); }
double f1_score(const ConfusionCounts &c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, "f1 (2tp + fp + fn)"); }

Metrics compute_metrics(const ConfusionCounts &c) {
    Metrics m;
    m.fpr = false_positive_rate(c);
    m.dr = detection_rate(c);
    m.f1 = f1_score(c);
    return m;
}

ConfusionCounts tally(std::span<const Label> predicted, std::span<const Sample> truth) {
    if (predicted.size() != truth.size()) throw ShapeMismatch("prediction and label counts differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = predicted[i] == Label::Malicious;
        if (truth[i].label == Label::Malicious) {
            ++(p ? c.tp : c.fn);
        } else {
            ++(p ? c.fp : c.tn);
        }
    }
    return c;
}

ConfusionCounts run_test(const nn::ModelState &state, std::span<const Sample> test) {
    if (test.empty()) return {};
    return tally(nn::predict_probs(nn::predict_proba(state, test)), test);
}

std::vector<Sample> validation_subset(std::span<const Sample> pool, std::size_t budget, std::uint64_t seed) {
    if (budget == 0) throw ConfigError("validation budget must be positive");
    if (budget == pool.size()) return {pool.begin(), pool.end()};
    std::vector<std::size_t> benign, malicious;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        (pool[i].label == Label::Benign ? benign : malicious).push_back(i);
    }
    const std::size_t want_benign = budget / 2, want_malicious = budget - budget / 2;
    if (want_benign > benign.size() || want_malicious > malicious.size()) {
        throw ConfigError("validation budget " + std::to_string(budget) + " exceeds the pool (" +
                          std::to_string(benign.size()) + " benign, " + std::to_string(malicious.size()) +
                          " malicious)");
    }
    Rng rng(seed);
    std::shuffle(benign.begin(), benign.end(), rng);
    std::shuffle(malicious.begin(), malicious.end(), rng);
    std::vector<std::size_t> chosen(benign.begin(), benign.begin() + static_cast<std::ptrdiff_t>(want_benign));
    chosen.insert(chosen.end(), malicious.begin(), malicious.begin() + static_cast<std::ptrdiff_t>(want_malicious));
    std::sort(chosen.begin(), chosen.end());
    std::vector<Sample> out;
    out.reserve(chosen.size());
    for (auto i : chosen) out.push_back(pool[i]);
    return out;
}

SweepResult validation_budget_sweep(const trainer::TrainConfig &config, const trainer::TrainData &data,
                                    std::span<const Sample> test, std::span<const std::size_t> budgets,
                                    std::span<const std::uint64_t> seeds) {
    if (budgets.empty()) throw ConfigError("no validation budgets given");
    if (seeds.size() < kMinSweepSeeds) {
        throw ConfigError("the sweep needs at least " + std::to_string(kMinSweepSeeds) + " seeds");
    }

    SweepResult result;
    std::vector<std::vector<SweepRun>> per_budget(budgets.size());
    for (std::uint64_t seed : seeds) {
        std::vector<std::vector<Sample>> subsets;
        for (std::size_t budget : budgets) {
            subsets.push_back(validation_subset(data.validation, budget, derive_seed(seed, "sweep/validation")));
        }
        std::vector<std::optional<nn::ModelState>> best(budgets.size());
        std::vector<double> best_acc(budgets.size(), 0.0);
        trainer::TrainConfig cfg = config;
        cfg.seed = seed;
        trainer::run_training(cfg, data, [&](const trainer::EpochRecord &, const nn::ModelState &state) {
            for (std::size_t k = 0; k < budgets.size(); ++k) {
                const double acc = trainer::evaluate_validation(state, subsets[k]);
                if (acc > best_acc[k]) {
                    best_acc[k] = acc;
                    best[k] = state;
                    best[k]->mode = nn::Mode::Eval;
                }
            }
        });
        for (std::size_t k = 0; k < budgets.size(); ++k) {
            // a budget whose accuracy never beat 0 keeps the initial model
            if (!best[k]) best[k] = trainer::initial_model(cfg);
            SweepRun run;
            run.budget = budgets[k];
            run.seed = seed;
            run.counts = run_test(*best[k], test);
            run.fpr = false_positive_rate(run.counts);
            run.f1 = f1_score(run.counts);
            per_budget[k].push_back(run);
        }
    }
    for (std::size_t k = 0; k < budgets.size(); ++k) {
        SweepMean mean{budgets[k], 0, 0};
        for (const auto &r : per_budget[k]) {
            mean.fpr += r.fpr;
            mean.f1 += r.f1;
            result.runs.push_back(r);
        }
        mean.fpr /= static_cast<double>(per_budget[k].size());
        mean.f1 /= static_cast<double>(per_budget[k].size());
        result.means.push_back(mean);
    }
    return result;
}

std::size_t lcs_opcodes(std::span<const disasm::OpcodeClass> a, std::span<const disasm::OpcodeClass> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::vector<disasm::OpcodeClass> opcode_sequence(const Sample &s) {
    std::vector<disasm::OpcodeClass> out;
    for (const auto &insn : disasm::decode_all(s.bytes)) out.push_back(insn.opcode);
    return out;
}

PairwiseAverage avg_pairwise_lcs(std::span<const Sample> a, std::span<const Sample> b, std::uint64_t seed) {
    if (a.empty() || b.empty()) throw EmptySet("pairwise LCS over an empty set");
    const auto sa = decode_set(a, "set A");
    const auto sb = decode_set(b, "set B");
    return average_pairs(sa.size(), sb.size(), seed,
                         [&](std::size_t i, std::size_t j) { return static_cast<double>(lcs_opcodes(sa[i], sb[j])); });
}

PairwiseAverage avg_pairwise_distance(const Matrix &fa, const Matrix &fb, std::uint64_t seed) {
    if (fa.rows() > 0 && fb.rows() > 0 && fa.cols() != fb.cols()) throw ShapeMismatch("feature widths differ");
    return average_pairs(static_cast<std::size_t>(fa.rows()), static_cast<std::size_t>(fb.rows()), seed,
                         [&](std::size_t i, std::size_t j) {
                             return (fa.row(static_cast<Index>(i)) - fb.row(static_cast<Index>(j))).norm();
                         });
}

Matrix embed(const nn::ModelState &state, std::span<const Sample> samples, std::size_t chunk) {
    Matrix out(static_cast<Index>(samples.size()), static_cast<Index>(state.arch.hidden));
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        const std::size_t len = std::min(chunk, samples.size() - start);
        idx.resize(len);
        std::iota(idx.begin(), idx.end(), start);
        out.middleRows(static_cast<Index>(start), static_cast<Index>(len)) =
            nn::features_eval(state, nn::one_hot(samples, idx, state.arch.seq_len, state.arch.alphabet)).cast<double>();
    }
    return out;
}

PairwiseAverage avg_pairwise_embedding_distance(const nn::ModelState &state, std::span<const Sample> a,
                                                std::span<const Sample> b, std::uint64_t seed) {
    if (a.empty() || b.empty()) throw EmptySet("pairwise distance over an empty set");
    return avg_pairwise_distance(embed(state, a), embed(state, b), seed);
}

TransferReport make_transfer_report(std::string source, std::string target, const ConfusionCounts &baseline,
                                    const ConfusionCounts &adapted) {
    TransferReport r;
    r.source = std::move(source);
    r.target = std::move(target);
    r.baseline = baseline;
    r.adapted = adapted;
    r.a = compute_metrics(baseline);
    r.b = compute_metrics(adapted);
    auto change = [](std::uint64_t before, std::uint64_t after) -> std::optional<double> {
        if (before == 0) return std::nullopt;
        return (static_cast<double>(after) - static_cast<double>(before)) / static_cast<double>(before);
    };
    r.fp_change = change(baseline.fp, adapted.fp);
    r.detected_change = change(baseline.tp, adapted.tp);
    return r;
}

void write_transfer_report(const std::filesystem::path &path, std::span<const TransferReport> rows) {
    auto out = open_table(path);
    out << "source\ttarget\tfpr_a\tf1_a\tdr_a\tfpr_b\tf1_b\tdr_b\ttp_a\tfp_a\ttn_a\tfn_a\ttp_b\tfp_b\ttn_b\tfn_b"
           "\tfp_change\tdetected_change\n";
    for (const auto &r : rows) {
        out << r.source << '\t' << r.target;
        for (const Metrics *m : {&r.a, &r.b}) {
            out << '\t' << kv::format_double(m->fpr) << '\t' << kv::format_double(m->f1) << '\t'
                << kv::format_double(m->dr);
        }
        for (const ConfusionCounts *c : {&r.baseline, &r.adapted}) {
            out << '\t' << c->tp << '\t' << c->fp << '\t' << c->tn << '\t' << c->fn;
        }
        out << '\t' << fmt(r.fp_change) << '\t' << fmt(r.detected_change) << '\n';
    }
    finish(out, path);
}

void write_sweep(const std::filesystem::path &path, const SweepResult &sweep) {
    auto out = open_table(path);
    out << "budget\tseed\tfpr\tf1\n";
    for (const auto &r : sweep.runs) {
        out << r.budget << '\t' << r.seed << '\t' << kv::format_double(r.fpr) << '\t' << kv::format_double(r.f1)
            << '\n';
    }
    for (const auto &m : sweep.means) {
        out << m.budget << "\tmean\t" << kv::format_double(m.fpr) << '\t' << kv::format_double(m.f1) << '\n';
    }
    finish(out, path);
}

std::vector<double> ema(std::span<const double> values, double alpha) {
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(out.empty() ? v : alpha * out.back() + (1.0 - alpha) * v);
    return out;
}

} // namespace ropdda::evalkit
