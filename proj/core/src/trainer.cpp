#include "ropdda/trainer.hpp"

#include "ropdda/error.hpp"
#include "ropdda/keyvalue.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ropdda::trainer {

namespace {

using Index = Eigen::Index;

std::vector<std::size_t> shuffled(std::size_t n, Rng &rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

// [begin, end) ranges of consecutive batches; a trailing single sample is
// dropped.
std::vector<std::pair<std::size_t, std::size_t>> batches(std::size_t n, std::size_t batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < n; b += batch_size) {
        const std::size_t e = std::min(n, b + batch_size);
        if (e - b >= 2) out.emplace_back(b, e);
    }
    return out;
}

void require_train_mode(const nn::ModelState &state) {
    if (state.mode != nn::Mode::Train) throw std::invalid_argument("training phase needs a train-mode model");
}

void check_batch_size(std::size_t batch_size) {
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
}

nn::layers::SparseInput concat(nn::layers::SparseInput a, const nn::layers::SparseInput &b) {
    for (std::size_t e = 0; e < b.value.size(); ++e) {
        a.row.push_back(b.row[e] + a.rows);
        a.col.push_back(b.col[e]);
        a.value.push_back(b.value[e]);
    }
    a.rows += b.rows;
    return a;
}

double root(double mmd2) { return std::sqrt(std::max(0.0, mmd2)); }

} // namespace

std::string_view to_string(TrainMode m) { return m == TrainMode::Baseline ? "baseline" : "da"; }

void TrainConfig::validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    check_batch_size(batch_size);
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (kernel.policy == mmd::BandwidthPolicy::Fixed && !(kernel.sigma > 0)) {
        throw ConfigError("fixed kernel sigma must be positive");
    }
}

double train_epoch_ce(nn::ModelState &state, nn::AdamState &adam, std::span<const Sample> source_train,
                      std::size_t batch_size, Rng &rng, ExposureCounter *exposure) {
    require_train_mode(state);
    check_batch_size(batch_size);
    std::size_t malicious = 0;
    for (const auto &s : source_train) malicious += s.label == Label::Malicious;
    const std::size_t benign = source_train.size() - malicious;
    if ((benign > malicious ? benign - malicious : malicious - benign) > batch_size) {
        throw UnbalancedData(std::to_string(benign) + " benign vs " + std::to_string(malicious) + " malicious");
    }

    const auto order = shuffled(source_train.size(), rng);
    double loss_sum = 0;
    std::size_t seen = 0;
    std::vector<Label> labels;
    for (auto [b, e] : batches(order.size(), batch_size)) {
        const std::span<const std::size_t> idx(order.data() + b, e - b);
        labels.clear();
        for (auto i : idx) {
            labels.push_back(source_train[i].label);
            if (exposure) exposure->add(source_train[i]);
        }
        auto fr = nn::forward_features(state, nn::one_hot(source_train, idx, state.arch.seq_len, state.arch.alphabet),
                                       rng);
        const nn::VectorT<float> prob = nn::forward_head(state, fr.features);
        auto bce = nn::bce_loss(prob, labels);
        const auto grads = nn::backward(state, *fr.trace, {std::move(bce.d_prob), std::nullopt});
        nn::adam_step(state, adam, grads, nn::ParamGroup::All);
        loss_sum += bce.loss * static_cast<double>(idx.size());
        seen += idx.size();
    }
    return seen == 0 ? 0.0 : loss_sum / static_cast<double>(seen);
}

MmdPhaseResult train_step_mmd(nn::ModelState &state, nn::AdamState &adam, std::span<const Sample> source_malicious,
                              std::span<const Sample> target_malicious, const mmd::KernelConfig &kernel,
                              std::size_t batch_size, Rng &rng, ExposureCounter *exposure, nn::NormStats norm) {
    require_train_mode(state);
    check_batch_size(batch_size);
    auto guard = [](std::span<const Sample> set, const char *name) {
        for (std::size_t i = 0; i < set.size(); ++i) {
            if (set[i].label != Label::Malicious) {
                throw LabelLeak(std::string("benign sample at index ") + std::to_string(i) + " of " + name);
            }
        }
    };
    guard(source_malicious, "source_malicious");
    guard(target_malicious, "target_malicious");
    if (source_malicious.empty() || target_malicious.empty()) throw EmptySet("MMD phase needs both domains");

    const auto src_order = shuffled(source_malicious.size(), rng);
    const auto tgt_order = shuffled(target_malicious.size(), rng);
    std::size_t tgt_pos = 0;

    MmdPhaseResult res;
    std::optional<double> sigma;
    if (kernel.policy == mmd::BandwidthPolicy::Fixed) sigma = kernel.sigma;
    std::vector<std::size_t> tgt_idx;
    const auto frozen = state.running;
    double before_sum = 0, after_sum = 0;
    for (auto [b, e] : batches(src_order.size(), batch_size)) {
        const std::span<const std::size_t> src_idx(src_order.data() + b, e - b);
        tgt_idx.clear();
        for (std::size_t k = 0; k < src_idx.size(); ++k) {
            tgt_idx.push_back(tgt_order[tgt_pos]);
            tgt_pos = (tgt_pos + 1) % tgt_order.size();
        }
        if (exposure) {
            for (auto i : src_idx) exposure->add(source_malicious[i]);
            for (auto i : tgt_idx) exposure->add(target_malicious[i]);
        }
        const auto input = concat(nn::one_hot(source_malicious, src_idx, state.arch.seq_len, state.arch.alphabet),
                                  nn::one_hot(target_malicious, tgt_idx, state.arch.seq_len, state.arch.alphabet));
        const auto m = static_cast<Index>(src_idx.size());
        const auto n = static_cast<Index>(tgt_idx.size());

        // Malicious-only batches would drag the running statistics away from
        // the balanced data the head is trained on, so they stay frozen here.
        auto fr = nn::forward_features(state, input, rng, static_cast<const nn::DropoutMasks *>(nullptr), norm);
        state.running = frozen;
        const Matrix fa = fr.features.topRows(m).cast<double>();
        const Matrix fb = fr.features.bottomRows(n).cast<double>();
        if (!sigma) sigma = mmd::median_heuristic(fa, fb, rng());
        const auto g = mmd::mmd_gradient(fa, fb, *sigma);
        nn::MatrixT<float> d_features(m + n, fr.features.cols());
        d_features.topRows(m) = g.d_a.cast<float>();
        d_features.bottomRows(n) = g.d_b.cast<float>();
        const auto grads = nn::backward(state, *fr.trace, {std::nullopt, std::move(d_features)});
        nn::adam_step(state, adam, grads, nn::ParamGroup::FeaturesOnly);

        // same batch, same dropout masks, updated parameters
        const auto again = nn::forward_features(state, input, rng, &fr.trace->masks, norm);
        state.running = frozen;
        const double after = root(mmd::mmd_squared(again.features.topRows(m).cast<double>(),
                                                       again.features.bottomRows(n).cast<double>(), *sigma));

        const double before = root(g.value);
        before_sum += before;
        after_sum += after;
        res.trace.push_back({adam.step, before});
    }
    if (!res.trace.empty()) {
        res.mmd_before = before_sum / static_cast<double>(res.trace.size());
        res.mmd_after = after_sum / static_cast<double>(res.trace.size());
    }
    res.sigma = sigma.value_or(0.0);
    return res;
}

double evaluate_validation(const nn::ModelState &state, std::span<const Sample> validation) {
    if (validation.empty()) throw MissingValidation("validation set is empty");
    const auto predicted = nn::predict_probs(nn::predict_proba(state, validation));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < validation.size(); ++i) correct += predicted[i] == validation[i].label;
    return static_cast<double>(correct) / static_cast<double>(validation.size());
}

TrainData make_train_data(std::span<const Sample> train, std::vector<Sample> validation) {
    TrainData d;
    for (const auto &s : train) {
        if (s.domain == Domain::Source) {
            d.source_train.push_back(s);
        } else if (s.label == Label::Malicious) {
            d.target_malicious.push_back(s);
        }
    }
    d.validation = std::move(validation);
    return d;
}

nn::ModelState initial_model(const TrainConfig &config) {
    nn::ModelState s = nn::init_model(config.arch, derive_seed(config.seed, "model/init"));
    s.mode = nn::Mode::Eval;
    return s;
}

TrainResult run_training(const TrainConfig &config, const TrainData &data, const EpochCallback &on_epoch) {
    config.validate();
    if (data.validation.empty()) throw MissingValidation("validation set is empty");

    nn::ModelState state = initial_model(config);
    state.mode = nn::Mode::Train;
    nn::AdamState adam = nn::AdamState::for_model(state, config.learning_rate);
    Rng rng(derive_seed(config.seed, "train"));
    ExposureCounter exposure;

    std::vector<Sample> source_malicious;
    for (const auto &s : data.source_train) {
        if (s.label == Label::Malicious) source_malicious.push_back(s);
    }

    TrainResult out{initial_model(config), {}};
    out.report.mode = config.mode;
    // The bandwidth is resolved on the first MMD batch of the run and then
    // held fixed, so later epochs measure discrepancy on the same scale.
    mmd::KernelConfig kernel = config.kernel;

    for (std::size_t e = 0; e < config.max_epochs; ++e) {
        EpochRecord rec;
        rec.epoch = e;
        rec.ce_loss = train_epoch_ce(state, adam, data.source_train, config.batch_size, rng, &exposure);
        if (config.mode == TrainMode::DomainAdaptation) {
            auto phase =
                train_step_mmd(state, adam, source_malicious, data.target_malicious, kernel, config.batch_size, rng,
                               &exposure, config.mmd_norm);
            kernel = {phase.sigma, mmd::BandwidthPolicy::Fixed};
            rec.mmd_before = phase.mmd_before;
            rec.mmd_after = phase.mmd_after;
            rec.sigma = phase.sigma;
            out.report.mmd_trace.insert(out.report.mmd_trace.end(), phase.trace.begin(), phase.trace.end());
        }
        rec.val_acc = evaluate_validation(state, data.validation);
        if (rec.val_acc > out.report.best_validation_accuracy) {
            out.best = state;
            out.best.mode = nn::Mode::Eval;
            out.report.best_epoch = e;
            out.report.best_validation_accuracy = rec.val_acc;
        }
        out.report.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec, state);
    }
    out.report.target_benign_exposures = exposure.target_benign();
    return out;
}

namespace {

std::ofstream open_table(const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void finish(std::ofstream &out, const std::filesystem::path &path) {
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace

void write_training_log(const std::filesystem::path &path, const TrainReport &report) {
    auto out = open_table(path);
    out << "epoch\tce_loss\tmmd_before\tmmd_after\tsigma\tval_acc\n";
    for (const auto &r : report.epochs) {
        out << r.epoch << '\t' << kv::format_double(r.ce_loss) << '\t' << kv::format_double(r.mmd_before) << '\t'
            << kv::format_double(r.mmd_after) << '\t' << kv::format_double(r.sigma) << '\t'
            << kv::format_double(r.val_acc) << '\n';
    }
    finish(out, path);
}

void write_mmd_trace(const std::filesystem::path &path, const TrainReport &report) {
    auto out = open_table(path);
    out << "step\tmmd\n";
    for (const auto &p : report.mmd_trace) out << p.step << '\t' << kv::format_double(p.mmd) << '\n';
    finish(out, path);
}

} // namespace ropdda::trainer
