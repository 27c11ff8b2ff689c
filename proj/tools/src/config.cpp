#include "ropdda/cli/config.hpp"

#include "ropdda/dataset_io.hpp"
#include "ropdda/error.hpp"
#include "ropdda/keyvalue.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace ropdda::cli {

namespace {

using datagen::Split;

constexpr Domain kDomains[] = {Domain::Source, Domain::Target};
constexpr Label kLabels[] = {Label::Benign, Label::Malicious};
constexpr Split kSplits[] = {Split::Train, Split::Validation, Split::Test};

std::string_view label_name(Label l) { return l == Label::Malicious ? "malicious" : "benign"; }

std::string count_key(Domain d, Label l, Split s) {
    return "count." + std::string(to_string(d)) + "." + std::string(label_name(l)) + "." +
           std::string(datagen::to_string(s));
}

template <class A> std::string join(const A &values) {
    std::string out;
    for (const auto &v : values) {
        if (!out.empty()) out += ",";
        if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
            out += kv::format_double(v);
        } else {
            out += std::to_string(v);
        }
    }
    return out;
}

bool set_chain_field(datagen::ChainPolicy &p, std::string_view field, std::string_view value) {
    if (field == "min_gadgets") {
        p.min_gadgets = kv::to_u64(value, field);
    } else if (field == "max_gadgets") {
        p.max_gadgets = kv::to_u64(value, field);
    } else if (field == "max_gadget_insns") {
        p.max_gadget_insns = kv::to_u64(value, field);
    } else if (field == "class_preference") {
        auto vals = kv::to_doubles(value, field);
        if (vals.size() != p.class_preference.size()) {
            throw ConfigError("key 'class_preference': expected " + std::to_string(p.class_preference.size()) +
                              " comma-separated values, got " + std::to_string(vals.size()));
        }
        std::copy(vals.begin(), vals.end(), p.class_preference.begin());
    } else {
        return false;
    }
    return true;
}

bool set_corpus_field(datagen::CorpusSpec &c, std::string_view field, std::string_view value) {
    if (field == "payload_len") {
        c.payload_len = kv::to_u64(value, field);
    } else if (field == "random_payloads") {
        c.random_payloads = kv::to_u64(value, field);
    } else if (field == "min_seeded_addresses") {
        c.min_seeded_addresses = kv::to_u64(value, field);
    } else if (field == "max_seeded_addresses") {
        c.max_seeded_addresses = kv::to_u64(value, field);
    } else if (field == "max_gap_words") {
        c.max_gap_words = kv::to_u64(value, field);
    } else {
        return false;
    }
    return true;
}

std::string format_chain(const datagen::ChainPolicy &p, const std::string &prefix) {
    std::ostringstream os;
    os << prefix << "min_gadgets = " << p.min_gadgets << "\n"
       << prefix << "max_gadgets = " << p.max_gadgets << "\n"
       << prefix << "max_gadget_insns = " << p.max_gadget_insns << "\n"
       << prefix << "class_preference = " << join(p.class_preference) << "\n";
    return os.str();
}

std::string format_corpus(const datagen::CorpusSpec &c, const std::string &prefix) {
    std::ostringstream os;
    os << prefix << "payload_len = " << c.payload_len << "\n"
       << prefix << "random_payloads = " << c.random_payloads << "\n"
       << prefix << "min_seeded_addresses = " << c.min_seeded_addresses << "\n"
       << prefix << "max_seeded_addresses = " << c.max_seeded_addresses << "\n"
       << prefix << "max_gap_words = " << c.max_gap_words << "\n";
    return os.str();
}

std::string format_budgets(const std::vector<std::size_t> &budgets) {
    std::string out;
    for (auto b : budgets) {
        if (!out.empty()) out += ",";
        out += b == kFullBudget ? std::string("full") : std::to_string(b);
    }
    return out;
}

void check(ExperimentConfig &c) {
    if (!(c.count_divisor > 0)) throw ConfigError("key 'count_divisor': must be positive");
    if (c.budgets.empty()) throw ConfigError("key 'budgets': at least one budget is required");
    if (c.sweep_seeds == 0) throw ConfigError("key 'sweep_seeds': must be positive");
    if (c.analysis_samples == 0) throw ConfigError("key 'analysis_samples': must be positive");
    if (c.out.empty()) throw ConfigError("key 'out': empty path");
    c.train.validate();
}

} // namespace

std::string_view to_string(ExperimentMode m) {
    switch (m) {
    case ExperimentMode::Baseline: return "baseline";
    case ExperimentMode::DomainAdaptation: return "da";
    case ExperimentMode::Both: return "both";
    }
    return "?";
}

ExperimentMode parse_mode(std::string_view s) {
    if (s == "baseline") return ExperimentMode::Baseline;
    if (s == "da" || s == "domain_adaptation") return ExperimentMode::DomainAdaptation;
    if (s == "both") return ExperimentMode::Both;
    throw ConfigError("key 'mode': expected baseline, da or both, got '" + std::string(s) + "'");
}

std::vector<std::size_t> parse_budgets(std::string_view value, std::string_view key) {
    std::vector<std::size_t> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = value.find(',', start);
        std::string_view part = value.substr(start, pos == std::string_view::npos ? pos : pos - start);
        while (!part.empty() && (part.front() == ' ' || part.front() == '\t')) part.remove_prefix(1);
        while (!part.empty() && (part.back() == ' ' || part.back() == '\t')) part.remove_suffix(1);
        if (part == "full") {
            out.push_back(kFullBudget);
        } else {
            const auto b = kv::to_u64(part, key);
            if (b == 0) throw ConfigError("key '" + std::string(key) + "': budgets must be positive");
            out.push_back(b);
        }
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

void ExperimentConfig::derive_seeds() {
    dataset.seed = seed;
    train.seed = derive_seed(seed, "train");
}

std::vector<std::uint64_t> ExperimentConfig::sweep_seed_list() const {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < sweep_seeds; ++i) out.push_back(derive_seed(derive_seed(seed, "sweep"), i));
    return out;
}

ExperimentConfig parse_config(std::string_view text, const Overrides &overrides) {
    std::map<std::string, std::string, std::less<>> values;
    for (auto &e : kv::parse(text)) values[e.key] = e.value;
    if (overrides.seed) values["seed"] = std::to_string(*overrides.seed);
    if (overrides.mode) values["mode"] = *overrides.mode;
    if (overrides.out) values["out"] = overrides.out->string();
    if (overrides.budgets) values["budgets"] = *overrides.budgets;

    for (auto key : kRequiredKeys) {
        if (!values.contains(key)) throw ConfigError("missing required key '" + std::string(key) + "'");
    }

    ExperimentConfig c;
    c.count_divisor = kv::to_double(values.at("count_divisor"), "count_divisor");
    if (!(c.count_divisor > 0)) throw ConfigError("key 'count_divisor': must be positive");
    c.dataset.counts = datagen::default_counts(c.count_divisor);

    for (const auto &[key, value] : values) {
        const auto dot = key.find('.');
        const std::string_view group = std::string_view(key).substr(0, dot);
        const std::string_view field = dot == std::string::npos ? std::string_view{} : std::string_view(key).substr(dot + 1);
        bool known = true;
        if (key == "seed") {
            c.seed = kv::to_u64(value, key);
        } else if (key == "out") {
            c.out = value;
        } else if (key == "mode") {
            c.mode = parse_mode(value);
        } else if (key == "count_divisor") {
            // handled above
        } else if (key == "transfer") {
            c.dataset.transfer = kv::to_bool(value, key);
        } else if (key == "budgets") {
            c.budgets = parse_budgets(value, key);
        } else if (key == "sweep_seeds") {
            c.sweep_seeds = kv::to_u64(value, key);
        } else if (key == "analysis_samples") {
            c.analysis_samples = kv::to_u64(value, key);
        } else if (group == "count") {
            known = false;
            for (Domain d : kDomains)
                for (Label l : kLabels)
                    for (Split s : kSplits)
                        if (key == count_key(d, l, s)) {
                            c.dataset.counts.at(d, l, s) = kv::to_u64(value, key);
                            known = true;
                        }
        } else if (group == "source" || group == "target") {
            known = kv::set_image_field(group == "source" ? c.dataset.source_image : c.dataset.target_image, field,
                                        value);
        } else if (group == "source_chain" || group == "target_chain") {
            known = set_chain_field(group == "source_chain" ? c.dataset.source_chain : c.dataset.target_chain, field,
                                    value);
        } else if (group == "source_corpus" || group == "target_corpus") {
            known = set_corpus_field(group == "source_corpus" ? c.dataset.source_corpus : c.dataset.target_corpus,
                                     field, value);
        } else if (key == "train.max_epochs") {
            c.train.max_epochs = kv::to_u64(value, key);
        } else if (key == "train.batch_size") {
            c.train.batch_size = kv::to_u64(value, key);
        } else if (key == "train.learning_rate") {
            c.train.learning_rate = kv::to_double(value, key);
        } else if (key == "train.mmd_norm") {
            if (value == "batch") {
                c.train.mmd_norm = nn::NormStats::Batch;
            } else if (value == "running") {
                c.train.mmd_norm = nn::NormStats::Running;
            } else {
                throw ConfigError("key 'train.mmd_norm': expected batch or running, got '" + value + "'");
            }
        } else if (key == "kernel.policy") {
            if (value == "median") {
                c.train.kernel.policy = mmd::BandwidthPolicy::MedianHeuristic;
            } else if (value == "fixed") {
                c.train.kernel.policy = mmd::BandwidthPolicy::Fixed;
            } else {
                throw ConfigError("key 'kernel.policy': expected median or fixed, got '" + value + "'");
            }
        } else if (key == "kernel.sigma") {
            c.train.kernel.sigma = kv::to_double(value, key);
        } else {
            known = false;
        }
        if (!known) throw ConfigError("unknown key '" + key + "'");
    }
    c.train.mode = c.mode == ExperimentMode::Baseline ? trainer::TrainMode::Baseline
                                                      : trainer::TrainMode::DomainAdaptation;
    c.derive_seeds();
    check(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path &path, const Overrides &overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), overrides);
}

std::string format_config(const ExperimentConfig &c) {
    std::ostringstream os;
    os << "seed = " << c.seed << "\n"
       << "out = " << c.out.string() << "\n"
       << "mode = " << to_string(c.mode) << "\n"
       << "count_divisor = " << kv::format_double(c.count_divisor) << "\n"
       << "transfer = " << (c.dataset.transfer ? "true" : "false") << "\n"
       << "budgets = " << format_budgets(c.budgets) << "\n"
       << "sweep_seeds = " << c.sweep_seeds << "\n"
       << "analysis_samples = " << c.analysis_samples << "\n";
    for (Domain d : kDomains)
        for (Label l : kLabels)
            for (Split s : kSplits) os << count_key(d, l, s) << " = " << c.dataset.counts.at(d, l, s) << "\n";
    os << io::format_image_spec(c.dataset.source_image, "source.")
       << io::format_image_spec(c.dataset.target_image, "target.")
       << format_chain(c.dataset.source_chain, "source_chain.") << format_chain(c.dataset.target_chain, "target_chain.")
       << format_corpus(c.dataset.source_corpus, "source_corpus.")
       << format_corpus(c.dataset.target_corpus, "target_corpus.");
    os << "train.max_epochs = " << c.train.max_epochs << "\n"
       << "train.batch_size = " << c.train.batch_size << "\n"
       << "train.learning_rate = " << kv::format_double(c.train.learning_rate) << "\n"
       << "train.mmd_norm = " << (c.train.mmd_norm == nn::NormStats::Batch ? "batch" : "running") << "\n"
       << "kernel.policy = "
       << (c.train.kernel.policy == mmd::BandwidthPolicy::MedianHeuristic ? "median" : "fixed") << "\n"
       << "kernel.sigma = " << kv::format_double(c.train.kernel.sigma) << "\n";
    return os.str();
}

} // namespace ropdda::cli
