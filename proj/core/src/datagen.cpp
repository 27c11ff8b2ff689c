#include "ropdda/datagen.hpp"

#include "ropdda/error.hpp"
#include "ropdda/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ropdda::datagen {

using disasm::OpcodeClass;

namespace {

constexpr std::array<OpcodeClass, 4> kTerminators = {
    OpcodeClass::Ret, OpcodeClass::RetImm16, OpcodeClass::JmpRm, OpcodeClass::CallRm};

constexpr std::array<OpcodeClass, 12> kBody = {
    OpcodeClass::PopR,   OpcodeClass::PushR,  OpcodeClass::MovRImm32, OpcodeClass::AddEspImm8,
    OpcodeClass::XorRmR, OpcodeClass::AddRmR, OpcodeClass::MovRRm,    OpcodeClass::IncR,
    OpcodeClass::DecR,   OpcodeClass::Nop,    OpcodeClass::Leave,     OpcodeClass::Int3};

// Bytes that no instruction of the subset starts with. Operand bytes are drawn
// from here so that decoding from inside an instruction always fails, which
// keeps the ground-truth gadget set exactly the aligned one.
std::vector<std::uint8_t> filler_bytes() {
    std::vector<std::uint8_t> out;
    for (int b = 0; b < 256; ++b) {
        if (!disasm::is_opcode_byte(static_cast<std::uint8_t>(b))) out.push_back(static_cast<std::uint8_t>(b));
    }
    return out;
}

template <std::size_t N>
std::size_t pick_weighted(Rng &rng, const std::array<double, N> &w) {
    std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
    return dist(rng);
}

class InstructionSampler {
public:
    explicit InstructionSampler(const ImageSpec &spec) : spec_(spec), filler_(filler_bytes()) {
        for (std::size_t i = 0; i < kBody.size(); ++i) body_w_[i] = weight(kBody[i]);
        for (std::size_t i = 0; i < kTerminators.size(); ++i) term_w_[i] = weight(kTerminators[i]);
    }

    bool has_body() const { return sum(body_w_) > 0; }
    bool has_terminator() const { return sum(term_w_) > 0; }

    double mean_length(bool terminator) const {
        double num = 0, den = 0;
        if (terminator) {
            for (std::size_t i = 0; i < kTerminators.size(); ++i) {
                num += term_w_[i] * static_cast<double>(disasm::encoded_length(kTerminators[i]));
                den += term_w_[i];
            }
        } else {
            for (std::size_t i = 0; i < kBody.size(); ++i) {
                num += body_w_[i] * static_cast<double>(disasm::encoded_length(kBody[i]));
                den += body_w_[i];
            }
        }
        return den > 0 ? num / den : 0.0;
    }

    disasm::Instruction draw(Rng &rng, bool terminator) {
        const OpcodeClass op = terminator ? kTerminators[pick_weighted(rng, term_w_)]
                                          : kBody[pick_weighted(rng, body_w_)];
        switch (op) {
        case OpcodeClass::RetImm16:
            return disasm::make_instruction(op, 0, 0, 4u * (1 + static_cast<std::uint32_t>(uniform_index(rng, 4))));
        case OpcodeClass::AddEspImm8:
            return disasm::make_instruction(op, 0, 0, 4u * (1 + static_cast<std::uint32_t>(uniform_index(rng, 15))));
        case OpcodeClass::MovRImm32: {
            std::uint32_t imm = 0;
            for (int i = 0; i < 4; ++i) imm |= static_cast<std::uint32_t>(filler(rng)) << (8 * i);
            return disasm::make_instruction(op, reg(rng), 0, imm);
        }
        case OpcodeClass::PopR:
        case OpcodeClass::PushR:
        case OpcodeClass::IncR:
        case OpcodeClass::DecR:
            return disasm::make_instruction(op, reg(rng));
        case OpcodeClass::XorRmR:
        case OpcodeClass::AddRmR:
        case OpcodeClass::MovRRm:
            for (;;) {
                const std::uint8_t r = reg(rng), m = reg(rng);
                if (!disasm::is_opcode_byte(static_cast<std::uint8_t>(0xC0 | (r << 3) | m))) {
                    return disasm::make_instruction(op, r, m);
                }
            }
        case OpcodeClass::JmpRm:
        case OpcodeClass::CallRm:
            return disasm::make_instruction(op, 0, reg(rng));
        default:
            return disasm::make_instruction(op);
        }
    }

    std::uint8_t filler(Rng &rng) const { return filler_[uniform_index(rng, filler_.size())]; }

private:
    double weight(OpcodeClass op) const { return spec_.class_weights[static_cast<std::size_t>(op)]; }
    template <std::size_t N> static double sum(const std::array<double, N> &a) {
        return std::accumulate(a.begin(), a.end(), 0.0);
    }
    std::uint8_t reg(Rng &rng) const {
        return static_cast<std::uint8_t>(pick_weighted(rng, spec_.register_weights));
    }

    const ImageSpec &spec_;
    std::vector<std::uint8_t> filler_;
    std::array<double, kBody.size()> body_w_{};
    std::array<double, kTerminators.size()> term_w_{};
};

void check_weights(const ImageSpec &spec) {
    for (double w : spec.class_weights) {
        if (!(w >= 0) || !std::isfinite(w)) throw InfeasibleSpec("class weights must be finite and >= 0");
    }
    double regs = 0;
    for (double w : spec.register_weights) {
        if (!(w >= 0) || !std::isfinite(w)) throw InfeasibleSpec("register weights must be finite and >= 0");
        regs += w;
    }
    if (regs <= 0) throw InfeasibleSpec("register weights sum to zero");
}

} // namespace

SyntheticImage synthesize_image(const ImageSpec &spec, std::uint64_t seed) {
    if (spec.size < disasm::kMinImageSize || spec.size > disasm::kMaxImageSize) {
        throw InfeasibleSpec("image size " + std::to_string(spec.size) + " outside [1 KiB, 1 MiB]");
    }
    if (!(spec.junk_rate >= 0 && spec.junk_rate < 1)) throw InfeasibleSpec("junk_rate must be in [0, 1)");
    check_weights(spec);
    InstructionSampler sampler(spec);
    if (!sampler.has_terminator()) throw InfeasibleSpec("no terminator class has positive weight");

    const double expected_terminators = spec.gadget_density * static_cast<double>(spec.size);
    if (!(spec.gadget_density > 0) || expected_terminators < static_cast<double>(kMinGadgetStarts)) {
        throw InfeasibleSpec("gadget density " + std::to_string(spec.gadget_density) + " yields " +
                             std::to_string(expected_terminators) + " expected gadgets in " +
                             std::to_string(spec.size) + " bytes; need " +
                             std::to_string(kMinGadgetStarts));
    }
    // Probability q that an instruction is a terminator, so that terminators
    // per byte equal the density: q = d * ((1 - q) * B + q * T + junk).
    const double body_len = sampler.mean_length(false);
    const double term_len = sampler.mean_length(true);
    double q = 1.0;
    if (sampler.has_body()) {
        const double d = spec.gadget_density;
        const double denom = 1.0 - d * (term_len - body_len);
        q = denom > 0 ? d * (body_len + spec.junk_rate) / denom : 2.0;
        if (!(q <= 1.0)) {
            throw InfeasibleSpec("gadget density " + std::to_string(d) + " exceeds what the mixture can encode");
        }
    } else if (spec.gadget_density * term_len > 1.0) {
        throw InfeasibleSpec("gadget density exceeds one terminator per encoded terminator length");
    }

    Rng rng(seed);
    SyntheticImage out{ProgramImage(spec.base_address, Bytes(spec.size, 0)), {}, {}, spec, seed};
    Bytes bytes;
    bytes.reserve(spec.size);

    // Instructions are laid out in runs separated by filler bytes. Within a run,
    // instruction i starts a gadget iff the first terminator at or after i is at
    // most kMaxGadgetInsns instructions away.
    std::vector<std::pair<std::uint32_t, bool>> run; // (offset, is_terminator)
    auto close_run = [&] {
        std::size_t next_term = run.size();
        for (std::size_t i = run.size(); i-- > 0;) {
            if (run[i].second) next_term = i;
            if (next_term < run.size() && next_term - i + 1 <= disasm::kMaxGadgetInsns) {
                out.gadget_offsets.push_back(run[i].first);
            }
        }
        run.clear();
    };

    for (;;) {
        if (uniform01(rng) < spec.junk_rate) {
            if (bytes.size() >= spec.size) break;
            close_run();
            bytes.push_back(sampler.filler(rng));
            continue;
        }
        const bool terminator = !sampler.has_body() || uniform01(rng) < q;
        const disasm::Instruction insn = sampler.draw(rng, terminator);
        if (bytes.size() + insn.length > spec.size) break;
        run.emplace_back(static_cast<std::uint32_t>(bytes.size()), terminator);
        auto b = insn.bytes();
        bytes.insert(bytes.end(), b.begin(), b.end());
        ++out.class_histogram[static_cast<std::size_t>(insn.opcode)];
    }
    close_run();
    while (bytes.size() < spec.size) bytes.push_back(sampler.filler(rng));

    std::sort(out.gadget_offsets.begin(), out.gadget_offsets.end());
    if (out.gadget_offsets.size() < kMinGadgetStarts) {
        throw InfeasibleSpec("only " + std::to_string(out.gadget_offsets.size()) +
                             " gadget starts generated; need " + std::to_string(kMinGadgetStarts));
    }
    out.image = ProgramImage(spec.base_address, std::move(bytes));
    return out;
}

std::vector<std::uint32_t> gadget_starts(const ProgramImage &image) {
    std::vector<std::uint32_t> out;
    for (std::size_t off = 0; off < image.size(); ++off) {
        const auto addr = static_cast<std::uint32_t>(image.base_address() + off);
        if (image.gadget_at(addr)) out.push_back(addr);
    }
    return out;
}

double chi_squared_distance(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    const double sa = static_cast<double>(std::accumulate(a.begin(), a.end(), std::size_t{0}));
    const double sb = static_cast<double>(std::accumulate(b.begin(), b.end(), std::size_t{0}));
    if (a.size() != b.size() || sa == 0 || sb == 0) throw std::invalid_argument("chi_squared_distance: bad histograms");
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double pa = static_cast<double>(a[i]) / sa, pb = static_cast<double>(b[i]) / sb;
        if (pa + pb > 0) d += (pa - pb) * (pa - pb) / (pa + pb);
    }
    return 0.5 * d;
}

std::vector<Sample> generate_malicious(const ProgramImage &image, std::size_t n, std::uint64_t seed,
                                       Domain domain, const ChainPolicy &policy) {
    if (policy.min_gadgets < disasm::kMinChainLen || policy.max_gadgets < policy.min_gadgets ||
        policy.max_gadget_insns < 1) {
        throw InfeasibleSpec("invalid chain policy");
    }
    for (double w : policy.class_preference) {
        if (!(w >= 0) || !std::isfinite(w)) throw InfeasibleSpec("class preferences must be finite and non-negative");
    }
    if (n == 0) return {};
    std::vector<disasm::Gadget> pool;
    std::vector<double> cumulative;
    double total = 0;
    for (std::uint32_t addr : gadget_starts(image)) {
        auto g = image.gadget_at(addr);
        if (g->instructions.size() > policy.max_gadget_insns) continue;
        double w = 1;
        for (const auto &insn : g->instructions) w *= policy.class_preference[static_cast<std::size_t>(insn.opcode)];
        if (w <= 0) continue;
        total += w;
        cumulative.push_back(total);
        pool.push_back(std::move(*g));
    }
    const bool uniform = std::all_of(policy.class_preference.begin(), policy.class_preference.end(),
                                     [](double w) { return w == 1.0; });
    if (pool.size() < disasm::kMinChainLen) {
        throw InfeasibleSpec("image has " + std::to_string(pool.size()) +
                             " eligible gadgets; a chain needs " + std::to_string(disasm::kMinChainLen));
    }

    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(n);
    const std::size_t span = policy.max_gadgets - policy.min_gadgets + 1;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t len = policy.min_gadgets + uniform_index(rng, span);
        Sample s;
        s.label = Label::Malicious;
        s.domain = domain;
        s.origin = Origin::SynthesizedChain;
        for (std::size_t k = 0; k < len; ++k) {
            std::size_t pick = 0;
            if (uniform) {
                pick = uniform_index(rng, pool.size());
            } else {
                const double u = uniform01(rng) * total;
                pick = std::min<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                                 cumulative.begin(),
                                             pool.size() - 1);
            }
            const disasm::Gadget &g = pool[pick];
            if (s.bytes.size() + g.byte_len > kMaxSampleBytes) break;
            for (const auto &insn : g.instructions) {
                auto b = insn.bytes();
                s.bytes.insert(s.bytes.end(), b.begin(), b.end());
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> generate_benign(const ProgramImage &image, std::span<const Bytes> corpus,
                                    Domain domain) {
    std::vector<Sample> out;
    for (const Bytes &payload : corpus) {
        if (payload.size() < disasm::kAddressWidth) continue;
        for (auto &chain : disasm::scan_payload(payload, image)) {
            Sample s;
            s.label = Label::Benign;
            s.domain = domain;
            s.origin = Origin::ScannedPayload;
            if (chain.bytes.size() <= kMaxSampleBytes) {
                s.bytes = std::move(chain.bytes);
            } else {
                // whole gadgets only, so every sample stays decodable
                for (const auto &g : chain.gadgets) {
                    if (s.bytes.size() + g.byte_len > kMaxSampleBytes) break;
                    auto b = g.bytes();
                    s.bytes.insert(s.bytes.end(), b.begin(), b.end());
                }
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<Bytes> make_payload_corpus(const ProgramImage &image, const CorpusSpec &spec,
                                       std::size_t seeded_payloads, std::uint64_t seed) {
    if (spec.payload_len < disasm::kAddressWidth) throw InfeasibleSpec("payload_len below address width");
    if (spec.min_seeded_addresses < 1 || spec.max_seeded_addresses < spec.min_seeded_addresses ||
        spec.max_gap_words < 1) {
        throw InfeasibleSpec("invalid corpus spec");
    }
    Rng rng(seed);
    std::vector<Bytes> out;
    out.reserve(spec.random_payloads + seeded_payloads);
    auto random_payload = [&] {
        Bytes p(spec.payload_len);
        for (auto &b : p) b = static_cast<std::uint8_t>(uniform_index(rng, 256));
        return p;
    };
    for (std::size_t i = 0; i < spec.random_payloads; ++i) out.push_back(random_payload());

    if (seeded_payloads == 0) return out;
    const auto starts = gadget_starts(image);
    if (starts.empty()) throw InfeasibleSpec("image has no gadgets to seed payloads with");
    for (std::size_t i = 0; i < seeded_payloads; ++i) {
        Bytes p = random_payload();
        const std::size_t k = spec.min_seeded_addresses +
                              uniform_index(rng, spec.max_seeded_addresses - spec.min_seeded_addresses + 1);
        std::vector<std::size_t> gaps(k > 0 ? k - 1 : 0);
        std::size_t span = disasm::kAddressWidth;
        for (auto &g : gaps) {
            g = 1 + uniform_index(rng, spec.max_gap_words);
            span += g * disasm::kAddressWidth;
        }
        if (span > p.size()) {
            out.push_back(std::move(p));
            continue;
        }
        std::size_t pos = uniform_index(rng, p.size() - span + 1);
        disasm::write_le32(p, pos, starts[uniform_index(rng, starts.size())]);
        for (std::size_t g : gaps) {
            pos += g * disasm::kAddressWidth;
            disasm::write_le32(p, pos, starts[uniform_index(rng, starts.size())]);
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::string_view to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
    }
    return "?";
}

std::size_t CellCounts::total(Domain d, Label l) const {
    return at(d, l, Split::Train) + at(d, l, Split::Validation) + at(d, l, Split::Test);
}

CellCounts default_counts(double divisor) {
    auto scaled = [divisor](double v) { return static_cast<std::size_t>(std::llround(v / divisor)); };
    CellCounts c;
    c.at(Domain::Source, Label::Malicious, Split::Train) = scaled(20000);
    c.at(Domain::Source, Label::Benign, Split::Train) = scaled(20000);
    c.at(Domain::Target, Label::Malicious, Split::Train) = scaled(20000);
    c.at(Domain::Target, Label::Malicious, Split::Validation) = scaled(1750);
    c.at(Domain::Target, Label::Benign, Split::Validation) = scaled(1750);
    c.at(Domain::Target, Label::Malicious, Split::Test) = scaled(7500);
    c.at(Domain::Target, Label::Benign, Split::Test) = scaled(1200);
    return c;
}

void DatasetSpec::validate() const {
    if (transfer && counts.at(Domain::Target, Label::Benign, Split::Train) != 0) {
        throw InfeasibleSpec("transfer scenario forbids target-domain benign training samples (requested " +
                             std::to_string(counts.at(Domain::Target, Label::Benign, Split::Train)) + ")");
    }
    for (Domain d : {Domain::Source, Domain::Target}) {
        const auto b = counts.at(d, Label::Benign, Split::Validation);
        const auto m = counts.at(d, Label::Malicious, Split::Validation);
        if (b != 0 && m != 0 && b != m) {
            throw InfeasibleSpec(std::string(to_string(d)) + " validation set must be balanced (" +
                                 std::to_string(b) + " benign vs " + std::to_string(m) + " malicious)");
        }
    }
}

std::vector<Sample> &Partitions::of(Split s) {
    return s == Split::Train ? train : s == Split::Validation ? validation : test;
}

const std::vector<Sample> &Partitions::of(Split s) const {
    return s == Split::Train ? train : s == Split::Validation ? validation : test;
}

Partitions split_dataset(std::span<const Sample> samples, const DatasetSpec &spec) {
    spec.validate();
    Partitions out;
    for (Domain d : {Domain::Source, Domain::Target}) {
        for (Label l : {Label::Benign, Label::Malicious}) {
            std::vector<std::size_t> cell;
            for (std::size_t i = 0; i < samples.size(); ++i) {
                if (samples[i].domain == d && samples[i].label == l) cell.push_back(i);
            }
            const std::string name = std::string(to_string(d)) + "/" +
                                     (l == Label::Malicious ? "malicious" : "benign");
            Rng rng(derive_seed(spec.seed, "split/" + name));
            std::shuffle(cell.begin(), cell.end(), rng);

            std::size_t next = 0;
            for (Split s : {Split::Train, Split::Validation, Split::Test}) {
                const std::size_t want = spec.counts.at(d, l, s);
                if (next + want > cell.size()) {
                    throw InsufficientSamples("cell (" + name + ", " + std::string(to_string(s)) +
                                              ") needs " + std::to_string(want) + ", only " +
                                              std::to_string(cell.size() - next) + " available");
                }
                for (std::size_t k = 0; k < want; ++k) out.of(s).push_back(samples[cell[next++]]);
            }
        }
    }
    return out;
}

DatasetSpec shifted_domains(const CellCounts &counts, std::uint64_t seed) {
    using C = disasm::OpcodeClass;
    auto at = [](auto &arr, C c) -> double & { return arr[static_cast<std::size_t>(c)]; };
    DatasetSpec spec;
    spec.counts = counts;
    spec.seed = seed;
    at(spec.target_image.class_weights, C::PopR) = 6;
    at(spec.source_chain.class_preference, C::PopR) = 8;
    spec.target_chain = spec.source_chain;
    return spec;
}

Dataset build_dataset(const DatasetSpec &spec) {
    spec.validate();
    const std::uint64_t root = spec.seed;
    SyntheticImage source = synthesize_image(spec.source_image, derive_seed(root, "image/source"));
    SyntheticImage target = synthesize_image(spec.target_image, derive_seed(root, "image/target"));

    std::vector<Sample> all;
    for (Domain d : {Domain::Source, Domain::Target}) {
        const ProgramImage &image = d == Domain::Source ? source.image : target.image;
        const std::string tag(to_string(d));

        auto mal = generate_malicious(image, spec.counts.total(d, Label::Malicious),
                                      derive_seed(root, "malicious/" + tag), d, spec.chain(d));
        all.insert(all.end(), std::make_move_iterator(mal.begin()), std::make_move_iterator(mal.end()));

        const std::size_t need = spec.counts.total(d, Label::Benign);
        std::size_t have = 0;
        for (std::uint64_t round = 0; have < need && round < 16; ++round) {
            const std::size_t seeded = (need - have) + (need - have) / 4 + 8;
            auto corpus = make_payload_corpus(image, spec.corpus(d), seeded,
                                              derive_seed(derive_seed(root, "corpus/" + tag), round));
            auto ben = generate_benign(image, corpus, d);
            have += ben.size();
            all.insert(all.end(), std::make_move_iterator(ben.begin()), std::make_move_iterator(ben.end()));
        }
    }
    Partitions parts = split_dataset(all, spec);
    return Dataset{std::move(source), std::move(target), std::move(parts)};
}

} // namespace ropdda::datagen
