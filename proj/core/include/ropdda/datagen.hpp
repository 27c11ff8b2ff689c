#pragma once

// Synthetic two-domain data: program images with a controllable opcode-class
// mixture, malicious gadget chains, benign gadget-like sequences recovered by
// scanning payloads, and deterministic train/validation/test partitioning.

#include "ropdda/disasm.hpp"
#include "ropdda/sample.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace ropdda::datagen {

using disasm::Bytes;
using disasm::ProgramImage;

inline constexpr std::size_t kMinGadgetStarts = 50;

/// Describes one synthetic program.
struct ImageSpec {
    std::size_t size = 64 * 1024;
    std::uint32_t base_address = 0x08048000;
    /// Expected number of indirect-branch instructions per image byte.
    double gadget_density = 0.02;
    /// Relative weights per opcode class. Terminator classes are weighted among
    /// themselves; the gadget density decides how often a terminator is drawn.
    std::array<double, disasm::kOpcodeClassCount> class_weights = filled(1.0);
    std::array<double, 8> register_weights = {1, 1, 1, 1, 1, 1, 1, 1};
    /// Probability of a non-decodable filler byte before each instruction.
    double junk_rate = 0.0;

    bool operator==(const ImageSpec &) const = default;

    static constexpr std::array<double, disasm::kOpcodeClassCount> filled(double v) {
        std::array<double, disasm::kOpcodeClassCount> a{};
        a.fill(v);
        return a;
    }
};

struct SyntheticImage {
    ProgramImage image;
    /// Ground truth: image offsets of every valid gadget start, ascending.
    std::vector<std::uint32_t> gadget_offsets;
    /// Count of emitted instructions per opcode class.
    std::array<std::size_t, disasm::kOpcodeClassCount> class_histogram{};
    ImageSpec spec;
    std::uint64_t seed = 0;
};

/// Deterministic in (spec, seed). Throws InfeasibleSpec when the density cannot
/// host at least kMinGadgetStarts gadgets in the requested size.
SyntheticImage synthesize_image(const ImageSpec &spec, std::uint64_t seed);

/// Exhaustive sweep: addresses of every offset where gadget_at succeeds.
std::vector<std::uint32_t> gadget_starts(const ProgramImage &image);

/// Chi-squared distance between two normalized class histograms.
double chi_squared_distance(std::span<const std::size_t> a, std::span<const std::size_t> b);

/// How the chain tool picks gadgets for malicious samples.
struct ChainPolicy {
    std::size_t min_gadgets = 2;
    std::size_t max_gadgets = 10;
    /// Only gadgets of at most this many instructions are used.
    std::size_t max_gadget_insns = 3;
    /// Taste of the chain tool: a gadget is drawn with weight equal to the
    /// product of its instructions' class preferences. All ones is uniform.
    std::array<double, disasm::kOpcodeClassCount> class_preference = ImageSpec::filled(1.0);

    bool operator==(const ChainPolicy &) const = default;
};

/// n chains of uniformly many (policy range) gadgets drawn from the eligible
/// gadgets of the image, weighted by the class preferences. Throws
/// InfeasibleSpec if fewer than kMinChainLen gadgets have positive weight.
std::vector<Sample> generate_malicious(const ProgramImage &image, std::size_t n, std::uint64_t seed,
                                       Domain domain, const ChainPolicy &policy = {});

/// Scans every payload; each recovered chain becomes a benign sample.
std::vector<Sample> generate_benign(const ProgramImage &image, std::span<const Bytes> corpus,
                                    Domain domain);

/// Benign stand-in corpus: uniform random payloads plus payloads in which a
/// few gadget addresses of the image are embedded at word gaps.
struct CorpusSpec {
    std::size_t payload_len = 128;
    std::size_t random_payloads = 200;
    std::size_t min_seeded_addresses = 2;
    std::size_t max_seeded_addresses = 3;
    /// Largest gap, in 4-byte words, between embedded addresses.
    std::size_t max_gap_words = disasm::kLookahead;

    bool operator==(const CorpusSpec &) const = default;
};

std::vector<Bytes> make_payload_corpus(const ProgramImage &image, const CorpusSpec &spec,
                                       std::size_t seeded_payloads, std::uint64_t seed);

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };
std::string_view to_string(Split s);

/// Sample counts per (domain, label, split) cell.
class CellCounts {
public:
    std::size_t &at(Domain d, Label l, Split s) { return c_[idx(d)][idx(l)][idx(s)]; }
    std::size_t at(Domain d, Label l, Split s) const { return c_[idx(d)][idx(l)][idx(s)]; }
    std::size_t total(Domain d, Label l) const;
    bool operator==(const CellCounts &) const = default;

private:
    template <class E> static std::size_t idx(E e) { return static_cast<std::size_t>(e); }
    std::size_t c_[2][2][3] = {};
};

struct DatasetSpec {
    CellCounts counts;
    std::uint64_t seed = 0;
    /// Transfer scenario: no benign target-domain training data.
    bool transfer = true;
    ImageSpec source_image;
    ImageSpec target_image;
    ChainPolicy source_chain;
    ChainPolicy target_chain;
    CorpusSpec source_corpus;
    CorpusSpec target_corpus;

    const ImageSpec &image(Domain d) const { return d == Domain::Source ? source_image : target_image; }
    const ChainPolicy &chain(Domain d) const { return d == Domain::Source ? source_chain : target_chain; }
    const CorpusSpec &corpus(Domain d) const { return d == Domain::Source ? source_corpus : target_corpus; }

    /// Throws InfeasibleSpec on scenario violations.
    void validate() const;
    bool operator==(const DatasetSpec &) const = default;
};

/// Table-2 proportions divided by `divisor` (rounded to nearest).
CellCounts default_counts(double divisor);

struct Partitions {
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::vector<Sample> test;

    std::vector<Sample> &of(Split s);
    const std::vector<Sample> &of(Split s) const;
    bool operator==(const Partitions &) const = default;
};

/// Deterministic per spec.seed. Throws InsufficientSamples naming the first
/// deficient cell, InfeasibleSpec on scenario violations.
Partitions split_dataset(std::span<const Sample> samples, const DatasetSpec &spec);

struct Dataset {
    SyntheticImage source;
    SyntheticImage target;
    Partitions partitions;
};

/// Two programs attacked with the same chain tool, which favours pop gadgets.
/// The target program is itself rich in pop instructions, so its benign
/// gadget-like sequences carry the cue a model trained on the source alone
/// learns to flag, and its chains are even more pop-heavy than the source's.
DatasetSpec shifted_domains(const CellCounts &counts, std::uint64_t seed);

/// Full generation flow: images, malicious chains, benign corpus scan, split.
Dataset build_dataset(const DatasetSpec &spec);

} // namespace ropdda::datagen
