#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace ropdda {

enum class Label : std::uint8_t { Benign = 0, Malicious = 1 };
enum class Domain : std::uint8_t { Source = 0, Target = 1 };
enum class Origin : std::uint8_t { SynthesizedChain = 0, ScannedPayload = 1 };

std::string_view to_string(Domain d);
std::string_view to_string(Origin o);

inline constexpr std::size_t kMaxSampleBytes = 512;
inline constexpr std::size_t kSeqLen = 128;     // t
inline constexpr std::size_t kAlphabet = 256;   // s

/// A labelled byte sequence: a gadget chain (malicious) or a gadget-like
/// sequence recovered from benign data.
struct Sample {
    std::vector<std::uint8_t> bytes;
    Label label = Label::Benign;
    Domain domain = Domain::Source;
    Origin origin = Origin::SynthesizedChain;

    bool operator==(const Sample &) const = default;
};

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

/// One-hot batch of shape (N, kSeqLen, kAlphabet), stored as an
/// (N * kSeqLen) x kAlphabet row-major matrix: row n * kSeqLen + t is the
/// one-hot code of byte t of sample n, or all zeros past the sample's end.
struct EncodedBatch {
    Matrix data;
    std::vector<Label> labels;
    std::vector<Domain> domains;

    std::size_t size() const { return labels.size(); }
};

/// Right-pads with zero rows and truncates to the first kSeqLen bytes.
EncodedBatch encode(std::span<const Sample> samples);

/// Encodes the samples selected by `indices`, in that order.
EncodedBatch encode(std::span<const Sample> samples, std::span<const std::size_t> indices);

/// Argmax decoding of one row of a batch; stops at the first all-zero row.
std::vector<std::uint8_t> decode_row(const EncodedBatch &batch, std::size_t n);

} // namespace ropdda
