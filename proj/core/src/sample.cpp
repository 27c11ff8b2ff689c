#include "ropdda/sample.hpp"

#include <numeric>

namespace ropdda {

std::string_view to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

std::string_view to_string(Origin o) {
    return o == Origin::SynthesizedChain ? "synthesized_chain" : "scanned_payload";
}

EncodedBatch encode(std::span<const Sample> samples, std::span<const std::size_t> indices) {
    EncodedBatch batch;
    batch.data = Matrix::Zero(static_cast<Eigen::Index>(indices.size() * kSeqLen),
                              static_cast<Eigen::Index>(kAlphabet));
    batch.labels.reserve(indices.size());
    batch.domains.reserve(indices.size());
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const Sample &s = samples[indices[n]];
        const std::size_t len = std::min(s.bytes.size(), kSeqLen);
        for (std::size_t t = 0; t < len; ++t) {
            batch.data(static_cast<Eigen::Index>(n * kSeqLen + t), s.bytes[t]) = 1.0;
        }
        batch.labels.push_back(s.label);
        batch.domains.push_back(s.domain);
    }
    return batch;
}

EncodedBatch encode(std::span<const Sample> samples) {
    std::vector<std::size_t> all(samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return encode(samples, all);
}

std::vector<std::uint8_t> decode_row(const EncodedBatch &batch, std::size_t n) {
    std::vector<std::uint8_t> out;
    for (std::size_t t = 0; t < kSeqLen; ++t) {
        auto row = batch.data.row(static_cast<Eigen::Index>(n * kSeqLen + t));
        Eigen::Index arg = 0;
        const double best = row.maxCoeff(&arg);
        if (best == 0.0) break;
        out.push_back(static_cast<std::uint8_t>(arg));
    }
    return out;
}

} // namespace ropdda
