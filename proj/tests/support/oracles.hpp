#pragma once

// Slow, obviously-correct reference implementations used as test oracles.
// None of them share code with the library paths they check.

#include "ropdda/disasm.hpp"
#include "ropdda/evalkit.hpp"
#include "ropdda/nn/layers.hpp"

#include <cmath>
#include <set>
#include <vector>

namespace ropdda::oracle {

using M = nn::MatrixT<double>;
using RV = nn::RowVectorT<double>;

/// Direct "same"-padded convolution loop.
inline M conv1d(const M &in, std::size_t seq_len, const M &w, const RV &b, std::size_t kernel) {
    const auto c_in = in.cols();
    const auto n = in.rows() / static_cast<Eigen::Index>(seq_len);
    const auto pad = static_cast<long>(kernel - 1) / 2;
    M out(in.rows(), w.cols());
    for (Eigen::Index s = 0; s < n; ++s)
        for (long t = 0; t < static_cast<long>(seq_len); ++t)
            for (Eigen::Index o = 0; o < w.cols(); ++o) {
                double acc = b(o);
                for (long k = 0; k < static_cast<long>(kernel); ++k) {
                    const long src = t + k - pad;
                    if (src < 0 || src >= static_cast<long>(seq_len)) continue;
                    for (Eigen::Index i = 0; i < c_in; ++i) {
                        acc += in(s * static_cast<long>(seq_len) + src, i) * w(k * c_in + i, o);
                    }
                }
                out(s * static_cast<long>(seq_len) + t, o) = acc;
            }
    return out;
}

/// Double loop over every pair, one kernel evaluation at a time.
inline double mmd2(const Matrix &a, const Matrix &b, double sigma) {
    auto k = [&](const RowVector &x, const RowVector &y) {
        double d = 0;
        for (Eigen::Index i = 0; i < x.size(); ++i) d += (x(i) - y(i)) * (x(i) - y(i));
        return std::exp(-d / (2 * sigma * sigma));
    };
    double aa = 0, bb = 0, ab = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.rows(); ++j) aa += k(a.row(i), a.row(j));
    for (Eigen::Index i = 0; i < b.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) bb += k(b.row(i), b.row(j));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) ab += k(a.row(i), b.row(j));
    const double m = static_cast<double>(a.rows()), n = static_cast<double>(b.rows());
    return aa / (m * m) + bb / (n * n) - 2 * ab / (m * n);
}

/// Gadget starts found by decoding forward from every offset of the image
/// with nothing but decode_instruction.
inline std::set<std::uint32_t> all_gadget_addresses(const disasm::ProgramImage &image) {
    std::set<std::uint32_t> out;
    const auto &bytes = image.bytes();
    for (std::size_t off = 0; off < bytes.size(); ++off) {
        std::size_t pos = off;
        for (std::size_t n = 0; n < disasm::kMaxGadgetInsns && pos < bytes.size(); ++n) {
            try {
                const auto insn = disasm::decode_instruction(bytes, pos);
                pos += insn.length;
                if (disasm::is_indirect_branch(insn.opcode)) {
                    out.insert(image.base_address() + static_cast<std::uint32_t>(off));
                    break;
                }
            } catch (const std::exception &) {
                break;
            }
        }
    }
    return out;
}

/// Chain scanner over a precomputed hit table: every payload word is
/// classified once, then chains are assembled by walking the table.
inline std::vector<std::vector<std::size_t>> scan(disasm::ByteView payload, const std::set<std::uint32_t> &gadgets) {
    std::vector<std::vector<std::size_t>> chains;
    if (payload.size() < 4) return chains;
    std::vector<bool> hit(payload.size() - 3);
    for (std::size_t p = 0; p < hit.size(); ++p) hit[p] = gadgets.contains(disasm::read_le32(payload, p));
    std::size_t p = 0;
    while (p < hit.size()) {
        if (!hit[p]) {
            ++p;
            continue;
        }
        std::vector<std::size_t> chain{p};
        for (;;) {
            std::size_t next = 0;
            for (std::size_t q = chain.back() + 4; q <= chain.back() + 4 * disasm::kLookahead && q < hit.size(); q += 4) {
                if (hit[q]) {
                    next = q;
                    break;
                }
            }
            if (next == 0) break;
            chain.push_back(next);
        }
        if (chain.size() >= disasm::kMinChainLen) {
            p = chain.back() + 4;
            chains.push_back(std::move(chain));
        } else {
            ++p;
        }
    }
    return chains;
}

/// LCS by enumerating every subsequence of the shorter input.
inline std::size_t lcs_exhaustive(const std::vector<disasm::OpcodeClass> &a, const std::vector<disasm::OpcodeClass> &b) {
    const auto &s = a.size() <= b.size() ? a : b;
    const auto &t = a.size() <= b.size() ? b : a;
    std::size_t best = 0;
    for (std::uint32_t mask = 0; mask < (1u << s.size()); ++mask) {
        std::size_t j = 0, len = 0;
        bool ok = true;
        for (std::size_t i = 0; i < s.size() && ok; ++i) {
            if (!(mask >> i & 1)) continue;
            while (j < t.size() && t[j] != s[i]) ++j;
            if (j == t.size()) ok = false;
            else ++j, ++len;
        }
        if (ok) best = std::max(best, len);
    }
    return best;
}

/// Per-sample loop tally of thresholded probabilities.
inline evalkit::ConfusionCounts tally_loop(const std::vector<double> &prob, const std::vector<Sample> &samples) {
    evalkit::ConfusionCounts c;
    for (std::size_t i = 0; i < prob.size(); ++i) {
        const bool pred = prob[i] >= 0.5;
        const bool mal = samples[i].label == Label::Malicious;
        if (pred && mal) ++c.tp;
        else if (pred) ++c.fp;
        else if (mal) ++c.fn;
        else ++c.tn;
    }
    return c;
}

} // namespace ropdda::oracle
