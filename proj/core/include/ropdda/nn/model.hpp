#pragma once

// 1-D convolutional gadget-chain classifier:
//
//   conv(7) -> BN -> ReLU -> dropout
//   conv(5) -> BN -> ReLU -> dropout
//   conv(3) -> BN -> ReLU -> dropout
//   flatten -> FC(256) -> BN -> ReLU          feature extractor output
//   FC(1) -> sigmoid                           head
//
// The feature extractor parameters are updated by both training phases; the
// head only by the cross-entropy phase.
//
// Everything is templated on the scalar type. Training uses float
// (ModelState); the double instantiation (ModelState64) serves gradient
// checks and reference comparisons.

#include "ropdda/nn/layers.hpp"
#include "ropdda/rng.hpp"
#include "ropdda/sample.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ropdda::nn {

struct Architecture {
    std::size_t seq_len = kSeqLen;
    std::size_t alphabet = kAlphabet;
    std::array<std::size_t, 3> kernels = {7, 5, 3};
    std::size_t channels = 64;
    std::size_t hidden = 256;
    double dropout_rate = 0.5;

    std::size_t flat_dim() const { return seq_len * channels; }
    bool operator==(const Architecture &) const = default;
};

template <class S> struct ConvParams {
    MatrixT<S> weight; ///< (kernel * c_in) x c_out
    RowVectorT<S> bias;
};

template <class S> struct NormParams {
    RowVectorT<S> gamma;
    RowVectorT<S> beta;
};

template <class S> struct DenseParams {
    MatrixT<S> weight; ///< in x out
    RowVectorT<S> bias;
};

/// Named view of one parameter tensor.
template <class T> struct TensorRef {
    std::string name;
    std::span<T> values;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    bool head = false; ///< part of the classification head
};

/// Every trainable tensor. Also used for gradients and optimizer moments.
template <class S> struct ParametersT {
    std::array<ConvParams<S>, 3> conv;
    std::array<NormParams<S>, 4> norm; ///< conv1..conv3, fc1
    DenseParams<S> fc1;
    DenseParams<S> fc2;

    /// Fixed order: conv{1,2,3}.{weight,bias}, bn{1..4}.{gamma,beta},
    /// fc1.{weight,bias}, fc2.{weight,bias}.
    std::vector<TensorRef<S>> tensors();
    std::vector<TensorRef<const S>> tensors() const;

    static ParametersT zeros(const Architecture &arch);
    std::size_t count() const;
};

template <class S> struct RunningStats {
    RowVectorT<S> mean;
    RowVectorT<S> var;
};

enum class Mode : std::uint8_t { Train, Eval };

template <class S> struct ModelStateT {
    Architecture arch;
    ParametersT<S> params;
    std::array<RunningStats<S>, 4> running;
    Mode mode = Mode::Train;
    /// Bumped whenever parameters change; traces remember the version they
    /// were produced with.
    std::uint64_t version = 0;

    /// Same model in another precision; version and mode are kept.
    template <class U> ModelStateT<U> cast() const;
};

/// Kaiming-uniform (fan-in) weights, zero biases, gamma = 1, beta = 0,
/// running statistics (0, 1). The draws are made in double, so both
/// precisions start from the same (rounded) values.
template <class S = float> ModelStateT<S> init_model(const Architecture &arch, std::uint64_t seed);

template <class S> using DropoutMasksT = std::array<MatrixT<S>, 3>;

template <class S> struct LayerTrace {
    MatrixT<S> pre_norm;       ///< convolution output
    layers::BatchNormCache<S> norm;
    MatrixT<S> pre_activation; ///< batch-norm output
    MatrixT<S> output;         ///< after ReLU and dropout
};

template <class S> struct ForwardTraceT {
    std::uint64_t state_version = 0;
    std::size_t batch = 0;
    layers::SparseInput input;
    std::array<LayerTrace<S>, 3> conv;
    DropoutMasksT<S> masks;
    MatrixT<S> fc_pre_norm;
    layers::BatchNormCache<S> fc_norm;
    MatrixT<S> fc_pre_activation;
    MatrixT<S> features; ///< N x hidden, extractor output
};

template <class S> struct FeatureResultT {
    MatrixT<S> features;
    std::optional<ForwardTraceT<S>> trace; ///< set for train-mode passes only
};

/// Which statistics a train-mode pass normalizes with. Batch: the batch's
/// own, and the running statistics are updated. Running: the running
/// statistics, held constant and left unchanged.
enum class NormStats : std::uint8_t { Batch, Running };

/// Feature extractor pass over an (N * seq_len) x alphabet input. In train
/// mode batch normalization follows `stats` (running statistics are updated
/// with momentum 0.9 under NormStats::Batch), and dropout masks are drawn from
/// `rng` unless `fixed_masks` is given. In eval mode dropout is the identity
/// and running statistics are used. Throws ShapeMismatch.
template <class S>
FeatureResultT<S> forward_features(ModelStateT<S> &state, const Matrix &input, Rng &rng,
                                   const DropoutMasksT<S> *fixed_masks = nullptr, NormStats stats = NormStats::Batch);
template <class S>
FeatureResultT<S> forward_features(ModelStateT<S> &state, const EncodedBatch &batch, Rng &rng,
                                   const DropoutMasksT<S> *fixed_masks = nullptr, NormStats stats = NormStats::Batch);
/// Same pass over an input given by its nonzero entries.
template <class S>
FeatureResultT<S> forward_features(ModelStateT<S> &state, const layers::SparseInput &input, Rng &rng,
                                   const DropoutMasksT<S> *fixed_masks = nullptr, NormStats stats = NormStats::Batch);

/// Sparse one-hot encoding of the selected samples; equals
/// layers::sparsify(encode(samples, indices).data).
layers::SparseInput one_hot(std::span<const Sample> samples, std::span<const std::size_t> indices,
                            std::size_t seq_len = kSeqLen, std::size_t alphabet = kAlphabet);

/// Eval-mode features regardless of state.mode; safe for concurrent readers.
template <class S> MatrixT<S> features_eval(const ModelStateT<S> &state, const Matrix &input);
template <class S> MatrixT<S> features_eval(const ModelStateT<S> &state, const layers::SparseInput &input);

template <class S> VectorT<S> head_logits(const ModelStateT<S> &state, const MatrixT<S> &features);

/// sigmoid(FC2(features)), each entry in (0, 1).
template <class S> VectorT<S> forward_head(const ModelStateT<S> &state, const MatrixT<S> &features);

inline constexpr double kProbClip = 1e-7;

template <class S> struct BceResult {
    double loss = 0;
    VectorT<S> d_prob; ///< dLoss/dProb, already divided by the batch size
};

/// Mean binary cross-entropy; probabilities are clipped to
/// [kProbClip, 1 - kProbClip] first. The loss is accumulated in double.
template <class S> BceResult<S> bce_loss(const VectorT<S> &prob, std::span<const Label> labels);

/// Upstream gradient sources. d_prob flows through the head (both parameter
/// groups receive gradient); d_features is injected at the extractor output
/// (head gradients stay zero). Either or both may be set.
template <class S> struct UpstreamT {
    std::optional<VectorT<S>> d_prob;
    std::optional<MatrixT<S>> d_features;
};

/// Throws StaleTrace when the trace was produced by a different parameter
/// version, ShapeMismatch on malformed upstream gradients.
template <class S>
ParametersT<S> backward(const ModelStateT<S> &state, const ForwardTraceT<S> &trace, const UpstreamT<S> &upstream);

enum class ParamGroup : std::uint8_t { All, FeaturesOnly };

template <class S> struct AdamStateT {
    ParametersT<S> m;
    ParametersT<S> v;
    std::uint64_t step = 0;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamStateT for_model(const ModelStateT<S> &state, double lr = 0.001);
};

/// Bias-corrected Adam. With ParamGroup::FeaturesOnly the head tensors and
/// their moments are left untouched. Increments adam.step and state.version.
template <class S>
void adam_step(ModelStateT<S> &state, AdamStateT<S> &adam, const ParametersT<S> &grads,
               ParamGroup group = ParamGroup::All);

/// 1 iff probability >= 0.5 (ties count as malicious). Uses eval-mode features.
template <class S> std::vector<Label> predict(const ModelStateT<S> &state, const Matrix &input);
template <class S> std::vector<Label> predict_probs(const VectorT<S> &prob);

/// Probabilities for many samples, encoded in chunks.
template <class S>
VectorT<S> predict_proba(const ModelStateT<S> &state, std::span<const Sample> samples, std::size_t chunk = 256);

/// Checkpoint: text header (format version, mode, architecture, tensor shape
/// table) followed by every parameter tensor and the running statistics as
/// 64-bit little-endian floats in ParametersT::tensors() order, then
/// bn1..bn4 running mean and variance.
template <class S> void save_checkpoint(const std::filesystem::path &path, const ModelStateT<S> &state);
/// Validates the header against the stored shapes; throws FormatError / IoError.
template <class S = float> ModelStateT<S> load_checkpoint(const std::filesystem::path &path);

using Parameters = ParametersT<float>;
using ModelState = ModelStateT<float>;
using ForwardTrace = ForwardTraceT<float>;
using FeatureResult = FeatureResultT<float>;
using DropoutMasks = DropoutMasksT<float>;
using Upstream = UpstreamT<float>;
using AdamState = AdamStateT<float>;

using ModelState64 = ModelStateT<double>;

template <class S> template <class U> ModelStateT<U> ModelStateT<S>::cast() const {
    ModelStateT<U> out;
    out.arch = arch;
    out.mode = mode;
    out.version = version;
    out.params = ParametersT<U>::zeros(arch);
    auto dst = out.params.tensors();
    const auto src = params.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) {
        for (std::size_t j = 0; j < src[i].values.size(); ++j) dst[i].values[j] = static_cast<U>(src[i].values[j]);
    }
    for (std::size_t i = 0; i < running.size(); ++i) {
        out.running[i].mean = running[i].mean.template cast<U>();
        out.running[i].var = running[i].var.template cast<U>();
    }
    return out;
}

} // namespace ropdda::nn
