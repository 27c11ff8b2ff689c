#include "ropdda/nn/model.hpp"

#include "ropdda/error.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ropdda::nn {

using Index = Eigen::Index;

namespace {

template <class T, class P> std::vector<TensorRef<T>> collect(P &p) {
    std::vector<TensorRef<T>> out;
    auto add = [&out](std::string name, auto &m, bool head) {
        out.push_back({std::move(name), std::span<T>(m.data(), static_cast<std::size_t>(m.size())), m.rows(),
                       m.cols(), head});
    };
    for (std::size_t i = 0; i < 3; ++i) {
        add("conv" + std::to_string(i + 1) + ".weight", p.conv[i].weight, false);
        add("conv" + std::to_string(i + 1) + ".bias", p.conv[i].bias, false);
    }
    for (std::size_t i = 0; i < 4; ++i) {
        add("bn" + std::to_string(i + 1) + ".gamma", p.norm[i].gamma, false);
        add("bn" + std::to_string(i + 1) + ".beta", p.norm[i].beta, false);
    }
    add("fc1.weight", p.fc1.weight, false);
    add("fc1.bias", p.fc1.bias, false);
    add("fc2.weight", p.fc2.weight, true);
    add("fc2.bias", p.fc2.bias, true);
    return out;
}

std::size_t conv_in(const Architecture &arch, std::size_t layer) {
    return layer == 0 ? arch.alphabet : arch.channels;
}

void check_input(const Architecture &a, Index rows, Index cols) {
    if (cols != static_cast<Index>(a.alphabet) || rows == 0 || rows % static_cast<Index>(a.seq_len) != 0) {
        throw ShapeMismatch("input is " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected (N*" +
                            std::to_string(a.seq_len) + ")x" + std::to_string(a.alphabet) + " with N >= 1");
    }
}

template <class S> MatrixT<S> relu_mask(const MatrixT<S> &pre) {
    return (pre.array() > S(0)).template cast<S>().matrix();
}

template <class S> void update_running(RunningStats<S> &rs, const layers::BatchNormCache<S> &cache) {
    constexpr S mom = static_cast<S>(layers::kBatchNormMomentum);
    rs.mean = mom * rs.mean + (S(1) - mom) * cache.mean;
    rs.var = mom * rs.var + (S(1) - mom) * cache.var;
}

template <class S> MatrixT<S> flatten(const MatrixT<S> &seq, std::size_t batch) {
    return Eigen::Map<const MatrixT<S>>(seq.data(), static_cast<Index>(batch),
                                        seq.size() / static_cast<Index>(batch));
}

} // namespace

template <class S> std::vector<TensorRef<S>> ParametersT<S>::tensors() { return collect<S>(*this); }
template <class S> std::vector<TensorRef<const S>> ParametersT<S>::tensors() const {
    return collect<const S>(*this);
}

template <class S> ParametersT<S> ParametersT<S>::zeros(const Architecture &arch) {
    ParametersT p;
    for (std::size_t i = 0; i < 3; ++i) {
        p.conv[i].weight = MatrixT<S>::Zero(static_cast<Index>(arch.kernels[i] * conv_in(arch, i)),
                                            static_cast<Index>(arch.channels));
        p.conv[i].bias = RowVectorT<S>::Zero(static_cast<Index>(arch.channels));
    }
    for (std::size_t i = 0; i < 4; ++i) {
        const auto width = static_cast<Index>(i < 3 ? arch.channels : arch.hidden);
        p.norm[i].gamma = RowVectorT<S>::Zero(width);
        p.norm[i].beta = RowVectorT<S>::Zero(width);
    }
    p.fc1.weight = MatrixT<S>::Zero(static_cast<Index>(arch.flat_dim()), static_cast<Index>(arch.hidden));
    p.fc1.bias = RowVectorT<S>::Zero(static_cast<Index>(arch.hidden));
    p.fc2.weight = MatrixT<S>::Zero(static_cast<Index>(arch.hidden), 1);
    p.fc2.bias = RowVectorT<S>::Zero(1);
    return p;
}

template <class S> std::size_t ParametersT<S>::count() const {
    std::size_t n = 0;
    for (const auto &t : tensors()) n += t.values.size();
    return n;
}

template <class S> ModelStateT<S> init_model(const Architecture &arch, std::uint64_t seed) {
    for (auto k : arch.kernels) {
        if (k % 2 == 0) throw ShapeMismatch("kernel sizes must be odd");
    }
    if (!(arch.dropout_rate >= 0 && arch.dropout_rate < 1)) throw ShapeMismatch("dropout rate must be in [0, 1)");
    ModelStateT<S> s;
    s.arch = arch;
    s.params = ParametersT<S>::zeros(arch);
    Rng rng(seed);
    auto kaiming = [&rng](MatrixT<S> &w, std::size_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(u(rng));
    };
    for (std::size_t i = 0; i < 3; ++i) kaiming(s.params.conv[i].weight, arch.kernels[i] * conv_in(arch, i));
    kaiming(s.params.fc1.weight, arch.flat_dim());
    kaiming(s.params.fc2.weight, arch.hidden);
    for (std::size_t i = 0; i < 4; ++i) {
        s.params.norm[i].gamma.setOnes();
        s.running[i].mean = RowVectorT<S>::Zero(s.params.norm[i].gamma.size());
        s.running[i].var = RowVectorT<S>::Ones(s.params.norm[i].gamma.size());
    }
    return s;
}

template <class S>
FeatureResultT<S> forward_features(ModelStateT<S> &state, const Matrix &input, Rng &rng,
                                   const DropoutMasksT<S> *fixed_masks, NormStats stats) {
    check_input(state.arch, input.rows(), input.cols());
    return forward_features(state, layers::sparsify(input), rng, fixed_masks, stats);
}

template <class S>
FeatureResultT<S> forward_features(ModelStateT<S> &state, const EncodedBatch &batch, Rng &rng,
                                   const DropoutMasksT<S> *fixed_masks, NormStats stats) {
    return forward_features(state, batch.data, rng, fixed_masks, stats);
}

template <class S>
FeatureResultT<S> forward_features(ModelStateT<S> &state, const layers::SparseInput &input, Rng &rng,
                                   const DropoutMasksT<S> *fixed_masks, NormStats stats) {
    if (state.mode == Mode::Eval) return {features_eval(state, input), std::nullopt};
    check_input(state.arch, input.rows, input.cols);
    const auto &arch = state.arch;
    const auto &p = state.params;
    ForwardTraceT<S> tr;
    tr.state_version = state.version;
    tr.batch = static_cast<std::size_t>(input.rows) / arch.seq_len;
    tr.input = input;
    auto normalize = [&](const MatrixT<S> &x, std::size_t i, layers::BatchNormCache<S> &cache) {
        if (stats == NormStats::Running) {
            return layers::batchnorm_forward_fixed(x, p.norm[i].gamma, p.norm[i].beta, state.running[i].mean,
                                                   state.running[i].var, cache);
        }
        MatrixT<S> y = layers::batchnorm_forward_train(x, p.norm[i].gamma, p.norm[i].beta, cache);
        update_running(state.running[i], cache);
        return y;
    };

    for (std::size_t l = 0; l < 3; ++l) {
        LayerTrace<S> &lt = tr.conv[l];
        lt.pre_norm = l == 0 ? layers::conv1d_forward<S>(tr.input, arch.seq_len, p.conv[0].weight, p.conv[0].bias,
                                                         arch.kernels[0])
                             : layers::conv1d_forward<S>(tr.conv[l - 1].output, arch.seq_len, p.conv[l].weight,
                                                         p.conv[l].bias, arch.kernels[l]);
        lt.pre_activation = normalize(lt.pre_norm, l, lt.norm);
        if (fixed_masks) {
            const MatrixT<S> &m = (*fixed_masks)[l];
            if (m.rows() != lt.pre_activation.rows() || m.cols() != lt.pre_activation.cols()) {
                throw ShapeMismatch("fixed dropout mask shape");
            }
            tr.masks[l] = m;
        } else {
            tr.masks[l] = layers::dropout_mask<S>(lt.pre_activation.rows(), lt.pre_activation.cols(),
                                                  arch.dropout_rate, rng);
        }
        lt.output = lt.pre_activation.cwiseMax(S(0)).cwiseProduct(tr.masks[l]);
    }

    tr.fc_pre_norm = layers::dense_forward(flatten(tr.conv[2].output, tr.batch), p.fc1.weight, p.fc1.bias);
    tr.fc_pre_activation = normalize(tr.fc_pre_norm, 3, tr.fc_norm);
    tr.features = tr.fc_pre_activation.cwiseMax(S(0));

    MatrixT<S> features = tr.features;
    return {std::move(features), std::move(tr)};
}

template <class S> MatrixT<S> features_eval(const ModelStateT<S> &state, const Matrix &input) {
    check_input(state.arch, input.rows(), input.cols());
    return features_eval(state, layers::sparsify(input));
}

template <class S> MatrixT<S> features_eval(const ModelStateT<S> &state, const layers::SparseInput &input) {
    check_input(state.arch, input.rows, input.cols);
    const auto &arch = state.arch;
    const auto &p = state.params;
    const std::size_t batch = static_cast<std::size_t>(input.rows) / arch.seq_len;
    MatrixT<S> x;
    for (std::size_t l = 0; l < 3; ++l) {
        MatrixT<S> z = l == 0 ? layers::conv1d_forward<S>(input, arch.seq_len, p.conv[0].weight, p.conv[0].bias,
                                                          arch.kernels[0])
                              : layers::conv1d_forward<S>(x, arch.seq_len, p.conv[l].weight, p.conv[l].bias,
                                                          arch.kernels[l]);
        x = layers::batchnorm_forward_eval(z, p.norm[l].gamma, p.norm[l].beta, state.running[l].mean,
                                           state.running[l].var);
        x = x.cwiseMax(S(0));
    }
    MatrixT<S> h = layers::dense_forward(flatten(x, batch), p.fc1.weight, p.fc1.bias);
    h = layers::batchnorm_forward_eval(h, p.norm[3].gamma, p.norm[3].beta, state.running[3].mean,
                                       state.running[3].var);
    return h.cwiseMax(S(0));
}

layers::SparseInput one_hot(std::span<const Sample> samples, std::span<const std::size_t> indices,
                            std::size_t seq_len, std::size_t alphabet) {
    layers::SparseInput s;
    s.rows = static_cast<Index>(indices.size() * seq_len);
    s.cols = static_cast<Index>(alphabet);
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const auto &bytes = samples[indices[n]].bytes;
        const std::size_t len = std::min(bytes.size(), seq_len);
        for (std::size_t t = 0; t < len; ++t) {
            s.row.push_back(static_cast<Index>(n * seq_len + t));
            s.col.push_back(static_cast<Index>(bytes[t]));
            s.value.push_back(1.0);
        }
    }
    return s;
}

template <class S> VectorT<S> head_logits(const ModelStateT<S> &state, const MatrixT<S> &features) {
    if (features.cols() != static_cast<Index>(state.arch.hidden)) {
        throw ShapeMismatch("features have " + std::to_string(features.cols()) + " columns, expected " +
                            std::to_string(state.arch.hidden));
    }
    VectorT<S> z = features * state.params.fc2.weight.col(0);
    z.array() += state.params.fc2.bias(0);
    return z;
}

template <class S> VectorT<S> forward_head(const ModelStateT<S> &state, const MatrixT<S> &features) {
    VectorT<S> z = head_logits(state, features);
    for (Index i = 0; i < z.size(); ++i) z(i) = layers::sigmoid(z(i));
    return z;
}

template <class S> BceResult<S> bce_loss(const VectorT<S> &prob, std::span<const Label> labels) {
    if (static_cast<std::size_t>(prob.size()) != labels.size() || labels.empty()) {
        throw ShapeMismatch("bce_loss: " + std::to_string(prob.size()) + " probabilities vs " +
                            std::to_string(labels.size()) + " labels");
    }
    const double n = static_cast<double>(labels.size());
    BceResult<S> r;
    r.d_prob.resize(prob.size());
    for (Index i = 0; i < prob.size(); ++i) {
        const double p = std::clamp(static_cast<double>(prob(i)), kProbClip, 1.0 - kProbClip);
        const double y = labels[static_cast<std::size_t>(i)] == Label::Malicious ? 1.0 : 0.0;
        r.loss += -(y * std::log(p) + (1.0 - y) * std::log1p(-p));
        r.d_prob(i) = static_cast<S>((p - y) / (p * (1.0 - p)) / n);
    }
    r.loss /= n;
    return r;
}

template <class S>
ParametersT<S> backward(const ModelStateT<S> &state, const ForwardTraceT<S> &trace, const UpstreamT<S> &upstream) {
    if (trace.state_version != state.version) {
        throw StaleTrace("trace from parameter version " + std::to_string(trace.state_version) +
                         ", state is at " + std::to_string(state.version));
    }
    const auto &arch = state.arch;
    const auto &p = state.params;
    const Index n = static_cast<Index>(trace.batch);
    const Index hidden = static_cast<Index>(arch.hidden);
    ParametersT<S> g = ParametersT<S>::zeros(arch);

    MatrixT<S> d_features = MatrixT<S>::Zero(n, hidden);
    if (upstream.d_features) {
        if (upstream.d_features->rows() != n || upstream.d_features->cols() != hidden) {
            throw ShapeMismatch("d_features shape");
        }
        d_features = *upstream.d_features;
    }
    if (upstream.d_prob) {
        if (upstream.d_prob->size() != n) throw ShapeMismatch("d_prob length");
        const VectorT<S> prob = forward_head(state, trace.features);
        const VectorT<S> d_logit =
            upstream.d_prob->cwiseProduct(prob.cwiseProduct((S(1) - prob.array()).matrix()));
        g.fc2.weight.col(0) = trace.features.transpose() * d_logit;
        g.fc2.bias(0) = d_logit.sum();
        d_features.noalias() += d_logit * p.fc2.weight.col(0).transpose();
    }

    MatrixT<S> d = d_features.cwiseProduct(relu_mask(trace.fc_pre_activation));
    d = layers::batchnorm_backward(d, p.norm[3].gamma, trace.fc_norm, g.norm[3].gamma, g.norm[3].beta);
    MatrixT<S> d_flat;
    layers::dense_backward(flatten(trace.conv[2].output, trace.batch), p.fc1.weight, d, g.fc1.weight, g.fc1.bias,
                           &d_flat);
    MatrixT<S> d_out = Eigen::Map<const MatrixT<S>>(d_flat.data(), n * static_cast<Index>(arch.seq_len),
                                                    static_cast<Index>(arch.channels));

    for (std::size_t l = 3; l-- > 0;) {
        const LayerTrace<S> &lt = trace.conv[l];
        MatrixT<S> dz = d_out.cwiseProduct(trace.masks[l]).cwiseProduct(relu_mask(lt.pre_activation));
        dz = layers::batchnorm_backward(dz, p.norm[l].gamma, lt.norm, g.norm[l].gamma, g.norm[l].beta);
        if (l > 0) {
            layers::conv1d_backward(trace.conv[l - 1].output, arch.seq_len, p.conv[l].weight, arch.kernels[l], dz,
                                    g.conv[l].weight, g.conv[l].bias, &d_out);
        } else {
            layers::conv1d_backward(trace.input, arch.seq_len, arch.kernels[0], dz, g.conv[0].weight,
                                    g.conv[0].bias);
        }
    }
    return g;
}

template <class S> AdamStateT<S> AdamStateT<S>::for_model(const ModelStateT<S> &state, double lr) {
    AdamStateT a;
    a.m = ParametersT<S>::zeros(state.arch);
    a.v = ParametersT<S>::zeros(state.arch);
    a.lr = lr;
    return a;
}

template <class S>
void adam_step(ModelStateT<S> &state, AdamStateT<S> &adam, const ParametersT<S> &grads, ParamGroup group) {
    auto params = state.params.tensors();
    auto m = adam.m.tensors();
    auto v = adam.v.tensors();
    const auto g = grads.tensors();
    if (g.size() != params.size()) throw ShapeMismatch("gradient tensor count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (g[i].values.size() != params[i].values.size() || m[i].values.size() != params[i].values.size()) {
            throw ShapeMismatch("gradient shape mismatch for " + params[i].name);
        }
    }
    ++adam.step;
    const double t = static_cast<double>(adam.step);
    const auto step = static_cast<S>(adam.lr / (1.0 - std::pow(adam.beta1, t)));
    const auto inv_c2 = static_cast<S>(1.0 / (1.0 - std::pow(adam.beta2, t)));
    const auto b1 = static_cast<S>(adam.beta1);
    const auto b2 = static_cast<S>(adam.beta2);
    const auto eps = static_cast<S>(adam.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (group == ParamGroup::FeaturesOnly && params[i].head) continue;
        // one fused pass; the update is memory bound on the fc1 weight
        S *pw = params[i].values.data();
        S *mw = m[i].values.data();
        S *vw = v[i].values.data();
        const S *gw = g[i].values.data();
        const std::size_t len = params[i].values.size();
        for (std::size_t j = 0; j < len; ++j) {
            const S mj = b1 * mw[j] + (S(1) - b1) * gw[j];
            const S vj = b2 * vw[j] + (S(1) - b2) * (gw[j] * gw[j]);
            mw[j] = mj;
            vw[j] = vj;
            pw[j] -= step * mj / (std::sqrt(vj * inv_c2) + eps);
        }
    }
    ++state.version;
}

template <class S> std::vector<Label> predict_probs(const VectorT<S> &prob) {
    std::vector<Label> out(static_cast<std::size_t>(prob.size()));
    for (Index i = 0; i < prob.size(); ++i) {
        out[static_cast<std::size_t>(i)] = prob(i) >= S(0.5) ? Label::Malicious : Label::Benign;
    }
    return out;
}

template <class S> std::vector<Label> predict(const ModelStateT<S> &state, const Matrix &input) {
    return predict_probs<S>(forward_head(state, features_eval(state, input)));
}

template <class S>
VectorT<S> predict_proba(const ModelStateT<S> &state, std::span<const Sample> samples, std::size_t chunk) {
    VectorT<S> out(static_cast<Index>(samples.size()));
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        const std::size_t len = std::min(chunk, samples.size() - start);
        idx.resize(len);
        for (std::size_t i = 0; i < len; ++i) idx[i] = start + i;
        const auto input = one_hot(samples, idx, state.arch.seq_len, state.arch.alphabet);
        out.segment(static_cast<Index>(start), static_cast<Index>(len)) =
            forward_head(state, features_eval(state, input));
    }
    return out;
}

namespace {

constexpr std::string_view kCheckpointMagic = "ropdda-checkpoint";
constexpr int kCheckpointVersion = 1;

void put_f64(std::ostream &out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(buf, 8);
}

double get_f64(std::istream &in) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char *>(buf), 8)) throw FormatError("checkpoint payload truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

std::string arch_line(const Architecture &a) {
    std::ostringstream s;
    s.precision(17);
    s << "arch " << a.seq_len << ' ' << a.alphabet << ' ' << a.kernels[0] << ' ' << a.kernels[1] << ' '
      << a.kernels[2] << ' ' << a.channels << ' ' << a.hidden << ' ' << a.dropout_rate;
    return s.str();
}

} // namespace

template <class S> void save_checkpoint(const std::filesystem::path &path, const ModelStateT<S> &state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
    out << "mode " << (state.mode == Mode::Train ? "train" : "eval") << '\n';
    out << arch_line(state.arch) << '\n';
    const auto tensors = state.params.tensors();
    for (const auto &t : tensors) out << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
    for (std::size_t i = 0; i < state.running.size(); ++i) {
        out << "running bn" << i + 1 << ' ' << state.running[i].mean.size() << '\n';
    }
    out << "end\n";
    for (const auto &t : tensors) {
        for (S v : t.values) put_f64(out, static_cast<double>(v));
    }
    for (const auto &rs : state.running) {
        for (Index i = 0; i < rs.mean.size(); ++i) put_f64(out, static_cast<double>(rs.mean(i)));
        for (Index i = 0; i < rs.var.size(); ++i) put_f64(out, static_cast<double>(rs.var(i)));
    }
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

template <class S> ModelStateT<S> load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::string line;
    auto next = [&](std::string_view what) {
        if (!std::getline(in, line)) throw FormatError("checkpoint header truncated before " + std::string(what));
    };
    next("magic");
    if (line != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion)) {
        throw FormatError("not a version-" + std::to_string(kCheckpointVersion) + " checkpoint: '" + line + "'");
    }
    next("mode");
    Mode mode;
    if (line == "mode train") mode = Mode::Train;
    else if (line == "mode eval") mode = Mode::Eval;
    else throw FormatError("bad mode line '" + line + "'");

    next("arch");
    Architecture arch;
    {
        std::istringstream s(line);
        std::string tag;
        s >> tag >> arch.seq_len >> arch.alphabet >> arch.kernels[0] >> arch.kernels[1] >> arch.kernels[2] >>
            arch.channels >> arch.hidden >> arch.dropout_rate;
        if (tag != "arch" || !s) throw FormatError("bad arch line '" + line + "'");
    }
    ModelStateT<S> state;
    try {
        state = init_model<S>(arch, 0);
    } catch (const ShapeMismatch &e) {
        throw FormatError(std::string("bad architecture: ") + e.what());
    }
    state.mode = mode;
    auto tensors = state.params.tensors();
    for (const auto &t : tensors) {
        next(t.name);
        std::ostringstream expect;
        expect << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols;
        if (line != expect.str()) {
            throw FormatError("shape table mismatch: got '" + line + "', expected '" + expect.str() + "'");
        }
    }
    for (std::size_t i = 0; i < state.running.size(); ++i) {
        next("running stats");
        const std::string expect =
            "running bn" + std::to_string(i + 1) + " " + std::to_string(state.running[i].mean.size());
        if (line != expect) throw FormatError("running stats mismatch: got '" + line + "'");
    }
    next("end");
    if (line != "end") throw FormatError("expected 'end', got '" + line + "'");
    for (auto &t : tensors) {
        for (S &v : t.values) v = static_cast<S>(get_f64(in));
    }
    for (auto &rs : state.running) {
        for (Index i = 0; i < rs.mean.size(); ++i) rs.mean(i) = static_cast<S>(get_f64(in));
        for (Index i = 0; i < rs.var.size(); ++i) {
            rs.var(i) = static_cast<S>(get_f64(in));
            if (!(rs.var(i) > 0)) throw FormatError("running variance must be positive");
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint payload");
    return state;
}

#define ROPDDA_INSTANTIATE_MODEL(S)                                                                                \
    template struct ParametersT<S>;                                                                                \
    template struct AdamStateT<S>;                                                                                 \
    template ModelStateT<S> init_model<S>(const Architecture &, std::uint64_t);                                    \
    template FeatureResultT<S> forward_features<S>(ModelStateT<S> &, const Matrix &, Rng &,                        \
                                                   const DropoutMasksT<S> *, NormStats);                                      \
    template FeatureResultT<S> forward_features<S>(ModelStateT<S> &, const EncodedBatch &, Rng &,                  \
                                                   const DropoutMasksT<S> *, NormStats);                                      \
    template FeatureResultT<S> forward_features<S>(ModelStateT<S> &, const layers::SparseInput &, Rng &,           \
                                                   const DropoutMasksT<S> *, NormStats);                                      \
    template MatrixT<S> features_eval<S>(const ModelStateT<S> &, const Matrix &);                                  \
    template MatrixT<S> features_eval<S>(const ModelStateT<S> &, const layers::SparseInput &);                     \
    template VectorT<S> head_logits<S>(const ModelStateT<S> &, const MatrixT<S> &);                                \
    template VectorT<S> forward_head<S>(const ModelStateT<S> &, const MatrixT<S> &);                               \
    template BceResult<S> bce_loss<S>(const VectorT<S> &, std::span<const Label>);                                 \
    template ParametersT<S> backward<S>(const ModelStateT<S> &, const ForwardTraceT<S> &, const UpstreamT<S> &);   \
    template void adam_step<S>(ModelStateT<S> &, AdamStateT<S> &, const ParametersT<S> &, ParamGroup);             \
    template std::vector<Label> predict_probs<S>(const VectorT<S> &);                                              \
    template std::vector<Label> predict<S>(const ModelStateT<S> &, const Matrix &);                                \
    template VectorT<S> predict_proba<S>(const ModelStateT<S> &, std::span<const Sample>, std::size_t);            \
    template void save_checkpoint<S>(const std::filesystem::path &, const ModelStateT<S> &);                       \
    template ModelStateT<S> load_checkpoint<S>(const std::filesystem::path &);

ROPDDA_INSTANTIATE_MODEL(float)
ROPDDA_INSTANTIATE_MODEL(double)

#undef ROPDDA_INSTANTIATE_MODEL

} // namespace ropdda::nn
