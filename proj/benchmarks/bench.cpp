#include "ropdda/datagen.hpp"
#include "ropdda/mmd.hpp"
#include "ropdda/nn/model.hpp"
#include "ropdda/trainer.hpp"

#include <benchmark/benchmark.h>

using namespace ropdda;

namespace {

const datagen::SyntheticImage &image() {
    static const auto syn = datagen::synthesize_image({}, 3);
    return syn;
}

void BM_DecodeAll(benchmark::State &st) {
    const auto &img = image().image;
    const disasm::ByteView bytes(img.bytes());
    for (auto _ : st) benchmark::DoNotOptimize(disasm::decode_all(bytes.first(64 * 1024)));
    st.SetBytesProcessed(static_cast<std::int64_t>(st.iterations()) * 64 * 1024);
}
BENCHMARK(BM_DecodeAll);

void BM_ScanPayload(benchmark::State &st) {
    const auto &img = image().image;
    const auto corpus = datagen::make_payload_corpus(img, {.payload_len = static_cast<std::size_t>(st.range(0))}, 16, 5);
    std::size_t i = 0;
    for (auto _ : st) benchmark::DoNotOptimize(disasm::scan_payload(corpus[i++ % corpus.size()], img));
    st.SetBytesProcessed(static_cast<std::int64_t>(st.iterations()) * st.range(0));
}
BENCHMARK(BM_ScanPayload)->Arg(1024)->Arg(16 * 1024);

void BM_GenerateMalicious(benchmark::State &st) {
    std::uint64_t seed = 0;
    for (auto _ : st) benchmark::DoNotOptimize(datagen::generate_malicious(image().image, 256, ++seed, Domain::Source, {}));
    st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations()) * 256);
}
BENCHMARK(BM_GenerateMalicious);

std::vector<Sample> batch_samples(std::size_t n) {
    return datagen::generate_malicious(image().image, n, 9, Domain::Source, {});
}

void BM_FeaturesTrain(benchmark::State &st) {
    auto state = nn::init_model<float>({}, 1);
    const auto samples = batch_samples(static_cast<std::size_t>(st.range(0)));
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto input = nn::one_hot(samples, idx);
    Rng rng(1);
    for (auto _ : st) benchmark::DoNotOptimize(nn::forward_features(state, input, rng));
    st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations()) * st.range(0));
}
BENCHMARK(BM_FeaturesTrain)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State &st) {
    auto state = nn::init_model<float>({}, 1);
    auto adam = nn::AdamState::for_model(state);
    const auto samples = batch_samples(32);
    std::vector<std::size_t> idx(32);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto input = nn::one_hot(samples, idx);
    const std::vector<Label> labels(32, Label::Malicious);
    Rng rng(1);
    for (auto _ : st) {
        auto fr = nn::forward_features(state, input, rng);
        const auto prob = nn::forward_head(state, fr.features);
        auto loss = nn::bce_loss<float>(prob, labels);
        nn::Upstream up;
        up.d_prob = std::move(loss.d_prob);
        nn::adam_step(state, adam, nn::backward(state, *fr.trace, up));
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Mmd(benchmark::State &st) {
    Rng rng(4);
    const auto n = static_cast<Eigen::Index>(st.range(0));
    Matrix a(n, 256), b(n, 256);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = uniform01(rng), b.data()[i] = uniform01(rng) + 0.1;
    for (auto _ : st) benchmark::DoNotOptimize(mmd::mmd_gradient(a, b, 4.0));
}
BENCHMARK(BM_Mmd)->Arg(32)->Arg(256);

void BM_MedianHeuristic(benchmark::State &st) {
    Rng rng(5);
    Matrix a(256, 256), b(256, 256);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = uniform01(rng), b.data()[i] = uniform01(rng);
    for (auto _ : st) benchmark::DoNotOptimize(mmd::median_heuristic(a, b, 1));
}
BENCHMARK(BM_MedianHeuristic);

} // namespace

BENCHMARK_MAIN();
