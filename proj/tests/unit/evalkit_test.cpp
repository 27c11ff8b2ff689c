#include "gradcheck.hpp"
#include "oracles.hpp"

#include "ropdda/datagen.hpp"
#include "ropdda/error.hpp"
#include "ropdda/evalkit.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace ropdda;
using namespace ropdda::evalkit;
using C = disasm::OpcodeClass;

TEST(Metrics, Examples) {
    auto m = compute_metrics({7500, 0, 1200, 0});
    EXPECT_EQ(m.fpr, 0.0);
    EXPECT_EQ(m.dr, 1.0);
    EXPECT_EQ(m.f1, 1.0);
    EXPECT_DOUBLE_EQ(false_positive_rate({0, 15, 1185, 0}), 0.0125);
    m = compute_metrics({3, 1, 4, 2});
    EXPECT_DOUBLE_EQ(m.dr, 0.6);
    EXPECT_DOUBLE_EQ(m.fpr, 0.2);
    EXPECT_NEAR(m.f1, 6.0 / 9.0, 1e-15);
    EXPECT_THROW(false_positive_rate({1, 0, 0, 1}), UndefinedMetric);
    EXPECT_THROW(detection_rate({0, 1, 1, 0}), UndefinedMetric);
    EXPECT_THROW(f1_score({0, 0, 5, 0}), UndefinedMetric);
}

TEST(Metrics, PrecisionRecallFormAgrees) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        ConfusionCounts c{1 + uniform_index(rng, 500), uniform_index(rng, 500), uniform_index(rng, 500),
                          uniform_index(rng, 500)};
        // exact rational comparison: 2PR/(P+R) reduces to 2tp^2 / (tp(tp+fn) + tp(tp+fp))
        const auto tp = c.tp, fp = c.fp, fn = c.fn;
        EXPECT_EQ(2 * tp * tp * (2 * tp + fp + fn), 2 * tp * (tp * (tp + fn) + tp * (tp + fp)));
        EXPECT_DOUBLE_EQ(f1_score(c), static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn));
    }
}

TEST(Tally, MatchesLoop) {
    EXPECT_EQ(tally({}, {}), ConfusionCounts{});
    Rng rng(2);
    std::vector<Sample> s(50);
    std::vector<Label> pred(50);
    std::vector<double> prob(50);
    for (std::size_t i = 0; i < 50; ++i) {
        s[i].label = static_cast<Label>(uniform_index(rng, 2));
        prob[i] = uniform01(rng);
        pred[i] = prob[i] >= 0.5 ? Label::Malicious : Label::Benign;
    }
    const auto c = tally(pred, s);
    EXPECT_EQ(c, oracle::tally_loop(prob, s));
    EXPECT_EQ(c.total(), 50u);
    for (auto &x : s) x.label = Label::Benign;
    const auto b = tally(pred, s);
    EXPECT_EQ(b.tp + b.fn, 0u);
}

TEST(RunTest, EmptyPartition) {
    auto m = nn::init_model<float>({}, 1);
    m.mode = nn::Mode::Eval;
    EXPECT_EQ(run_test(m, {}), ConfusionCounts{});
}

TEST(Lcs, Examples) {
    const std::vector<C> a = {C::PopR, C::Ret, C::MovRRm, C::Ret};
    const std::vector<C> b = {C::MovRRm, C::PopR, C::Ret};
    EXPECT_EQ(lcs_opcodes(a, b), 2u);
    EXPECT_EQ(oracle::lcs_exhaustive(a, b), 2u);
    EXPECT_EQ(lcs_opcodes(a, a), a.size());
    const std::vector<C> c = {C::Nop, C::IncR};
    EXPECT_EQ(lcs_opcodes(a, c), 0u);
}

TEST(Lcs, PropertiesAgainstExhaustive) {
    Rng rng(3);
    auto rand_seq = [&](std::size_t n) {
        std::vector<C> v(n);
        for (auto &x : v) x = static_cast<C>(uniform_index(rng, 4));
        return v;
    };
    for (int i = 0; i < 300; ++i) {
        const auto a = rand_seq(uniform_index(rng, 12)), b = rand_seq(uniform_index(rng, 12));
        const auto l = lcs_opcodes(a, b);
        EXPECT_EQ(l, oracle::lcs_exhaustive(a, b));
        EXPECT_EQ(l, lcs_opcodes(b, a));
        auto a2 = a, b2 = b;
        a2.push_back(C::Leave);
        b2.push_back(C::Leave);
        EXPECT_GE(lcs_opcodes(a2, b2), l);
    }
}

TEST(Lcs, PairwiseAverage) {
    const auto img = datagen::synthesize_image({}, 4);
    const auto a = datagen::generate_malicious(img.image, 10, 1, Domain::Source);
    const auto b = datagen::generate_malicious(img.image, 10, 2, Domain::Target);
    double sum = 0;
    for (const auto &x : a)
        for (const auto &y : b) sum += lcs_opcodes(opcode_sequence(x), opcode_sequence(y));
    const auto avg = avg_pairwise_lcs(a, b);
    EXPECT_EQ(avg.mean, sum / 100);
    EXPECT_EQ(avg.pairs, 100u);
    EXPECT_FALSE(avg.subsampled);
    const auto one = std::span(a).first(1);
    EXPECT_EQ(avg_pairwise_lcs(one, one).mean, static_cast<double>(opcode_sequence(a[0]).size()));
    EXPECT_THROW(avg_pairwise_lcs({}, b), EmptySet);
    Sample junk;
    junk.bytes = {0x0F};
    std::vector<Sample> bad = {a[0], junk};
    try {
        avg_pairwise_lcs(bad, b);
        FAIL();
    } catch (const UndecodableSample &e) {
        EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
    }
}

TEST(Distance, Cases) {
    Matrix p(1, 4), q(1, 4);
    p << 0, 0, 1, 1;
    q << 3, 4, 1, 1;
    EXPECT_DOUBLE_EQ(avg_pairwise_distance(p, q).mean, 5.0);
    EXPECT_EQ(avg_pairwise_distance(p, p).mean, 0.0);
    Rng rng(5);
    const Matrix a = gradcheck::random_matrix(8, 6, rng), b = gradcheck::random_matrix(8, 6, rng);
    double sum = 0;
    for (Eigen::Index i = 0; i < 8; ++i)
        for (Eigen::Index j = 0; j < 8; ++j) sum += (a.row(i) - b.row(j)).norm();
    EXPECT_NEAR(avg_pairwise_distance(a, b).mean, sum / 64, 1e-9);
    for (int t = 0; t < 50; ++t) {
        const Matrix x = gradcheck::random_matrix(1, 5, rng), y = gradcheck::random_matrix(1, 5, rng),
                     z = gradcheck::random_matrix(1, 5, rng);
        const double xy = avg_pairwise_distance(x, y).mean, yz = avg_pairwise_distance(y, z).mean,
                     xz = avg_pairwise_distance(x, z).mean;
        EXPECT_EQ(xy, avg_pairwise_distance(y, x).mean);
        EXPECT_LE(xz, xy + yz + 1e-12);
    }
}

TEST(Distance, EmbeddingSingleton) {
    auto m = nn::init_model<float>({}, 1);
    m.mode = nn::Mode::Eval;
    const auto img = datagen::synthesize_image({}, 4);
    const auto a = datagen::generate_malicious(img.image, 1, 1, Domain::Source);
    EXPECT_EQ(avg_pairwise_embedding_distance(m, a, a).mean, 0.0);
}

TEST(Sweep, SubsetAndShape) {
    const auto d = datagen::build_dataset(datagen::shifted_domains(datagen::default_counts(200), 3));
    const auto &pool = d.partitions.validation;
    const auto sub = validation_subset(pool, 10, 1);
    ASSERT_EQ(sub.size(), 10u);
    EXPECT_EQ(std::count_if(sub.begin(), sub.end(), [](const Sample &s) { return s.label == Label::Benign; }), 5);
    EXPECT_EQ(validation_subset(pool, pool.size(), 1), pool);
    EXPECT_THROW(validation_subset(pool, pool.size() + 2, 1), ConfigError);

    trainer::TrainConfig c;
    c.arch.seq_len = 32;
    c.arch.channels = 8;
    c.arch.hidden = 16;
    c.max_epochs = 1;
    c.mode = trainer::TrainMode::Baseline;
    const auto data = trainer::make_train_data(d.partitions.train, pool);
    const std::vector<std::size_t> budgets = {10, pool.size()};
    const std::vector<std::uint64_t> seeds = {1, 2, 3};
    const auto r = validation_budget_sweep(c, data, d.partitions.test, budgets, seeds);
    EXPECT_EQ(r.runs.size(), 6u);
    EXPECT_EQ(r.means.size(), 2u);
    // the full-pool budget equals a standard run
    auto c1 = c;
    c1.seed = 2;
    const auto standard = trainer::run_training(c1, data);
    EXPECT_EQ(r.runs[4].counts, run_test(standard.best, d.partitions.test));
    EXPECT_THROW(validation_budget_sweep(c, data, d.partitions.test, budgets, std::vector<std::uint64_t>{1, 2}),
                 ConfigError);
}

TEST(Report, RelativeChanges) {
    const auto r = make_transfer_report("s", "t", {100, 20, 100, 0}, {101, 15, 105, 0});
    EXPECT_DOUBLE_EQ(*r.fp_change, -0.25);
    EXPECT_DOUBLE_EQ(*r.detected_change, 0.01);
    EXPECT_EQ(r.a, compute_metrics({100, 20, 100, 0}));
    const auto z = make_transfer_report("s", "t", {1, 0, 5, 0}, {1, 1, 4, 0});
    EXPECT_FALSE(z.fp_change.has_value());
}

TEST(Ema, Smoothing) {
    const std::vector<double> x = {1, 0, 0};
    const auto s = ema(x, 0.6);
    EXPECT_DOUBLE_EQ(s[0], 1);
    EXPECT_DOUBLE_EQ(s[1], 0.6);
    EXPECT_NEAR(s[2], 0.36, 1e-15);
}
