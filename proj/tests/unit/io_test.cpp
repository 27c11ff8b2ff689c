#include "ropdda/dataset_io.hpp"
#include "ropdda/error.hpp"
#include "ropdda/nn/model.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace ropdda;

namespace {

std::filesystem::path temp(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / "ropdda_io_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST(DatasetFile, RoundTrip) {
    Rng rng(1);
    io::DatasetFile f;
    f.seed = 99;
    for (int i = 0; i < 1000; ++i) {
        Sample s;
        s.bytes.resize(1 + uniform_index(rng, 300));
        for (auto &b : s.bytes) b = static_cast<std::uint8_t>(rng());
        s.label = static_cast<Label>(i % 2);
        s.domain = static_cast<Domain>((i / 2) % 2);
        s.origin = static_cast<Origin>((i / 3) % 2);
        f.partitions.of(static_cast<datagen::Split>(i % 3)).push_back(s);
    }
    const auto path = temp("round.txt");
    io::write_dataset(path, f);
    EXPECT_EQ(io::read_dataset(path), f);

    const std::string text = slurp(path);
    std::ofstream(temp("cut.txt"), std::ios::binary) << text.substr(0, text.size() / 2);
    EXPECT_THROW(io::read_dataset(temp("cut.txt")), FormatError);
    EXPECT_THROW(io::read_dataset(temp("missing.txt")), IoError);
}

TEST(DatasetFile, Empty) {
    const auto path = temp("empty.txt");
    io::write_dataset(path, {});
    EXPECT_EQ(io::read_dataset(path), io::DatasetFile{});
}

TEST(DatasetFile, BadRecordNamesLine) {
    const auto path = temp("bad.txt");
    std::ofstream(path) << "ropdda-dataset v1 seed=1\n@train 1\nsource,1,synthesized_chain,zz\n@validation 0\n@test 0\n";
    try {
        io::read_dataset(path);
        FAIL();
    } catch (const FormatError &e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(ImageFile, RoundTrip) {
    const auto img = datagen::synthesize_image({.size = 4096, .gadget_density = 0.05}, 17);
    const auto stem = temp("img");
    io::write_image(stem, img);
    const auto back = io::read_image(stem);
    EXPECT_EQ(back.image.bytes(), img.image.bytes());
    EXPECT_EQ(back.gadget_offsets, img.gadget_offsets);
    EXPECT_EQ(back.spec, img.spec);
}

TEST(Checkpoint, RoundTripAndValidation) {
    nn::Architecture arch;
    arch.seq_len = 16;
    arch.channels = 8;
    arch.hidden = 12;
    auto m = nn::init_model<float>(arch, 3);
    m.running[2].mean.setConstant(0.25f);
    const auto path = temp("m.ckpt");
    nn::save_checkpoint(path, m);
    const auto back = nn::load_checkpoint<float>(path);
    EXPECT_EQ(back.arch, arch);
    const auto a = m.params.tensors();
    const auto b = back.params.tensors();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_TRUE(std::equal(a[i].values.begin(), a[i].values.end(), b[i].values.begin())) << a[i].name;
    }
    EXPECT_EQ(back.running[2].mean, m.running[2].mean);

    const std::string text = slurp(path);
    std::ofstream(temp("short.ckpt"), std::ios::binary) << text.substr(0, text.size() - 9);
    EXPECT_THROW(nn::load_checkpoint<float>(temp("short.ckpt")), FormatError);
    EXPECT_THROW(nn::load_checkpoint<float>(temp("none.ckpt")), IoError);
}
