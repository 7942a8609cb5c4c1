#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "fixtures.hpp"
#include "sensitrim/archive.hpp"
#include "sensitrim/errors.hpp"
#include "temp_dir.hpp"

using namespace sensitrim;
using namespace sensitrim::testing;

TEST(Archive, LayoutHeader) {
    Archive a;
    a.kind = "checkpoint";
    a.config = nlohmann::json::object();
    a.tensors.push_back({"x", Tensor::from({2}, {1.0f, -2.5f})});
    const std::string bytes = encode_archive(a);
    EXPECT_EQ(bytes.substr(0, 4), "STRM");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // version, little-endian
    EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0u);
    // Payload: the last 8 bytes are the two floats, little-endian.
    const std::string tail = bytes.substr(bytes.size() - 8);
    float v[2];
    std::memcpy(v, tail.data(), 8);
    EXPECT_EQ(v[0], 1.0f);
    EXPECT_EQ(v[1], -2.5f);
    auto back = decode_archive(bytes);
    EXPECT_EQ(back.kind, "checkpoint");
    EXPECT_EQ(encode_archive(back), bytes);
}

TEST(Archive, CorruptInputs) {
    Archive a;
    a.kind = "mask";
    a.tensors.push_back({"x", Tensor::from({3}, {1, 2, 3})});
    std::string bytes = encode_archive(a);
    EXPECT_THROW(decode_archive("XXXX"), FormatError);
    std::string bad_magic = bytes;
    bad_magic[0] = 'Q';
    EXPECT_THROW(decode_archive(bad_magic), FormatError);
    std::string bad_version = bytes;
    bad_version[4] = 9;
    EXPECT_THROW(decode_archive(bad_version), FormatError);
    EXPECT_THROW(decode_archive(bytes.substr(0, bytes.size() - 1)), FormatError);
    EXPECT_THROW(decode_archive(bytes.substr(0, 12)), FormatError);
}

TEST(Checkpoint, ByteIdenticalRoundTrip) {
    TempDir dir("ckpt");
    std::mt19937_64 rng(1);
    for (int i = 0; i < 5; ++i) {
        auto c = random_config(rng);
        auto m = random_model(c, i);
        save_checkpoint(dir / "a.bin", m, {{"note", i}});
        auto loaded = load_checkpoint(dir / "a.bin");
        EXPECT_EQ(loaded.model.config, c);
        EXPECT_EQ(loaded.meta["note"], i);
        save_checkpoint(dir / "b.bin", loaded.model, loaded.meta);
        EXPECT_EQ(read_file(dir / "a.bin"), read_file(dir / "b.bin"));
    }
}

TEST(Checkpoint, CompactedModelRoundTrips) {
    TempDir dir("ckpt");
    std::mt19937_64 rng(2);
    auto c = random_config(rng);
    auto m = random_model(c, 2);
    auto mask = random_mask(c, 0.3, rng);
    auto small = compact(m, mask);
    save_checkpoint(dir / "s.bin", small);
    auto loaded = load_checkpoint(dir / "s.bin").model;
    EXPECT_EQ(loaded.config, small.config);
    auto b = random_batch(c, 3, rng);
    EXPECT_EQ(max_abs_diff(forward(loaded, b), forward(small, b)), 0.0);
}

TEST(Checkpoint, Errors) {
    TempDir dir("ckpt");
    EXPECT_THROW(load_checkpoint(dir / "missing.bin"), IoError);
    EXPECT_THROW(save_checkpoint(dir / "no" / "such" / "dir.bin", EncoderModel::init(ModelConfig::make(1, 1, 2, 2, {2}, 2, 6, 2), 0)),
                 IoError);
    write_file(dir / "junk.bin", "hello world");
    EXPECT_THROW(load_checkpoint(dir / "junk.bin"), FormatError);

    auto c = ModelConfig::make(1, 1, 2, 2, {2}, 2, 6, 2);
    save_mask(dir / "m.bin", all_ones_mask(c), c);
    EXPECT_THROW(load_checkpoint(dir / "m.bin"), FormatError);

    // Manifest shape disagreeing with the config.
    Archive a = decode_archive(read_file(dir / "m.bin"));
    a.kind = "checkpoint";
    a.tensors.clear();
    for (auto& [name, t] : EncoderModel::init(c, 0).named_parameters()) a.tensors.push_back({name, t});
    a.tensors[0].second = Tensor::zeros({5, 2});
    write_file(dir / "shape.bin", encode_archive(a));
    EXPECT_THROW(load_checkpoint(dir / "shape.bin"), ShapeError);
}

TEST(Scores, RoundTrip) {
    TempDir dir("scores");
    std::mt19937_64 rng(3);
    auto c = random_config(rng);
    auto s = init_masks(c);
    std::uniform_real_distribution<float> u(0, 3);
    for (auto& l : s.attn)
        for (auto& v : l) v = u(rng);
    s.metadata = {"keyword", 1, 0.01, 7, "sensitivity"};
    save_scores(dir / "s.bin", s, c, {{"extra", true}});
    auto back = load_scores(dir / "s.bin");
    EXPECT_EQ(back.scores, s);
    EXPECT_EQ(back.config, c);
    save_scores(dir / "t.bin", back.scores, back.config, back.meta);
    EXPECT_EQ(read_file(dir / "s.bin"), read_file(dir / "t.bin"));
}

TEST(Mask, RoundTrip) {
    TempDir dir("mask");
    std::mt19937_64 rng(4);
    auto c = random_config(rng);
    auto m = random_mask(c, 0.5, rng);
    save_mask(dir / "m.bin", m, c);
    auto back = load_mask(dir / "m.bin");
    EXPECT_EQ(back.mask, m);
    save_mask(dir / "n.bin", back.mask, back.config, back.meta);
    EXPECT_EQ(read_file(dir / "m.bin"), read_file(dir / "n.bin"));
}
