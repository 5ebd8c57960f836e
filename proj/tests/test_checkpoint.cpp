#include <gtest/gtest.h>

#include <bit>
#include <limits>

#include "qdiff/checkpoint.hpp"
#include "qdiff/unet.hpp"
#include "support/fixtures.hpp"

using namespace qdiff;

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint ck;
    ck.manifest = {{"format", 1}, {"epoch", 3}, {"note", "ümlaut ok"}};
    ck.params.add("w", Tensor({2, 3}, {-0.0, 1e-310, std::numeric_limits<double>::max(),
                                       std::numeric_limits<double>::lowest(), 0.1, -7.25},
                              true));
    ck.params.add("b", Tensor({1}, {std::nextafter(1.0, 2.0)}, true));
    ck.ema.add("w", Tensor({2, 3}, {0.5, 0.25, 0.125, 1.0 / 3.0, -2.0, 3.0}));
    ck.ema.add("b", Tensor({1}, {0.0}));
    return ck;
}

void expect_bit_equal(const ParamSet &a, const ParamSet &b) {
    ASSERT_EQ(a.size(), b.size());
    auto ib = b.begin();
    for (const auto &[name, t] : a) {
        EXPECT_EQ(name, ib->first);
        EXPECT_EQ(t.shape(), ib->second.shape()) << name;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            EXPECT_EQ(std::bit_cast<std::uint64_t>(t.data()[i]),
                      std::bit_cast<std::uint64_t>(ib->second.data()[i]))
                << name << "[" << i << "]";
        }
        ++ib;
    }
}

void expect_format_error(const io::Bytes &bytes, const std::string &needle) {
    try {
        decode_checkpoint(bytes, "ck");
        ADD_FAILURE() << "decoded corrupt checkpoint, expected '" << needle << "'";
    } catch (const FormatError &e) {
        EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
}

} // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto ck = sample_checkpoint();
    const auto back = decode_checkpoint(encode_checkpoint(ck), "mem");
    EXPECT_EQ(back.manifest, ck.manifest);
    expect_bit_equal(ck.params, back.params);
    expect_bit_equal(ck.ema, back.ema);
    EXPECT_TRUE(back.params.at("w").requires_grad());
    EXPECT_FALSE(back.ema.at("w").requires_grad());
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
}

TEST(Checkpoint, FullModelRoundTripThroughFile) {
    UNetConfig cfg;
    cfg.bottleneck = BottleneckKind::quantum;
    Rng shared(1), q(2);
    Checkpoint ck;
    ck.params = init_unet_params(cfg, shared, q);
    ck.ema = ck.params.clone(false);
    ck.manifest = {{"format", 1}};
    const auto dir = fixture::temp_dir("ckpt");
    save_checkpoint(ck, dir / "m.qck");
    const auto back = load_checkpoint(dir / "m.qck");
    expect_bit_equal(ck.params, back.params);
    expect_bit_equal(ck.ema, back.ema);
}

TEST(Checkpoint, CorruptionNamesTheField) {
    const io::Bytes good = encode_checkpoint(sample_checkpoint());
    io::Bytes bad = good;
    bad[0] = 'X';
    expect_format_error(bad, "magic");
    expect_format_error(io::Bytes(good.begin(), good.begin() + 4), "magic: truncated");
    expect_format_error(io::Bytes(good.begin(), good.begin() + 12), "manifest length: truncated");
    expect_format_error(io::Bytes(good.begin(), good.begin() + 20), "manifest: truncated");

    const std::size_t mlen = io::load_le64(&good[8]);
    bad = good;
    bad[16] = '!';
    expect_format_error(bad, "manifest: invalid JSON");

    const std::size_t count_at = 16 + mlen;
    expect_format_error(io::Bytes(good.begin(), good.begin() + static_cast<long>(count_at) + 2),
                        "tensor count: truncated");
    expect_format_error(io::Bytes(good.begin(), good.end() - 4), "ema/b: truncated data");
    // First tensor is "params/w": name length (4) + name (8) + rank (4), then extents.
    bad = good;
    bad[count_at + 4 + 4 + 8] = 99;
    expect_format_error(bad, "params/w: implausible rank 99");
    bad = good;
    bad[count_at + 4 + 4 + 1] = 'x'; // "pxrams/w"
    expect_format_error(bad, "pxrams/w: unknown tensor group");
    bad = good;
    bad.push_back(0);
    expect_format_error(bad, "trailer");
    EXPECT_THROW(load_checkpoint("/nonexistent/ck.qck"), IoError);
}
