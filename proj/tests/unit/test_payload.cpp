#include "wmlab/payload.hpp"
#include "wmlab/rng.hpp"

#include <doctest.h>

#include <set>

using namespace wmlab;

namespace {

// Codewords produced by an independent BCH(255,131) implementation over
// GF(2^8) with x^8+x^4+x^3+x^2+1, shortened by 3, followed by 4 zero pad bits.
struct Frozen {
    const char* uuid;
    const char* codeword;
};
constexpr Frozen kFrozen[] = {
    {"01234567-89ab-cdef-0123-456789abcdef", "0123456789abcdef0123456789abcdefbcb314b42de4c11e3d494315e3bba4a0"},
    {"00000000-0000-0000-0000-000000000000", "0000000000000000000000000000000000000000000000000000000000000000"},
    {"ffffffff-ffff-ffff-ffff-ffffffffffff", "ffffffffffffffffffffffffffffffff1791ff329c1dc2e95330422d1c9adca0"},
    {"f81d4fae-7dec-11d0-a765-00a0c91e6bf6", "f81d4fae7dec11d0a76500a0c91e6bf6fc3350a2a9fc2ea6343223502abd9040"},
};

constexpr const char* kGenerator =
    "10001101111001011011011001100111001101001000001101001010110001010101000010111111100100010001100010000010100001110"
    "101100111001";

WatermarkBits flip(const WatermarkBits& w, int count, Rng& rng)
{
    std::vector<std::uint8_t> bits = w.bits();
    std::set<std::size_t> used;
    while (static_cast<int>(used.size()) < count) used.insert(rng.below(bits.size()));
    for (std::size_t i : used) bits[i] ^= 1;
    return WatermarkBits(bits);
}

} // namespace

TEST_CASE("default code is BCH(255,131) t=18 shortened to 128 data bits in 256")
{
    const EccConfig cfg;
    cfg.validate();
    const BchCodec& c = codec_for(cfg);
    CHECK(c.natural_n() == 255);
    CHECK(c.natural_k() == 131);
    CHECK(c.t() == 18);
    CHECK(c.k() == 128);
    CHECK(c.parity_bits() == 124);
    std::string gen;
    for (auto b : c.generator()) gen.push_back(static_cast<char>('0' + b));
    CHECK(gen == kGenerator);
}

TEST_CASE("encode_uuid matches frozen oracle codewords")
{
    for (const Frozen& f : kFrozen) {
        CAPTURE(f.uuid);
        const WatermarkBits w = encode_uuid(Uuid::parse(f.uuid));
        CHECK(w.size() == 256);
        CHECK(w.to_hex() == f.codeword);
    }
}

TEST_CASE("decode corrects up to t flips and reports the count")
{
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const Uuid id = Uuid::random(rng.next());
        const WatermarkBits cw = encode_uuid(id);
        const int flips = static_cast<int>(rng.below(19));
        const UuidDecodeResult r = decode_uuid(flip(cw, flips, rng));
        REQUIRE(std::holds_alternative<UuidDecode>(r));
        CHECK(std::get<UuidDecode>(r).payload == id);
        CHECK(std::get<UuidDecode>(r).corrected == flips);
    }
}

TEST_CASE("heavy corruption never decodes silently to a wrong id with zero corrections")
{
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const Uuid id = Uuid::random(rng.next());
        const UuidDecodeResult r = decode_uuid(flip(encode_uuid(id), 18 + 8, rng));
        if (const auto* d = std::get_if<UuidDecode>(&r)) CHECK((d->payload == id || d->corrected > 0));
    }
}

TEST_CASE("uuid text and bit conversions round trip")
{
    const Uuid id = Uuid::parse("F81D4FAE-7DEC-11D0-A765-00A0C91E6BF6");
    CHECK(id.str() == "f81d4fae-7dec-11d0-a765-00a0c91e6bf6");
    CHECK(Uuid::from_bits(id.to_bits()) == id);
    CHECK(id.to_bits()[0] == 1);
    CHECK_THROWS_AS(Uuid::parse("f81d4fae7dec11d0a76500a0c91e6bf6"), std::invalid_argument);
    CHECK_THROWS_AS(Uuid::parse("g81d4fae-7dec-11d0-a765-00a0c91e6bf6"), std::invalid_argument);
    CHECK(Uuid::random(5) == Uuid::random(5));
    CHECK_FALSE(Uuid::random(5) == Uuid::random(6));
}

TEST_CASE("watermark hex packing is big-endian with a zero-filled tail")
{
    const WatermarkBits w({1, 0, 1, 1, 0, 1});
    CHECK(w.to_hex() == "b4");
    CHECK(WatermarkBits::from_hex("b4", 6) == w);
    CHECK_THROWS_AS(WatermarkBits::from_hex("b4", 9), std::invalid_argument);
    const std::vector<double> p{0.9, 0.1, 0.51, 0.49};
    CHECK(WatermarkBits::from_probabilities(p) == WatermarkBits({1, 0, 1, 0}));
}

TEST_CASE("bit accuracy counts equal positions")
{
    CHECK(bit_accuracy(WatermarkBits({1, 0, 1, 1}), WatermarkBits({1, 1, 1, 0})) == 0.5);
    CHECK_THROWS_AS(bit_accuracy(WatermarkBits({1}), WatermarkBits({1, 0})), std::invalid_argument);
    const WatermarkBits r = random_watermark(100, 3);
    CHECK(r.size() == 100);
    CHECK(r == random_watermark(100, 3));
}

TEST_CASE("inconsistent ECC layouts are rejected")
{
    EccConfig bad;
    bad.pad_bits = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS(decode_uuid(WatermarkBits(std::vector<std::uint8_t>(100))), std::invalid_argument);
}
