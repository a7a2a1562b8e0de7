#pragma once

#include "wmlab/bch.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace wmlab {

/// A watermark: a fixed-length string of 0/1 bits.
class WatermarkBits {
public:
    WatermarkBits() = default;
    explicit WatermarkBits(std::vector<std::uint8_t> bits);

    std::size_t size() const { return bits_.size(); }
    std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }
    bool operator==(const WatermarkBits&) const = default;

    /// Big-endian bit packing into hex; a trailing partial nibble is zero-filled.
    std::string to_hex() const;
    static WatermarkBits from_hex(std::string_view hex, std::size_t length);
    /// Hard decision at 0.5 on decoder probabilities.
    static WatermarkBits from_probabilities(std::span<const double> probs);

private:
    std::vector<std::uint8_t> bits_;
};

class Uuid {
public:
    Uuid() = default;
    explicit Uuid(std::array<std::uint8_t, 16> bytes) : bytes_(bytes) {}

    /// Canonical 8-4-4-4-12 hexadecimal form (case-insensitive).
    static Uuid parse(std::string_view text);
    /// Random 128-bit value from a seeded generator.
    static Uuid random(std::uint64_t seed);
    std::string str() const;

    const std::array<std::uint8_t, 16>& bytes() const { return bytes_; }
    /// 128 bits, most significant bit of byte 0 first.
    std::vector<std::uint8_t> to_bits() const;
    static Uuid from_bits(std::span<const std::uint8_t> bits);

    bool operator==(const Uuid&) const = default;
    auto operator<=>(const Uuid&) const = default;

private:
    std::array<std::uint8_t, 16> bytes_{};
};

struct EccConfig {
    int total_bits = 256;
    int data_bits = 128;
    int field_order = 8; // GF(2^8): natural length 255
    int t = 18;          // (255, 131) code
    int pad_bits = 4;

    int natural_length() const { return (1 << field_order) - 1; }
    /// Throws std::invalid_argument unless data + parity + pad = total.
    void validate() const;
};

/// Shared codec for a configuration; construction builds the generator.
const BchCodec& codec_for(const EccConfig& cfg);

struct UuidDecode {
    Uuid payload;
    int corrected = 0;
};

struct DecodeFailure {
    std::string reason;
};

using UuidDecodeResult = std::variant<UuidDecode, DecodeFailure>;

/// Layout: 128 data bits (UUID, MSB first), parity, then zero padding.
WatermarkBits encode_uuid(const Uuid& payload, const EccConfig& cfg = {});
UuidDecodeResult decode_uuid(const WatermarkBits& bits, const EccConfig& cfg = {});

WatermarkBits random_watermark(std::size_t length, std::uint64_t seed);

/// Fraction of equal positions; throws std::invalid_argument on length mismatch.
double bit_accuracy(const WatermarkBits& a, const WatermarkBits& b);

} // namespace wmlab
