#include "wmlab/payload.hpp"

#include <cctype>
#include <map>
#include <mutex>
#include <random>
#include <stdexcept>
#include <tuple>

namespace wmlab {

namespace {

int hex_value(char c)
{
    if (c >= '0' && c <= '9') return c - '0';
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
}

constexpr char kHex[] = "0123456789abcdef";

} // namespace

WatermarkBits::WatermarkBits(std::vector<std::uint8_t> bits) : bits_(std::move(bits))
{
    for (auto b : bits_)
        if (b > 1) throw std::invalid_argument("WatermarkBits: values must be 0 or 1");
}

std::string WatermarkBits::to_hex() const
{
    std::string out;
    for (std::size_t i = 0; i < bits_.size(); i += 4) {
        int nib = 0;
        for (std::size_t j = 0; j < 4; ++j) nib = (nib << 1) | (i + j < bits_.size() ? bits_[i + j] : 0);
        out.push_back(kHex[nib]);
    }
    return out;
}

WatermarkBits WatermarkBits::from_hex(std::string_view hex, std::size_t length)
{
    if (hex.size() != (length + 3) / 4) throw std::invalid_argument("WatermarkBits::from_hex: length mismatch");
    std::vector<std::uint8_t> bits;
    bits.reserve(length);
    for (char c : hex) {
        const int v = hex_value(c);
        if (v < 0) throw std::invalid_argument("WatermarkBits::from_hex: bad digit");
        for (int j = 3; j >= 0 && bits.size() < length; --j) bits.push_back(static_cast<std::uint8_t>((v >> j) & 1));
    }
    return WatermarkBits(std::move(bits));
}

WatermarkBits WatermarkBits::from_probabilities(std::span<const double> probs)
{
    std::vector<std::uint8_t> bits(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) bits[i] = probs[i] >= 0.5 ? 1 : 0;
    return WatermarkBits(std::move(bits));
}

Uuid Uuid::parse(std::string_view text)
{
    static constexpr int kGroups[] = {8, 4, 4, 4, 12};
    std::array<std::uint8_t, 16> bytes{};
    std::size_t pos = 0;
    int nibble = 0;
    for (int g = 0; g < 5; ++g) {
        if (g > 0) {
            if (pos >= text.size() || text[pos] != '-') throw std::invalid_argument("invalid UUID: " + std::string(text));
            ++pos;
        }
        for (int i = 0; i < kGroups[g]; ++i, ++pos, ++nibble) {
            const int v = pos < text.size() ? hex_value(text[pos]) : -1;
            if (v < 0) throw std::invalid_argument("invalid UUID: " + std::string(text));
            bytes[nibble / 2] = static_cast<std::uint8_t>(bytes[nibble / 2] | (nibble % 2 == 0 ? v << 4 : v));
        }
    }
    if (pos != text.size()) throw std::invalid_argument("invalid UUID: " + std::string(text));
    return Uuid(bytes);
}

Uuid Uuid::random(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::array<std::uint8_t, 16> bytes{};
    const std::uint64_t hi = rng(), lo = rng();
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<std::uint8_t>(hi >> (56 - 8 * i));
        bytes[8 + i] = static_cast<std::uint8_t>(lo >> (56 - 8 * i));
    }
    return Uuid(bytes);
}

std::string Uuid::str() const
{
    std::string out;
    for (int i = 0; i < 16; ++i) {
        if (i == 4 || i == 6 || i == 8 || i == 10) out.push_back('-');
        out.push_back(kHex[bytes_[i] >> 4]);
        out.push_back(kHex[bytes_[i] & 0xF]);
    }
    return out;
}

std::vector<std::uint8_t> Uuid::to_bits() const
{
    std::vector<std::uint8_t> bits(128);
    for (int i = 0; i < 128; ++i) bits[i] = static_cast<std::uint8_t>((bytes_[i / 8] >> (7 - i % 8)) & 1);
    return bits;
}

Uuid Uuid::from_bits(std::span<const std::uint8_t> bits)
{
    if (bits.size() != 128) throw std::invalid_argument("Uuid::from_bits: 128 bits expected");
    std::array<std::uint8_t, 16> bytes{};
    for (int i = 0; i < 128; ++i) bytes[i / 8] = static_cast<std::uint8_t>(bytes[i / 8] | ((bits[i] & 1) << (7 - i % 8)));
    return Uuid(bytes);
}

void EccConfig::validate() const
{
    if (t < 1) throw std::invalid_argument("EccConfig: t must be >= 1");
    if (data_bits != 128) throw std::invalid_argument("EccConfig: UUID payloads carry exactly 128 data bits");
    const BchCodec& c = codec_for(*this);
    if (c.k() != data_bits) throw std::invalid_argument("EccConfig: code data length does not match data_bits");
    if (data_bits + c.parity_bits() + pad_bits != total_bits)
        throw std::invalid_argument("EccConfig: data + parity + pad must equal total_bits");
}

const BchCodec& codec_for(const EccConfig& cfg)
{
    static std::mutex mu;
    static std::map<std::tuple<int, int, int>, std::unique_ptr<BchCodec>> cache;
    std::lock_guard lock(mu);
    const auto key = std::make_tuple(cfg.field_order, cfg.t, cfg.data_bits);
    auto it = cache.find(key);
    if (it == cache.end()) {
        // shorten the natural code so that exactly data_bits remain
        BchCodec probe(cfg.field_order, cfg.t, 0);
        const int shorten = probe.natural_k() - cfg.data_bits;
        if (shorten < 0) throw std::invalid_argument("EccConfig: code too small for the data bits");
        it = cache.emplace(key, std::make_unique<BchCodec>(cfg.field_order, cfg.t, shorten)).first;
    }
    return *it->second;
}

WatermarkBits encode_uuid(const Uuid& payload, const EccConfig& cfg)
{
    cfg.validate();
    auto cw = codec_for(cfg).encode(payload.to_bits());
    cw.resize(cw.size() + cfg.pad_bits, 0);
    return WatermarkBits(std::move(cw));
}

UuidDecodeResult decode_uuid(const WatermarkBits& bits, const EccConfig& cfg)
{
    cfg.validate();
    if (static_cast<int>(bits.size()) != cfg.total_bits)
        throw std::invalid_argument("decode_uuid: expected " + std::to_string(cfg.total_bits) + " bits");
    const BchCodec& codec = codec_for(cfg);
    const auto& b = bits.bits();
    std::vector<std::uint8_t> word(b.begin(), b.begin() + codec.n());
    int pad_errors = 0;
    for (int i = codec.n(); i < cfg.total_bits; ++i) pad_errors += b[i];
    auto dec = codec.decode(word);
    if (!dec) return DecodeFailure{"uncorrectable: more than t bit errors"};
    std::vector<std::uint8_t> data(dec->codeword.begin(), dec->codeword.begin() + cfg.data_bits);
    return UuidDecode{Uuid::from_bits(data), dec->corrected + pad_errors};
}

WatermarkBits random_watermark(std::size_t length, std::uint64_t seed)
{
    if (length < 1) throw std::invalid_argument("random_watermark: length must be >= 1");
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> bits(length);
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng() >> 63);
    return WatermarkBits(std::move(bits));
}

double bit_accuracy(const WatermarkBits& a, const WatermarkBits& b)
{
    if (a.size() != b.size()) throw std::invalid_argument("bit_accuracy: length mismatch");
    if (a.size() == 0) throw std::invalid_argument("bit_accuracy: empty watermark");
    std::size_t eq = 0;
    for (std::size_t i = 0; i < a.size(); ++i) eq += a[i] == b[i];
    return static_cast<double>(eq) / static_cast<double>(a.size());
}

} // namespace wmlab
