#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace wmlab {

/// Binary narrow-sense BCH code over GF(2^m), optionally shortened.
///
/// Bits are handled as polynomial coefficients, highest degree first: a
/// codeword of the shortened length `n - shorten` is data bits followed by
/// `parity_bits()` parity bits. Primitive polynomials are the usual minimum
/// weight choices (GF(2^8) uses x^8 + x^4 + x^3 + x^2 + 1).
class BchCodec {
public:
    BchCodec(int m, int t, int shorten = 0);

    int m() const { return m_; }
    int t() const { return t_; }
    int n() const { return n_ - shorten_; }              // transmitted codeword length
    int k() const { return n_ - shorten_ - parity_; }    // transmitted data length
    int natural_n() const { return n_; }
    int natural_k() const { return n_ - parity_; }
    int parity_bits() const { return parity_; }
    /// Generator polynomial coefficients, highest degree first.
    const std::vector<std::uint8_t>& generator() const { return gen_; }

    /// Systematic encoding: returns data followed by parity.
    std::vector<std::uint8_t> encode(const std::vector<std::uint8_t>& data) const;

    struct Decoded {
        std::vector<std::uint8_t> codeword;
        int corrected = 0;
    };
    /// Corrects up to t errors; nullopt when the word is not within distance t
    /// of a codeword (as far as the decoder can tell).
    std::optional<Decoded> decode(const std::vector<std::uint8_t>& received) const;

    /// Syndromes S_1..S_2t of a transmitted-length word (all zero for codewords).
    std::vector<int> syndromes(const std::vector<std::uint8_t>& word) const;

private:
    int mul(int a, int b) const;
    int inv(int a) const;

    int m_, t_, n_, shorten_, parity_;
    int prim_;
    std::vector<int> exp_, log_;
    std::vector<std::uint8_t> gen_;
};

} // namespace wmlab
