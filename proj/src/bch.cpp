#include "wmlab/bch.hpp"

#include <algorithm>
#include <stdexcept>

namespace wmlab {

namespace {

int primitive_poly(int m)
{
    switch (m) {
    case 3: return 0xB;
    case 4: return 0x13;
    case 5: return 0x25;
    case 6: return 0x43;
    case 7: return 0x89;
    case 8: return 0x11D;
    case 9: return 0x211;
    case 10: return 0x409;
    default: throw std::invalid_argument("BchCodec: unsupported field order");
    }
}

// Polynomials over GF(2), lowest degree first.
using Poly2 = std::vector<std::uint8_t>;

Poly2 mul2(const Poly2& a, const Poly2& b)
{
    Poly2 r(a.size() + b.size() - 1, 0);
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i])
            for (std::size_t j = 0; j < b.size(); ++j) r[i + j] ^= b[j];
    return r;
}

} // namespace

BchCodec::BchCodec(int m, int t, int shorten) : m_(m), t_(t), n_((1 << m) - 1), shorten_(shorten), prim_(primitive_poly(m))
{
    if (t < 1) throw std::invalid_argument("BchCodec: t must be >= 1");
    exp_.assign(2 * n_, 0);
    log_.assign(n_ + 1, -1);
    int x = 1;
    for (int i = 0; i < n_; ++i) {
        exp_[i] = x;
        log_[x] = i;
        x <<= 1;
        if (x & (1 << m)) x ^= prim_;
    }
    for (int i = n_; i < 2 * n_; ++i) exp_[i] = exp_[i - n_];

    // generator = lcm of minimal polynomials of alpha^1 .. alpha^2t
    std::vector<bool> used(n_, false);
    Poly2 g{1};
    for (int i = 1; i <= 2 * t; ++i) {
        if (used[i % n_]) continue;
        // conjugacy class of alpha^i
        std::vector<int> cls;
        int e = i % n_;
        while (!used[e]) {
            used[e] = true;
            cls.push_back(e);
            e = (e * 2) % n_;
        }
        // minimal polynomial prod (x - alpha^e) computed over GF(2^m)
        std::vector<int> mp{1};
        for (int r : cls) {
            std::vector<int> next(mp.size() + 1, 0);
            for (std::size_t j = 0; j < mp.size(); ++j) {
                next[j + 1] ^= mp[j];                 // x * mp
                next[j] ^= mul(mp[j], exp_[r]);       // alpha^r * mp
            }
            mp = std::move(next);
        }
        Poly2 mp2(mp.size());
        for (std::size_t j = 0; j < mp.size(); ++j) {
            if (mp[j] > 1) throw std::logic_error("BchCodec: minimal polynomial not binary");
            mp2[j] = static_cast<std::uint8_t>(mp[j]);
        }
        g = mul2(g, mp2);
    }
    parity_ = static_cast<int>(g.size()) - 1;
    if (shorten_ < 0 || shorten_ >= n_ - parity_) throw std::invalid_argument("BchCodec: invalid shortening");
    gen_.assign(g.rbegin(), g.rend());
}

int BchCodec::mul(int a, int b) const
{
    if (a == 0 || b == 0) return 0;
    return exp_[log_[a] + log_[b]];
}

int BchCodec::inv(int a) const
{
    if (a == 0) throw std::domain_error("BchCodec: inverse of zero");
    return exp_[(n_ - log_[a]) % n_];
}

std::vector<std::uint8_t> BchCodec::encode(const std::vector<std::uint8_t>& data) const
{
    if (static_cast<int>(data.size()) != k()) throw std::invalid_argument("BchCodec::encode: wrong data length");
    // long division of data(x) * x^parity by g(x), highest degree first
    std::vector<std::uint8_t> rem(parity_, 0);
    for (std::uint8_t bit : data) {
        const std::uint8_t feedback = static_cast<std::uint8_t>((bit & 1) ^ rem[0]);
        rem.erase(rem.begin());
        rem.push_back(0);
        if (feedback) {
            for (int j = 0; j < parity_; ++j) rem[j] ^= gen_[j + 1];
        }
    }
    std::vector<std::uint8_t> cw(data.begin(), data.end());
    for (auto& b : cw) b &= 1;
    cw.insert(cw.end(), rem.begin(), rem.end());
    return cw;
}

std::vector<int> BchCodec::syndromes(const std::vector<std::uint8_t>& word) const
{
    const int len = n();
    if (static_cast<int>(word.size()) != len) throw std::invalid_argument("BchCodec: wrong word length");
    std::vector<int> s(2 * t_, 0);
    for (int j = 1; j <= 2 * t_; ++j) {
        int acc = 0;
        for (int i = 0; i < len; ++i) {
            if (!(word[i] & 1)) continue;
            const int degree = len - 1 - i;
            acc ^= exp_[(static_cast<long>(degree) * j) % n_];
        }
        s[j - 1] = acc;
    }
    return s;
}

std::optional<BchCodec::Decoded> BchCodec::decode(const std::vector<std::uint8_t>& received) const
{
    const int len = n();
    const auto s = syndromes(received);
    Decoded out;
    out.codeword.assign(received.begin(), received.end());
    for (auto& b : out.codeword) b &= 1;
    if (std::all_of(s.begin(), s.end(), [](int v) { return v == 0; })) return out;

    // Berlekamp-Massey
    std::vector<int> sigma{1}, prev{1};
    int l = 0, shift = 1, prev_disc = 1;
    for (int r = 0; r < 2 * t_; ++r) {
        int d = s[r];
        for (int i = 1; i <= l && i < static_cast<int>(sigma.size()); ++i) d ^= mul(sigma[i], s[r - i]);
        if (d == 0) {
            ++shift;
            continue;
        }
        const int coef = mul(d, inv(prev_disc));
        std::vector<int> next = sigma;
        if (next.size() < prev.size() + shift) next.resize(prev.size() + shift, 0);
        for (std::size_t i = 0; i < prev.size(); ++i) next[i + shift] ^= mul(coef, prev[i]);
        if (2 * l <= r) {
            prev = sigma;
            l = r + 1 - l;
            prev_disc = d;
            shift = 1;
        } else {
            ++shift;
        }
        sigma = std::move(next);
    }
    while (sigma.size() > 1 && sigma.back() == 0) sigma.pop_back();
    const int degree = static_cast<int>(sigma.size()) - 1;
    if (degree != l || l > t_) return std::nullopt;

    // Chien search restricted to transmitted positions; an error at degree p
    // means sigma(alpha^-p) = 0.
    int found = 0;
    for (int p = 0; p < len; ++p) {
        int acc = 0;
        for (int i = 0; i <= degree; ++i) {
            if (sigma[i] == 0) continue;
            acc ^= mul(sigma[i], exp_[(n_ - (static_cast<long>(p) * i) % n_) % n_]);
        }
        if (acc == 0) {
            out.codeword[len - 1 - p] ^= 1;
            ++found;
        }
    }
    if (found != degree) return std::nullopt;
    const auto check = syndromes(out.codeword);
    if (!std::all_of(check.begin(), check.end(), [](int v) { return v == 0; })) return std::nullopt;
    out.corrected = found;
    return out;
}

} // namespace wmlab
