#pragma once

#include <cstddef>
#include <cstdint>

namespace wmlab {

/// 64-bit FNV-1a over a byte range.
inline std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace wmlab
