#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string_view>

#include "tvmerge/errors.hpp"

namespace tvmerge {

enum class DType : std::uint8_t { F32, F16, BF16 };

inline std::size_t dtype_width(DType d) {
    return d == DType::F32 ? 4 : 2;
}

inline std::string_view dtype_name(DType d) {
    switch (d) {
        case DType::F32: return "F32";
        case DType::F16: return "F16";
        case DType::BF16: return "BF16";
    }
    return "?";
}

inline DType dtype_from_name(std::string_view s) {
    if (s == "F32") return DType::F32;
    if (s == "F16") return DType::F16;
    if (s == "BF16") return DType::BF16;
    throw MergeError(ErrorKind::UnsupportedDtype, "dtype \"" + std::string(s) + "\"");
}

// ---------------------------------------------------------------------------
// Scalar 16-bit float codecs. These are the reference definitions; the SIMD
// kernels must agree bit-for-bit on every finite input (see tests).
// Encoding is round-to-nearest-even. NaN payload head bits survive a
// decode/encode round trip, so all 65536 source patterns map back to
// themselves.
// ---------------------------------------------------------------------------

inline float f16_decode(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1Fu;
    std::uint32_t mant = h & 0x3FFu;
    std::uint32_t out;
    if (exp == 0) {
        if (mant == 0) {
            out = sign;  // signed zero
        } else {
            // normalize subnormal: value = mant * 2^-24, top bit moves to the implicit position
            int shift = 0;
            while (!(mant & 0x400u)) {
                mant <<= 1;
                ++shift;
            }
            out = sign | (static_cast<std::uint32_t>(127 - 14 - shift) << 23) | ((mant & 0x3FFu) << 13);
        }
    } else if (exp == 0x1F) {
        out = sign | 0x7F800000u | (mant << 13);  // inf / nan, payload preserved
    } else {
        out = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(out);
}

inline std::uint16_t f16_encode(float f) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
    const std::uint32_t raw_exp = (bits >> 23) & 0xFFu;
    const std::uint32_t mant = bits & 0x7FFFFFu;

    if (raw_exp == 0xFF) {  // inf / nan
        if (mant == 0) return static_cast<std::uint16_t>(sign | 0x7C00u);
        std::uint32_t payload = mant >> 13;
        if (payload == 0) payload = 0x200u;  // keep it a nan
        return static_cast<std::uint16_t>(sign | 0x7C00u | payload);
    }

    const int exp = static_cast<int>(raw_exp) - 127 + 15;
    if (exp >= 0x1F) return static_cast<std::uint16_t>(sign | 0x7C00u);  // overflow -> inf
    if (exp <= 0) {
        if (exp < -10) return sign;  // below half of the least subnormal
        const std::uint32_t full = mant | 0x800000u;
        const unsigned shift = static_cast<unsigned>(14 - exp);  // in [14, 24]
        std::uint32_t half_mant = full >> shift;
        const std::uint32_t rem = full & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) ++half_mant;
        return static_cast<std::uint16_t>(sign | half_mant);  // carry may enter exp field; that is correct
    }

    std::uint16_t h = static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13));
    const std::uint32_t rem = mant & 0x1FFFu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // rounding into inf is correct
    return h;
}

inline float bf16_decode(std::uint16_t b) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(b) << 16);
}

inline std::uint16_t bf16_encode(float f) {
    const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
    if ((x & 0x7FFFFFFFu) > 0x7F800000u) {  // nan
        std::uint16_t h = static_cast<std::uint16_t>(x >> 16);
        if ((h & 0x7Fu) == 0) h |= 0x40u;  // payload lived only in the truncated bits
        return h;
    }
    const std::uint32_t rounded = x + 0x7FFFu + ((x >> 16) & 1u);
    return static_cast<std::uint16_t>(rounded >> 16);
}

}  // namespace tvmerge
