#pragma once

#include <cstdint>
#include <string_view>

namespace tvmerge::rng {

// splitmix64 finalizer; good avalanche, cheap.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b));
}

inline std::uint64_t hash_str(std::string_view s) {
    // FNV-1a 64
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

// Deterministic per-(seed, layer, model) stream seed; merge runs are
// reproducible regardless of layer scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view layer_name, std::uint64_t model_index) {
    return mix(mix(seed, hash_str(layer_name)), model_index);
}

}  // namespace tvmerge::rng
