// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace rlarff {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derives an independent child seed. Every per-stage and per-sample seed in
/// the project is produced by chaining this function from one master seed:
///   child = mix64(parent ^ mix64(tag))
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept {
    return mix64(parent ^ mix64(tag));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view stage) noexcept {
    return derive_seed(parent, fnv1a64(stage));
}

}  // namespace rlarff
