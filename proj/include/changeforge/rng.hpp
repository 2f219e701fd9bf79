#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace changeforge {

// All randomness in the pipeline flows from one master seed. Each consumer
// derives its own stream from (master seed, purpose string), so stages can be
// re-run independently without replaying the streams of earlier stages.
//
// Purpose strings in use:
//   init/g  init/f  init/dx  init/dy        weight initialization per network
//   epoch/<e>/shuffle_x  epoch/<e>/shuffle_y  per-epoch dataset order
//   epoch/<e>/crops                          per-epoch patch crop offsets
//   pool/x  pool/y                           replay buffer replacement draws
//   ingest/<domain>                          validation split selection
//   synthetic/x  synthetic/y  synthetic/eval demo dataset generation

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derive the stream seed for a named purpose from the master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose) {
    return splitmix64(master ^ fnv1a64(purpose));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view purpose) {
    return std::mt19937_64(derive_seed(master, purpose));
}

} // namespace changeforge
