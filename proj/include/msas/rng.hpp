// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace msas {

/// Counter-based deterministic generator (splitmix64 over a running counter).
///
/// The state is two integers, so a generator can be copied to snapshot a
/// stream position and streams are reproducible across platforms. Dropout,
/// initialization and shuffling all draw from instances of this type.
class CounterRng {
 public:
    explicit CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ull * ++counter_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform float in [0, 1).
    float next_uniform() {
        return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
    }

    /// Uniform double in [0, 1).
    double next_uniform_double() {
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller.
    float next_normal() {
        double u1 = next_uniform_double();
        double u2 = next_uniform_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                                  std::cos(6.283185307179586 * u2));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    /// Derive an independent stream, e.g. one per fold or per epoch.
    CounterRng fork(std::uint64_t stream_id) const {
        CounterRng r(seed_ ^ (0xa0761d6478bd642full * (stream_id + 1)));
        return r;
    }

 private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

/// Deterministic Fisher-Yates shuffle (std::shuffle is not portable
/// across standard library implementations).
template <typename T>
void deterministic_shuffle(std::vector<T>& v, CounterRng& rng) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
        std::swap(v[i], v[j]);
    }
}

}  // namespace msas
