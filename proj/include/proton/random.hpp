#pragma once

#include "proton/tensor.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>

namespace proton {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent sub-stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = mix_seed(base);
    for (auto p : path) s = mix_seed(s ^ mix_seed(p + 0x632BE59BD9B4E019ull));
    return s;
}

/// Uniform on [-sqrt(6/fan_in), +sqrt(6/fan_in)].
inline Tensor init_uniform(Shape shape, Index fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Vector v(shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
    return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace proton
