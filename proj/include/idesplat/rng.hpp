#pragma once

#include "idesplat/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>

namespace idesplat {

/// Counter-based generator: a Weyl sequence over the seed passed through the
/// splitmix64 finalizer. Output depends only on (seed, draw index), never on the
/// platform's <random> implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1) with 24 bits of mantissa.
    float uniform() noexcept { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    double uniform_double() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform_double(); }

    /// Standard normal via Box-Muller.
    double normal() noexcept {
        const double u1 = 1.0 - uniform_double();
        const double u2 = uniform_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t below(std::uint64_t bound) noexcept { return bound ? next_u64() % bound : 0; }

private:
    std::uint64_t state_;
};

inline Tensor rng_uniform(Rng& rng, std::size_t n) {
    require(n >= 1, ErrorCode::InvalidArgument, "rng_uniform needs n >= 1");
    Tensor out({n});
    for (auto& v : out.data()) {
        v = rng.uniform();
    }
    return out;
}

inline Tensor random_tensor(Rng& rng, Shape shape, float lo = 0.0f, float hi = 1.0f) {
    Tensor out(std::move(shape));
    for (auto& v : out.data()) {
        v = lo + (hi - lo) * rng.uniform();
    }
    return out;
}

} // namespace idesplat
