#pragma once

#include <cstdint>
#include <random>

namespace gesched {

/// (master seed, run index) pair; fully determines a random stream.
struct RngSpec {
    std::uint64_t seed = 0;
    std::uint64_t run_index = 0;
};

/// Deterministic uniform stream. Doubles are built from the top 53 bits of
/// mt19937_64 output so results do not depend on the standard library's
/// distribution implementations.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : RandomStream(RngSpec{seed, 0}) {}

    explicit RandomStream(RngSpec spec) {
        std::seed_seq seq{static_cast<std::uint32_t>(spec.seed),
                          static_cast<std::uint32_t>(spec.seed >> 32),
                          static_cast<std::uint32_t>(spec.run_index),
                          static_cast<std::uint32_t>(spec.run_index >> 32), 0x9e3779b9u};
        engine_.seed(seq);
    }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64 engine_;
};

} // namespace gesched
