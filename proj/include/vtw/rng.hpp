// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace vtw {

/// Seeded generator with platform-independent output.
///
/// std::mt19937_64's raw sequence is fixed by the standard, but the standard
/// distributions are not, so the mappings to reals and bounded integers are
/// written out here.
class DeterministicRng {
public:
    explicit DeterministicRng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double next_unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    /// Uniform integer in [0, bound) via the high half of a 128-bit product.
    std::uint64_t below(std::uint64_t bound) {
        const unsigned __int128 wide = static_cast<unsigned __int128>(engine_()) * bound;
        return static_cast<std::uint64_t>(wide >> 64);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace vtw
