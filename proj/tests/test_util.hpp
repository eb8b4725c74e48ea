#pragma once

// Shared helpers for the test suites: seeded random tensors and masks.

#include <random>
#include <vector>

#include "scm/tensor.hpp"
#include "scm/types.hpp"

namespace scm::testutil {

inline Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -2.0,
                            double hi = 2.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

inline Tensor random_positive(std::vector<int> shape, std::uint64_t seed, double lo = 0.05,
                              double hi = 0.95) {
    return random_tensor(std::move(shape), seed, lo, hi);
}

inline Mask random_mask(int h, int w, std::uint64_t seed, double density = 0.4) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Mask m(h, w);
    for (auto& v : m.data) v = dist(rng) < density ? 1 : 0;
    return m;
}

}  // namespace scm::testutil
