#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "scm/cka.hpp"
#include "test_util.hpp"

using namespace scm;

TEST_CASE("linear_cka basics") {
    const Tensor x = testutil::random_tensor({8, 3}, 1);
    const Tensor y = testutil::random_tensor({8, 5}, 2);

    // self-similarity
    CHECK(std::abs(linear_cka(x, x) - 1.0) < 1e-10);

    // symmetry
    CHECK(std::abs(linear_cka(x, y) - linear_cka(y, x)) < 1e-10);

    // isotropic scale invariance
    Tensor scaled = x;
    for (std::int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= -3.7;
    CHECK(std::abs(linear_cka(scaled, y) - linear_cka(x, y)) < 1e-8);

    // zero-variance input is undefined
    CHECK_THROWS_AS(linear_cka(Tensor::full({8, 3}, 2.0), y), DomainError);
    CHECK_THROWS_AS(linear_cka(testutil::random_tensor({4, 3}, 3), y), ShapeError);
}

TEST_CASE("linear_cka matches the HSIC-ratio oracle") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const Tensor x = testutil::random_tensor({8, 3}, 10 + seed);
        const Tensor y = testutil::random_tensor({8, 4}, 200 + seed);
        CHECK(std::abs(linear_cka(x, y) - oracle::linear_cka_hsic(x, y)) < 1e-9);
    }
}

TEST_CASE("linear_cka is invariant to orthogonal feature transforms") {
    // rotation in feature space built from a QR-free 2D Givens product
    const int n = 10, p = 4;
    const Tensor x = testutil::random_tensor({n, p}, 31);
    const Tensor y = testutil::random_tensor({n, 3}, 32);

    Tensor rot({p, p});
    for (int i = 0; i < p; ++i) rot.at(i, i) = 1.0;
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> angle(0.0, 6.28);
    for (int a = 0; a < p; ++a) {
        for (int b = a + 1; b < p; ++b) {
            const double th = angle(rng);
            // apply a Givens rotation on columns a, b
            for (int i = 0; i < p; ++i) {
                const double ra = rot.at(i, a), rb = rot.at(i, b);
                rot.at(i, a) = std::cos(th) * ra - std::sin(th) * rb;
                rot.at(i, b) = std::sin(th) * ra + std::cos(th) * rb;
            }
        }
    }
    Tensor xr({n, p});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int k = 0; k < p; ++k) acc += x.at(i, k) * rot.at(k, j);
            xr.at(i, j) = acc;
        }
    }
    CHECK(std::abs(linear_cka(xr, y) - linear_cka(x, y)) < 1e-8);
}

TEST_CASE("cka_similarity_map") {
    std::vector<Tensor> layers = {testutil::random_tensor({8, 3}, 41),
                                  testutil::random_tensor({8, 6}, 42),
                                  testutil::random_tensor({8, 2}, 43)};

    // self-map has unit diagonal and is symmetric
    const Tensor self_map = cka_similarity_map(layers, layers);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(self_map.at(i, i) - 1.0) < 1e-10);
        for (int j = 0; j < 3; ++j) {
            CHECK(self_map.at(i, j) == doctest::Approx(self_map.at(j, i)).epsilon(1e-10));
            CHECK(self_map.at(i, j) >= -1e-8);
            CHECK(self_map.at(i, j) <= 1.0 + 1e-8);
        }
    }

    // single-layer map reduces to linear_cka
    std::vector<Tensor> one_a = {layers[0]};
    std::vector<Tensor> one_b = {layers[1]};
    const Tensor single = cka_similarity_map(one_a, one_b);
    CHECK(single.numel() == 1);
    CHECK(single[0] == doctest::Approx(linear_cka(layers[0], layers[1])).epsilon(1e-12));

    // full map equals the per-pair oracle
    std::vector<Tensor> others = {testutil::random_tensor({8, 4}, 44),
                                  testutil::random_tensor({8, 5}, 45)};
    const Tensor map = cka_similarity_map(layers, others);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 2; ++j) {
            CHECK(map.at(i, j) ==
                  doctest::Approx(linear_cka(layers[static_cast<std::size_t>(i)],
                                             others[static_cast<std::size_t>(j)]))
                      .epsilon(1e-12));
        }
    }

    CHECK_THROWS_AS(cka_similarity_map(layers, {testutil::random_tensor({6, 3}, 46)}),
                    ShapeError);
}
