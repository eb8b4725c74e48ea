#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "scm/instance.hpp"
#include "test_util.hpp"

using namespace scm;

namespace {

Detection det_of(int cls, const Box& box, double conf) {
    Detection d;
    d.box = box;
    d.class_probs.assign(kClassCount, (1.0 - conf) / (kClassCount - 1));
    d.class_probs[static_cast<std::size_t>(cls)] = conf;
    return d;
}

bool masks_equal(const std::vector<InstanceRecord>& a, const std::vector<InstanceRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].class_id != b[i].class_id) return false;
        if (a[i].mask.data != b[i].mask.data) return false;
        if (a[i].confidence != b[i].confidence) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("combine_instances examples") {
    Mask binary(16, 16);
    for (int r = 2; r < 10; ++r) {
        for (int c = 2; c < 12; ++c) binary.at(r, c) = 1;
    }

    SUBCASE("no detections give an empty list") {
        CHECK(combine_instances({}, binary).empty());
    }

    SUBCASE("one covering detection claims the whole mask") {
        const auto out = combine_instances({det_of(3, Box{0, 0, 16, 16}, 0.9)}, binary);
        REQUIRE(out.size() == 1);
        CHECK(out[0].class_id == 3);
        CHECK(out[0].mask.data == binary.data);
        CHECK(out[0].confidence == doctest::Approx(0.9));
    }

    SUBCASE("higher-probability detection wins the overlap") {
        const Detection a = det_of(0, Box{0, 0, 8, 16}, 0.9);   // class A
        const Detection b = det_of(1, Box{4, 0, 14, 16}, 0.7);  // class B, overlaps cols 4..8
        const auto out = combine_instances({b, a}, binary);     // input order must not matter
        REQUIRE(out.size() == 2);
        CHECK(out[0].class_id == 0);
        CHECK(out[1].class_id == 1);
        // overlap columns 4..7 inside the binary mask went to the 0.9 detection
        for (int r = 2; r < 10; ++r) {
            for (int c = 4; c < 8; ++c) {
                CHECK(out[0].mask.at(r, c) == 1);
                CHECK(out[1].mask.at(r, c) == 0);
            }
        }
        // pairwise disjoint
        for (std::size_t i = 0; i < binary.data.size(); ++i) {
            CHECK(out[0].mask.data[i] + out[1].mask.data[i] <= 1);
        }
    }

    SUBCASE("detections below the score threshold are discarded") {
        CHECK(combine_instances({det_of(0, Box{0, 0, 16, 16}, 0.4)}, binary, 0.5).empty());
    }

    SUBCASE("empty-mask instances are dropped") {
        // box outside the binary mask
        CHECK(combine_instances({det_of(0, Box{13, 13, 16, 16}, 0.9)}, binary).empty());
    }
}

TEST_CASE("combiner invariants on random scenes") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Mask binary = testutil::random_mask(12, 12, 1000 + trial, 0.5);
        std::vector<Detection> dets;
        const int n = 1 + static_cast<int>(uni(rng) * 4);
        for (int i = 0; i < n; ++i) {
            const double x0 = uni(rng) * 8, y0 = uni(rng) * 8;
            dets.push_back(det_of(static_cast<int>(uni(rng) * kClassCount),
                                  Box{x0, y0, x0 + 2 + uni(rng) * 6, y0 + 2 + uni(rng) * 6},
                                  0.5 + 0.5 * uni(rng)));
        }
        const auto out = combine_instances(dets, binary);

        // pairwise disjoint, inside the box, inside the binary mask
        Mask seen(12, 12);
        for (const auto& inst : out) {
            for (int r = 0; r < 12; ++r) {
                for (int c = 0; c < 12; ++c) {
                    if (!inst.mask.at(r, c)) continue;
                    CHECK(seen.at(r, c) == 0);
                    seen.at(r, c) = 1;
                    CHECK(binary.at(r, c) == 1);
                    CHECK(inst.box.contains_pixel(r, c));
                }
            }
        }

        // order independence: reversed input gives the same result
        std::vector<Detection> reversed(dets.rbegin(), dets.rend());
        CHECK(masks_equal(out, combine_instances(reversed, binary)));

        // sequential-allocation oracle agreement
        CHECK(masks_equal(out, oracle::combine_instances(dets, binary, 0.5)));
    }
}

TEST_CASE("ties break on box area then input index") {
    Mask binary(8, 8);
    for (auto& v : binary.data) v = 1;
    const Detection small = det_of(0, Box{0, 0, 4, 4}, 0.8);
    const Detection large = det_of(1, Box{2, 2, 8, 8}, 0.8);
    const auto out = combine_instances({small, large}, binary);
    REQUIRE(out.size() == 2);
    // the larger box claims first despite appearing second
    CHECK(out[0].class_id == 1);
    // the contested corner [2,4)x[2,4) went to the larger box
    for (int r = 2; r < 4; ++r) {
        for (int c = 2; c < 4; ++c) {
            CHECK(out[0].mask.at(r, c) == 1);
            CHECK(out[1].mask.at(r, c) == 0);
        }
    }

    // equal score and area: input index decides
    const Detection first = det_of(2, Box{0, 0, 4, 4}, 0.8);
    const Detection second = det_of(3, Box{2, 2, 6, 6}, 0.8);
    const auto ordered = combine_instances({first, second}, binary);
    REQUIRE(ordered.size() == 2);
    CHECK(ordered[0].class_id == 2);
    CHECK(ordered[0].mask.at(3, 3) == 1);
}
