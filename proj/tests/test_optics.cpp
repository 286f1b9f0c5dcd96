#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "fsd/optics.hpp"

using namespace fsd;

namespace {
CameraModel default_cam() { return CameraModel{}; }
}

TEST_SUITE("optics") {

TEST_CASE("blur vanishes exactly on the focus plane") {
    const auto cam = default_cam();
    CHECK(coc_diameter(cam, 2.0, 2.0) == 0.0);
    CHECK(coc_sigma_px(cam, 0.75, 0.75) == 0.0);
}

TEST_CASE("circle of confusion on a hand example") {
    // f = 0.05, N = 2: C = f^2/(N (z - d)) * |1 - d/z| with z = 2, d = 1
    // is 0.00125 * 0.5 = 6.25e-4.
    const auto cam = default_cam();
    CHECK(coc_diameter(cam, 1.0, 2.0) == doctest::Approx(6.25e-4).epsilon(1e-12));
    // z = 1, d = 2: 0.00125 / (1 - 2) * |1 - 2| = -1.25e-3.
    CHECK(coc_diameter(cam, 2.0, 1.0) == doctest::Approx(-1.25e-3).epsilon(1e-12));
}

TEST_CASE("C * N * z collapses to signed f^2 off the focus plane") {
    const auto cam = default_cam();
    const double f2 = cam.focal_length * cam.focal_length;
    int pairs = 0;
    for (int zi = 1; zi <= 10; ++zi) {
        for (int di = 1; di <= 10; ++di) {
            if (zi == di) continue;
            const double z = 0.5 * zi;
            const double d = 0.5 * di;
            const double c = coc_diameter(cam, d, z);
            const double want = f2 * (z > d ? 1.0 : -1.0);
            CHECK(std::abs(c * cam.f_number * z - want) < 1e-12);
            ++pairs;
        }
    }
    CHECK(pairs == 90);
}

TEST_CASE("sign flips across the focus plane and magnitude decays with depth") {
    const auto cam = default_cam();
    CHECK(coc_diameter(cam, 2.0, 3.0) > 0.0);
    CHECK(coc_diameter(cam, 2.0, 1.0) < 0.0);
    double prev = std::abs(coc_diameter(cam, 1.0, 1.1));
    for (double z = 1.3; z < 6.0; z += 0.2) {
        const double cur = std::abs(coc_diameter(cam, 1.0, z));
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("blur sigma in pixels, with clamp") {
    const auto cam = default_cam();
    // |C| = 6.25e-4 over a 1e-4 pitch gives radius 6.25/2 = 3.125 px.
    CHECK(coc_sigma_px(cam, 1.0, 2.0) == doctest::Approx(3.125).epsilon(1e-12));
    // Close object far from focus wants 12.5 px and clamps to 8.
    CHECK(coc_sigma_px(cam, 5.0, 0.5) == doctest::Approx(kMaxBlurSigmaPx).epsilon(1e-12));
}

TEST_CASE("depth-disparity conversions invert each other") {
    const auto cam = default_cam();
    CHECK(depth_to_disparity(cam, 500.0) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(disparity_to_depth(cam, 1e-3) == doctest::Approx(500.0).epsilon(1e-12));
    for (double z = 0.5; z <= 5.0; z += 0.31) {
        CHECK(disparity_to_depth(cam, depth_to_disparity(cam, z)) ==
              doctest::Approx(z).epsilon(1e-12));
    }
    CHECK_THROWS_AS(depth_to_disparity(cam, 0.0), std::domain_error);
    CHECK_THROWS_AS(disparity_to_depth(cam, -1.0), std::domain_error);
}

TEST_CASE("domain validation") {
    auto cam = default_cam();
    CHECK_THROWS_AS(coc_diameter(cam, 1.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(coc_diameter(cam, 0.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(coc_diameter(cam, 1.0, -2.0), std::domain_error);
    cam.f_number = 0.0;
    CHECK_THROWS_AS(cam.validate(), std::domain_error);
    CHECK_THROWS_AS(default_focus_distances(0.0, 5.0, 4), std::domain_error);
    CHECK_THROWS_AS(default_focus_distances(2.0, 1.0, 4), std::domain_error);
    CHECK_THROWS_AS(default_focus_distances(0.5, 5.0, 0), std::domain_error);
}

TEST_CASE("focus distances cover the volume uniformly in inverse depth") {
    const auto d = default_focus_distances(0.5, 5.0, 10);
    REQUIRE(d.size() == 10);
    CHECK(d.front() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.back() == doctest::Approx(5.0).epsilon(1e-12));
    for (size_t i = 1; i < d.size(); ++i) CHECK(d[i] > d[i - 1]);
    const double step0 = 1.0 / d[0] - 1.0 / d[1];
    for (size_t i = 1; i + 1 < d.size(); ++i) {
        CHECK(1.0 / d[i] - 1.0 / d[i + 1] == doctest::Approx(step0).epsilon(1e-6));
    }

    const auto one = default_focus_distances(0.5, 5.0, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == doctest::Approx(1.0 / 1.1).epsilon(1e-6));
}

TEST_CASE("focus distances survive a round trip through float") {
    for (double d : default_focus_distances(0.5, 5.0, 10)) {
        CHECK(static_cast<double>(static_cast<float>(d)) == d);
    }
}

} // TEST_SUITE
