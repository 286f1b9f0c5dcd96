#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fsd/model.hpp"
#include "fsd/op_checks.hpp"

using namespace fsd;

namespace {

ModelConfig toy_model() {
    ModelConfig cfg;
    cfg.encoder.patch = 16;
    cfg.encoder.d_model = 64;
    cfg.encoder.num_heads = 4;
    cfg.encoder.num_blocks = 4;
    return cfg;
}

std::vector<NodePtr<double>> random_stack(Rng& rng, int n, int64_t h, int64_t w) {
    std::vector<NodePtr<double>> frames;
    for (int i = 0; i < n; ++i) {
        auto f = make_node<double>({3, h, w});
        for (auto& v : f->value) v = rng.uniform(0.0, 1.0);
        frames.push_back(f);
    }
    return frames;
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("forward maps a stack to a positive full-resolution disparity map") {
    DepthNet<double> net(toy_model(), 64, 64, 123);
    Rng rng(5);
    auto frames = random_stack(rng, 3, 64, 64);
    auto disp = net.forward(nullptr, frames);
    REQUIRE(disp->shape == Shape{64, 64});
    for (double v : disp->value) {
        CHECK(v > 1e-3);
        CHECK(std::isfinite(v));
    }

    auto one = net.forward(nullptr, {frames[0]});
    REQUIRE(one->shape == Shape{64, 64});

    auto bad = make_node<double>({3, 32, 32});
    CHECK_THROWS_AS(net.forward(nullptr, {bad}), std::invalid_argument);
    CHECK_THROWS_AS(net.forward(nullptr, {}), std::invalid_argument);
}

TEST_CASE("averaging ablation treats duplicated frames as one") {
    auto cfg = toy_model();
    cfg.no_lstm = true;
    DepthNet<double> net(cfg, 64, 64, 99);
    Rng rng(7);
    auto frames = random_stack(rng, 1, 64, 64);
    auto single = net.forward(nullptr, {frames[0]});
    auto doubled = net.forward(nullptr, {frames[0], frames[0]});
    for (size_t i = 0; i < single->value.size(); ++i)
        CHECK(doubled->value[i] == doctest::Approx(single->value[i]).epsilon(1e-12));
}

TEST_CASE("the recurrent model distinguishes repeated frames from a single one") {
    DepthNet<double> net(toy_model(), 64, 64, 99);
    Rng rng(9);
    auto frames = random_stack(rng, 1, 64, 64);
    auto single = net.forward(nullptr, {frames[0]});
    auto repeated = net.forward(nullptr, {frames[0], frames[0], frames[0]});
    double diff = 0.0;
    for (size_t i = 0; i < single->value.size(); ++i)
        diff = std::max(diff, std::abs(single->value[i] - repeated->value[i]));
    CHECK(diff > 1e-9);
}

TEST_CASE("attention capture returns one simplex map per frame and head") {
    DepthNet<double> net(toy_model(), 64, 64, 77);
    Rng rng(11);
    auto frames = random_stack(rng, 2, 64, 64);
    ForwardExtras<double> extras;
    extras.capture_attention = true;
    net.forward(nullptr, frames, &extras);
    REQUIRE(extras.attention.size() == 2);
    for (const auto& per_frame : extras.attention) {
        REQUIRE(per_frame.size() == 4);
        for (const auto& m : per_frame) {
            REQUIRE(m->shape == Shape{16, 16});
            for (int64_t r = 0; r < 16; ++r) {
                double sum = 0.0;
                for (int64_t c = 0; c < 16; ++c) sum += m->value[r * 16 + c];
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("fusion parameters do not scale with image size") {
    DepthNet<double> small(toy_model(), 64, 64, 5);
    DepthNet<double> large(toy_model(), 128, 128, 5);
    CHECK(small.params.count_prefix("fus.") == large.params.count_prefix("fus."));
    CHECK(small.params.count_prefix("dec.") == large.params.count_prefix("dec."));
    // Only the position table grows with the grid.
    CHECK(large.params.count_prefix("enc.") > small.params.count_prefix("enc."));
}

} // TEST_SUITE
