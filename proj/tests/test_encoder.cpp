#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fsd/encoder.hpp"
#include "fsd/grad_check.hpp"
#include "fsd/op_checks.hpp"

using namespace fsd;

namespace {

NodePtr<double> rand_image(Rng& rng, int64_t c, int64_t h, int64_t w) {
    auto img = make_node<double>({c, h, w});
    for (auto& v : img->value) v = rng.uniform(0.0, 1.0);
    return img;
}

EncoderConfig toy_config() {
    EncoderConfig cfg;
    cfg.patch = 16;
    cfg.d_model = 64;
    cfg.num_heads = 4;
    cfg.num_blocks = 4;
    return cfg;
}

} // namespace

TEST_SUITE("encoder") {

TEST_CASE("config validation rejects bad settings") {
    EncoderConfig cfg = toy_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.patch = 12;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = toy_config();
    cfg.num_heads = 5; // does not divide 64
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = toy_config();
    cfg.multiscale_kernels = {3, 4};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = toy_config();
    cfg.skip_block_indices = {0};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.skip_block_indices = {5};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("multiscale front end maps zero input to zero") {
    EncoderConfig cfg = toy_config();
    ParamStore<double> ps;
    Rng rng(11);
    make_encoder_params(ps, cfg, 64, 64, 3, rng);
    auto img = make_node<double>({3, 64, 64});
    auto fmap = multiscale_encode<double>(nullptr, img, ps, cfg);
    REQUIRE(fmap->shape == Shape{1, 64, 64});
    for (double v : fmap->value) CHECK(v == 0.0);
}

TEST_CASE("constant_kernel ablation shrinks the front end") {
    EncoderConfig cfg = toy_config();
    ParamStore<double> base, ablated;
    Rng r1(3), r2(3);
    make_encoder_params(base, cfg, 64, 64, 3, r1);
    cfg.constant_kernel = true;
    make_encoder_params(ablated, cfg, 64, 64, 3, r2);
    CHECK(ablated.count_prefix("enc.ms.") < base.count_prefix("enc.ms."));
    CHECK(ablated.count_prefix("enc.blk") == base.count_prefix("enc.blk"));

    auto img = rand_image(r1, 3, 64, 64);
    auto fmap = multiscale_encode<double>(nullptr, img, ablated, cfg);
    CHECK(fmap->shape == Shape{1, 64, 64});
}

TEST_CASE("no_depth_conv ablation keeps the single-channel contract") {
    EncoderConfig cfg = toy_config();
    cfg.no_depth_conv = true;
    ParamStore<double> ps;
    Rng rng(5);
    make_encoder_params(ps, cfg, 64, 64, 3, rng);
    CHECK_FALSE(ps.contains("enc.ms.depth.w"));
    auto zero = make_node<double>({3, 64, 64});
    auto fmap = multiscale_encode<double>(nullptr, zero, ps, cfg);
    REQUIRE(fmap->shape == Shape{1, 64, 64});
    for (double v : fmap->value) CHECK(v == 0.0);
}

TEST_CASE("impulse response is confined to a 9x9 box and uses the 7x7 branch") {
    EncoderConfig cfg = toy_config();
    ParamStore<double> ps;
    Rng rng(17);
    make_encoder_params(ps, cfg, 64, 64, 3, rng);
    auto img = make_node<double>({3, 64, 64});
    const int64_t cy = 32, cx = 32;
    img->value[size_t((0 * 64 + cy) * 64 + cx)] = 1.0;
    auto fmap = multiscale_encode<double>(nullptr, img, ps, cfg);

    double beyond_7x7 = 0.0;
    for (int64_t y = 0; y < 64; ++y) {
        for (int64_t x = 0; x < 64; ++x) {
            const double v = std::abs(fmap->value[size_t(y * 64 + x)]);
            const int64_t r = std::max(std::abs(y - cy), std::abs(x - cx));
            if (r > 4) CHECK(v == 0.0);
            if (r == 4) beyond_7x7 = std::max(beyond_7x7, v);
        }
    }
    CHECK(beyond_7x7 > 0.0);
}

TEST_CASE("tokenize produces the expected grid and distinct tokens") {
    EncoderConfig cfg = toy_config();
    ParamStore<double> ps;
    Rng rng(23);
    make_encoder_params(ps, cfg, 64, 64, 3, rng);
    auto fmap = make_node<double>({1, 64, 64}, std::vector<double>(64 * 64, 0.25));
    auto ts = tokenize<double>(nullptr, fmap, ps, cfg);
    REQUIRE(ts.tokens->shape == Shape{16, 64});
    CHECK(ts.grid_h == 4);
    CHECK(ts.grid_w == 4);
    REQUIRE(ts.norms.size() == 16);

    // Identical patch content: position embeddings alone must separate rows.
    for (int64_t i = 0; i < 16; ++i) {
        for (int64_t j = i + 1; j < 16; ++j) {
            double diff = 0.0;
            for (int64_t d = 0; d < 64; ++d)
                diff = std::max(diff, std::abs(ts.tokens->value[i * 64 + d] -
                                               ts.tokens->value[j * 64 + d]));
            CHECK(diff > 0.0);
        }
    }
}

TEST_CASE("tokenize touches only the token of a changed patch") {
    EncoderConfig cfg = toy_config();
    ParamStore<double> ps;
    Rng rng(29);
    make_encoder_params(ps, cfg, 64, 64, 3, rng);
    // Silence the map-wide term so a local edit cannot leak through the mean.
    auto& gw = ps.get("enc.tok.global.w")->value;
    std::fill(gw.begin(), gw.end(), 0.0);

    auto f1 = make_node<double>({1, 64, 64});
    for (auto& v : f1->value) v = rng.uniform();
    auto f2 = make_node<double>(f1->shape, f1->value);
    f2->value[size_t(20 * 64 + 50)] += 1.0; // patch row 1, col 3 -> token 7

    auto t1 = tokenize<double>(nullptr, f1, ps, cfg);
    auto t2 = tokenize<double>(nullptr, f2, ps, cfg);
    for (int64_t i = 0; i < 16; ++i) {
        double diff = 0.0;
        for (int64_t d = 0; d < 64; ++d)
            diff = std::max(diff,
                            std::abs(t1.tokens->value[i * 64 + d] - t2.tokens->value[i * 64 + d]));
        if (i == 7) {
            CHECK(diff > 0.0);
        } else {
            CHECK(diff == 0.0);
        }
    }
}

TEST_CASE("single-token attention reduces to the value path") {
    Rng rng(31);
    auto x = opchecks::rand_node(rng, {1, 8});
    auto wq = opchecks::rand_node(rng, {8, 8});
    auto wk = opchecks::rand_node(rng, {8, 8});
    auto wv = opchecks::rand_node(rng, {8, 8});
    auto wo = opchecks::rand_node(rng, {8, 8});
    AttentionMaps<double> maps;
    auto y = mha<double>(nullptr, x, wq, wk, wv, wo, 2, &maps);
    auto direct = matmul<double>(nullptr, matmul<double>(nullptr, x, wv), wo);
    REQUIRE(y->shape == direct->shape);
    for (size_t i = 0; i < y->value.size(); ++i)
        CHECK(y->value[i] == doctest::Approx(direct->value[i]).epsilon(1e-12));
    REQUIRE(maps.size() == 2);
    for (const auto& m : maps) {
        REQUIRE(m->shape == Shape{1, 1});
        CHECK(m->value[0] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("attention rows are simplex weights") {
    Rng rng(37);
    auto x = opchecks::rand_node(rng, {6, 16});
    auto wq = opchecks::rand_node(rng, {16, 16});
    auto wk = opchecks::rand_node(rng, {16, 16});
    auto wv = opchecks::rand_node(rng, {16, 16});
    auto wo = opchecks::rand_node(rng, {16, 16});
    AttentionMaps<double> maps;
    mha<double>(nullptr, x, wq, wk, wv, wo, 4, &maps);
    REQUIRE(maps.size() == 4);
    for (const auto& m : maps) {
        REQUIRE(m->shape == Shape{6, 6});
        for (int64_t r = 0; r < 6; ++r) {
            double sum = 0.0;
            for (int64_t c = 0; c < 6; ++c) {
                const double a = m->value[r * 6 + c];
                CHECK(a >= 0.0);
                sum += a;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("attention is permutation-equivariant") {
    Rng rng(41);
    auto x = opchecks::rand_node(rng, {6, 16});
    auto wq = opchecks::rand_node(rng, {16, 16});
    auto wk = opchecks::rand_node(rng, {16, 16});
    auto wv = opchecks::rand_node(rng, {16, 16});
    auto wo = opchecks::rand_node(rng, {16, 16});
    const std::vector<int64_t> perm = {3, 0, 5, 1, 4, 2};
    auto xp = gather_rows<double>(nullptr, x, perm);
    auto y = mha<double>(nullptr, x, wq, wk, wv, wo, 2);
    auto yp = mha<double>(nullptr, xp, wq, wk, wv, wo, 2);
    auto y_perm = gather_rows<double>(nullptr, y, perm);
    for (size_t i = 0; i < yp->value.size(); ++i)
        CHECK(yp->value[i] == doctest::Approx(y_perm->value[i]).epsilon(1e-10));
}

TEST_CASE("zeroed blocks pass tokens through unchanged") {
    EncoderConfig cfg = toy_config();
    ParamStore<double> ps;
    Rng rng(43);
    make_encoder_params(ps, cfg, 64, 64, 3, rng);
    for (int64_t j = 0; j < cfg.num_blocks; ++j) {
        const std::string base = "enc.blk" + std::to_string(j);
        for (const char* nm : {".wq", ".wk", ".wv", ".wo", ".ff1.w", ".ff2.w"}) {
            auto& v = ps.get(base + nm)->value;
            std::fill(v.begin(), v.end(), 0.0);
        }
    }
    auto tokens = opchecks::rand_node(rng, {16, 64});
    auto in = make_token_set<double>(tokens, 4, 4);
    auto out = transformer_encode<double>(nullptr, in, ps, cfg);
    REQUIRE(out.tokens.tokens->shape == in.tokens->shape);
    for (size_t i = 0; i < tokens->value.size(); ++i)
        CHECK(out.tokens.tokens->value[i] == tokens->value[i]);
    REQUIRE(out.skips.size() == 3);
    for (const auto& sk : out.skips) {
        for (size_t i = 0; i < tokens->value.size(); ++i)
            CHECK(sk.tokens->value[i] == tokens->value[i]);
    }
}

TEST_CASE("full frame encode has the right shapes") {
    EncoderConfig cfg = toy_config();
    ParamStore<double> ps;
    Rng rng(47);
    make_encoder_params(ps, cfg, 64, 64, 3, rng);
    auto img = rand_image(rng, 3, 64, 64);
    auto res = encode_frame<double>(nullptr, img, ps, cfg, true);
    CHECK(res.tokens.tokens->shape == Shape{16, 64});
    CHECK(res.tokens.grid_h == 4);
    REQUIRE(res.skips.size() == 3);
    for (const auto& sk : res.skips) CHECK(sk.tokens->shape == Shape{16, 64});
    CHECK(res.last_block_attention.size() == size_t(cfg.num_heads));
}

TEST_CASE("transformer gradients agree with finite differences") {
    EncoderConfig cfg;
    cfg.patch = 16;
    cfg.d_model = 16;
    cfg.num_heads = 2;
    cfg.num_blocks = 2;
    cfg.skip_block_indices = {1};
    ParamStore<double> ps;
    Rng rng(53);
    make_encoder_params(ps, cfg, 32, 32, 3, rng);

    auto tokens = opchecks::rand_node(rng, {4, 16});
    auto probe = opchecks::rand_node(rng, {4, 16}, false);
    auto f = [&](Tape<double>* tape) {
        auto in = make_token_set<double>(tokens, 2, 2);
        auto out = transformer_encode<double>(tape, in, ps, cfg);
        return opchecks::probe_sum(tape, out.tokens.tokens, probe);
    };
    std::vector<NodePtr<double>> wrt = {tokens};
    for (const auto& e : ps.entries()) {
        if (e.first.rfind("enc.blk", 0) == 0) wrt.push_back(e.second);
    }
    auto r = grad_check<double>(f, wrt, 1e-6, 1e-3, 4, 99);
    INFO("worst ", r.worst_param, " rel ", r.max_rel_err);
    CHECK(r.pass);
}

} // TEST_SUITE
