#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fsd/grad_check.hpp"
#include "fsd/loss.hpp"
#include "fsd/metrics.hpp"
#include "fsd/rng.hpp"
#include "fsd/op_checks.hpp"

using namespace fsd;

namespace {

// Straight-line re-derivation of every metric, kept deliberately naive: all
// intermediate fields are materialized and the Hessian is assembled from
// explicit dxx/dyy/dxy arrays.
MetricsReport oracle_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                             const std::vector<uint8_t>& mask, int64_t h, int64_t w) {
    const size_t n = size_t(h * w);
    std::vector<double> delta(n);
    for (size_t i = 0; i < n; ++i) delta[i] = pred[i] - gt[i];

    std::vector<double> dxx(n, 0.0), dyy(n, 0.0), dxy(n, 0.0);
    auto at = [&](int64_t y, int64_t x) { return delta[size_t(y * w + x)]; };
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const size_t i = size_t(y * w + x);
            if (w >= 3) {
                int64_t xc = x;
                if (xc < 1) xc = 1;
                if (xc > w - 2) xc = w - 2;
                dxx[i] = at(y, xc + 1) + at(y, xc - 1) - 2.0 * at(y, xc);
            }
            if (h >= 3) {
                int64_t yc = y;
                if (yc < 1) yc = 1;
                if (yc > h - 2) yc = h - 2;
                dyy[i] = at(yc + 1, x) + at(yc - 1, x) - 2.0 * at(yc, x);
            }
            const int64_t ym = y > 0 ? y - 1 : 0, yp = y < h - 1 ? y + 1 : h - 1;
            const int64_t xm = x > 0 ? x - 1 : 0, xp = x < w - 1 ? x + 1 : w - 1;
            if (yp != ym && xp != xm)
                dxy[i] = (at(yp, xp) - at(yp, xm) - at(ym, xp) + at(ym, xm)) /
                         double((yp - ym) * (xp - xm));
        }
    }

    std::vector<size_t> on;
    for (size_t i = 0; i < n; ++i)
        if (mask.empty() || mask[i]) on.push_back(i);

    MetricsReport m;
    double se = 0, lse = 0, ar = 0, sr = 0, bump = 0, a1 = 0, a2 = 0, a3 = 0;
    for (size_t i : on) {
        se += delta[i] * delta[i];
        const double ld = std::log(pred[i] / gt[i]);
        lse += ld * ld;
        ar += std::abs(delta[i]) / gt[i];
        sr += delta[i] * delta[i] / gt[i];
        const double hn =
            std::sqrt(dxx[i] * dxx[i] + 2.0 * dxy[i] * dxy[i] + dyy[i] * dyy[i]);
        bump += std::min(0.05, hn);
        const double r = std::max(pred[i] / gt[i], gt[i] / pred[i]);
        if (r < 1.25) a1 += 1;
        if (r < 1.25 * 1.25) a2 += 1;
        if (r < 1.25 * 1.25 * 1.25) a3 += 1;
    }
    const double inv = 1.0 / double(on.size());
    m.rmse = std::sqrt(se * inv);
    m.log_rmse = std::sqrt(lse * inv);
    m.abs_rel = ar * inv;
    m.sqr_rel = sr * inv;
    m.bump = 100.0 * bump * inv;
    m.acc_1 = 100.0 * a1 * inv;
    m.acc_2 = 100.0 * a2 * inv;
    m.acc_3 = 100.0 * a3 * inv;
    return m;
}

void check_reports_close(const MetricsReport& a, const MetricsReport& b, double tol) {
    CHECK(std::abs(a.rmse - b.rmse) <= tol);
    CHECK(std::abs(a.log_rmse - b.log_rmse) <= tol);
    CHECK(std::abs(a.abs_rel - b.abs_rel) <= tol);
    CHECK(std::abs(a.sqr_rel - b.sqr_rel) <= tol);
    CHECK(std::abs(a.bump - b.bump) <= tol);
    CHECK(std::abs(a.acc_1 - b.acc_1) <= tol);
    CHECK(std::abs(a.acc_2 - b.acc_2) <= tol);
    CHECK(std::abs(a.acc_3 - b.acc_3) <= tol);
}

} // namespace

TEST_SUITE("loss_metrics") {

TEST_CASE("hand-computed loss value") {
    auto pred = make_node<double>({2, 2}, {1, 2, 3, 4});
    auto gt = make_node<double>({2, 2});
    LossConfig cfg; // mse+grad, alpha 0.2
    auto l = total_loss<double>(nullptr, pred, gt, cfg);
    // mse 7.5, mean |row diff| 1, mean |col diff| 2
    CHECK(l->value[0] == doctest::Approx(8.1).epsilon(1e-12));

    cfg.alpha = 0.0;
    CHECK(total_loss<double>(nullptr, pred, gt, cfg)->value[0] ==
          doctest::Approx(7.5).epsilon(1e-12));

    cfg.variant = LossVariant::kMse;
    cfg.alpha = 0.2;
    CHECK(total_loss<double>(nullptr, pred, gt, cfg)->value[0] ==
          doctest::Approx(7.5).epsilon(1e-12));

    cfg.variant = LossVariant::kMae;
    CHECK(total_loss<double>(nullptr, pred, gt, cfg)->value[0] ==
          doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("perfect prediction gives zero loss in every variant") {
    Rng rng(3);
    auto pred = opchecks::rand_node(rng, {4, 5});
    auto gt = make_node<double>(pred->shape, pred->value);
    for (auto v : {LossVariant::kMse, LossVariant::kMae, LossVariant::kMseGrad}) {
        LossConfig cfg;
        cfg.variant = v;
        CHECK(total_loss<double>(nullptr, pred, gt, cfg)->value[0] == 0.0);
    }
}

TEST_CASE("loss gradients agree with finite differences") {
    Rng rng(5);
    auto pred = opchecks::rand_node(rng, {4, 4});
    auto gt = opchecks::rand_node(rng, {4, 4}, false);
    for (auto v : {LossVariant::kMse, LossVariant::kMae, LossVariant::kMseGrad}) {
        LossConfig cfg;
        cfg.variant = v;
        auto f = [&](Tape<double>* tape) { return total_loss<double>(tape, pred, gt, cfg); };
        auto r = grad_check<double>(f, {pred}, 1e-6, 1e-4);
        INFO("variant ", loss_variant_name(v), " rel ", r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("variant names parse and round-trip") {
    for (const char* s : {"mse", "mae", "mse+grad"})
        CHECK(loss_variant_name(parse_loss_variant(s)) == s);
    CHECK_THROWS_AS(parse_loss_variant("huber"), std::invalid_argument);
    CHECK_THROWS_AS(total_loss<double>(nullptr, make_node<double>({2, 2}),
                                       make_node<double>({2, 3}), LossConfig{}),
                    std::invalid_argument);
}

TEST_CASE("metrics match the naive oracle on random maps") {
    for (uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        const int64_t h = 16, w = 16;
        std::vector<double> pred(h * w), gt(h * w);
        std::vector<uint8_t> mask(h * w, 1);
        for (auto& v : pred) v = rng.uniform(0.2, 5.0);
        for (auto& v : gt) v = rng.uniform(0.2, 5.0);
        if (seed % 2 == 0) {
            for (size_t i = 0; i < mask.size(); ++i)
                if (rng.uniform() < 0.2) mask[i] = 0;
            mask[0] = 1;
        } else {
            mask.clear(); // empty mask means every pixel
        }
        auto got = compute_metrics(pred, gt, mask, h, w);
        auto want = oracle_metrics(pred, gt, mask, h, w);
        check_reports_close(got, want, 1e-9);
    }
}

TEST_CASE("uniform 1.3x overestimate") {
    Rng rng(7);
    const int64_t h = 8, w = 8;
    std::vector<double> gt(h * w), pred(h * w);
    for (size_t i = 0; i < gt.size(); ++i) {
        gt[i] = rng.uniform(0.5, 4.0);
        pred[i] = 1.3 * gt[i];
    }
    auto m = compute_metrics(pred, gt, {}, h, w);
    CHECK(m.acc_1 == 0.0);
    CHECK(m.acc_2 == 100.0);
    CHECK(m.acc_3 == 100.0);
    CHECK(m.abs_rel == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(m.log_rmse == doctest::Approx(std::log(1.3)).epsilon(1e-12));
}

TEST_CASE("accuracy buckets are nested") {
    Rng rng(11);
    const int64_t h = 12, w = 12;
    std::vector<double> pred(h * w), gt(h * w);
    for (auto& v : pred) v = rng.uniform(0.1, 6.0);
    for (auto& v : gt) v = rng.uniform(0.1, 6.0);
    auto m = compute_metrics(pred, gt, {}, h, w);
    CHECK(m.acc_1 <= m.acc_2);
    CHECK(m.acc_2 <= m.acc_3);
    CHECK(m.acc_3 <= 100.0);
}

TEST_CASE("affine error has zero bumpiness, quadratic error a known one") {
    const int64_t h = 6, w = 6;
    std::vector<double> gt(h * w, 2.0), affine(h * w), quad(h * w);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            affine[size_t(y * w + x)] = 2.0 + 0.01 * double(x) - 0.02 * double(y) + 0.003;
            quad[size_t(y * w + x)] = 2.0 + 0.01 * double(x) * double(x);
        }
    }
    CHECK(compute_metrics(affine, gt, {}, h, w).bump == doctest::Approx(0.0).epsilon(1e-12));
    // d = 0.01 x^2: dxx = 0.02 everywhere, so |H|_F = 0.02 and bump = 2.
    CHECK(compute_metrics(quad, gt, {}, h, w).bump == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("bumpiness is capped at 5") {
    Rng rng(13);
    const int64_t h = 10, w = 10;
    std::vector<double> pred(h * w), gt(h * w, 1.0);
    for (auto& v : pred) v = rng.uniform(0.5, 100.0); // wild curvature
    auto m = compute_metrics(pred, gt, {}, h, w);
    CHECK(m.bump > 0.0);
    CHECK(m.bump <= 5.0 + 1e-9); // the slack absorbs round-off in the mean
}

TEST_CASE("ratio metrics are invariant to joint scaling") {
    Rng rng(17);
    const int64_t h = 8, w = 8;
    std::vector<double> pred(h * w), gt(h * w);
    for (auto& v : pred) v = rng.uniform(0.3, 3.0);
    for (auto& v : gt) v = rng.uniform(0.3, 3.0);
    auto base = compute_metrics(pred, gt, {}, h, w);
    for (double s : {0.25, 4.0}) {
        std::vector<double> ps(pred), gs(gt);
        for (auto& v : ps) v *= s;
        for (auto& v : gs) v *= s;
        auto m = compute_metrics(ps, gs, {}, h, w);
        CHECK(m.abs_rel == doctest::Approx(base.abs_rel).epsilon(1e-12));
        CHECK(m.log_rmse == doctest::Approx(base.log_rmse).epsilon(1e-10));
        CHECK(m.acc_1 == base.acc_1);
        CHECK(m.acc_2 == base.acc_2);
        CHECK(m.acc_3 == base.acc_3);
    }
}

TEST_CASE("input validation") {
    std::vector<double> pred(4, 1.0), gt(4, 1.0);
    CHECK_THROWS_AS(compute_metrics(pred, gt, {}, 2, 3), std::invalid_argument);
    CHECK_THROWS_AS(compute_metrics(pred, gt, std::vector<uint8_t>(3, 1), 2, 2),
                    std::invalid_argument);
    CHECK_THROWS_AS(compute_metrics(pred, gt, std::vector<uint8_t>(4, 0), 2, 2),
                    std::invalid_argument);

    gt[2] = 0.0;
    CHECK_THROWS_AS(compute_metrics(pred, gt, {}, 2, 2), std::domain_error);
    // The same zero is fine when masked out: curvature still reads through it.
    std::vector<uint8_t> mask = {1, 1, 0, 1};
    CHECK_NOTHROW(compute_metrics(pred, gt, mask, 2, 2));
    pred[1] = -0.5;
    CHECK_THROWS_AS(compute_metrics(pred, gt, mask, 2, 2), std::domain_error);
}

TEST_CASE("csv layout is frozen") {
    CHECK(metrics_csv_header() == "rmse,log_rmse,abs_rel,sqr_rel,bump,acc_1,acc_2,acc_3");
    MetricsReport m;
    m.rmse = 0.5;
    m.acc_3 = 99.25;
    const std::string row = metrics_csv_row(m);
    CHECK(std::count(row.begin(), row.end(), ',') == 7);
    CHECK(row.substr(0, 4) == "0.5,");
    CHECK(row.substr(row.rfind(',') + 1) == "99.25");
}

} // TEST_SUITE
