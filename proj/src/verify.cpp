#include "fsd/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>
#include <vector>

#include "fsd/checkpoint.hpp"
#include "fsd/fusion.hpp"
#include "fsd/loss.hpp"
#include "fsd/metrics.hpp"
#include "fsd/model.hpp"
#include "fsd/op_checks.hpp"
#include "fsd/render.hpp"
#include "fsd/scene.hpp"

namespace fsd {

namespace {

using Outcome = std::pair<bool, std::string>;

template <typename F>
CheckResult run_check(const std::string& name, F&& fn) {
    CheckResult r;
    r.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        auto [pass, detail] = fn();
        r.pass = pass;
        r.detail = std::move(detail);
    } catch (const std::exception& e) {
        r.pass = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// A scale op whose recorded adjoint uses the wrong factor. The gradient
// checker must flag it; if it does not, the checker itself is broken.
NodePtr<double> corrupted_scale(Tape<double>* tape, const NodePtr<double>& x) {
    auto out = make_node<double>(x->shape);
    for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = 2.0 * x->value[i];
    detail::finish(tape, "corrupted_scale", {x}, out, [x, out] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += 3.0 * out->grad[i];
    });
    return out;
}

Outcome check_negative_control() {
    Rng rng(99);
    auto x = opchecks::rand_node(rng, {3, 3});
    auto probe = opchecks::rand_node(rng, {3, 3}, false);
    auto f = [&](Tape<double>* tape) {
        return opchecks::probe_sum(tape, corrupted_scale(tape, x), probe);
    };
    auto r = grad_check<double>(f, {x}, opchecks::kEps, opchecks::kTol);
    if (r.pass) return {false, "a corrupted adjoint slipped past the checker"};
    return {true, "corrupted adjoint flagged, rel err " + fmt(r.max_rel_err)};
}

Outcome check_whole_net_gradient() {
    ModelConfig cfg;
    cfg.encoder.patch = 16;
    cfg.encoder.d_model = 16;
    cfg.encoder.num_heads = 4;
    cfg.encoder.num_blocks = 4;
    DepthNet<double> net(cfg, 32, 32, 4242);

    Rng rng(17);
    std::vector<NodePtr<double>> frames;
    for (int i = 0; i < 2; ++i) {
        auto f = make_node<double>({3, 32, 32});
        for (auto& v : f->value) v = rng.uniform(0.0, 1.0);
        frames.push_back(f);
    }
    auto gt = make_node<double>({32, 32});
    for (auto& v : gt->value) v = rng.uniform(0.1, 1.0);

    LossConfig loss_cfg;
    auto f = [&](Tape<double>* tape) {
        auto disp = net.forward(tape, frames);
        return total_loss(tape, disp, gt, loss_cfg);
    };
    auto r = grad_check<double>(f, net.params.all(), 1e-6, 1e-3, 2, 777);
    std::string detail = "sampled " + std::to_string(r.components_checked) +
                         " components, max rel err " + fmt(r.max_rel_err) + " at " +
                         r.worst_param;
    return {r.pass, detail};
}

Outcome check_coc_identity() {
    CameraModel cam;
    const double f2 = cam.focal_length * cam.focal_length;
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
        const double z = 0.6 + 0.45 * i;
        for (int j = 0; j < 10; ++j) {
            const double d = 0.55 + 0.44 * j;
            if (std::abs(z - d) < 1e-9) continue;
            const double c = coc_diameter(cam, d, z);
            const double want = f2 * (z > d ? 1.0 : -1.0);
            worst = std::max(worst, std::abs(c * cam.f_number * z - want));
        }
    }
    return {worst < 1e-12, "max identity residual " + fmt(worst)};
}

Outcome check_focus_grid() {
    const auto grid = default_focus_distances(0.5, 5.0, 10);
    if (grid.size() != 10) return {false, "wrong grid size"};
    if (grid.front() != 0.5 || grid.back() != 5.0) return {false, "endpoints drifted"};
    double worst = 0.0;
    for (size_t i = 0; i + 1 < grid.size(); ++i) {
        if (grid[i] >= grid[i + 1]) return {false, "grid is not ascending"};
        const double gap = 1.0 / grid[i] - 1.0 / grid[i + 1];
        worst = std::max(worst, std::abs(gap - (1.0 / 0.5 - 1.0 / 5.0) / 9.0));
    }
    for (double z : grid)
        if (double(float(z)) != z) return {false, "distance not exact in single precision"};
    // Distances are snapped to single precision, which perturbs the inverse
    // spacing by up to ~1e-7; anything beyond that means the grid drifted.
    return {worst < 1e-6, "max inverse-depth spacing error " + fmt(worst)};
}

Outcome check_render_oracle() {
    const int64_t n = 32;
    Scene scene;
    scene.h = n;
    scene.w = n;
    scene.z_min = 0.5;
    scene.z_max = 5.0;
    scene.image = make_image(n, n, 3);
    scene.depth.assign(size_t(n * n), 5.0f);
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x)
            for (int64_t ch = 0; ch < 3; ++ch)
                scene.image.at(y, x, ch) = float(((x / 4 + y / 4 + ch) % 2) ? 0.9 : 0.1);

    CameraModel cam;
    const double focus = 0.5;
    const double sigma = coc_sigma_px(cam, focus, 5.0);
    const ImageBuf got = render_frame(scene, cam, focus);

    const int64_t radius = std::max<int64_t>(1, int64_t(std::ceil(3.0 * sigma)));
    double worst = 0.0;
    for (int64_t y = 0; y < n; ++y) {
        for (int64_t x = 0; x < n; ++x) {
            double wsum = 0.0, acc[3] = {0, 0, 0};
            for (int64_t dy = -radius; dy <= radius; ++dy) {
                for (int64_t dx = -radius; dx <= radius; ++dx) {
                    const int64_t yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
                    const double w = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                    wsum += w;
                    for (int64_t ch = 0; ch < 3; ++ch)
                        acc[ch] += w * scene.image.at(yy, xx, ch);
                }
            }
            for (int64_t ch = 0; ch < 3; ++ch)
                worst = std::max(worst, std::abs(got.at(y, x, ch) - acc[ch] / wsum));
        }
    }
    return {worst < 1e-5, "max pixel deviation " + fmt(worst) + " at sigma " + fmt(sigma)};
}

Outcome check_loss_hand_values() {
    auto pred = make_node<double>({2, 2}, {1, 2, 3, 4});
    auto gt = make_node<double>({2, 2});
    LossConfig cfg;
    const double full = total_loss<double>(nullptr, pred, gt, cfg)->value[0];
    if (std::abs(full - 8.1) > 1e-12) return {false, "mse+grad gave " + fmt(full)};
    cfg.variant = LossVariant::kMae;
    const double mae = total_loss<double>(nullptr, pred, gt, cfg)->value[0];
    if (std::abs(mae - 2.5) > 1e-12) return {false, "mae gave " + fmt(mae)};
    return {true, "2x2 hand values reproduced"};
}

Outcome check_metric_hand_values() {
    const int64_t h = 8, w = 8;
    Rng rng(7);
    std::vector<double> gt(h * w), pred(h * w);
    for (size_t i = 0; i < gt.size(); ++i) {
        gt[i] = rng.uniform(0.5, 4.0);
        pred[i] = 1.3 * gt[i];
    }
    auto m = compute_metrics(pred, gt, {}, h, w);
    if (m.acc_1 != 0.0 || m.acc_2 != 100.0 || m.acc_3 != 100.0)
        return {false, "1.3x accuracies wrong"};
    if (std::abs(m.abs_rel - 0.3) > 1e-12) return {false, "absRel " + fmt(m.abs_rel)};
    if (m.bump > 5.0 + 1e-9 || m.bump < 0.0) return {false, "bump out of range"};
    if (metrics_csv_header() != "rmse,log_rmse,abs_rel,sqr_rel,bump,acc_1,acc_2,acc_3")
        return {false, "csv header drifted"};
    return {true, "ratio metrics and csv layout hold"};
}

Outcome check_fusion_mean_reduction() {
    const int64_t d = 16, k = 9;
    FusionConfig cfg;
    cfg.token_threshold = std::numeric_limits<double>::infinity();
    ParamStore<double> ps;
    Rng rng(31);
    make_fusion_params(ps, cfg, d, rng);
    std::vector<TokenSet<double>> frames;
    for (int i = 0; i < 3; ++i)
        frames.push_back(make_token_set<double>(opchecks::rand_node(rng, {k, d}), 3, 3));
    auto out = fuse_stack<double>(nullptr, frames, ps, cfg, d);
    double worst = 0.0;
    for (int64_t i = 0; i < k * d; ++i) {
        const double mean = (frames[0].tokens->value[i] + frames[1].tokens->value[i] +
                             frames[2].tokens->value[i]) /
                            3.0;
        worst = std::max(worst, std::abs(out.tokens->value[i] - mean));
    }
    return {worst <= 1e-6, "max deviation from the running mean " + fmt(worst)};
}

Outcome check_fusion_threshold_gate() {
    const int64_t d = 16;
    FusionConfig cfg;
    cfg.token_threshold = 0.0;
    ParamStore<double> ps;
    Rng rng(37);
    make_fusion_params(ps, cfg, d, rng);
    auto st = init_fusion_state<double>(4, d, cfg);
    for (int i = 0; i < 3; ++i) {
        auto frame = make_token_set<double>(opchecks::rand_node(rng, {4, d}), 2, 2);
        for (double nrm : frame.norms)
            if (!(nrm > 0.0)) return {false, "degenerate zero-norm token in fixture"};
        fuse_step<double>(nullptr, st, frame, ps, cfg);
    }
    for (double v : st.cached_avg->value)
        if (v != 0.0) return {false, "mean cache moved despite full activation"};
    for (int64_t c : st.counts)
        if (c != 0) return {false, "non-activation count moved"};
    return {true, "caches untouched over 3 fully-activated frames"};
}

Outcome check_decoder_positivity() {
    DecoderConfig cfg;
    cfg.widths = {8, 4};
    ParamStore<double> ps;
    Rng rng(41);
    make_decoder_params(ps, cfg, 8, 4, 1, rng);
    auto fused = make_token_set<double>(opchecks::rand_node(rng, {4, 8}), 2, 2);
    std::vector<TokenSet<double>> skips = {
        make_token_set<double>(opchecks::rand_node(rng, {4, 8}), 2, 2)};
    auto disp = decode<double>(nullptr, fused, skips, ps, cfg, 4);
    if (disp->shape != Shape{8, 8}) return {false, "wrong output extent"};
    double lo = std::numeric_limits<double>::infinity();
    for (double v : disp->value) lo = std::min(lo, v);
    return {lo > 1e-3, "minimum disparity " + fmt(lo)};
}

Outcome check_checkpoint_roundtrip() {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "fsd_verify_ckpt";
    ParamStore<float> ps;
    Rng rng(43);
    ps.create_uniform("a.w", {3, 4}, rng, 4);
    ps.create_uniform("b.w", {2, 2}, rng, 2);
    Adam<float> opt(ps.all(), 1e-3);
    for (const auto& p : ps.all()) {
        p->ensure_grad();
        for (auto& g : p->grad) g = float(rng.uniform(-1.0, 1.0));
    }
    opt.step();

    Checkpoint out = make_checkpoint(ps, &opt);
    out.extra["global_step"] = 7;
    save_checkpoint(dir.string(), out);

    ParamStore<float> ps2;
    Rng rng2(99);
    ps2.create_uniform("a.w", {3, 4}, rng2, 4);
    ps2.create_uniform("b.w", {2, 2}, rng2, 2);
    Adam<float> opt2(ps2.all(), 1e-3);
    Checkpoint in = load_checkpoint(dir.string());
    restore_checkpoint(in, ps2, &opt2);
    fs::remove_all(dir);

    if (in.extra.value("global_step", int64_t(0)) != 7) return {false, "extra field lost"};
    if (opt2.t() != opt.t()) return {false, "step counter lost"};
    auto same = [](const std::vector<float>& a, const std::vector<float>& b) {
        return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
    };
    const auto &a1 = ps.all(), &a2 = ps2.all();
    for (size_t i = 0; i < a1.size(); ++i)
        if (!same(a1[i]->value, a2[i]->value)) return {false, "values differ after reload"};
    for (size_t i = 0; i < a1.size(); ++i)
        if (!same(opt.m()[i], opt2.m()[i]) || !same(opt.v()[i], opt2.v()[i]))
            return {false, "moments differ after reload"};
    return {true, "bit-exact round trip incl. optimizer state"};
}

} // namespace

std::vector<CheckResult> run_verification(bool quick) {
    std::vector<CheckResult> results;
    for (auto& check : opchecks::all_op_checks()) {
        results.push_back(run_check("tensor-core/op/" + check.name, [&]() -> Outcome {
            auto r = check.run();
            return {r.pass, "max rel err " + fmt(r.max_rel_err) + " over " +
                                std::to_string(r.components_checked) + " components"};
        }));
    }
    results.push_back(run_check("tensor-core/negative-control", check_negative_control));
    if (!quick)
        results.push_back(run_check("tensor-core/whole-net-gradient", check_whole_net_gradient));
    results.push_back(run_check("optics-sim/coc-identity", check_coc_identity));
    results.push_back(run_check("optics-sim/focus-grid", check_focus_grid));
    results.push_back(run_check("optics-sim/render-oracle", check_render_oracle));
    results.push_back(run_check("loss-metrics/loss-hand-values", check_loss_hand_values));
    results.push_back(run_check("loss-metrics/metric-hand-values", check_metric_hand_values));
    results.push_back(run_check("stack-fusion/mean-reduction", check_fusion_mean_reduction));
    results.push_back(run_check("stack-fusion/threshold-gate", check_fusion_threshold_gate));
    results.push_back(run_check("depth-decoder/positivity", check_decoder_positivity));
    results.push_back(run_check("harness-cli/checkpoint-roundtrip", check_checkpoint_roundtrip));
    return results;
}

int report_verification(const std::vector<CheckResult>& results) {
    int failures = 0;
    for (const auto& r : results) {
        std::printf("[%s] %-36s (%7.3f s)  %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.seconds, r.detail.c_str());
        failures += r.pass ? 0 : 1;
    }
    std::printf("%zu checks, %d failed\n", results.size(), failures);
    return failures;
}

} // namespace fsd
