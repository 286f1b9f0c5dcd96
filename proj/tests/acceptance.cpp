// Acceptance gate: one line per criterion, nonzero exit when any fails.
// Every tolerance and protocol constant is pinned here, not in flags.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fsd/commands.hpp"
#include "fsd/dataset.hpp"
#include "fsd/metrics.hpp"
#include "fsd/op_checks.hpp"
#include "fsd/render.hpp"
#include "fsd/scene.hpp"

using namespace fsd;
namespace fs = std::filesystem;

namespace {

using Outcome = std::pair<bool, std::string>;

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

fs::path work_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "fsd_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Mean disparity-space RMSE over a set of stacks, using the leading k frames.
double mean_rmse(DepthNet<float>& net, const std::vector<StackSample>& samples, int64_t k) {
    double sum = 0;
    for (const auto& s : samples) {
        const auto pred = infer_disparity(net, s, k);
        const auto gt = gt_disparity(s.stack.camera, s.depth);
        const std::vector<double> pred_d(pred.begin(), pred.end());
        const std::vector<double> gt_d(gt.begin(), gt.end());
        sum += compute_metrics(pred_d, gt_d, {}, s.h, s.w).rmse;
    }
    return sum / double(samples.size());
}

std::vector<StackSample> build_dataset(const RunConfig& cfg, const char* leaf, int64_t count) {
    const auto dir = (work_dir() / leaf).string();
    generate_dataset(cfg, dir, count);
    std::vector<StackSample> samples;
    for (const auto& d : list_stacks(dir)) samples.push_back(load_stack(d));
    return samples;
}

// --- criterion 1 -----------------------------------------------------------
// Every catalogued op passes a central-difference check at 1e-4, and a full
// forward/backward through the assembled network stays under 1e-3 on a
// sampled subset, all within 300 seconds.

Outcome c1_gradient_checks() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_op = 0;
    std::string worst_name;
    for (auto& check : opchecks::all_op_checks()) {
        const auto r = check.run();
        if (r.max_rel_err > worst_op) {
            worst_op = r.max_rel_err;
            worst_name = check.name;
        }
        if (!r.pass) return {false, "op " + check.name + " rel err " + fmt(r.max_rel_err)};
    }

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
        return total_loss(tape, net.forward(tape, frames), gt, loss_cfg);
    };
    const auto r = grad_check<double>(f, net.params.all(), 1e-6, 1e-3, 2, 777);
    const double secs = elapsed_since(t0);
    if (!r.pass)
        return {false, "whole-net rel err " + fmt(r.max_rel_err) + " at " + r.worst_param};
    if (secs >= 300.0) return {false, "took " + fmt(secs) + " s, budget 300"};
    return {true, "ops worst " + fmt(worst_op) + " (" + worst_name + "), net worst " +
                      fmt(r.max_rel_err) + " over " + std::to_string(r.components_checked) +
                      " sampled components"};
}

// --- criterion 2 -----------------------------------------------------------
// The metric suite agrees with a naive re-derivation to 1e-9 across 100
// random cases, accuracies nest, and the bumpiness term respects its cap.

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
                int64_t xc = std::min(std::max(x, int64_t(1)), w - 2);
                dxx[i] = at(y, xc + 1) + at(y, xc - 1) - 2.0 * at(y, xc);
            }
            if (h >= 3) {
                int64_t yc = std::min(std::max(y, int64_t(1)), h - 2);
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
        const double hn = std::sqrt(dxx[i] * dxx[i] + 2.0 * dxy[i] * dxy[i] + dyy[i] * dyy[i]);
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

Outcome c2_metric_oracles() {
    double worst = 0;
    for (uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        const int64_t h = 16, w = 16;
        std::vector<double> gt(h * w), pred(h * w);
        for (size_t i = 0; i < gt.size(); ++i) {
            gt[i] = rng.uniform(0.2, 5.0);
            pred[i] = gt[i] * rng.uniform(0.5, 2.0);
        }
        std::vector<uint8_t> mask;
        if (seed % 2 == 0) {
            mask.assign(gt.size(), 0);
            for (auto& b : mask) b = rng.uniform(0.0, 1.0) < 0.6 ? 1 : 0;
            mask[0] = 1;
        }
        const auto got = compute_metrics(pred, gt, mask, h, w);
        const auto want = oracle_metrics(pred, gt, mask, h, w);
        for (double d : {got.rmse - want.rmse, got.log_rmse - want.log_rmse,
                         got.abs_rel - want.abs_rel, got.sqr_rel - want.sqr_rel,
                         got.bump - want.bump, got.acc_1 - want.acc_1, got.acc_2 - want.acc_2,
                         got.acc_3 - want.acc_3})
            worst = std::max(worst, std::abs(d));
        if (worst > 1e-9) return {false, "oracle disagreement " + fmt(worst) + " at seed " +
                                             std::to_string(seed)};
        if (!(got.acc_1 <= got.acc_2 && got.acc_2 <= got.acc_3))
            return {false, "accuracy nesting violated at seed " + std::to_string(seed)};
        if (got.bump < 0.0 || got.bump > 5.0 + 1e-9)
            return {false, "bump escaped its cap at seed " + std::to_string(seed)};
    }

    Rng rng(7);
    std::vector<double> gt(64), pred(64);
    for (size_t i = 0; i < gt.size(); ++i) {
        gt[i] = rng.uniform(0.5, 4.0);
        pred[i] = 1.3 * gt[i];
    }
    const auto m = compute_metrics(pred, gt, {}, 8, 8);
    if (m.acc_1 != 0.0 || m.acc_2 != 100.0 || m.acc_3 != 100.0)
        return {false, "1.3x prediction accuracies wrong"};
    if (std::abs(m.abs_rel - 0.3) > 1e-12 || std::abs(m.log_rmse - std::log(1.3)) > 1e-12)
        return {false, "1.3x prediction ratios wrong"};
    return {true, "100 random cases within " + fmt(worst) + ", nesting and cap hold"};
}

// --- criterion 3 -----------------------------------------------------------
// Blur-circle geometry satisfies its closed-form identity to 1e-12 on a
// 10x10 grid, and a rendered frame matches a direct renormalized-Gaussian
// reference to 1e-5 per pixel.

Outcome c3_optics_and_render() {
    CameraModel cam;
    const double f2 = cam.focal_length * cam.focal_length;
    double worst_id = 0;
    for (int i = 0; i < 10; ++i) {
        const double z = 0.6 + 0.45 * i;
        for (int j = 0; j < 10; ++j) {
            const double d = 0.55 + 0.44 * j;
            const double c = coc_diameter(cam, d, z);
            const double want = f2 * (z > d ? 1.0 : -1.0);
            worst_id = std::max(worst_id, std::abs(c * cam.f_number * z - want));
        }
    }
    if (worst_id > 1e-12) return {false, "identity residual " + fmt(worst_id)};

    const int64_t n = 32;
    Scene scene;
    scene.h = n;
    scene.w = n;
    scene.image = make_image(n, n, 3);
    scene.depth.assign(size_t(n * n), 5.0f);
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x)
            for (int64_t ch = 0; ch < 3; ++ch)
                scene.image.at(y, x, ch) = float(((x / 4 + y / 4 + ch) % 2) ? 0.9 : 0.1);
    const double focus = 0.5;
    const double sigma = coc_sigma_px(cam, focus, 5.0);
    const ImageBuf got = render_frame(scene, cam, focus);
    const int64_t radius = std::max<int64_t>(1, int64_t(std::ceil(3.0 * sigma)));
    double worst_px = 0;
    for (int64_t y = 0; y < n; ++y) {
        for (int64_t x = 0; x < n; ++x) {
            double wsum = 0, acc[3] = {0, 0, 0};
            for (int64_t dy = -radius; dy <= radius; ++dy)
                for (int64_t dx = -radius; dx <= radius; ++dx) {
                    const int64_t yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
                    const double wgt = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                    wsum += wgt;
                    for (int64_t ch = 0; ch < 3; ++ch) acc[ch] += wgt * scene.image.at(yy, xx, ch);
                }
            for (int64_t ch = 0; ch < 3; ++ch)
                worst_px = std::max(worst_px, std::abs(got.at(y, x, ch) - acc[ch] / wsum));
        }
    }
    if (worst_px > 1e-5) return {false, "render deviates " + fmt(worst_px)};
    return {true, "identity " + fmt(worst_id) + ", render " + fmt(worst_px)};
}

// --- criterion 4 -----------------------------------------------------------
// A model trained on full stacks must not get worse when given the full
// stack at evaluation: mean val RMSE at k=10 stays at or below k=2, and the
// whole protocol finishes inside 20 minutes.

Outcome c4_frame_budget_sweep() {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg;
    cfg.image_size = 32;
    cfg.stack_frames = 10;
    cfg.seed = 1234;
    const auto train_set = build_dataset(cfg, "sweep_train", 8);
    RunConfig val_cfg = cfg;
    val_cfg.seed = 5678;
    const auto val_set = build_dataset(val_cfg, "sweep_val", 16);

    DepthNet<float> net(cfg.model_config(), 32, 32, cfg.seed);
    TrainOptions topt;
    topt.epochs = 50;
    topt.accum = 1;
    topt.lr = 3e-4;
    topt.seed = cfg.seed;
    train_model(net, train_set, cfg.loss, topt);

    std::ostringstream sweep;
    double rmse2 = 0, rmse10 = 0;
    for (int64_t k : {2, 4, 6, 8, 10}) {
        const double r = mean_rmse(net, val_set, k);
        if (k == 2) rmse2 = r;
        if (k == 10) rmse10 = r;
        sweep << " k=" << k << ":" << fmt(r);
    }
    const double secs = elapsed_since(t0);
    if (secs >= 1200.0) return {false, "took " + fmt(secs) + " s, budget 1200"};
    if (!(rmse10 <= rmse2))
        return {false, "val RMSE grew with frames:" + sweep.str()};
    return {true, "val RMSE" + sweep.str()};
}

// --- criteria 5 and 6 ------------------------------------------------------
// Both run the same 4-stack 64x64 overfit protocol: one stack per update,
// Adam 1e-4. The smoke test (6) reads the first kSmokeSteps losses of the
// full-model run; the ablation comparison (5) trains both variants for the
// same kAblationSteps budget and compares training RMSE. Since training is
// deterministic and max_steps only truncates it, the long run's prefix is
// bit-identical to a short run, which the replay in (6) re-verifies.

constexpr int64_t kSmokeSteps = 500;
constexpr int64_t kAblationSteps = 1000;
constexpr double kOverfitLr = 1e-4;

struct OverfitRuns {
    std::vector<StackSample> data;
    RunConfig cfg;
    std::vector<float> losses_a;
    double rmse_full = 0;
    double rmse_no_lstm = 0;
    std::string error;
};

TrainOptions overfit_options(uint64_t seed, int64_t steps) {
    TrainOptions topt;
    topt.epochs = 1 << 20;
    topt.max_steps = steps;
    topt.accum = 1;
    topt.lr = kOverfitLr;
    topt.seed = seed;
    return topt;
}

const OverfitRuns& overfit_runs() {
    static const OverfitRuns runs = [] {
        OverfitRuns r;
        r.cfg.image_size = 64;
        r.cfg.stack_frames = 10;
        r.cfg.seed = 1234;
        r.cfg.lr = kOverfitLr;
        try {
            r.data = build_dataset(r.cfg, "overfit", 4);
            const TrainOptions topt = overfit_options(r.cfg.seed, kAblationSteps);

            DepthNet<float> full(r.cfg.model_config(), 64, 64, r.cfg.seed);
            r.losses_a = train_model(full, r.data, r.cfg.loss, topt).sample_losses;
            r.rmse_full = mean_rmse(full, r.data, 10);

            RunConfig ablated = r.cfg;
            ablated.no_lstm = true;
            DepthNet<float> averaged(ablated.model_config(), 64, 64, ablated.seed);
            train_model(averaged, r.data, ablated.loss, topt);
            r.rmse_no_lstm = mean_rmse(averaged, r.data, 10);
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        return r;
    }();
    return runs;
}

Outcome c5_fusion_beats_averaging() {
    const auto& runs = overfit_runs();
    if (!runs.error.empty()) return {false, "training aborted: " + runs.error};
    const std::string detail = "train RMSE full " + fmt(runs.rmse_full) + " vs averaging " +
                               fmt(runs.rmse_no_lstm) + " after " +
                               std::to_string(kAblationSteps) + " updates each";
    return {runs.rmse_full < runs.rmse_no_lstm, detail};
}

Outcome c6_overfit_determinism() {
    const auto& runs = overfit_runs();
    if (!runs.error.empty()) return {false, "training aborted: " + runs.error};
    const auto& losses = runs.losses_a;
    if (int64_t(losses.size()) < kSmokeSteps) return {false, "run ended before the smoke budget"};
    for (int64_t i = 0; i < kSmokeSteps; ++i)
        if (!std::isfinite(losses[size_t(i)]))
            return {false, "non-finite loss escaped the training guard"};
    double first = 0, last = 0;
    for (int64_t i = 0; i < 4; ++i) {
        first += double(losses[size_t(i)]) / 4.0;
        last += double(losses[size_t(kSmokeSteps - 4 + i)]) / 4.0;
    }

    DepthNet<float> replay(runs.cfg.model_config(), 64, 64, runs.cfg.seed);
    const auto losses_b =
        train_model(replay, runs.data, runs.cfg.loss, overfit_options(runs.cfg.seed, kSmokeSteps))
            .sample_losses;
    if (int64_t(losses_b.size()) != kSmokeSteps)
        return {false, "replay produced " + std::to_string(losses_b.size()) + " losses"};
    for (int64_t i = 0; i < kSmokeSteps; ++i)
        if (losses_b[size_t(i)] != losses[size_t(i)])
            return {false, "replay diverged from the first run at step " + std::to_string(i)};

    if (!(last <= 0.1 * first))
        return {false, "replay bit-identical, but loss fell only from " + fmt(first) + " to " +
                           fmt(last) + " (ratio " + fmt(last / first) + ", need 0.1) in " +
                           std::to_string(kSmokeSteps) + " steps at lr " + fmt(kOverfitLr)};
    return {true, "loss " + fmt(first) + " -> " + fmt(last) + ", replay bit-identical"};
}

// --- criterion 7 -----------------------------------------------------------
// Full-scale geometry: a 384x384 frame tokenizes to [576 x 768] and a whole
// forward pass completes with finite output.

Outcome c7_full_scale_forward() {
    ModelConfig cfg;
    cfg.encoder.d_model = 768;
    cfg.encoder.num_heads = 4;
    cfg.encoder.num_blocks = 2;
    cfg.encoder.skip_block_indices = {1, 2};
    DepthNet<float> net(cfg, 384, 384, 1);

    Rng rng(3);
    auto frame = make_node<float>({3, 384, 384});
    for (auto& v : frame->value) v = float(rng.uniform(0.0, 1.0));

    const auto enc = encode_frame<float>(nullptr, frame, net.params, cfg.encoder, false);
    if (enc.tokens.tokens->shape != Shape{576, 768})
        return {false, "token matrix is " + shape_str(enc.tokens.tokens->shape)};

    const auto disp = net.forward(nullptr, {frame});
    if (disp->shape != Shape{384, 384})
        return {false, "output extent " + shape_str(disp->shape)};
    for (float v : disp->value)
        if (!std::isfinite(v)) return {false, "non-finite disparity"};
    return {true, "tokens [576 x 768], forward produced a finite 384x384 map"};
}

// --- criterion 8 -----------------------------------------------------------
// Fusion degenerations: an infinite threshold reduces to the running mean
// within 1e-6, and a zero threshold leaves the mean caches at initialization.

Outcome c8_fusion_reductions() {
    const int64_t k = 6, d = 16;
    FusionConfig cfg;
    cfg.token_threshold = std::numeric_limits<double>::infinity();
    ParamStore<double> ps;
    Rng rng(31);
    make_fusion_params(ps, cfg, d, rng);
    std::vector<TokenSet<double>> frames;
    for (int i = 0; i < 3; ++i)
        frames.push_back(make_token_set<double>(opchecks::rand_node(rng, {k, d}), 2, 3));
    const auto out = fuse_stack<double>(nullptr, frames, ps, cfg, d);
    double worst = 0;
    for (int64_t i = 0; i < k * d; ++i) {
        const double mean = (frames[0].tokens->value[i] + frames[1].tokens->value[i] +
                             frames[2].tokens->value[i]) /
                            3.0;
        worst = std::max(worst, std::abs(out.tokens->value[i] - mean));
    }
    if (worst > 1e-6) return {false, "mean deviation " + fmt(worst)};

    FusionConfig gate = cfg;
    gate.token_threshold = 0.0;
    auto st = init_fusion_state<double>(k, d, gate);
    for (int i = 0; i < 3; ++i) {
        auto frame = make_token_set<double>(opchecks::rand_node(rng, {k, d}), 2, 3);
        fuse_step<double>(nullptr, st, frame, ps, gate);
    }
    for (double v : st.cached_avg->value)
        if (v != 0.0) return {false, "mean cache moved with every token activated"};
    for (int64_t c : st.counts)
        if (c != 0) return {false, "non-activation count moved"};
    return {true, "mean reduction within " + fmt(worst) + ", zero-threshold caches untouched"};
}

struct Criterion {
    const char* name;
    Outcome (*run)();
};

} // namespace

int main() {
    const Criterion criteria[] = {
        {"1 gradient-checks", c1_gradient_checks},
        {"2 metric-oracles", c2_metric_oracles},
        {"3 optics-and-render", c3_optics_and_render},
        {"4 frame-budget-sweep", c4_frame_budget_sweep},
        {"5 fusion-beats-averaging", c5_fusion_beats_averaging},
        {"6 overfit-determinism", c6_overfit_determinism},
        {"7 full-scale-forward", c7_full_scale_forward},
        {"8 fusion-reductions", c8_fusion_reductions},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        std::fprintf(stderr, "running %s...\n", c.name);
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        std::printf("[%s] %-28s (%8.1f s)  %s\n", out.first ? "PASS" : "FAIL", c.name,
                    elapsed_since(t0), out.second.c_str());
        std::fflush(stdout);
        failures += out.first ? 0 : 1;
    }
    std::printf("%d of 8 criteria passed\n", 8 - failures);
    return failures == 0 ? 0 : 1;
}
