// Recurrent fusion across a focal stack. Each frame's tokens are split by
// vector norm into an activated group, advanced through a stacked LSTM whose
// weights are shared across all grid positions, and a non-activated group
// folded into a per-position running mean.
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fsd/encoder.hpp"
#include "fsd/ops.hpp"
#include "fsd/params.hpp"

namespace fsd {

struct FusionConfig {
    double token_threshold = 0.4;
    int64_t d_hidden = 0; // 0 means match d_model
    int64_t lstm_layers = 2;
    bool normalize_before_threshold = true;

    int64_t hidden(int64_t d_model) const { return d_hidden > 0 ? d_hidden : d_model; }

    void validate() const {
        if (lstm_layers < 1)
            throw std::invalid_argument("FusionConfig: lstm_layers must be positive");
        if (d_hidden < 0)
            throw std::invalid_argument("FusionConfig: d_hidden must be non-negative");
        if (std::isnan(token_threshold) || token_threshold < 0.0)
            throw std::invalid_argument("FusionConfig: token_threshold must be >= 0");
    }
};

// Recurrent state carried across the frames of one stack. Every per-position
// array has exactly k rows, k the token count of the frame grid.
template <typename T>
struct FusionState {
    std::vector<NodePtr<T>> h; // one [k x d_hidden] per layer
    std::vector<NodePtr<T>> c; // one [k x d_hidden] per layer
    NodePtr<T> cached_avg;     // [k x d_model] running means of non-activated tokens
    std::vector<int64_t> counts; // frames in which each position was non-activated
    int64_t frames_seen = 0;
};

template <typename T>
FusionState<T> init_fusion_state(int64_t k, int64_t d_model, const FusionConfig& cfg) {
    cfg.validate();
    const int64_t dh = cfg.hidden(d_model);
    FusionState<T> st;
    st.h.reserve(size_t(cfg.lstm_layers));
    st.c.reserve(size_t(cfg.lstm_layers));
    for (int64_t l = 0; l < cfg.lstm_layers; ++l) {
        st.h.push_back(make_node<T>({k, dh}));
        st.c.push_back(make_node<T>({k, dh}));
    }
    st.cached_avg = make_node<T>({k, d_model});
    st.counts.assign(size_t(k), 0);
    return st;
}

// Registers fusion parameters under "fus.". The LSTM weights are shared
// across grid positions, so the total count does not depend on k. An output
// projection exists only when d_hidden differs from d_model.
template <typename T>
void make_fusion_params(ParamStore<T>& ps, const FusionConfig& cfg, int64_t d_model, Rng& rng) {
    cfg.validate();
    const int64_t dh = cfg.hidden(d_model);
    for (int64_t l = 0; l < cfg.lstm_layers; ++l) {
        const std::string base = "fus.lstm" + std::to_string(l);
        const int64_t d_in = (l == 0) ? d_model : dh;
        ps.create_uniform(base + ".wx", {d_in, 4 * dh}, rng, d_in);
        ps.create_uniform(base + ".wh", {dh, 4 * dh}, rng, dh);
        ps.create_const(base + ".b", {4 * dh}, T(0));
    }
    if (dh != d_model) {
        ps.create_uniform("fus.proj.w", {dh, d_model}, rng, dh);
        ps.create_const("fus.proj.b", {d_model}, T(0));
    }
}

// Indices (ascending) of tokens whose norm clears the threshold strictly.
// With normalize_before_threshold the cached L2 norm is scaled by
// 1/sqrt(d_model) first. An infinite threshold deactivates every token.
template <typename T>
std::vector<int64_t> group_tokens(const TokenSet<T>& ts, const FusionConfig& cfg) {
    std::vector<int64_t> activated;
    if (std::isinf(cfg.token_threshold)) return activated;
    const double denom =
        cfg.normalize_before_threshold ? std::sqrt(double(ts.tokens->shape[1])) : 1.0;
    for (size_t i = 0; i < ts.norms.size(); ++i) {
        if (ts.norms[i] / denom > cfg.token_threshold) activated.push_back(int64_t(i));
    }
    return activated;
}

// Consumes one frame's tokens, updates the state in place, and returns the
// fused tokens for this frame: LSTM outputs at activated positions, updated
// running means elsewhere.
template <typename T>
TokenSet<T> fuse_step(Tape<T>* tape, FusionState<T>& st, const TokenSet<T>& frame,
                      ParamStore<T>& ps, const FusionConfig& cfg) {
    cfg.validate();
    const int64_t k = frame.tokens->shape[0];
    const int64_t d_model = frame.tokens->shape[1];
    detail::require(st.cached_avg->shape[0] == k && st.cached_avg->shape[1] == d_model,
                    "fuse_step: state built for " + shape_str(st.cached_avg->shape) +
                        ", frame is " + shape_str(frame.tokens->shape));

    const std::vector<int64_t> activated = group_tokens(frame, cfg);
    std::vector<int64_t> rest;
    rest.reserve(size_t(k) - activated.size());
    {
        size_t a = 0;
        for (int64_t i = 0; i < k; ++i) {
            if (a < activated.size() && activated[a] == i) {
                ++a;
            } else {
                rest.push_back(i);
            }
        }
    }

    if (!rest.empty()) {
        std::vector<double> inv_counts(rest.size());
        for (size_t i = 0; i < rest.size(); ++i) {
            int64_t& cnt = st.counts[size_t(rest[i])];
            ++cnt;
            inv_counts[i] = 1.0 / double(cnt);
        }
        auto tn = gather_rows(tape, frame.tokens, rest);
        auto old = gather_rows(tape, st.cached_avg, rest);
        auto upd = add(tape, old, scale_rows(tape, sub(tape, tn, old), inv_counts));
        st.cached_avg = row_replace(tape, st.cached_avg, upd, rest);
    }

    auto out = st.cached_avg;
    if (!activated.empty()) {
        auto x = gather_rows(tape, frame.tokens, activated);
        for (int64_t l = 0; l < cfg.lstm_layers; ++l) {
            const std::string base = "fus.lstm" + std::to_string(l);
            LstmCellParams<T> p{ps.get(base + ".wx"), ps.get(base + ".wh"),
                                ps.get(base + ".b")};
            auto hl = gather_rows(tape, st.h[size_t(l)], activated);
            auto cl = gather_rows(tape, st.c[size_t(l)], activated);
            auto step = lstm_cell(tape, x, hl, cl, p);
            st.h[size_t(l)] = row_replace(tape, st.h[size_t(l)], step.h, activated);
            st.c[size_t(l)] = row_replace(tape, st.c[size_t(l)], step.c, activated);
            x = step.h;
        }
        if (ps.contains("fus.proj.w"))
            x = add_rowvec(tape, matmul(tape, x, ps.get("fus.proj.w")), ps.get("fus.proj.b"));
        out = row_replace(tape, out, x, activated);
    }

    ++st.frames_seen;
    return make_token_set(out, frame.grid_h, frame.grid_w);
}

// Folds a whole stack of per-frame token sets, front to back, and returns the
// fused tokens after the last frame.
template <typename T>
TokenSet<T> fuse_stack(Tape<T>* tape, const std::vector<TokenSet<T>>& frames, ParamStore<T>& ps,
                       const FusionConfig& cfg, int64_t d_model) {
    detail::require(!frames.empty(), "fuse_stack: need at least one frame");
    auto st = init_fusion_state<T>(frames[0].tokens->shape[0], d_model, cfg);
    TokenSet<T> out;
    for (const auto& f : frames) out = fuse_step(tape, st, f, ps, cfg);
    return out;
}

} // namespace fsd
