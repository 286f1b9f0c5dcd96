// Convolutional decoder: unfolds fused tokens back onto the patch grid and
// doubles resolution per stage with transpose convolutions, mixing in
// projected skip tokens, until the full image extent is reached. The head
// emits a strictly positive disparity map.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fsd/encoder.hpp"
#include "fsd/ops.hpp"
#include "fsd/optics.hpp"
#include "fsd/params.hpp"

namespace fsd {

struct DecoderConfig {
    std::vector<int64_t> widths = {64, 32, 16, 8};
    double disparity_floor = 1e-3;

    int64_t num_stages() const { return int64_t(widths.size()); }

    void validate(int64_t patch) const {
        int64_t stages = 0;
        for (int64_t p = patch; p > 1; p >>= 1) ++stages;
        if ((int64_t(1) << stages) != patch)
            throw std::invalid_argument("DecoderConfig: patch must be a power of two");
        if (int64_t(widths.size()) != stages)
            throw std::invalid_argument("DecoderConfig: need exactly log2(patch)=" +
                                        std::to_string(stages) + " widths, got " +
                                        std::to_string(widths.size()));
        for (size_t i = 0; i < widths.size(); ++i) {
            if (widths[i] < 1)
                throw std::invalid_argument("DecoderConfig: widths must be positive");
            if (i > 0 && widths[i] >= widths[i - 1])
                throw std::invalid_argument("DecoderConfig: widths must strictly decrease");
        }
        if (!(disparity_floor > 0.0))
            throw std::invalid_argument("DecoderConfig: disparity_floor must be positive");
    }
};

// Registers decoder parameters under "dec.". Stage s maps its input channel
// count through a 3x3 conv, a 2x stride-2 transpose conv down to widths[s],
// an optional skip merge, and a trailing 3x3 conv.
template <typename T>
void make_decoder_params(ParamStore<T>& ps, const DecoderConfig& cfg, int64_t d_model,
                         int64_t patch, int64_t num_skips, Rng& rng) {
    cfg.validate(patch);
    int64_t ch = d_model;
    for (int64_t s = 0; s < cfg.num_stages(); ++s) {
        const std::string base = "dec.s" + std::to_string(s);
        const int64_t w = cfg.widths[size_t(s)];
        ps.create_uniform(base + ".pre.w", {ch, ch, 3, 3}, rng, ch * 9);
        ps.create_const(base + ".pre.b", {ch}, T(0));
        ps.create_uniform(base + ".up.w", {ch, w, 2, 2}, rng, ch * 4);
        ps.create_const(base + ".up.b", {w}, T(0));
        int64_t post_in = w;
        if (s < num_skips) {
            ps.create_uniform(base + ".skip.w", {w, d_model, 1, 1}, rng, d_model);
            ps.create_const(base + ".skip.b", {w}, T(0));
            post_in = 2 * w;
        }
        ps.create_uniform(base + ".post.w", {w, post_in, 3, 3}, rng, post_in * 9);
        ps.create_const(base + ".post.b", {w}, T(0));
        ch = w;
    }
    ps.create_uniform("dec.out.w", {1, ch, 1, 1}, rng, ch);
    ps.create_const("dec.out.b", {1}, T(0));
}

// Decodes fused tokens (plus skip token sets, one per skip stage) into an
// [H x W] disparity map, H = grid_h * patch. Softplus plus a small floor
// keeps every output strictly positive.
template <typename T>
NodePtr<T> decode(Tape<T>* tape, const TokenSet<T>& fused,
                  const std::vector<TokenSet<T>>& skips, ParamStore<T>& ps,
                  const DecoderConfig& cfg, int64_t patch) {
    cfg.validate(patch);
    auto x = tokens_to_map(tape, fused.tokens, fused.grid_h, fused.grid_w);
    for (int64_t s = 0; s < cfg.num_stages(); ++s) {
        const std::string base = "dec.s" + std::to_string(s);
        x = gelu(tape, conv2d(tape, x, ps.get(base + ".pre.w"), ps.get(base + ".pre.b"), 1, 1));
        x = conv_transpose2d(tape, x, ps.get(base + ".up.w"), ps.get(base + ".up.b"), 2, 0);
        if (size_t(s) < skips.size()) {
            const auto& sk = skips[size_t(s)];
            detail::require(sk.tokens != nullptr, "decode: skip " + std::to_string(s) +
                                                      " is empty");
            auto m = tokens_to_map(tape, sk.tokens, sk.grid_h, sk.grid_w);
            m = conv2d(tape, m, ps.get(base + ".skip.w"), ps.get(base + ".skip.b"), 1, 0);
            m = resize_nearest(tape, m, x->shape[1], x->shape[2]);
            x = concat_ch(tape, {x, m});
        }
        x = gelu(tape,
                 conv2d(tape, x, ps.get(base + ".post.w"), ps.get(base + ".post.b"), 1, 1));
    }
    auto disparity = conv2d(tape, x, ps.get("dec.out.w"), ps.get("dec.out.b"), 1, 0);
    disparity = add_scalar(tape, softplus(tape, disparity), cfg.disparity_floor);
    return reshape(tape, disparity, {disparity->shape[1], disparity->shape[2]});
}

// Converts a predicted disparity map to metric depth, z = b*f / disparity.
template <typename T>
std::vector<double> predict_depth(const CameraModel& cam, const NodePtr<T>& disparity) {
    std::vector<double> depth(disparity->value.size());
    for (size_t i = 0; i < depth.size(); ++i)
        depth[i] = disparity_to_depth(cam, double(disparity->value[i]));
    return depth;
}

} // namespace fsd
