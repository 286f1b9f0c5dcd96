// Per-frame token encoder: a multi-scale convolutional front end, patch
// embedding with an additive whole-map token, and a pre-norm transformer
// stack that exposes intermediate token sets for decoder skips.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fsd/ops.hpp"
#include "fsd/params.hpp"

namespace fsd {

struct EncoderConfig {
    int64_t patch = 16;
    int64_t d_model = 64;
    int64_t num_heads = 4;
    int64_t num_blocks = 4;
    std::vector<int64_t> multiscale_kernels = {3, 5, 7};
    double token_threshold = 0.4;
    // 1-based block numbers whose output tokens feed the decoder skips.
    std::vector<int64_t> skip_block_indices = {1, 2, 3};
    bool constant_kernel = false; // every branch uses a 3x3 kernel
    bool no_depth_conv = false;   // merge conv emits the single channel directly

    void validate() const {
        if (patch < 1 || (patch & (patch - 1)) != 0)
            throw std::invalid_argument("EncoderConfig: patch must be a positive power of two");
        if (d_model < 1) throw std::invalid_argument("EncoderConfig: d_model must be positive");
        if (num_heads < 1 || d_model % num_heads != 0)
            throw std::invalid_argument("EncoderConfig: num_heads must divide d_model");
        if (num_blocks < 1)
            throw std::invalid_argument("EncoderConfig: num_blocks must be positive");
        if (multiscale_kernels.empty())
            throw std::invalid_argument("EncoderConfig: multiscale_kernels must be non-empty");
        for (int64_t k : multiscale_kernels) {
            if (k < 1 || k % 2 == 0)
                throw std::invalid_argument("EncoderConfig: kernels must be odd and positive");
        }
        for (int64_t i : skip_block_indices) {
            if (i < 1 || i > num_blocks)
                throw std::invalid_argument("EncoderConfig: skip block index " +
                                            std::to_string(i) + " outside 1.." +
                                            std::to_string(num_blocks));
        }
    }
};

// Tokens plus the patch-grid geometry they came from. `norms` caches the
// plain L2 norm of each token row (computed from values, not differentiable);
// the fusion stage reads it when grouping.
template <typename T>
struct TokenSet {
    NodePtr<T> tokens; // [k x d_model]
    int64_t grid_h = 0;
    int64_t grid_w = 0;
    std::vector<double> norms;
};

template <typename T>
TokenSet<T> make_token_set(const NodePtr<T>& tokens, int64_t gh, int64_t gw) {
    detail::require(tokens->shape.size() == 2 && tokens->shape[0] == gh * gw,
                    "make_token_set: tokens " + shape_str(tokens->shape) + " vs grid " +
                        std::to_string(gh) + "x" + std::to_string(gw));
    TokenSet<T> ts;
    ts.tokens = tokens;
    ts.grid_h = gh;
    ts.grid_w = gw;
    const int64_t k = tokens->shape[0], d = tokens->shape[1];
    ts.norms.resize(size_t(k));
    for (int64_t i = 0; i < k; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double v = double(tokens->value[i * d + j]);
            acc += v * v;
        }
        ts.norms[size_t(i)] = std::sqrt(acc);
    }
    return ts;
}

namespace enc_detail {

inline int64_t branch_kernel(const EncoderConfig& cfg, size_t i) {
    return cfg.constant_kernel ? 3 : cfg.multiscale_kernels[i];
}

constexpr int64_t kBranchChannels = 8;

} // namespace enc_detail

// Registers every encoder parameter under "enc.". Layout:
//   enc.ms.branch<i>.{w,b}   branch convs, kBranchChannels outputs each
//   enc.ms.merge.{w,b}       3x3 merge over the concatenated branches
//   enc.ms.depth.{w,b}       1x1 conv down to the single feature channel
//   enc.tok.{w,b}            patch embedding affine [P*P x d_model]
//   enc.tok.global.{w,b}     affine from the pooled map mean to a d_model row
//   enc.tok.pos              learned position embeddings [k x d_model]
//   enc.blk<j>.*             transformer blocks, j in 0..num_blocks-1
template <typename T>
void make_encoder_params(ParamStore<T>& ps, const EncoderConfig& cfg, int64_t img_h,
                         int64_t img_w, int64_t in_ch, Rng& rng) {
    cfg.validate();
    detail::require(img_h % cfg.patch == 0 && img_w % cfg.patch == 0,
                    "make_encoder_params: image extent must be divisible by patch");
    const int64_t bc = enc_detail::kBranchChannels;
    for (size_t i = 0; i < cfg.multiscale_kernels.size(); ++i) {
        const int64_t k = enc_detail::branch_kernel(cfg, i);
        const std::string base = "enc.ms.branch" + std::to_string(i);
        ps.create_uniform(base + ".w", {bc, in_ch, k, k}, rng, in_ch * k * k);
        ps.create_const(base + ".b", {bc}, T(0));
    }
    const int64_t cat = bc * int64_t(cfg.multiscale_kernels.size());
    if (cfg.no_depth_conv) {
        ps.create_uniform("enc.ms.merge.w", {1, cat, 3, 3}, rng, cat * 9);
        ps.create_const("enc.ms.merge.b", {1}, T(0));
    } else {
        ps.create_uniform("enc.ms.merge.w", {bc, cat, 3, 3}, rng, cat * 9);
        ps.create_const("enc.ms.merge.b", {bc}, T(0));
        ps.create_uniform("enc.ms.depth.w", {1, bc, 1, 1}, rng, bc);
        ps.create_const("enc.ms.depth.b", {1}, T(0));
    }

    const int64_t pp = cfg.patch * cfg.patch;
    const int64_t k_tokens = (img_h / cfg.patch) * (img_w / cfg.patch);
    ps.create_uniform("enc.tok.w", {pp, cfg.d_model}, rng, pp);
    ps.create_const("enc.tok.b", {cfg.d_model}, T(0));
    ps.create_uniform("enc.tok.global.w", {cfg.d_model}, rng, 1);
    ps.create_const("enc.tok.global.b", {cfg.d_model}, T(0));
    ps.create_uniform("enc.tok.pos", {k_tokens, cfg.d_model}, rng, cfg.d_model);

    const int64_t ff = 4 * cfg.d_model;
    for (int64_t j = 0; j < cfg.num_blocks; ++j) {
        const std::string base = "enc.blk" + std::to_string(j);
        ps.create_const(base + ".ln1.g", {cfg.d_model}, T(1));
        ps.create_const(base + ".ln1.b", {cfg.d_model}, T(0));
        for (const char* nm : {".wq", ".wk", ".wv", ".wo"})
            ps.create_uniform(base + nm, {cfg.d_model, cfg.d_model}, rng, cfg.d_model);
        ps.create_const(base + ".ln2.g", {cfg.d_model}, T(1));
        ps.create_const(base + ".ln2.b", {cfg.d_model}, T(0));
        ps.create_uniform(base + ".ff1.w", {cfg.d_model, ff}, rng, cfg.d_model);
        ps.create_const(base + ".ff1.b", {ff}, T(0));
        ps.create_uniform(base + ".ff2.w", {ff, cfg.d_model}, rng, ff);
        ps.create_const(base + ".ff2.b", {cfg.d_model}, T(0));
    }
}

// Multi-scale convolutional front end. Parallel same-padded branch convs are
// concatenated along channels, merged by a 3x3 conv, then squeezed to one
// channel. GELU follows the branch and merge convs; the channel squeeze is
// left linear. Output is [1 x H x W].
template <typename T>
NodePtr<T> multiscale_encode(Tape<T>* tape, const NodePtr<T>& image, ParamStore<T>& ps,
                             const EncoderConfig& cfg) {
    detail::require(image->shape.size() == 3, "multiscale_encode: image must be [C x H x W]");
    std::vector<NodePtr<T>> branches;
    branches.reserve(cfg.multiscale_kernels.size());
    for (size_t i = 0; i < cfg.multiscale_kernels.size(); ++i) {
        const int64_t k = enc_detail::branch_kernel(cfg, i);
        const std::string base = "enc.ms.branch" + std::to_string(i);
        auto y = conv2d(tape, image, ps.get(base + ".w"), ps.get(base + ".b"), 1,
                        same_padding(k));
        branches.push_back(gelu(tape, y));
    }
    auto cat = concat_ch(tape, branches);
    auto merged = conv2d(tape, cat, ps.get("enc.ms.merge.w"), ps.get("enc.ms.merge.b"), 1, 1);
    if (cfg.no_depth_conv) return merged;
    merged = gelu(tape, merged);
    return conv2d(tape, merged, ps.get("enc.ms.depth.w"), ps.get("enc.ms.depth.b"), 1, 0);
}

// Patch embedding. Each PxP patch of the single-channel feature map becomes a
// token through a learned affine; an affine of the map-wide mean is added to
// every token, then learned position embeddings (row-major patch order).
template <typename T>
TokenSet<T> tokenize(Tape<T>* tape, const NodePtr<T>& fmap, ParamStore<T>& ps,
                     const EncoderConfig& cfg) {
    detail::require(fmap->shape.size() == 3 && fmap->shape[0] == 1,
                    "tokenize: feature map must be [1 x H x W]");
    const int64_t gh = fmap->shape[1] / cfg.patch;
    const int64_t gw = fmap->shape[2] / cfg.patch;
    auto patches = patchify(tape, fmap, cfg.patch);
    auto tok = add_rowvec(tape, matmul(tape, patches, ps.get("enc.tok.w")), ps.get("enc.tok.b"));
    auto pooled = mean_all(tape, fmap);
    auto global =
        scalar_vec_affine(tape, pooled, ps.get("enc.tok.global.w"), ps.get("enc.tok.global.b"));
    tok = add_rowvec(tape, tok, global);
    auto pos = ps.get("enc.tok.pos");
    detail::require(pos->shape[0] == gh * gw,
                    "tokenize: position table built for a different grid, got " +
                        shape_str(pos->shape) + " for grid " + std::to_string(gh) + "x" +
                        std::to_string(gw));
    return make_token_set(add(tape, tok, pos), gh, gw);
}

// Per-head attention maps captured from a forward pass, outer index head.
template <typename T>
using AttentionMaps = std::vector<NodePtr<T>>;

// Multi-head self-attention. Heads are column slices of the shared Q/K/V
// projections; each computes softmax(Q K^T / sqrt(d_k)) V and the
// concatenation goes through the output projection. When `capture` is given
// the per-head softmax nodes are appended to it.
template <typename T>
NodePtr<T> mha(Tape<T>* tape, const NodePtr<T>& x, const NodePtr<T>& wq, const NodePtr<T>& wk,
               const NodePtr<T>& wv, const NodePtr<T>& wo, int64_t num_heads,
               AttentionMaps<T>* capture = nullptr) {
    const int64_t d = x->shape[1];
    detail::require(num_heads > 0 && d % num_heads == 0, "mha: num_heads must divide d_model");
    const int64_t dk = d / num_heads;
    auto q = matmul(tape, x, wq);
    auto k = matmul(tape, x, wk);
    auto v = matmul(tape, x, wv);
    std::vector<NodePtr<T>> heads;
    heads.reserve(size_t(num_heads));
    for (int64_t h = 0; h < num_heads; ++h) {
        auto qh = slice_cols(tape, q, h * dk, dk);
        auto kh = slice_cols(tape, k, h * dk, dk);
        auto vh = slice_cols(tape, v, h * dk, dk);
        auto logits = scale(tape, matmul_nt(tape, qh, kh), 1.0 / std::sqrt(double(dk)));
        auto attn = softmax(tape, logits, -1);
        if (capture) capture->push_back(attn);
        heads.push_back(matmul(tape, attn, vh));
    }
    return matmul(tape, concat_cols(tape, heads), wo);
}

template <typename T>
struct EncodeResult {
    TokenSet<T> tokens;
    // Token sets after each block listed in skip_block_indices, in list order.
    std::vector<TokenSet<T>> skips;
    // Per-head attention of the last block, filled only when requested.
    AttentionMaps<T> last_block_attention;
};

// Pre-norm transformer stack over one frame's tokens. Each block applies
// x + MHA(LN(x)) then x + FF(LN(x)) with a GELU feed-forward; blocks whose
// 1-based index appears in skip_block_indices contribute their output tokens
// as decoder skips.
template <typename T>
EncodeResult<T> transformer_encode(Tape<T>* tape, const TokenSet<T>& in, ParamStore<T>& ps,
                                   const EncoderConfig& cfg, bool capture_attention = false) {
    cfg.validate();
    auto x = in.tokens;
    EncodeResult<T> out;
    out.skips.resize(cfg.skip_block_indices.size());
    for (int64_t j = 0; j < cfg.num_blocks; ++j) {
        const std::string base = "enc.blk" + std::to_string(j);
        AttentionMaps<T>* cap =
            (capture_attention && j == cfg.num_blocks - 1) ? &out.last_block_attention : nullptr;
        auto n1 = layer_norm(tape, x, ps.get(base + ".ln1.g"), ps.get(base + ".ln1.b"));
        auto att = mha(tape, n1, ps.get(base + ".wq"), ps.get(base + ".wk"),
                       ps.get(base + ".wv"), ps.get(base + ".wo"), cfg.num_heads, cap);
        x = add(tape, x, att);
        auto n2 = layer_norm(tape, x, ps.get(base + ".ln2.g"), ps.get(base + ".ln2.b"));
        auto ff = add_rowvec(tape, matmul(tape, n2, ps.get(base + ".ff1.w")),
                             ps.get(base + ".ff1.b"));
        ff = add_rowvec(tape, matmul(tape, gelu(tape, ff), ps.get(base + ".ff2.w")),
                        ps.get(base + ".ff2.b"));
        x = add(tape, x, ff);
        for (size_t s = 0; s < cfg.skip_block_indices.size(); ++s) {
            if (cfg.skip_block_indices[s] == j + 1)
                out.skips[s] = make_token_set(x, in.grid_h, in.grid_w);
        }
    }
    out.tokens = make_token_set(x, in.grid_h, in.grid_w);
    return out;
}

// Full per-frame encode: front end, patch embedding, transformer.
template <typename T>
EncodeResult<T> encode_frame(Tape<T>* tape, const NodePtr<T>& image, ParamStore<T>& ps,
                             const EncoderConfig& cfg, bool capture_attention = false) {
    auto fmap = multiscale_encode(tape, image, ps, cfg);
    auto tok = tokenize(tape, fmap, ps, cfg);
    return transformer_encode(tape, tok, ps, cfg, capture_attention);
}

} // namespace fsd
