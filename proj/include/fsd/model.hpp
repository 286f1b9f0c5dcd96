// The full depth network: per-frame token encoder, recurrent fusion across
// the stack, and a convolutional decoder emitting disparity. Skip tokens are
// averaged across frames so the decoder sees stack-wide context at every
// scale.
#pragma once

#include <cstdint>
#include <vector>

#include "fsd/decoder.hpp"
#include "fsd/encoder.hpp"
#include "fsd/fusion.hpp"
#include "fsd/params.hpp"
#include "fsd/rng.hpp"

namespace fsd {

struct ModelConfig {
    EncoderConfig encoder;
    FusionConfig fusion;
    DecoderConfig decoder;
    // Replaces fusion with per-frame decoding followed by averaging the
    // per-frame disparity maps.
    bool no_lstm = false;

    void validate() const {
        encoder.validate();
        fusion.validate();
        decoder.validate(encoder.patch);
    }
};

// Optional forward-pass byproducts.
template <typename T>
struct ForwardExtras {
    bool capture_attention = false;
    // Last-block attention per frame, inner index head.
    std::vector<AttentionMaps<T>> attention;
};

template <typename T>
struct DepthNet {
    ModelConfig cfg;
    int64_t img_h = 0;
    int64_t img_w = 0;
    int64_t in_channels = 3;
    ParamStore<T> params;

    DepthNet(const ModelConfig& config, int64_t h, int64_t w, uint64_t seed)
        : cfg(config), img_h(h), img_w(w) {
        cfg.validate();
        Rng rng(mix_seed(seed, 0x6d6f64656cULL));
        make_encoder_params(params, cfg.encoder, h, w, in_channels, rng);
        make_fusion_params(params, cfg.fusion, cfg.encoder.d_model, rng);
        const int64_t num_skips = int64_t(cfg.encoder.skip_block_indices.size());
        make_decoder_params(params, cfg.decoder, cfg.encoder.d_model, cfg.encoder.patch,
                            num_skips, rng);
    }

    // Maps a focal stack (front-to-back frames, each [C x H x W]) to one
    // [H x W] disparity map.
    NodePtr<T> forward(Tape<T>* tape, const std::vector<NodePtr<T>>& frames,
                       ForwardExtras<T>* extras = nullptr) {
        detail::require(!frames.empty(), "forward: stack must contain at least one frame");
        for (const auto& f : frames)
            detail::require(f->shape.size() == 3 && f->shape[0] == in_channels &&
                                f->shape[1] == img_h && f->shape[2] == img_w,
                            "forward: frame shape " + shape_str(f->shape) + " does not match " +
                                "model built for " + std::to_string(img_h) + "x" +
                                std::to_string(img_w));
        const bool cap = extras && extras->capture_attention;
        const double inv_n = 1.0 / double(frames.size());
        const size_t num_skips = cfg.encoder.skip_block_indices.size();

        if (cfg.no_lstm) {
            NodePtr<T> acc;
            for (const auto& f : frames) {
                auto enc = encode_frame(tape, f, params, cfg.encoder, cap);
                if (cap) extras->attention.push_back(std::move(enc.last_block_attention));
                auto d = decode(tape, enc.tokens, enc.skips, params, cfg.decoder,
                                cfg.encoder.patch);
                acc = acc ? add(tape, acc, d) : d;
            }
            return scale(tape, acc, inv_n);
        }

        std::vector<TokenSet<T>> frame_tokens;
        frame_tokens.reserve(frames.size());
        std::vector<NodePtr<T>> skip_sums(num_skips);
        int64_t gh = 0, gw = 0;
        for (const auto& f : frames) {
            auto enc = encode_frame(tape, f, params, cfg.encoder, cap);
            if (cap) extras->attention.push_back(std::move(enc.last_block_attention));
            gh = enc.tokens.grid_h;
            gw = enc.tokens.grid_w;
            frame_tokens.push_back(std::move(enc.tokens));
            for (size_t s = 0; s < num_skips; ++s) {
                skip_sums[s] = skip_sums[s] ? add(tape, skip_sums[s], enc.skips[s].tokens)
                                            : enc.skips[s].tokens;
            }
        }
        std::vector<TokenSet<T>> skips;
        skips.reserve(num_skips);
        for (auto& s : skip_sums)
            skips.push_back(make_token_set(scale(tape, s, inv_n), gh, gw));

        auto fused = fuse_stack(tape, frame_tokens, params, cfg.fusion, cfg.encoder.d_model);
        return decode(tape, fused, skips, params, cfg.decoder, cfg.encoder.patch);
    }
};

} // namespace fsd
