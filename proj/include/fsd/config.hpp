// Run configuration shared by every tool verb. A config JSON file sets any
// subset of fields; the RUN_SEED environment variable overrides the seed, and
// command-line flags override both.
#pragma once

#include <cstdint>
#include <string>

#include "fsd/loss.hpp"
#include "fsd/model.hpp"
#include "fsd/optics.hpp"
#include "json.hpp"

namespace fsd {

struct RunConfig {
    uint64_t seed = 1234;
    int64_t image_size = 64; // square frames
    int64_t stack_frames = 10;
    int64_t train_count = 8;
    int64_t val_count = 16;
    int64_t epochs = 25;
    int64_t accum = 4; // stacks whose gradients share one optimizer update
    double lr = 1e-4;
    double beta1 = 0.9;
    double z_min = 0.5;
    double z_max = 5.0;
    // Train on a random frame prefix (4..stack_frames) instead of full stacks.
    bool random_prefix = false;

    CameraModel camera;
    EncoderConfig encoder;
    FusionConfig fusion;
    DecoderConfig decoder;
    LossConfig loss;
    bool no_lstm = false;

    void validate() const;
    // Assembles the model wiring, copying the shared token threshold and the
    // ablation toggles into place.
    ModelConfig model_config() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// Loads the file (defaults when path is empty) and applies RUN_SEED, if set.
RunConfig load_run_config(const std::string& path);

} // namespace fsd
