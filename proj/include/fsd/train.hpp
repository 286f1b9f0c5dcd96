// Training loop: one stack per graph, gradients accumulated over a few
// stacks per optimizer update, Adam with bias correction. Checkpoints carry
// enough state to resume with bit-identical results.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsd/dataset.hpp"
#include "fsd/loss.hpp"
#include "fsd/model.hpp"

namespace fsd {

struct TrainOptions {
    int64_t epochs = 1;
    int64_t accum = 4;
    double lr = 1e-4;
    double beta1 = 0.9;
    uint64_t seed = 1234; // drives the per-epoch visit order
    int64_t max_steps = -1; // stop after this many optimizer updates (total)
    // Train each stack on a random prefix of its frames (length 4..n, drawn
    // per visit) instead of the full stack. Exercises the variable-length
    // path; evaluation always sees whatever k the caller asks for.
    bool random_prefix = false;
    std::string checkpoint_dir; // empty: do not save
    std::string resume_from;    // empty: fresh start
    bool verbose = false;
};

struct TrainResult {
    std::vector<float> sample_losses; // one entry per stack consumed, in order
    int64_t updates = 0;              // optimizer steps performed in this call
    int64_t global_step = 0;          // updates including any resumed history
    int64_t epochs_done = 0;
};

// Converts an interleaved H x W x 3 frame into a planar [3 x H x W] leaf.
NodePtr<float> frame_to_node(const ImageBuf& img);

// Forward pass on the first k frames of a sample (k = -1 means all),
// returning the [H x W] disparity values.
std::vector<float> infer_disparity(DepthNet<float>& net, const StackSample& sample,
                                   int64_t k = -1);

TrainResult train_model(DepthNet<float>& net, const std::vector<StackSample>& data,
                        const LossConfig& loss_cfg, const TrainOptions& opt);

} // namespace fsd
