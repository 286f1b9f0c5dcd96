// Library entry points behind the tool verbs. The binary only parses flags
// and forwards here, so tests can drive the exact same code paths.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsd/config.hpp"
#include "fsd/train.hpp"

namespace fsd {

// Rebuilds the network a checkpoint was trained with, from the run config
// embedded in its manifest, and restores the weights.
DepthNet<float> net_from_checkpoint(const std::string& dir, RunConfig* cfg_out = nullptr);

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, int64_t count);

// Trains on every stack under data_dir and leaves out_dir/checkpoint,
// out_dir/config.json, and out_dir/loss_history.csv behind.
int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume_from = {}, int64_t max_steps = -1, bool verbose = true);

// Metrics over the stacks under data_dir, one CSV row per frame budget in
// `ks`, averaged across stacks. Computed on disparity by default, on depth
// when depth_space is set. Writes csv_out when non-empty and always echoes
// the table to stdout.
int cmd_eval(const std::string& checkpoint_dir, const std::string& data_dir,
             const std::vector<int64_t>& ks, const std::string& csv_out,
             bool depth_space = false);

// Runs one stack through the model; writes disparity.pfm, depth.pfm, and
// depth_vis.png under out_dir. frames = -1 uses the whole stack.
int cmd_infer(const std::string& checkpoint_dir, const std::string& stack_dir,
              const std::string& out_dir, int64_t frames = -1);

// Last-block attention rows for one query token, CSV with a row per
// (frame, head) pair.
int cmd_attention_dump(const std::string& checkpoint_dir, const std::string& stack_dir,
                       const std::string& out_csv, int64_t token_index);

int cmd_verify(bool quick);

} // namespace fsd
