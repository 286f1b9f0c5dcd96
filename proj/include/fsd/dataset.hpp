// On-disk focal-stack datasets. Each stack lives in its own directory:
//
//   stack_0000/
//     frame_00.png ... frame_NN.png   16-bit RGB, ordered by focus distance
//     depth.pfm                       ground-truth depth, meters
//     manifest.json                   camera, focus distances, seed, extent
//
// and the dataset root carries a manifest.json listing the stack directories.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsd/config.hpp"
#include "fsd/optics.hpp"
#include "fsd/render.hpp"

namespace fsd {

struct StackSample {
    FocalStack stack;
    std::vector<float> depth; // H x W
    int64_t h = 0;
    int64_t w = 0;
    uint64_t seed = 0;
};

// Renders `count` synthetic stacks under root. Stack i draws its scene from
// mix_seed(cfg.seed, i); rerunning with the same config writes byte-identical
// files.
void generate_dataset(const RunConfig& cfg, const std::string& root, int64_t count);

StackSample load_stack(const std::string& dir);

// Stack directories listed by the root manifest, in manifest order.
std::vector<std::string> list_stacks(const std::string& root);

// Ground-truth disparity for supervision, b*f/z per pixel.
std::vector<float> gt_disparity(const CameraModel& cam, const std::vector<float>& depth);

} // namespace fsd
