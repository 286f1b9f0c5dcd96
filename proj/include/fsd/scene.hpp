#pragma once

#include "fsd/image.hpp"

namespace fsd {

// All-in-focus image plus a per-pixel depth map, depths inside [z_min, z_max].
struct Scene {
    int64_t h = 0;
    int64_t w = 0;
    ImageBuf image;           // H x W x 3
    std::vector<float> depth; // H x W, meters
    double z_min = 0.5;
    double z_max = 5.0;

    void validate() const;
};

struct MakeSceneOptions {
    double z_min = 0.5;
    double z_max = 5.0;
    // Object depths snap to this many inverse-depth levels, matching the
    // default focus-distance grid so each object is exactly in focus in one
    // frame of a default stack.
    int64_t depth_levels = 10;
    int64_t patch = 16;
};

// Procedural scene: a textured background plane plus 3-8 textured rectangles
// at distinct snapped depths. Identical seeds give bit-identical scenes.
Scene make_scene(uint64_t seed, int64_t h, int64_t w, const MakeSceneOptions& opt = {});

constexpr int64_t kDepthLayers = 16;

// Index of the inverse-depth layer bin containing z.
int64_t depth_layer_index(double z, double z_min, double z_max);

} // namespace fsd
