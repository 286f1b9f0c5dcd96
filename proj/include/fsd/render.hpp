#pragma once

#include "fsd/optics.hpp"
#include "fsd/scene.hpp"

namespace fsd {

// A rendered stack: one frame per focus distance, distances strictly
// ascending.
struct FocalStack {
    std::vector<ImageBuf> frames;
    std::vector<double> focus_distances;
    CameraModel camera;

    void validate() const;
};

// Layered defocus render. The depth volume is split into 16 layers uniform in
// inverse depth; each occupied layer is blurred (premultiplied color and
// alpha) with a truncated, per-pixel renormalized Gaussian whose sigma comes
// from the layer's representative depth, then layers composite back to front.
ImageBuf render_frame(const Scene& scene, const CameraModel& cam, double focus_dist);

FocalStack render_stack(const Scene& scene, const CameraModel& cam,
                        const std::vector<double>& focus_distances);

} // namespace fsd
