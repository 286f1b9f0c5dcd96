#include "fsd/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fsd {

void FocalStack::validate() const {
    if (frames.empty() || frames.size() != focus_distances.size()) {
        throw std::invalid_argument("FocalStack: frame/distance count mismatch");
    }
    for (size_t i = 1; i < focus_distances.size(); ++i) {
        if (!(focus_distances[i] > focus_distances[i - 1])) {
            throw std::invalid_argument("FocalStack: focus distances must be ascending");
        }
    }
    for (const auto& f : frames) {
        if (f.h != frames[0].h || f.w != frames[0].w || f.c != 3) {
            throw std::invalid_argument("FocalStack: frame extent mismatch");
        }
    }
    camera.validate();
}

namespace {

// Separable truncated Gaussian, renormalized per output pixel over the
// in-bounds taps. On a rectangle the in-bounds region factorizes, so the two
// passes together equal a 2-d renormalized kernel exactly.
void blur_axis(std::vector<double>& plane, std::vector<double>& tmp, int64_t h, int64_t w,
               const std::vector<double>& weights, bool horizontal) {
    const int64_t radius = static_cast<int64_t>(weights.size()) - 1;
    if (horizontal) {
        for (int64_t y = 0; y < h; ++y) {
            const double* src = plane.data() + y * w;
            double* dst = tmp.data() + y * w;
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0.0, wsum = 0.0;
                const int64_t lo = std::max<int64_t>(-radius, -x);
                const int64_t hi = std::min<int64_t>(radius, w - 1 - x);
                for (int64_t j = lo; j <= hi; ++j) {
                    const double wj = weights[static_cast<size_t>(std::abs(j))];
                    acc += wj * src[x + j];
                    wsum += wj;
                }
                dst[x] = acc / wsum;
            }
        }
    } else {
        for (int64_t x = 0; x < w; ++x) {
            for (int64_t y = 0; y < h; ++y) {
                double acc = 0.0, wsum = 0.0;
                const int64_t lo = std::max<int64_t>(-radius, -y);
                const int64_t hi = std::min<int64_t>(radius, h - 1 - y);
                for (int64_t j = lo; j <= hi; ++j) {
                    const double wj = weights[static_cast<size_t>(std::abs(j))];
                    acc += wj * plane[(y + j) * w + x];
                    wsum += wj;
                }
                tmp[y * w + x] = acc / wsum;
            }
        }
    }
    plane.swap(tmp);
}

void gaussian_blur(std::vector<double>& plane, int64_t h, int64_t w, double sigma) {
    if (sigma <= 0.0) return;
    const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    std::vector<double> weights(static_cast<size_t>(radius) + 1);
    for (int64_t j = 0; j <= radius; ++j) {
        weights[static_cast<size_t>(j)] =
            std::exp(-0.5 * static_cast<double>(j * j) / (sigma * sigma));
    }
    std::vector<double> tmp(plane.size());
    blur_axis(plane, tmp, h, w, weights, true);
    blur_axis(plane, tmp, h, w, weights, false);
}

} // namespace

ImageBuf render_frame(const Scene& scene, const CameraModel& cam, double focus_dist) {
    cam.validate();
    if (!(focus_dist >= scene.z_min && focus_dist <= scene.z_max)) {
        throw std::invalid_argument("render_frame: focus distance " +
                                    std::to_string(focus_dist) + " outside scene volume");
    }
    const int64_t h = scene.h, w = scene.w, hw = h * w;

    std::vector<int64_t> layer_of(static_cast<size_t>(hw));
    std::vector<int64_t> count(kDepthLayers, 0);
    std::vector<double> depth_sum(kDepthLayers, 0.0);
    std::vector<float> depth_min(kDepthLayers, 0.0f), depth_max(kDepthLayers, 0.0f);
    for (int64_t i = 0; i < hw; ++i) {
        const double z = scene.depth[i];
        const int64_t li = depth_layer_index(z, scene.z_min, scene.z_max);
        layer_of[i] = li;
        if (count[li] == 0) {
            depth_min[li] = depth_max[li] = scene.depth[i];
        } else {
            depth_min[li] = std::min(depth_min[li], scene.depth[i]);
            depth_max[li] = std::max(depth_max[li], scene.depth[i]);
        }
        ++count[li];
        depth_sum[li] += z;
    }

    std::vector<double> acc(static_cast<size_t>(hw * 3), 0.0);
    std::vector<double> alpha(static_cast<size_t>(hw));
    std::vector<double> plane[3] = {std::vector<double>(static_cast<size_t>(hw)),
                                    std::vector<double>(static_cast<size_t>(hw)),
                                    std::vector<double>(static_cast<size_t>(hw))};

    // Layer 0 is the farthest (lowest inverse depth); composite back to front.
    for (int64_t li = 0; li < kDepthLayers; ++li) {
        if (count[li] == 0) continue;
        // Representative depth: the exact value when the layer is flat, so a
        // frame focused on that plane reproduces it sharply; otherwise the
        // members' mean.
        const double z_rep = (depth_min[li] == depth_max[li])
                                 ? static_cast<double>(depth_min[li])
                                 : depth_sum[li] / static_cast<double>(count[li]);
        const double sigma = coc_sigma_px(cam, focus_dist, z_rep);

        for (int64_t i = 0; i < hw; ++i) alpha[i] = (layer_of[i] == li) ? 1.0 : 0.0;
        for (int64_t ch = 0; ch < 3; ++ch) {
            for (int64_t i = 0; i < hw; ++i) {
                plane[ch][i] = alpha[i] * static_cast<double>(scene.image.data[i * 3 + ch]);
            }
            gaussian_blur(plane[ch], h, w, sigma);
        }
        gaussian_blur(alpha, h, w, sigma);

        for (int64_t i = 0; i < hw; ++i) {
            const double a = alpha[i];
            for (int64_t ch = 0; ch < 3; ++ch) {
                acc[i * 3 + ch] = plane[ch][i] + (1.0 - a) * acc[i * 3 + ch];
            }
        }
    }

    ImageBuf out = make_image(h, w, 3);
    for (size_t i = 0; i < acc.size(); ++i) {
        out.data[i] = static_cast<float>(std::clamp(acc[i], 0.0, 1.0));
    }
    return out;
}

FocalStack render_stack(const Scene& scene, const CameraModel& cam,
                        const std::vector<double>& focus_distances) {
    if (focus_distances.empty()) {
        throw std::invalid_argument("render_stack: need at least one focus distance");
    }
    for (size_t i = 1; i < focus_distances.size(); ++i) {
        if (!(focus_distances[i] > focus_distances[i - 1])) {
            throw std::invalid_argument("render_stack: focus distances must be ascending");
        }
    }
    FocalStack stack;
    stack.camera = cam;
    stack.focus_distances = focus_distances;
    stack.frames.reserve(focus_distances.size());
    for (double d : focus_distances) stack.frames.push_back(render_frame(scene, cam, d));
    stack.validate();
    return stack;
}

} // namespace fsd
