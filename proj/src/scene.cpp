#include "fsd/scene.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "fsd/optics.hpp"
#include "fsd/rng.hpp"

namespace fsd {

void Scene::validate() const {
    if (h < 1 || w < 1) throw std::invalid_argument("Scene: empty extent");
    if (image.h != h || image.w != w || image.c != 3) {
        throw std::invalid_argument("Scene: image extent mismatch");
    }
    if (static_cast<int64_t>(depth.size()) != h * w) {
        throw std::invalid_argument("Scene: depth extent mismatch");
    }
    for (float v : image.data) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw std::invalid_argument("Scene: image values must lie in [0, 1]");
        }
    }
    for (float z : depth) {
        if (!(z >= static_cast<float>(z_min) && z <= static_cast<float>(z_max))) {
            throw std::invalid_argument("Scene: depth outside [z_min, z_max]");
        }
    }
}

int64_t depth_layer_index(double z, double z_min, double z_max) {
    const double u_lo = 1.0 / z_max;
    const double u_hi = 1.0 / z_min;
    const double t = (1.0 / z - u_lo) / (u_hi - u_lo) * static_cast<double>(kDepthLayers);
    return std::clamp<int64_t>(static_cast<int64_t>(t), 0, kDepthLayers - 1);
}

namespace {

// Position-hash noise, independent of drawing order.
double pixel_noise(uint64_t seed, int64_t y, int64_t x, int64_t ch, int64_t w) {
    uint64_t s = seed ^ (static_cast<uint64_t>(y * w + x) * 0x2545f4914f6cdd1dull) ^
                 (static_cast<uint64_t>(ch + 1) * 0x9e3779b97f4a7c15ull);
    const double u = static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
    return 2.0 * u - 1.0;
}

struct Rect {
    int64_t x0, y0, x1, y1;
    float depth;
    double base[3];
    int64_t cell;
    double contrast;
};

void fill_texture(ImageBuf& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1,
                  const double base[3], int64_t cell, double contrast, uint64_t noise_seed) {
    for (int64_t y = y0; y < y1; ++y) {
        for (int64_t x = x0; x < x1; ++x) {
            const double checker = ((x / cell + y / cell) % 2 == 0) ? 1.0 : -1.0;
            for (int64_t ch = 0; ch < 3; ++ch) {
                double v = base[ch] + checker * contrast +
                           0.05 * pixel_noise(noise_seed, y, x, ch, img.w);
                img.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
}

Scene try_make_scene(uint64_t seed, int64_t h, int64_t w, const MakeSceneOptions& opt) {
    Rng rng(seed);
    const uint64_t noise_seed = mix_seed(seed, 0x7e);
    const std::vector<double> levels =
        default_focus_distances(opt.z_min, opt.z_max, opt.depth_levels);

    std::vector<int64_t> pool(levels.size());
    for (size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int64_t>(i);
    rng.shuffle(pool);

    Scene scene;
    scene.h = h;
    scene.w = w;
    scene.z_min = opt.z_min;
    scene.z_max = opt.z_max;
    scene.image = make_image(h, w, 3);
    scene.depth.assign(static_cast<size_t>(h * w), 0.0f);

    // Background plane.
    const float bg_depth = static_cast<float>(levels[pool[0]]);
    std::fill(scene.depth.begin(), scene.depth.end(), bg_depth);
    double bg_base[3];
    for (auto& b : bg_base) b = rng.uniform(0.25, 0.75);
    const int64_t bg_cell = 4 + 4 * rng.randint(0, 2);
    fill_texture(scene.image, 0, 0, w, h, bg_base, bg_cell, rng.uniform(0.08, 0.18), noise_seed);

    // Rectangles kept clear of the border so defocus blur cannot bleed much
    // layer energy off the image.
    const int64_t margin = 6;
    const int64_t min_side = 10;
    const int64_t n_rects = rng.randint(3, 9);
    std::vector<Rect> rects;
    for (int64_t i = 0; i < n_rects; ++i) {
        Rect r{};
        const int64_t max_w = std::min<int64_t>(w / 2, w - 2 * margin);
        const int64_t max_h = std::min<int64_t>(h / 2, h - 2 * margin);
        const int64_t rw = rng.randint(min_side, max_w + 1);
        const int64_t rh = rng.randint(min_side, max_h + 1);
        r.x0 = rng.randint(margin, w - margin - rw + 1);
        r.y0 = rng.randint(margin, h - margin - rh + 1);
        r.x1 = r.x0 + rw;
        r.y1 = r.y0 + rh;
        const int64_t level = (i + 1 < static_cast<int64_t>(pool.size()))
                                  ? pool[i + 1]
                                  : rng.randint(0, static_cast<int64_t>(levels.size()));
        r.depth = static_cast<float>(levels[level]);
        for (auto& b : r.base) b = rng.uniform(0.15, 0.85);
        r.cell = 2 + 2 * rng.randint(0, 3);
        r.contrast = rng.uniform(0.1, 0.25);
        rects.push_back(r);
    }
    // Paint far to near so closer rectangles occlude.
    std::stable_sort(rects.begin(), rects.end(),
                     [](const Rect& a, const Rect& b) { return a.depth > b.depth; });
    for (const Rect& r : rects) {
        fill_texture(scene.image, r.x0, r.y0, r.x1, r.y1, r.base, r.cell, r.contrast,
                     noise_seed);
        for (int64_t y = r.y0; y < r.y1; ++y) {
            for (int64_t x = r.x0; x < r.x1; ++x) scene.depth[y * w + x] = r.depth;
        }
    }
    return scene;
}

} // namespace

Scene make_scene(uint64_t seed, int64_t h, int64_t w, const MakeSceneOptions& opt) {
    if (h < 32 || w < 32) {
        throw std::invalid_argument("make_scene: extent must be at least 32x32");
    }
    if (opt.patch >= 1 && (h % opt.patch != 0 || w % opt.patch != 0)) {
        throw std::invalid_argument("make_scene: extent must be a multiple of the patch size");
    }
    // Occasionally occlusion leaves fewer than 3 occupied depth layers; retry
    // with a derived seed so every accepted scene spans enough of the volume.
    for (int attempt = 0; attempt < 16; ++attempt) {
        Scene s = try_make_scene(mix_seed(seed, static_cast<uint64_t>(attempt)), h, w, opt);
        std::set<int64_t> bins;
        for (float z : s.depth) bins.insert(depth_layer_index(z, opt.z_min, opt.z_max));
        if (bins.size() >= 3) return s;
    }
    throw std::runtime_error("make_scene: could not produce a 3-layer scene");
}

} // namespace fsd
