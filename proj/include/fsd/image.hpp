#pragma once

#include <cstdint>
#include <vector>

namespace fsd {

// Interleaved float image, values in [0, 1].
struct ImageBuf {
    int64_t h = 0;
    int64_t w = 0;
    int64_t c = 0;
    std::vector<float> data;

    float& at(int64_t y, int64_t x, int64_t ch) { return data[(y * w + x) * c + ch]; }
    float at(int64_t y, int64_t x, int64_t ch) const { return data[(y * w + x) * c + ch]; }
};

inline ImageBuf make_image(int64_t h, int64_t w, int64_t c) {
    ImageBuf img;
    img.h = h;
    img.w = w;
    img.c = c;
    img.data.assign(static_cast<size_t>(h * w * c), 0.0f);
    return img;
}

} // namespace fsd
