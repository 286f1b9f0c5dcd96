#include "fsd/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace fsd {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw std::runtime_error("cannot open file: " + path);
    }
    return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
    (void)png;
    throw std::runtime_error(std::string("libpng: ") + msg);
}

bool host_is_little_endian() {
    const uint16_t probe = 1;
    uint8_t byte;
    std::memcpy(&byte, &probe, 1);
    return byte == 1;
}

}  // namespace

void write_png16(const std::string& path, const ImageBuf& img) {
    if (img.c != 3) {
        throw std::invalid_argument("write_png16: expected 3 channels, got " +
                                    std::to_string(img.c));
    }
    FilePtr f = open_file(path, "wb");

    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }

    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(img.w),
                     static_cast<png_uint_32>(img.h), 16, PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);

        // PNG samples are big-endian on the wire.
        std::vector<uint8_t> row(static_cast<size_t>(img.w) * 3 * 2);
        for (int64_t y = 0; y < img.h; ++y) {
            for (int64_t x = 0; x < img.w; ++x) {
                for (int64_t ch = 0; ch < 3; ++ch) {
                    const float v = std::clamp(img.at(y, x, ch), 0.0f, 1.0f);
                    const auto q =
                        static_cast<uint16_t>(std::lround(static_cast<double>(v) * 65535.0));
                    row[(x * 3 + ch) * 2] = static_cast<uint8_t>(q >> 8);
                    row[(x * 3 + ch) * 2 + 1] = static_cast<uint8_t>(q & 0xff);
                }
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, info);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
}

ImageBuf read_png16(const std::string& path) {
    FilePtr f = open_file(path, "rb");

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }

    ImageBuf img;
    try {
        png_init_io(png, f.get());
        png_read_info(png, info);

        const png_uint_32 w = png_get_image_width(png, info);
        const png_uint_32 h = png_get_image_height(png, info);
        const int depth = png_get_bit_depth(png, info);
        const int color = png_get_color_type(png, info);
        if (depth != 16 || color != PNG_COLOR_TYPE_RGB) {
            throw std::runtime_error("read_png16: " + path +
                                     " is not a 16-bit RGB PNG");
        }

        img = make_image(static_cast<int64_t>(h), static_cast<int64_t>(w), 3);
        std::vector<uint8_t> row(static_cast<size_t>(w) * 3 * 2);
        for (png_uint_32 y = 0; y < h; ++y) {
            png_read_row(png, row.data(), nullptr);
            for (png_uint_32 x = 0; x < w; ++x) {
                for (int ch = 0; ch < 3; ++ch) {
                    const uint16_t q =
                        static_cast<uint16_t>((row[(x * 3 + ch) * 2] << 8) |
                                              row[(x * 3 + ch) * 2 + 1]);
                    img.at(static_cast<int64_t>(y), static_cast<int64_t>(x), ch) =
                        static_cast<float>(q) / 65535.0f;
                }
            }
        }
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png_gray8(const std::string& path, const ImageBuf& img) {
    if (img.c != 1) {
        throw std::invalid_argument("write_png_gray8: expected 1 channel, got " +
                                    std::to_string(img.c));
    }
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = (hi > lo) ? (hi - lo) : 1.0f;

    FilePtr f = open_file(path, "wb");
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }

    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(img.w),
                     static_cast<png_uint_32>(img.h), 8, PNG_COLOR_TYPE_GRAY,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);

        std::vector<uint8_t> row(static_cast<size_t>(img.w));
        for (int64_t y = 0; y < img.h; ++y) {
            for (int64_t x = 0; x < img.w; ++x) {
                const float n = (img.at(y, x, 0) - lo) / span;
                row[x] = static_cast<uint8_t>(
                    std::lround(std::clamp(n, 0.0f, 1.0f) * 255.0f));
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, info);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
}

void write_pfm(const std::string& path, const ImageBuf& img) {
    if (img.c != 1 && img.c != 3) {
        throw std::invalid_argument("write_pfm: expected 1 or 3 channels, got " +
                                    std::to_string(img.c));
    }
    if (!host_is_little_endian()) {
        throw std::runtime_error("write_pfm: big-endian hosts are not supported");
    }
    FilePtr f = open_file(path, "wb");

    std::ostringstream header;
    header << (img.c == 3 ? "PF" : "Pf") << "\n"
           << img.w << " " << img.h << "\n"
           << "-1.0\n";  // negative scale marks little-endian samples
    const std::string hs = header.str();
    if (std::fwrite(hs.data(), 1, hs.size(), f.get()) != hs.size()) {
        throw std::runtime_error("write_pfm: header write failed: " + path);
    }

    // PFM stores rows bottom to top.
    const size_t row_floats = static_cast<size_t>(img.w) * img.c;
    for (int64_t y = img.h - 1; y >= 0; --y) {
        const float* row = img.data.data() + static_cast<size_t>(y) * row_floats;
        if (std::fwrite(row, sizeof(float), row_floats, f.get()) != row_floats) {
            throw std::runtime_error("write_pfm: data write failed: " + path);
        }
    }
}

ImageBuf read_pfm(const std::string& path) {
    if (!host_is_little_endian()) {
        throw std::runtime_error("read_pfm: big-endian hosts are not supported");
    }
    FilePtr f = open_file(path, "rb");

    char magic[3] = {0, 0, 0};
    if (std::fscanf(f.get(), "%2s", magic) != 1) {
        throw std::runtime_error("read_pfm: bad header: " + path);
    }
    int channels = 0;
    if (std::strcmp(magic, "PF") == 0) {
        channels = 3;
    } else if (std::strcmp(magic, "Pf") == 0) {
        channels = 1;
    } else {
        throw std::runtime_error("read_pfm: not a PFM file: " + path);
    }

    long w = 0, h = 0;
    double scale = 0.0;
    if (std::fscanf(f.get(), "%ld %ld %lf", &w, &h, &scale) != 3 || w <= 0 || h <= 0) {
        throw std::runtime_error("read_pfm: bad dimensions: " + path);
    }
    if (scale >= 0.0) {
        throw std::runtime_error("read_pfm: big-endian PFM is not supported: " + path);
    }
    // Single whitespace byte separates the header from the raster.
    std::fgetc(f.get());

    ImageBuf img = make_image(h, w, channels);
    const size_t row_floats = static_cast<size_t>(w) * channels;
    for (long y = h - 1; y >= 0; --y) {
        float* row = img.data.data() + static_cast<size_t>(y) * row_floats;
        if (std::fread(row, sizeof(float), row_floats, f.get()) != row_floats) {
            throw std::runtime_error("read_pfm: truncated data: " + path);
        }
    }
    return img;
}

}  // namespace fsd
