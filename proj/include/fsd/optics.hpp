#pragma once

#include <cstdint>
#include <vector>

namespace fsd {

// Thin-lens camera. All lengths are in meters; sensor_distance is carried for
// context and never enters the blur math.
struct CameraModel {
    double focal_length = 0.05;
    double f_number = 2.0;
    double baseline = 10.0;
    double pixel_pitch = 1e-4;
    double sensor_distance = 0.06;

    void validate() const;
};

// Signed circle-of-confusion diameter (meters) for an object at depth z when
// the lens is focused at depth d_f:
//
//     C = f^2 / (N (z - d_f)) * |1 - d_f / z|
//
// The sign follows sign(z - d_f); at z == d_f the diameter is exactly 0. Note
// the absolute value makes |C| collapse to f^2 / (N z) away from the focus
// plane, so the only focus-dependent behavior is the zero at z == d_f itself.
double coc_diameter(const CameraModel& cam, double focus_dist, double z);

// Blur radius in pixels: |C| / pixel_pitch / 2, clamped to [0, 8].
double coc_sigma_px(const CameraModel& cam, double focus_dist, double z);

constexpr double kMaxBlurSigmaPx = 8.0;

// disparity = baseline * focal_length / depth, and back.
double depth_to_disparity(const CameraModel& cam, double depth);
double disparity_to_depth(const CameraModel& cam, double disparity);

// n focus distances covering [z_min, z_max] uniformly in inverse depth,
// returned in ascending depth order.
std::vector<double> default_focus_distances(double z_min, double z_max, int64_t n);

} // namespace fsd
