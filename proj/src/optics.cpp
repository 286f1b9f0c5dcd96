#include "fsd/optics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fsd {

void CameraModel::validate() const {
    if (!(focal_length > 0) || !(f_number > 0) || !(baseline > 0) || !(pixel_pitch > 0) ||
        !(sensor_distance > 0)) {
        throw std::domain_error("CameraModel: all parameters must be positive");
    }
}

double coc_diameter(const CameraModel& cam, double focus_dist, double z) {
    cam.validate();
    if (!(z > 0)) {
        throw std::domain_error("coc_diameter: depth must be positive, got " +
                                std::to_string(z));
    }
    if (!(focus_dist > 0)) {
        throw std::domain_error("coc_diameter: focus distance must be positive, got " +
                                std::to_string(focus_dist));
    }
    if (z == focus_dist) return 0.0;
    const double f2 = cam.focal_length * cam.focal_length;
    return f2 / (cam.f_number * (z - focus_dist)) * std::abs(1.0 - focus_dist / z);
}

double coc_sigma_px(const CameraModel& cam, double focus_dist, double z) {
    const double c = coc_diameter(cam, focus_dist, z);
    const double sigma = std::abs(c) / cam.pixel_pitch / 2.0;
    return std::clamp(sigma, 0.0, kMaxBlurSigmaPx);
}

double depth_to_disparity(const CameraModel& cam, double depth) {
    cam.validate();
    if (!(depth > 0)) {
        throw std::domain_error("depth_to_disparity: depth must be positive, got " +
                                std::to_string(depth));
    }
    return cam.baseline * cam.focal_length / depth;
}

double disparity_to_depth(const CameraModel& cam, double disparity) {
    cam.validate();
    if (!(disparity > 0)) {
        throw std::domain_error("disparity_to_depth: disparity must be positive, got " +
                                std::to_string(disparity));
    }
    return cam.baseline * cam.focal_length / disparity;
}

std::vector<double> default_focus_distances(double z_min, double z_max, int64_t n) {
    if (!(z_min > 0) || !(z_max > z_min)) {
        throw std::domain_error("default_focus_distances: need 0 < z_min < z_max");
    }
    if (n < 1) throw std::domain_error("default_focus_distances: need n >= 1");
    const double u_min = 1.0 / z_max;
    const double u_max = 1.0 / z_min;
    std::vector<double> out;
    out.reserve(static_cast<size_t>(n));
    // Distances are rounded to float precision: single-precision depth maps
    // can then hold them exactly, and a pixel on the focus plane stays exactly
    // sharp through the whole pipeline.
    if (n == 1) {
        out.push_back(static_cast<double>(static_cast<float>(1.0 / (0.5 * (u_min + u_max)))));
        return out;
    }
    for (int64_t i = 0; i < n; ++i) {
        const double u =
            u_min + (u_max - u_min) * static_cast<double>(i) / static_cast<double>(n - 1);
        out.push_back(static_cast<double>(static_cast<float>(1.0 / u)));
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace fsd
