// Depth evaluation metrics over masked maps. All inputs are row-major
// [h x w] buffers; the mask (empty means all pixels) selects which pixels
// enter the averages, and both maps must be strictly positive there.
//
// Bumpiness measures curvature of the error map d = pred - gt: the Frobenius
// norm of the 2x2 Hessian estimated with central second differences, using
// the nearest interior stencil at borders, clamped at 0.05 per pixel and
// scaled by 100.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fsd {

struct MetricsReport {
    double rmse = 0;
    double log_rmse = 0;
    double abs_rel = 0;
    double sqr_rel = 0;
    double bump = 0;
    double acc_1 = 0; // % of pixels with max-ratio < 1.25
    double acc_2 = 0; // < 1.25^2
    double acc_3 = 0; // < 1.25^3
};

MetricsReport compute_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                              const std::vector<uint8_t>& mask, int64_t h, int64_t w);

// Fixed column order shared by every CSV the tools emit.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& m);

} // namespace fsd
