#include "fsd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace fsd {

namespace {

// Frobenius norm of the Hessian of d at (y, x). Second derivatives use the
// central stencil at the nearest interior point; the cross term divides by
// the actual index span so borders fall back to one-sided differences.
double hessian_norm(const std::vector<double>& d, int64_t h, int64_t w, int64_t y, int64_t x) {
    auto at = [&](int64_t yy, int64_t xx) { return d[size_t(yy * w + xx)]; };
    double dxx = 0.0, dyy = 0.0, dxy = 0.0;
    if (w >= 3) {
        const int64_t xc = std::clamp(x, int64_t(1), w - 2);
        dxx = at(y, xc - 1) - 2.0 * at(y, xc) + at(y, xc + 1);
    }
    if (h >= 3) {
        const int64_t yc = std::clamp(y, int64_t(1), h - 2);
        dyy = at(yc - 1, x) - 2.0 * at(yc, x) + at(yc + 1, x);
    }
    const int64_t ym = std::max<int64_t>(y - 1, 0), yp = std::min<int64_t>(y + 1, h - 1);
    const int64_t xm = std::max<int64_t>(x - 1, 0), xp = std::min<int64_t>(x + 1, w - 1);
    if (yp > ym && xp > xm) {
        dxy = (at(yp, xp) - at(yp, xm) - at(ym, xp) + at(ym, xm)) /
              double((yp - ym) * (xp - xm));
    }
    return std::sqrt(dxx * dxx + 2.0 * dxy * dxy + dyy * dyy);
}

} // namespace

MetricsReport compute_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                              const std::vector<uint8_t>& mask, int64_t h, int64_t w) {
    if (h < 1 || w < 1) throw std::invalid_argument("compute_metrics: empty extent");
    const size_t n = size_t(h * w);
    if (pred.size() != n || gt.size() != n)
        throw std::invalid_argument("compute_metrics: buffer size mismatch");
    if (!mask.empty() && mask.size() != n)
        throw std::invalid_argument("compute_metrics: mask size mismatch");

    std::vector<double> delta(n);
    for (size_t i = 0; i < n; ++i) delta[i] = pred[i] - gt[i];

    double se = 0, log_se = 0, ar = 0, sr = 0, bump = 0;
    int64_t a1 = 0, a2 = 0, a3 = 0, count = 0;
    const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const size_t i = size_t(y * w + x);
            if (!mask.empty() && !mask[i]) continue;
            if (!(gt[i] > 0.0) || !(pred[i] > 0.0))
                throw std::domain_error("compute_metrics: maps must be positive on the mask");
            ++count;
            const double d = delta[i];
            se += d * d;
            const double ld = std::log(pred[i]) - std::log(gt[i]);
            log_se += ld * ld;
            ar += std::abs(d) / gt[i];
            sr += d * d / gt[i];
            bump += std::min(0.05, hessian_norm(delta, h, w, y, x));
            const double ratio = std::max(pred[i] / gt[i], gt[i] / pred[i]);
            a1 += ratio < t1;
            a2 += ratio < t2;
            a3 += ratio < t3;
        }
    }
    if (count == 0) throw std::invalid_argument("compute_metrics: mask selects no pixels");

    MetricsReport m;
    const double inv = 1.0 / double(count);
    m.rmse = std::sqrt(se * inv);
    m.log_rmse = std::sqrt(log_se * inv);
    m.abs_rel = ar * inv;
    m.sqr_rel = sr * inv;
    m.bump = 100.0 * bump * inv;
    m.acc_1 = 100.0 * double(a1) * inv;
    m.acc_2 = 100.0 * double(a2) * inv;
    m.acc_3 = 100.0 * double(a3) * inv;
    return m;
}

std::string metrics_csv_header() {
    return "rmse,log_rmse,abs_rel,sqr_rel,bump,acc_1,acc_2,acc_3";
}

std::string metrics_csv_row(const MetricsReport& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", m.rmse,
                  m.log_rmse, m.abs_rel, m.sqr_rel, m.bump, m.acc_1, m.acc_2, m.acc_3);
    return buf;
}

} // namespace fsd
