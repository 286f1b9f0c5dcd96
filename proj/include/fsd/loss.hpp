// Training losses on disparity maps. The gradient-matching term penalizes
// the mean absolute forward difference of the error map along each axis.
#pragma once

#include <stdexcept>
#include <string>

#include "fsd/ops.hpp"

namespace fsd {

enum class LossVariant { kMse, kMae, kMseGrad };

inline LossVariant parse_loss_variant(const std::string& s) {
    if (s == "mse") return LossVariant::kMse;
    if (s == "mae") return LossVariant::kMae;
    if (s == "mse+grad") return LossVariant::kMseGrad;
    throw std::invalid_argument("unknown loss variant '" + s + "' (mse, mae, mse+grad)");
}

inline std::string loss_variant_name(LossVariant v) {
    switch (v) {
        case LossVariant::kMse: return "mse";
        case LossVariant::kMae: return "mae";
        case LossVariant::kMseGrad: return "mse+grad";
    }
    throw std::logic_error("loss_variant_name: bad enum");
}

struct LossConfig {
    double alpha = 0.2;
    LossVariant variant = LossVariant::kMseGrad;
};

// Scalar training loss between a predicted and a reference map, both [H x W].
template <typename T>
NodePtr<T> total_loss(Tape<T>* tape, const NodePtr<T>& pred, const NodePtr<T>& gt,
                      const LossConfig& cfg) {
    detail::require(pred->shape == gt->shape && pred->shape.size() == 2,
                    "total_loss: pred " + shape_str(pred->shape) + " vs gt " +
                        shape_str(gt->shape));
    auto delta = sub(tape, pred, gt);
    if (cfg.variant == LossVariant::kMae) return mean_all(tape, abs_op(tape, delta));
    auto mse = mean_all(tape, mul(tape, delta, delta));
    if (cfg.variant == LossVariant::kMse) return mse;
    auto gx = mean_all(tape, abs_op(tape, diff_x(tape, delta)));
    auto gy = mean_all(tape, abs_op(tape, diff_y(tape, delta)));
    return add(tape, mse, scale(tape, add(tape, gx, gy), cfg.alpha));
}

} // namespace fsd
