#pragma once

#include <functional>

#include "fsd/ops.hpp"
#include "fsd/rng.hpp"

namespace fsd {

struct GradCheckResult {
    bool pass = false;
    double max_rel_err = 0.0;
    std::string worst_param;
    double analytic_at_worst = 0.0;
    double fd_at_worst = 0.0;
    int64_t components_checked = 0;
};

// Central-difference check of the reverse-mode gradient. `f` rebuilds the
// graph from the current parameter values and returns the scalar output node;
// it is called once with a tape for the analytic pass and twice per sampled
// component with tape == nullptr for the numeric passes. Run in double:
// float epsilons drown the comparison.
//
// samples_per_tensor < 0 sweeps every component; otherwise a seeded random
// subset of that size is drawn per tensor, which keeps whole-network checks
// inside a sane time budget.
template <typename T>
GradCheckResult grad_check(const std::function<NodePtr<T>(Tape<T>*)>& f,
                           const std::vector<NodePtr<T>>& params, double eps, double tol,
                           int64_t samples_per_tensor = -1, uint64_t sample_seed = 0) {
    for (const auto& p : params) p->zero_grad();
    Tape<T> tape;
    auto root = f(&tape);
    if (root->size() != 1) {
        throw std::invalid_argument("grad_check: f must be scalar-valued, got " +
                                    shape_str(root->shape));
    }
    tape.backward(root);
    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }

    GradCheckResult res;
    res.pass = true;
    Rng rng(sample_seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& p = params[pi];
        std::vector<int64_t> indices;
        if (samples_per_tensor < 0 || samples_per_tensor >= p->size()) {
            indices.resize(static_cast<size_t>(p->size()));
            for (int64_t i = 0; i < p->size(); ++i) indices[static_cast<size_t>(i)] = i;
        } else {
            std::vector<int64_t> all(static_cast<size_t>(p->size()));
            for (int64_t i = 0; i < p->size(); ++i) all[static_cast<size_t>(i)] = i;
            rng.shuffle(all);
            indices.assign(all.begin(), all.begin() + samples_per_tensor);
        }
        for (int64_t i : indices) {
            const T saved = p->value[i];
            p->value[i] = saved + static_cast<T>(eps);
            const double up = static_cast<double>(f(nullptr)->value[0]);
            p->value[i] = saved - static_cast<T>(eps);
            const double dn = static_cast<double>(f(nullptr)->value[0]);
            p->value[i] = saved;
            const double fd = (up - dn) / (2.0 * eps);
            const double ag = static_cast<double>(analytic[pi][i]);
            const double rel = std::abs(ag - fd) / std::max(1.0, std::abs(fd));
            ++res.components_checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param =
                    (p->name.empty() ? "param" + std::to_string(pi) : p->name) + "[" +
                    std::to_string(i) + "]";
                res.analytic_at_worst = ag;
                res.fd_at_worst = fd;
            }
        }
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

} // namespace fsd
