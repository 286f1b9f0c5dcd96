#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fsd/grad_check.hpp"
#include "fsd/ops.hpp"
#include "fsd/rng.hpp"

// Catalog of finite-difference checks, one per differentiable op, shared by
// the unit tests and the acceptance runner. All checks run in double with a
// full component sweep.
namespace opchecks {

struct OpCheck {
    std::string name;
    std::function<fsd::GradCheckResult()> run;
};

constexpr double kEps = 1e-6;
constexpr double kTol = 1e-4;

inline fsd::NodePtr<double> rand_node(fsd::Rng& rng, fsd::Shape shape, bool grad = true,
                                      double lo = -1.0, double hi = 1.0) {
    auto n = fsd::make_node<double>(std::move(shape), grad);
    for (auto& v : n->value) v = rng.uniform(lo, hi);
    return n;
}

// Scalar readout with a fixed random probe so every output component carries
// a distinct weight in the objective.
inline fsd::NodePtr<double> probe_sum(fsd::Tape<double>* tape, const fsd::NodePtr<double>& x,
                                      const fsd::NodePtr<double>& probe) {
    return fsd::sum_all(tape, fsd::mul(tape, x, probe));
}

inline std::vector<OpCheck> all_op_checks() {
    using fsd::NodePtr;
    using fsd::Tape;
    using fsd::make_node;
    using G = fsd::GradCheckResult;

    std::vector<OpCheck> checks;
    auto add_check = [&](std::string name, std::function<G()> run) {
        checks.push_back({std::move(name), std::move(run)});
    };

    add_check("add", [] {
        fsd::Rng rng(101);
        auto a = rand_node(rng, {3, 4});
        auto b = rand_node(rng, {3, 4});
        auto p = rand_node(rng, {3, 4}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::add(t, a, b), p); }, {a, b}, kEps,
            kTol);
    });
    add_check("sub", [] {
        fsd::Rng rng(102);
        auto a = rand_node(rng, {3, 4});
        auto b = rand_node(rng, {3, 4});
        auto p = rand_node(rng, {3, 4}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::sub(t, a, b), p); }, {a, b}, kEps,
            kTol);
    });
    add_check("mul", [] {
        fsd::Rng rng(103);
        auto a = rand_node(rng, {3, 4});
        auto b = rand_node(rng, {3, 4});
        auto p = rand_node(rng, {3, 4}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::mul(t, a, b), p); }, {a, b}, kEps,
            kTol);
    });
    add_check("scale", [] {
        fsd::Rng rng(104);
        auto a = rand_node(rng, {2, 5});
        auto p = rand_node(rng, {2, 5}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::scale(t, a, -1.7), p); }, {a}, kEps,
            kTol);
    });
    add_check("add_scalar", [] {
        fsd::Rng rng(105);
        auto a = rand_node(rng, {2, 5});
        auto p = rand_node(rng, {2, 5}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::add_scalar(t, a, 0.3), p); }, {a},
            kEps, kTol);
    });
    add_check("sigmoid", [] {
        fsd::Rng rng(106);
        auto a = rand_node(rng, {2, 3}, true, -2.0, 2.0);
        auto p = rand_node(rng, {2, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::sigmoid(t, a), p); }, {a}, kEps,
            kTol);
    });
    add_check("tanh", [] {
        fsd::Rng rng(107);
        auto a = rand_node(rng, {2, 3}, true, -2.0, 2.0);
        auto p = rand_node(rng, {2, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::tanh_op(t, a), p); }, {a}, kEps,
            kTol);
    });
    add_check("gelu", [] {
        fsd::Rng rng(108);
        auto a = rand_node(rng, {2, 3}, true, -2.0, 2.0);
        auto p = rand_node(rng, {2, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::gelu(t, a), p); }, {a}, kEps, kTol);
    });
    add_check("softplus", [] {
        fsd::Rng rng(109);
        auto a = rand_node(rng, {2, 3}, true, -2.0, 2.0);
        auto p = rand_node(rng, {2, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::softplus(t, a), p); }, {a}, kEps,
            kTol);
    });
    add_check("abs", [] {
        fsd::Rng rng(110);
        // Keep values away from the kink, where the subgradient and the
        // centered difference legitimately disagree.
        auto a = make_node<double>({2, 3}, true);
        for (auto& v : a->value) {
            const double u = rng.uniform(0.2, 1.0);
            v = rng.uniform() < 0.5 ? -u : u;
        }
        auto p = rand_node(rng, {2, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::abs_op(t, a), p); }, {a}, kEps,
            kTol);
    });
    add_check("matmul", [] {
        fsd::Rng rng(111);
        auto a = rand_node(rng, {3, 4});
        auto b = rand_node(rng, {4, 2});
        auto p = rand_node(rng, {3, 2}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::matmul(t, a, b), p); }, {a, b}, kEps,
            kTol);
    });
    add_check("matmul_nt", [] {
        fsd::Rng rng(112);
        auto a = rand_node(rng, {3, 4});
        auto b = rand_node(rng, {5, 4});
        auto p = rand_node(rng, {3, 5}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::matmul_nt(t, a, b), p); }, {a, b},
            kEps, kTol);
    });
    add_check("add_rowvec", [] {
        fsd::Rng rng(113);
        auto x = rand_node(rng, {3, 4});
        auto v = rand_node(rng, {4});
        auto p = rand_node(rng, {3, 4}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::add_rowvec(t, x, v), p); }, {x, v},
            kEps, kTol);
    });
    add_check("scalar_vec_affine", [] {
        fsd::Rng rng(114);
        auto s = rand_node(rng, {1});
        auto w = rand_node(rng, {5});
        auto b = rand_node(rng, {5});
        auto p = rand_node(rng, {1, 5}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::scalar_vec_affine(t, s, w, b), p); },
            {s, w, b}, kEps, kTol);
    });
    add_check("reshape", [] {
        fsd::Rng rng(115);
        auto x = rand_node(rng, {2, 6});
        auto p = rand_node(rng, {3, 4}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::reshape(t, x, {3, 4}), p); }, {x},
            kEps, kTol);
    });
    add_check("slice_cols", [] {
        fsd::Rng rng(116);
        auto x = rand_node(rng, {3, 7});
        auto p = rand_node(rng, {3, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::slice_cols(t, x, 2, 3), p); }, {x},
            kEps, kTol);
    });
    add_check("concat_cols", [] {
        fsd::Rng rng(117);
        auto a = rand_node(rng, {3, 2});
        auto b = rand_node(rng, {3, 4});
        auto p = rand_node(rng, {3, 6}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::concat_cols<double>(t, {a, b}), p); },
            {a, b}, kEps, kTol);
    });
    add_check("concat_ch", [] {
        fsd::Rng rng(118);
        auto a = rand_node(rng, {2, 3, 4});
        auto b = rand_node(rng, {1, 3, 4});
        auto p = rand_node(rng, {3, 3, 4}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::concat_ch<double>(t, {a, b}), p); },
            {a, b}, kEps, kTol);
    });
    add_check("gather_rows", [] {
        fsd::Rng rng(119);
        auto x = rand_node(rng, {5, 3});
        auto p = rand_node(rng, {4, 3}, false);
        // Repeated index exercises gradient accumulation into one row.
        return fsd::grad_check<double>(
            [&](Tape<double>* t) {
                return probe_sum(t, fsd::gather_rows(t, x, {4, 0, 2, 2}), p);
            },
            {x}, kEps, kTol);
    });
    add_check("scatter_rows", [] {
        fsd::Rng rng(120);
        auto rows = rand_node(rng, {3, 2});
        auto p = rand_node(rng, {6, 2}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) {
                return probe_sum(t, fsd::scatter_rows(t, 6, rows, {5, 0, 3}), p);
            },
            {rows}, kEps, kTol);
    });
    add_check("row_replace", [] {
        fsd::Rng rng(121);
        auto x = rand_node(rng, {5, 3});
        auto rows = rand_node(rng, {2, 3});
        auto p = rand_node(rng, {5, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) {
                return probe_sum(t, fsd::row_replace(t, x, rows, {1, 3}), p);
            },
            {x, rows}, kEps, kTol);
    });
    add_check("scale_rows", [] {
        fsd::Rng rng(122);
        auto x = rand_node(rng, {4, 3});
        auto p = rand_node(rng, {4, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) {
                return probe_sum(t, fsd::scale_rows(t, x, {0.5, -1.0, 2.0, 0.0}), p);
            },
            {x}, kEps, kTol);
    });
    add_check("sum_all", [] {
        fsd::Rng rng(123);
        auto x = rand_node(rng, {3, 3});
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return fsd::sum_all(t, fsd::mul(t, x, x)); }, {x}, kEps,
            kTol);
    });
    add_check("mean_all", [] {
        fsd::Rng rng(124);
        auto x = rand_node(rng, {3, 3});
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return fsd::mean_all(t, fsd::mul(t, x, x)); }, {x}, kEps,
            kTol);
    });
    add_check("diff_x", [] {
        fsd::Rng rng(125);
        auto x = rand_node(rng, {3, 5});
        auto p = rand_node(rng, {3, 4}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::diff_x(t, x), p); }, {x}, kEps,
            kTol);
    });
    add_check("diff_y", [] {
        fsd::Rng rng(126);
        auto x = rand_node(rng, {5, 3});
        auto p = rand_node(rng, {4, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::diff_y(t, x), p); }, {x}, kEps,
            kTol);
    });
    add_check("softmax_last", [] {
        fsd::Rng rng(127);
        auto x = rand_node(rng, {3, 4}, true, -2.0, 2.0);
        auto p = rand_node(rng, {3, 4}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::softmax(t, x), p); }, {x}, kEps,
            kTol);
    });
    add_check("softmax_axis0", [] {
        fsd::Rng rng(128);
        auto x = rand_node(rng, {4, 3}, true, -2.0, 2.0);
        auto p = rand_node(rng, {4, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::softmax(t, x, 0), p); }, {x}, kEps,
            kTol);
    });
    add_check("layer_norm", [] {
        fsd::Rng rng(129);
        auto x = rand_node(rng, {3, 6});
        auto g = rand_node(rng, {6}, true, 0.5, 1.5);
        auto b = rand_node(rng, {6});
        auto p = rand_node(rng, {3, 6}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::layer_norm(t, x, g, b), p); },
            {x, g, b}, kEps, kTol);
    });
    add_check("conv2d", [] {
        fsd::Rng rng(130);
        auto x = rand_node(rng, {2, 6, 6});
        auto w = rand_node(rng, {3, 2, 3, 3});
        auto b = rand_node(rng, {3});
        auto p = rand_node(rng, {3, 6, 6}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::conv2d(t, x, w, b, 1, 1), p); },
            {x, w, b}, kEps, kTol);
    });
    add_check("conv2d_stride2", [] {
        fsd::Rng rng(131);
        auto x = rand_node(rng, {2, 7, 7});
        auto w = rand_node(rng, {3, 2, 3, 3});
        auto b = rand_node(rng, {3});
        auto p = rand_node(rng, {3, 4, 4}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::conv2d(t, x, w, b, 2, 1), p); },
            {x, w, b}, kEps, kTol);
    });
    add_check("conv2d_no_bias", [] {
        fsd::Rng rng(132);
        auto x = rand_node(rng, {1, 5, 5});
        auto w = rand_node(rng, {2, 1, 3, 3});
        auto p = rand_node(rng, {2, 5, 5}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) {
                return probe_sum(t, fsd::conv2d<double>(t, x, w, nullptr, 1, 1), p);
            },
            {x, w}, kEps, kTol);
    });
    add_check("conv_transpose2d", [] {
        fsd::Rng rng(133);
        auto x = rand_node(rng, {3, 3, 3});
        auto w = rand_node(rng, {3, 2, 2, 2});
        auto b = rand_node(rng, {2});
        auto p = rand_node(rng, {2, 6, 6}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) {
                return probe_sum(t, fsd::conv_transpose2d(t, x, w, b, 2), p);
            },
            {x, w, b}, kEps, kTol);
    });
    add_check("patchify", [] {
        fsd::Rng rng(134);
        auto x = rand_node(rng, {2, 4, 4});
        auto p = rand_node(rng, {4, 8}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::patchify(t, x, 2), p); }, {x}, kEps,
            kTol);
    });
    add_check("tokens_to_map", [] {
        fsd::Rng rng(135);
        auto x = rand_node(rng, {6, 3});
        auto p = rand_node(rng, {3, 2, 3}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::tokens_to_map(t, x, 2, 3), p); },
            {x}, kEps, kTol);
    });
    add_check("resize_nearest_up", [] {
        fsd::Rng rng(136);
        auto x = rand_node(rng, {2, 3, 3});
        auto p = rand_node(rng, {2, 5, 5}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::resize_nearest(t, x, 5, 5), p); },
            {x}, kEps, kTol);
    });
    add_check("resize_nearest_down", [] {
        fsd::Rng rng(137);
        auto x = rand_node(rng, {2, 5, 5});
        auto p = rand_node(rng, {2, 2, 2}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) { return probe_sum(t, fsd::resize_nearest(t, x, 2, 2), p); },
            {x}, kEps, kTol);
    });
    add_check("lstm_cell", [] {
        fsd::Rng rng(138);
        auto x = rand_node(rng, {2, 3});
        auto h = rand_node(rng, {2, 4});
        auto c = rand_node(rng, {2, 4});
        fsd::LstmCellParams<double> lp{rand_node(rng, {3, 16}), rand_node(rng, {4, 16}),
                                       rand_node(rng, {16})};
        auto ph = rand_node(rng, {2, 4}, false);
        auto pc = rand_node(rng, {2, 4}, false);
        return fsd::grad_check<double>(
            [&](Tape<double>* t) {
                auto out = fsd::lstm_cell(t, x, h, c, lp);
                return fsd::add(t, probe_sum(t, out.h, ph), probe_sum(t, out.c, pc));
            },
            {x, h, c, lp.wx, lp.wh, lp.b}, kEps, kTol);
    });
    return checks;
}

} // namespace opchecks
