#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "fsd/tensor.hpp"

namespace fsd {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Eigen::Map<EMat<T>> mat_of(std::vector<T>& v, int64_t rows, int64_t cols) {
    return Eigen::Map<EMat<T>>(v.data(), rows, cols);
}

template <typename T>
Eigen::Map<const EMat<T>> mat_of(const std::vector<T>& v, int64_t rows, int64_t cols) {
    return Eigen::Map<const EMat<T>>(v.data(), rows, cols);
}

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<NodePtr<T>> ins) {
    for (const auto& n : ins) {
        if (n && n->requires_grad) return true;
    }
    return false;
}

// Marks the output and records the backward closure when anything upstream
// needs a gradient. With tape == nullptr the op runs forward-only.
template <typename T, typename F>
void finish(Tape<T>* tape, const char* op, std::initializer_list<NodePtr<T>> ins,
            const NodePtr<T>& out, F&& backward) {
    out->requires_grad = any_requires_grad(ins);
    if (tape && tape->recording && out->requires_grad) {
        std::vector<const Node<T>*> inputs;
        inputs.reserve(ins.size());
        for (const auto& n : ins) {
            if (n) inputs.push_back(n.get());
        }
        tape->record(op, std::move(inputs), out, std::forward<F>(backward));
    }
}

template <typename T, typename F>
void finish_n(Tape<T>* tape, const char* op, const std::vector<NodePtr<T>>& ins,
              const NodePtr<T>& out, F&& backward) {
    bool need = false;
    for (const auto& n : ins) need = need || (n && n->requires_grad);
    out->requires_grad = need;
    if (tape && tape->recording && need) {
        std::vector<const Node<T>*> inputs;
        inputs.reserve(ins.size());
        for (const auto& n : ins) {
            if (n) inputs.push_back(n.get());
        }
        tape->record(op, std::move(inputs), out, std::forward<F>(backward));
    }
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
NodePtr<T> add(Tape<T>* tape, const NodePtr<T>& a, const NodePtr<T>& b) {
    detail::require(a->shape == b->shape,
                    "add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_node<T>(a->shape);
    for (int64_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] + b->value[i];
    detail::finish(tape, "add", {a, b}, out, [a, b, out] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
        }
    });
    return out;
}

template <typename T>
NodePtr<T> sub(Tape<T>* tape, const NodePtr<T>& a, const NodePtr<T>& b) {
    detail::require(a->shape == b->shape,
                    "sub: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_node<T>(a->shape);
    for (int64_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] - b->value[i];
    detail::finish(tape, "sub", {a, b}, out, [a, b, out] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < b->size(); ++i) b->grad[i] -= out->grad[i];
        }
    });
    return out;
}

template <typename T>
NodePtr<T> mul(Tape<T>* tape, const NodePtr<T>& a, const NodePtr<T>& b) {
    detail::require(a->shape == b->shape,
                    "mul: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_node<T>(a->shape);
    for (int64_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] * b->value[i];
    detail::finish(tape, "mul", {a, b}, out, [a, b, out] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i] * a->value[i];
        }
    });
    return out;
}

template <typename T>
NodePtr<T> scale(Tape<T>* tape, const NodePtr<T>& a, double s) {
    auto out = make_node<T>(a->shape);
    const T sv = static_cast<T>(s);
    for (int64_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] * sv;
    detail::finish(tape, "scale", {a}, out, [a, out, sv] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * sv;
    });
    return out;
}

template <typename T>
NodePtr<T> add_scalar(Tape<T>* tape, const NodePtr<T>& a, double s) {
    auto out = make_node<T>(a->shape);
    const T sv = static_cast<T>(s);
    for (int64_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] + sv;
    detail::finish(tape, "add_scalar", {a}, out, [a, out] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
    });
    return out;
}

namespace detail {

// dydx receives (x, y) so activations can reuse whichever is cheaper.
template <typename T, typename FwdF, typename DerF>
NodePtr<T> unary(Tape<T>* tape, const char* op, const NodePtr<T>& x, FwdF f, DerF dydx) {
    auto out = make_node<T>(x->shape);
    for (int64_t i = 0; i < x->size(); ++i) out->value[i] = f(x->value[i]);
    detail::finish(tape, op, {x}, out, [x, out, dydx] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < x->size(); ++i) {
            x->grad[i] += out->grad[i] * dydx(x->value[i], out->value[i]);
        }
    });
    return out;
}

} // namespace detail

template <typename T>
NodePtr<T> sigmoid(Tape<T>* tape, const NodePtr<T>& x) {
    return detail::unary(
        tape, "sigmoid", x,
        [](T v) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : std::exp(v) / (T(1) + std::exp(v));
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
NodePtr<T> tanh_op(Tape<T>* tape, const NodePtr<T>& x) {
    return detail::unary(tape, "tanh", x, [](T v) { return std::tanh(v); },
                         [](T, T y) { return T(1) - y * y; });
}

template <typename T>
NodePtr<T> gelu(Tape<T>* tape, const NodePtr<T>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::unary(
        tape, "gelu", x,
        [=](T v) { return static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2))); },
        [=](T v, T) {
            double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * double(v) * double(v));
            return static_cast<T>(cdf + double(v) * pdf);
        });
}

template <typename T>
NodePtr<T> softplus(Tape<T>* tape, const NodePtr<T>& x) {
    return detail::unary(
        tape, "softplus", x,
        [](T v) {
            return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
        },
        [](T v, T) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : std::exp(v) / (T(1) + std::exp(v));
        });
}

// Subgradient 0 at the kink.
template <typename T>
NodePtr<T> abs_op(Tape<T>* tape, const NodePtr<T>& x) {
    return detail::unary(tape, "abs", x, [](T v) { return std::abs(v); },
                         [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// matrix products

template <typename T>
NodePtr<T> matmul(Tape<T>* tape, const NodePtr<T>& a, const NodePtr<T>& b) {
    detail::require(a->shape.size() == 2 && b->shape.size() == 2 && a->shape[1] == b->shape[0],
                    "matmul: incompatible shapes " + shape_str(a->shape) + " and " +
                        shape_str(b->shape));
    const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_node<T>({m, n});
    mat_of(out->value, m, n).noalias() = mat_of(a->value, m, k) * mat_of(b->value, k, n);
    detail::finish(tape, "matmul", {a, b}, out, [a, b, out, m, k, n] {
        auto og = mat_of(out->grad, m, n);
        if (a->requires_grad) {
            a->ensure_grad();
            mat_of(a->grad, m, k).noalias() += og * mat_of(b->value, k, n).transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            mat_of(b->grad, k, n).noalias() += mat_of(a->value, m, k).transpose() * og;
        }
    });
    return out;
}

// a [m x k] times b [n x k] transposed -> [m x n]; avoids materializing K^T in
// attention.
template <typename T>
NodePtr<T> matmul_nt(Tape<T>* tape, const NodePtr<T>& a, const NodePtr<T>& b) {
    detail::require(a->shape.size() == 2 && b->shape.size() == 2 && a->shape[1] == b->shape[1],
                    "matmul_nt: incompatible shapes " + shape_str(a->shape) + " and " +
                        shape_str(b->shape));
    const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
    auto out = make_node<T>({m, n});
    mat_of(out->value, m, n).noalias() =
        mat_of(a->value, m, k) * mat_of(b->value, n, k).transpose();
    detail::finish(tape, "matmul_nt", {a, b}, out, [a, b, out, m, k, n] {
        auto og = mat_of(out->grad, m, n);
        if (a->requires_grad) {
            a->ensure_grad();
            mat_of(a->grad, m, k).noalias() += og * mat_of(b->value, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            mat_of(b->grad, n, k).noalias() += og.transpose() * mat_of(a->value, m, k);
        }
    });
    return out;
}

// x [R x C] plus v broadcast over rows.
template <typename T>
NodePtr<T> add_rowvec(Tape<T>* tape, const NodePtr<T>& x, const NodePtr<T>& v) {
    detail::require(x->shape.size() == 2 && numel(v->shape) == x->shape[1],
                    "add_rowvec: " + shape_str(x->shape) + " vs " + shape_str(v->shape));
    const int64_t r = x->shape[0], c = x->shape[1];
    auto out = make_node<T>(x->shape);
    for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j < c; ++j) out->value[i * c + j] = x->value[i * c + j] + v->value[j];
    }
    detail::finish(tape, "add_rowvec", {x, v}, out, [x, v, out, r, c] {
        if (x->requires_grad) {
            x->ensure_grad();
            for (int64_t i = 0; i < r * c; ++i) x->grad[i] += out->grad[i];
        }
        if (v->requires_grad) {
            v->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                for (int64_t j = 0; j < c; ++j) v->grad[j] += out->grad[i * c + j];
            }
        }
    });
    return out;
}

// out[0, :] = s * w + b for scalar node s.
template <typename T>
NodePtr<T> scalar_vec_affine(Tape<T>* tape, const NodePtr<T>& s, const NodePtr<T>& w,
                             const NodePtr<T>& b) {
    detail::require(s->size() == 1, "scalar_vec_affine: s must be scalar");
    detail::require(w->shape == b->shape && w->shape.size() == 1,
                    "scalar_vec_affine: w/b must be matching vectors");
    const int64_t c = w->size();
    auto out = make_node<T>({int64_t(1), c});
    for (int64_t j = 0; j < c; ++j) out->value[j] = s->value[0] * w->value[j] + b->value[j];
    detail::finish(tape, "scalar_vec_affine", {s, w, b}, out, [s, w, b, out, c] {
        if (s->requires_grad) {
            s->ensure_grad();
            T acc = T(0);
            for (int64_t j = 0; j < c; ++j) acc += out->grad[j] * w->value[j];
            s->grad[0] += acc;
        }
        if (w->requires_grad) {
            w->ensure_grad();
            for (int64_t j = 0; j < c; ++j) w->grad[j] += out->grad[j] * s->value[0];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t j = 0; j < c; ++j) b->grad[j] += out->grad[j];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
NodePtr<T> reshape(Tape<T>* tape, const NodePtr<T>& x, Shape shape) {
    detail::require(numel(shape) == x->size(),
                    "reshape: " + shape_str(x->shape) + " -> " + shape_str(shape));
    auto out = make_node<T>(std::move(shape));
    out->value = x->value;
    detail::finish(tape, "reshape", {x}, out, [x, out] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
    });
    return out;
}

template <typename T>
NodePtr<T> slice_cols(Tape<T>* tape, const NodePtr<T>& x, int64_t c0, int64_t len) {
    detail::require(x->shape.size() == 2, "slice_cols: need 2-d input");
    const int64_t r = x->shape[0], c = x->shape[1];
    detail::require(c0 >= 0 && len >= 1 && c0 + len <= c,
                    "slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c0 + len) +
                        ") out of " + shape_str(x->shape));
    auto out = make_node<T>({r, len});
    for (int64_t i = 0; i < r; ++i) {
        std::copy_n(x->value.data() + i * c + c0, len, out->value.data() + i * len);
    }
    detail::finish(tape, "slice_cols", {x}, out, [x, out, r, c, c0, len] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < r; ++i) {
            for (int64_t j = 0; j < len; ++j) x->grad[i * c + c0 + j] += out->grad[i * len + j];
        }
    });
    return out;
}

template <typename T>
NodePtr<T> concat_cols(Tape<T>* tape, const std::vector<NodePtr<T>>& parts) {
    detail::require(!parts.empty(), "concat_cols: empty input");
    const int64_t r = parts[0]->shape[0];
    int64_t total = 0;
    for (const auto& p : parts) {
        detail::require(p->shape.size() == 2 && p->shape[0] == r,
                        "concat_cols: row mismatch at " + shape_str(p->shape));
        total += p->shape[1];
    }
    auto out = make_node<T>({r, total});
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t c = p->shape[1];
        for (int64_t i = 0; i < r; ++i) {
            std::copy_n(p->value.data() + i * c, c, out->value.data() + i * total + off);
        }
        off += c;
    }
    detail::finish_n(tape, "concat_cols", parts, out, [held = parts, out, r, total] {
        int64_t off2 = 0;
        for (const auto& p : held) {
            const int64_t c = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t i = 0; i < r; ++i) {
                    for (int64_t j = 0; j < c; ++j) {
                        p->grad[i * c + j] += out->grad[i * total + off2 + j];
                    }
                }
            }
            off2 += c;
        }
    });
    return out;
}

// Concatenates [C_i x H x W] maps along the channel axis.
template <typename T>
NodePtr<T> concat_ch(Tape<T>* tape, const std::vector<NodePtr<T>>& parts) {
    detail::require(!parts.empty(), "concat_ch: empty input");
    const int64_t h = parts[0]->shape[1], w = parts[0]->shape[2];
    int64_t ctotal = 0;
    for (const auto& p : parts) {
        detail::require(p->shape.size() == 3 && p->shape[1] == h && p->shape[2] == w,
                        "concat_ch: spatial mismatch at " + shape_str(p->shape));
        ctotal += p->shape[0];
    }
    auto out = make_node<T>({ctotal, h, w});
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy_n(p->value.data(), p->size(), out->value.data() + off);
        off += p->size();
    }
    detail::finish_n(tape, "concat_ch", parts, out, [held = parts, out] {
        int64_t off2 = 0;
        for (const auto& p : held) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t i = 0; i < p->size(); ++i) p->grad[i] += out->grad[off2 + i];
            }
            off2 += p->size();
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// row gather / scatter (token grouping)

template <typename T>
NodePtr<T> gather_rows(Tape<T>* tape, const NodePtr<T>& x, std::vector<int64_t> idx) {
    detail::require(x->shape.size() == 2, "gather_rows: need 2-d input");
    detail::require(!idx.empty(), "gather_rows: empty index set");
    const int64_t r = x->shape[0], c = x->shape[1];
    for (int64_t i : idx) {
        detail::require(i >= 0 && i < r, "gather_rows: index " + std::to_string(i) +
                                             " out of " + shape_str(x->shape));
    }
    auto out = make_node<T>({static_cast<int64_t>(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(x->value.data() + idx[i] * c, c, out->value.data() + int64_t(i) * c);
    }
    detail::finish(tape, "gather_rows", {x}, out, [x, out, idx = std::move(idx), c] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < idx.size(); ++i) {
            for (int64_t j = 0; j < c; ++j) {
                x->grad[idx[i] * c + j] += out->grad[int64_t(i) * c + j];
            }
        }
    });
    return out;
}

// Rows of `rows` placed at `idx` in an otherwise-zero [r x c] matrix.
template <typename T>
NodePtr<T> scatter_rows(Tape<T>* tape, int64_t r, const NodePtr<T>& rows,
                        std::vector<int64_t> idx) {
    detail::require(rows->shape.size() == 2 &&
                        rows->shape[0] == static_cast<int64_t>(idx.size()),
                    "scatter_rows: row count mismatch");
    const int64_t c = rows->shape[1];
    for (int64_t i : idx) {
        detail::require(i >= 0 && i < r, "scatter_rows: index out of range");
    }
    auto out = make_node<T>({r, c});
    for (size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(rows->value.data() + int64_t(i) * c, c, out->value.data() + idx[i] * c);
    }
    detail::finish(tape, "scatter_rows", {rows}, out, [rows, out, idx = std::move(idx), c] {
        if (!rows->requires_grad) return;
        rows->ensure_grad();
        for (size_t i = 0; i < idx.size(); ++i) {
            for (int64_t j = 0; j < c; ++j) {
                rows->grad[int64_t(i) * c + j] += out->grad[idx[i] * c + j];
            }
        }
    });
    return out;
}

// Copy of x with rows at `idx` replaced by `rows`.
template <typename T>
NodePtr<T> row_replace(Tape<T>* tape, const NodePtr<T>& x, const NodePtr<T>& rows,
                       std::vector<int64_t> idx) {
    detail::require(x->shape.size() == 2 && rows->shape.size() == 2 &&
                        rows->shape[1] == x->shape[1] &&
                        rows->shape[0] == static_cast<int64_t>(idx.size()),
                    "row_replace: shape mismatch " + shape_str(x->shape) + " vs " +
                        shape_str(rows->shape));
    const int64_t c = x->shape[1];
    auto out = make_node<T>(x->shape);
    out->value = x->value;
    for (size_t i = 0; i < idx.size(); ++i) {
        detail::require(idx[i] >= 0 && idx[i] < x->shape[0], "row_replace: index out of range");
        std::copy_n(rows->value.data() + int64_t(i) * c, c, out->value.data() + idx[i] * c);
    }
    detail::finish(tape, "row_replace", {x, rows}, out, [x, rows, out, idx = std::move(idx), c] {
        if (x->requires_grad) {
            x->ensure_grad();
            std::vector<char> replaced(x->shape[0], 0);
            for (int64_t i : idx) replaced[i] = 1;
            for (int64_t r = 0; r < x->shape[0]; ++r) {
                if (replaced[r]) continue;
                for (int64_t j = 0; j < c; ++j) x->grad[r * c + j] += out->grad[r * c + j];
            }
        }
        if (rows->requires_grad) {
            rows->ensure_grad();
            for (size_t i = 0; i < idx.size(); ++i) {
                for (int64_t j = 0; j < c; ++j) {
                    rows->grad[int64_t(i) * c + j] += out->grad[idx[i] * c + j];
                }
            }
        }
    });
    return out;
}

// Per-row constant factors (running-average weights); not differentiable in
// the factors.
template <typename T>
NodePtr<T> scale_rows(Tape<T>* tape, const NodePtr<T>& x, std::vector<double> factors) {
    detail::require(x->shape.size() == 2 &&
                        static_cast<int64_t>(factors.size()) == x->shape[0],
                    "scale_rows: factor count mismatch");
    const int64_t r = x->shape[0], c = x->shape[1];
    auto out = make_node<T>(x->shape);
    for (int64_t i = 0; i < r; ++i) {
        const T f = static_cast<T>(factors[i]);
        for (int64_t j = 0; j < c; ++j) out->value[i * c + j] = x->value[i * c + j] * f;
    }
    detail::finish(tape, "scale_rows", {x}, out, [x, out, factors = std::move(factors), r, c] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < r; ++i) {
            const T f = static_cast<T>(factors[i]);
            for (int64_t j = 0; j < c; ++j) x->grad[i * c + j] += out->grad[i * c + j] * f;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
NodePtr<T> sum_all(Tape<T>* tape, const NodePtr<T>& x) {
    auto out = make_node<T>({int64_t(1)});
    T acc = T(0);
    for (int64_t i = 0; i < x->size(); ++i) acc += x->value[i];
    out->value[0] = acc;
    detail::finish(tape, "sum_all", {x}, out, [x, out] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[0];
    });
    return out;
}

template <typename T>
NodePtr<T> mean_all(Tape<T>* tape, const NodePtr<T>& x) {
    auto out = make_node<T>({int64_t(1)});
    T acc = T(0);
    for (int64_t i = 0; i < x->size(); ++i) acc += x->value[i];
    const T inv = T(1) / static_cast<T>(x->size());
    out->value[0] = acc * inv;
    detail::finish(tape, "mean_all", {x}, out, [x, out, inv] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[0] * inv;
    });
    return out;
}

// ---------------------------------------------------------------------------
// forward differences over defined neighbor pairs

template <typename T>
NodePtr<T> diff_x(Tape<T>* tape, const NodePtr<T>& x) {
    detail::require(x->shape.size() == 2 && x->shape[1] >= 2, "diff_x: need [H x W], W >= 2");
    const int64_t h = x->shape[0], w = x->shape[1];
    auto out = make_node<T>({h, w - 1});
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j + 1 < w; ++j) {
            out->value[i * (w - 1) + j] = x->value[i * w + j + 1] - x->value[i * w + j];
        }
    }
    detail::finish(tape, "diff_x", {x}, out, [x, out, h, w] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j + 1 < w; ++j) {
                const T g = out->grad[i * (w - 1) + j];
                x->grad[i * w + j + 1] += g;
                x->grad[i * w + j] -= g;
            }
        }
    });
    return out;
}

template <typename T>
NodePtr<T> diff_y(Tape<T>* tape, const NodePtr<T>& x) {
    detail::require(x->shape.size() == 2 && x->shape[0] >= 2, "diff_y: need [H x W], H >= 2");
    const int64_t h = x->shape[0], w = x->shape[1];
    auto out = make_node<T>({h - 1, w});
    for (int64_t i = 0; i + 1 < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            out->value[i * w + j] = x->value[(i + 1) * w + j] - x->value[i * w + j];
        }
    }
    detail::finish(tape, "diff_y", {x}, out, [x, out, h, w] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i + 1 < h; ++i) {
            for (int64_t j = 0; j < w; ++j) {
                const T g = out->grad[i * w + j];
                x->grad[(i + 1) * w + j] += g;
                x->grad[i * w + j] -= g;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layer norm

// Softmax along one axis; max-subtraction keeps exp() in range.
template <typename T>
NodePtr<T> softmax(Tape<T>* tape, const NodePtr<T>& x, int axis = -1) {
    const int rank = static_cast<int>(x->shape.size());
    if (axis < 0) axis += rank;
    detail::require(axis >= 0 && axis < rank, "softmax: bad axis for " + shape_str(x->shape));
    int64_t outer = 1, inner = 1;
    const int64_t len = x->shape[axis];
    for (int i = 0; i < axis; ++i) outer *= x->shape[i];
    for (int i = axis + 1; i < rank; ++i) inner *= x->shape[i];
    auto out = make_node<T>(x->shape);
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            T mx = x->value[base];
            for (int64_t l = 1; l < len; ++l) mx = std::max(mx, x->value[base + l * inner]);
            T z = T(0);
            for (int64_t l = 0; l < len; ++l) {
                const T e = std::exp(x->value[base + l * inner] - mx);
                out->value[base + l * inner] = e;
                z += e;
            }
            const T invz = T(1) / z;
            for (int64_t l = 0; l < len; ++l) out->value[base + l * inner] *= invz;
        }
    }
    detail::finish(tape, "softmax", {x}, out, [x, out, outer, inner, len] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * len * inner + in;
                T dot = T(0);
                for (int64_t l = 0; l < len; ++l) {
                    dot += out->grad[base + l * inner] * out->value[base + l * inner];
                }
                for (int64_t l = 0; l < len; ++l) {
                    const int64_t i = base + l * inner;
                    x->grad[i] += out->value[i] * (out->grad[i] - dot);
                }
            }
        }
    });
    return out;
}

// Normalizes the last axis with population variance, then applies gain/bias.
template <typename T>
NodePtr<T> layer_norm(Tape<T>* tape, const NodePtr<T>& x, const NodePtr<T>& gain,
                      const NodePtr<T>& bias, double eps = 1e-5) {
    detail::require(!x->shape.empty(), "layer_norm: rank-0 input");
    const int64_t c = x->shape.back();
    detail::require(c >= 2, "layer_norm: normalized axis must have length >= 2");
    detail::require(numel(gain->shape) == c && numel(bias->shape) == c,
                    "layer_norm: gain/bias " + shape_str(gain->shape) + "/" +
                        shape_str(bias->shape) + " vs axis " + std::to_string(c));
    const int64_t rows = x->size() / c;
    auto out = make_node<T>(x->shape);
    std::vector<T> mean(rows), inv_sd(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x->value.data() + r * c;
        T mu = T(0);
        for (int64_t j = 0; j < c; ++j) mu += xr[j];
        mu /= static_cast<T>(c);
        T var = T(0);
        for (int64_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(c);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        mean[r] = mu;
        inv_sd[r] = inv;
        T* yr = out->value.data() + r * c;
        for (int64_t j = 0; j < c; ++j) {
            yr[j] = (xr[j] - mu) * inv * gain->value[j] + bias->value[j];
        }
    }
    detail::finish(tape, "layer_norm", {x, gain, bias}, out,
                   [x, gain, bias, out, rows, c, mean = std::move(mean),
                    inv_sd = std::move(inv_sd)] {
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = x->value.data() + r * c;
            const T* gr = out->grad.data() + r * c;
            const T mu = mean[r], inv = inv_sd[r];
            if (gain->requires_grad || bias->requires_grad) {
                if (gain->requires_grad) gain->ensure_grad();
                if (bias->requires_grad) bias->ensure_grad();
                for (int64_t j = 0; j < c; ++j) {
                    const T xh = (xr[j] - mu) * inv;
                    if (gain->requires_grad) gain->grad[j] += gr[j] * xh;
                    if (bias->requires_grad) bias->grad[j] += gr[j];
                }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                T sum_g = T(0), sum_gx = T(0);
                for (int64_t j = 0; j < c; ++j) {
                    const T g = gr[j] * gain->value[j];
                    sum_g += g;
                    sum_gx += g * (xr[j] - mu) * inv;
                }
                const T inv_c = T(1) / static_cast<T>(c);
                for (int64_t j = 0; j < c; ++j) {
                    const T g = gr[j] * gain->value[j];
                    const T xh = (xr[j] - mu) * inv;
                    x->grad[r * c + j] += inv * (g - sum_g * inv_c - xh * sum_gx * inv_c);
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// convolution

struct ConvGeom {
    int64_t cin, h, w, cout, k, stride, pad, hout, wout;
};

inline ConvGeom conv2d_geometry(const Shape& x, const Shape& w, int64_t stride, int64_t pad) {
    detail::require(x.size() == 3, "conv2d: input must be [C x H x W], got " + shape_str(x));
    detail::require(w.size() == 4, "conv2d: weight must be [Cout x Cin x k x k], got " +
                                       shape_str(w));
    detail::require(w[2] == w[3], "conv2d: kernel must be square, got " + shape_str(w));
    detail::require(w[2] % 2 == 1, "conv2d: kernel size must be odd, got " + shape_str(w));
    detail::require(w[1] == x[0], "conv2d: channel mismatch " + shape_str(x) + " vs " +
                                      shape_str(w));
    detail::require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    ConvGeom g{x[0], x[1], x[2], w[0], w[2], stride, pad, 0, 0};
    const int64_t nh = g.h + 2 * pad - g.k;
    const int64_t nw = g.w + 2 * pad - g.k;
    detail::require(nh >= 0 && nw >= 0 && nh % stride == 0 && nw % stride == 0,
                    "conv2d: non-integral output for input " + shape_str(x) + ", kernel " +
                        shape_str(w) + ", stride " + std::to_string(stride) + ", pad " +
                        std::to_string(pad));
    g.hout = nh / stride + 1;
    g.wout = nw / stride + 1;
    return g;
}

inline int64_t same_padding(int64_t k) { return (k - 1) / 2; }

namespace detail {

// cols is [cin*k*k x hout*wout], row-major.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
    const int64_t cw = g.hout * g.wout;
    for (int64_t ci = 0; ci < g.cin; ++ci) {
        for (int64_t ky = 0; ky < g.k; ++ky) {
            for (int64_t kx = 0; kx < g.k; ++kx) {
                T* dst = cols + ((ci * g.k + ky) * g.k + kx) * cw;
                for (int64_t oy = 0; oy < g.hout; ++oy) {
                    const int64_t iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wout, T(0));
                        dst += g.wout;
                        continue;
                    }
                    const T* src = x + (ci * g.h + iy) * g.w;
                    for (int64_t ox = 0; ox < g.wout; ++ox) {
                        const int64_t ix = ox * g.stride - g.pad + kx;
                        *dst++ = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds cols back into x.
template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* x) {
    const int64_t cw = g.hout * g.wout;
    for (int64_t ci = 0; ci < g.cin; ++ci) {
        for (int64_t ky = 0; ky < g.k; ++ky) {
            for (int64_t kx = 0; kx < g.k; ++kx) {
                const T* src = cols + ((ci * g.k + ky) * g.k + kx) * cw;
                for (int64_t oy = 0; oy < g.hout; ++oy) {
                    const int64_t iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) {
                        src += g.wout;
                        continue;
                    }
                    T* dst = x + (ci * g.h + iy) * g.w;
                    for (int64_t ox = 0; ox < g.wout; ++ox) {
                        const int64_t ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) dst[ix] += *src;
                        ++src;
                    }
                }
            }
        }
    }
}

} // namespace detail

// x [Cin x H x W], w [Cout x Cin x k x k], optional bias [Cout].
// The im2col buffer is transient; backward rebuilds it instead of retaining.
template <typename T>
NodePtr<T> conv2d(Tape<T>* tape, const NodePtr<T>& x, const NodePtr<T>& w, const NodePtr<T>& b,
                  int64_t stride, int64_t pad) {
    const ConvGeom g = conv2d_geometry(x->shape, w->shape, stride, pad);
    if (b) {
        detail::require(numel(b->shape) == g.cout,
                        "conv2d: bias " + shape_str(b->shape) + " vs cout " +
                            std::to_string(g.cout));
    }
    const int64_t patch = g.cin * g.k * g.k;
    const int64_t cw = g.hout * g.wout;
    auto out = make_node<T>({g.cout, g.hout, g.wout});
    {
        std::vector<T> cols(static_cast<size_t>(patch * cw));
        detail::im2col(x->value.data(), g, cols.data());
        mat_of(out->value, g.cout, cw).noalias() =
            mat_of(w->value, g.cout, patch) * mat_of(cols, patch, cw);
    }
    if (b) {
        for (int64_t co = 0; co < g.cout; ++co) {
            const T bv = b->value[co];
            T* o = out->value.data() + co * cw;
            for (int64_t i = 0; i < cw; ++i) o[i] += bv;
        }
    }
    auto backward = [x, w, b, out, g, patch, cw] {
        auto og = mat_of(out->grad, g.cout, cw);
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (int64_t co = 0; co < g.cout; ++co) {
                T acc = T(0);
                const T* o = out->grad.data() + co * cw;
                for (int64_t i = 0; i < cw; ++i) acc += o[i];
                b->grad[co] += acc;
            }
        }
        if (w->requires_grad) {
            w->ensure_grad();
            std::vector<T> cols(static_cast<size_t>(patch * cw));
            detail::im2col(x->value.data(), g, cols.data());
            mat_of(w->grad, g.cout, patch).noalias() += og * mat_of(cols, patch, cw).transpose();
        }
        if (x->requires_grad) {
            x->ensure_grad();
            std::vector<T> dcols(static_cast<size_t>(patch * cw));
            mat_of(dcols, patch, cw).noalias() =
                mat_of(w->value, g.cout, patch).transpose() * og;
            detail::col2im_add(dcols.data(), g, x->grad.data());
        }
    };
    if (b) {
        detail::finish(tape, "conv2d", {x, w, b}, out, backward);
    } else {
        detail::finish(tape, "conv2d", {x, w}, out, backward);
    }
    return out;
}

// Adjoint of conv2d with matching parameters. Input [A x H' x W'] and weight
// [A x B x k x k] produce [B x H x W] with H = (H'-1)*stride + k - 2*pad, so a
// weight tensor shared with a conv2d call maps its output geometry back to its
// input geometry exactly.
template <typename T>
NodePtr<T> conv_transpose2d(Tape<T>* tape, const NodePtr<T>& x, const NodePtr<T>& w,
                            const NodePtr<T>& b, int64_t stride, int64_t pad = 0) {
    detail::require(x->shape.size() == 3,
                    "conv_transpose2d: input must be [C x H x W], got " + shape_str(x->shape));
    detail::require(w->shape.size() == 4 && w->shape[2] == w->shape[3],
                    "conv_transpose2d: weight must be [Cin x Cout x k x k], got " +
                        shape_str(w->shape));
    detail::require(w->shape[0] == x->shape[0],
                    "conv_transpose2d: channel mismatch " + shape_str(x->shape) + " vs " +
                        shape_str(w->shape));
    detail::require(stride >= 1 && pad >= 0, "conv_transpose2d: bad stride/pad");
    const int64_t a = x->shape[0], hin = x->shape[1], win = x->shape[2];
    const int64_t bch = w->shape[1], k = w->shape[2];
    const int64_t hout = (hin - 1) * stride + k - 2 * pad;
    const int64_t wout = (win - 1) * stride + k - 2 * pad;
    detail::require(hout >= 1 && wout >= 1, "conv_transpose2d: empty output");
    if (b) {
        detail::require(numel(b->shape) == bch, "conv_transpose2d: bias size mismatch");
    }
    // Geometry of the conv2d this op is adjoint to.
    const ConvGeom g{bch, hout, wout, a, k, stride, pad, hin, win};
    const int64_t patch = bch * k * k;
    const int64_t cw = hin * win;
    auto out = make_node<T>({bch, hout, wout});
    {
        std::vector<T> cols(static_cast<size_t>(patch * cw));
        mat_of(cols, patch, cw).noalias() =
            mat_of(w->value, a, patch).transpose() * mat_of(x->value, a, cw);
        detail::col2im_add(cols.data(), g, out->value.data());
    }
    if (b) {
        const int64_t hw = hout * wout;
        for (int64_t co = 0; co < bch; ++co) {
            const T bv = b->value[co];
            T* o = out->value.data() + co * hw;
            for (int64_t i = 0; i < hw; ++i) o[i] += bv;
        }
    }
    auto backward = [x, w, b, out, g, patch, cw, a, bch, hout, wout] {
        if (b && b->requires_grad) {
            b->ensure_grad();
            const int64_t hw = hout * wout;
            for (int64_t co = 0; co < bch; ++co) {
                T acc = T(0);
                const T* o = out->grad.data() + co * hw;
                for (int64_t i = 0; i < hw; ++i) acc += o[i];
                b->grad[co] += acc;
            }
        }
        std::vector<T> dcols(static_cast<size_t>(patch * cw));
        detail::im2col(out->grad.data(), g, dcols.data());
        if (x->requires_grad) {
            x->ensure_grad();
            mat_of(x->grad, a, cw).noalias() +=
                mat_of(w->value, a, patch) * mat_of(dcols, patch, cw);
        }
        if (w->requires_grad) {
            w->ensure_grad();
            mat_of(w->grad, a, patch).noalias() +=
                mat_of(x->value, a, cw) * mat_of(dcols, patch, cw).transpose();
        }
    };
    if (b) {
        detail::finish(tape, "conv_transpose2d", {x, w, b}, out, backward);
    } else {
        detail::finish(tape, "conv_transpose2d", {x, w}, out, backward);
    }
    return out;
}

// ---------------------------------------------------------------------------
// token / map layout changes

// [C x H x W] -> [(H/P * W/P) x C*P*P]; patches in row-major grid order,
// pixels row-major within each patch.
template <typename T>
NodePtr<T> patchify(Tape<T>* tape, const NodePtr<T>& x, int64_t p) {
    detail::require(x->shape.size() == 3, "patchify: need [C x H x W]");
    const int64_t c = x->shape[0], h = x->shape[1], w = x->shape[2];
    detail::require(p >= 1 && h % p == 0 && w % p == 0,
                    "patchify: patch " + std::to_string(p) + " does not divide " +
                        shape_str(x->shape));
    const int64_t gh = h / p, gw = w / p, d = c * p * p;
    auto out = make_node<T>({gh * gw, d});
    for (int64_t pr = 0; pr < gh; ++pr) {
        for (int64_t pc = 0; pc < gw; ++pc) {
            T* dst = out->value.data() + (pr * gw + pc) * d;
            for (int64_t ci = 0; ci < c; ++ci) {
                for (int64_t py = 0; py < p; ++py) {
                    const T* src = x->value.data() + (ci * h + pr * p + py) * w + pc * p;
                    std::copy_n(src, p, dst + (ci * p + py) * p);
                }
            }
        }
    }
    detail::finish(tape, "patchify", {x}, out, [x, out, c, h, w, p] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const int64_t gh = h / p, gw = w / p, d = c * p * p;
        for (int64_t pr = 0; pr < gh; ++pr) {
            for (int64_t pc = 0; pc < gw; ++pc) {
                const T* src = out->grad.data() + (pr * gw + pc) * d;
                for (int64_t ci = 0; ci < c; ++ci) {
                    for (int64_t py = 0; py < p; ++py) {
                        T* dst = x->grad.data() + (ci * h + pr * p + py) * w + pc * p;
                        for (int64_t px = 0; px < p; ++px) dst[px] += src[(ci * p + py) * p + px];
                    }
                }
            }
        }
    });
    return out;
}

// [k x d] tokens in row-major grid order -> [d x gh x gw] feature map.
template <typename T>
NodePtr<T> tokens_to_map(Tape<T>* tape, const NodePtr<T>& t, int64_t gh, int64_t gw) {
    detail::require(t->shape.size() == 2 && t->shape[0] == gh * gw,
                    "tokens_to_map: " + shape_str(t->shape) + " vs grid " + std::to_string(gh) +
                        "x" + std::to_string(gw));
    const int64_t k = t->shape[0], d = t->shape[1];
    auto out = make_node<T>({d, gh, gw});
    for (int64_t i = 0; i < k; ++i) {
        for (int64_t j = 0; j < d; ++j) out->value[j * k + i] = t->value[i * d + j];
    }
    detail::finish(tape, "tokens_to_map", {t}, out, [t, out, k, d] {
        if (!t->requires_grad) return;
        t->ensure_grad();
        for (int64_t i = 0; i < k; ++i) {
            for (int64_t j = 0; j < d; ++j) t->grad[i * d + j] += out->grad[j * k + i];
        }
    });
    return out;
}

// Nearest-neighbor resize of a [C x H x W] map.
template <typename T>
NodePtr<T> resize_nearest(Tape<T>* tape, const NodePtr<T>& x, int64_t h2, int64_t w2) {
    detail::require(x->shape.size() == 3, "resize_nearest: need [C x H x W]");
    detail::require(h2 >= 1 && w2 >= 1, "resize_nearest: bad target size");
    const int64_t c = x->shape[0], h = x->shape[1], w = x->shape[2];
    auto out = make_node<T>({c, h2, w2});
    std::vector<int64_t> src_y(h2), src_x(w2);
    for (int64_t y = 0; y < h2; ++y) {
        src_y[y] = std::min<int64_t>(h - 1, (2 * y + 1) * h / (2 * h2));
    }
    for (int64_t xx = 0; xx < w2; ++xx) {
        src_x[xx] = std::min<int64_t>(w - 1, (2 * xx + 1) * w / (2 * w2));
    }
    for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t y = 0; y < h2; ++y) {
            const T* src = x->value.data() + (ci * h + src_y[y]) * w;
            T* dst = out->value.data() + (ci * h2 + y) * w2;
            for (int64_t xx = 0; xx < w2; ++xx) dst[xx] = src[src_x[xx]];
        }
    }
    detail::finish(tape, "resize_nearest", {x}, out,
                   [x, out, c, h, w, h2, w2, src_y = std::move(src_y),
                    src_x = std::move(src_x)] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t ci = 0; ci < c; ++ci) {
            for (int64_t y = 0; y < h2; ++y) {
                T* dst = x->grad.data() + (ci * h + src_y[y]) * w;
                const T* src = out->grad.data() + (ci * h2 + y) * w2;
                for (int64_t xx = 0; xx < w2; ++xx) dst[src_x[xx]] += src[xx];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// LSTM cell

template <typename T>
struct LstmCellParams {
    NodePtr<T> wx; // [d_in x 4*d_h]
    NodePtr<T> wh; // [d_h x 4*d_h]
    NodePtr<T> b;  // [4*d_h]
};

template <typename T>
struct LstmOut {
    NodePtr<T> h;
    NodePtr<T> c;
};

// One step of a standard LSTM over a batch of rows. Gate slices are ordered
// input, forget, cell, output.
template <typename T>
LstmOut<T> lstm_cell(Tape<T>* tape, const NodePtr<T>& x, const NodePtr<T>& h,
                     const NodePtr<T>& c, const LstmCellParams<T>& p) {
    detail::require(x->shape.size() == 2 && h->shape.size() == 2 && c->shape.size() == 2,
                    "lstm_cell: x/h/c must be 2-d");
    const int64_t dh = h->shape[1];
    detail::require(c->shape == h->shape, "lstm_cell: h " + shape_str(h->shape) + " vs c " +
                                              shape_str(c->shape));
    detail::require(x->shape[0] == h->shape[0], "lstm_cell: row mismatch " +
                                                    shape_str(x->shape) + " vs " +
                                                    shape_str(h->shape));
    detail::require(p.wx->shape.size() == 2 && p.wx->shape[0] == x->shape[1] &&
                        p.wx->shape[1] == 4 * dh,
                    "lstm_cell: wx " + shape_str(p.wx->shape));
    detail::require(p.wh->shape.size() == 2 && p.wh->shape[0] == dh && p.wh->shape[1] == 4 * dh,
                    "lstm_cell: wh " + shape_str(p.wh->shape));
    detail::require(numel(p.b->shape) == 4 * dh, "lstm_cell: bias " + shape_str(p.b->shape));

    auto gates = add_rowvec(tape, add(tape, matmul(tape, x, p.wx), matmul(tape, h, p.wh)), p.b);
    auto i_g = sigmoid(tape, slice_cols(tape, gates, 0, dh));
    auto f_g = sigmoid(tape, slice_cols(tape, gates, dh, dh));
    auto g_g = tanh_op(tape, slice_cols(tape, gates, 2 * dh, dh));
    auto o_g = sigmoid(tape, slice_cols(tape, gates, 3 * dh, dh));
    auto c_new = add(tape, mul(tape, f_g, c), mul(tape, i_g, g_g));
    auto h_new = mul(tape, o_g, tanh_op(tape, c_new));
    return {h_new, c_new};
}

} // namespace fsd
