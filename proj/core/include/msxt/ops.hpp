#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "msxt/rng.hpp"
#include "msxt/tensor.hpp"

// Differentiable operations. Row-major flat storage, explicit shapes, no
// broadcasting beyond bias-add over the last axis and the row/scalar scaling
// helpers below. Each op validates shapes, computes its forward value, and
// records a backward rule that accumulates into the parents' gradients.

namespace msxt {

namespace detail {

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <class T>
Node<T>* attach(Tensor<T>& out, std::initializer_list<Tensor<T>> parents) {
    auto& n = out.node();
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    return n.get();
}

template <class T>
bool any_requires_grad(std::initializer_list<Tensor<T>> ts) {
    if (!grad_enabled()) return false;
    for (const auto& t : ts)
        if (t.requires_grad()) return true;
    return false;
}

// C += A(m x k) * B(k x n)
template <class T>
void gemm_nn_acc(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* a = A + i * k;
        T* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T ap = a[p];
            const T* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

// C += A(m x k) * B(n x k)^T
template <class T>
void gemm_nt_acc(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* a = A + i * k;
        T* c = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* b = B + j * k;
            T s = T(0);
            for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
            c[j] += s;
        }
    }
}

// C += A(m x k)^T * B(m x n)
template <class T>
void gemm_tn_acc(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* a = A + i * k;
        const T* b = B + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T ap = a[p];
            T* c = C + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

// Splits a shape around `axis` into outer/mid/inner extents.
inline void axis_extents(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& mid,
                         std::size_t& inner) {
    outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    mid = s[axis];
    inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
    auto out = Tensor<T>::from_values(a.shape(), std::move(v));
    if (detail::any_requires_grad<T>({a, b})) {
        Node<T>* self = detail::attach(out, {a, b});
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        self->backward_fn = [self, pa, pb] {
            const auto& g = self->grad;
            if (pa->requires_grad) {
                auto& ga = pa->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (pb->requires_grad) {
                auto& gb = pb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        };
    }
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
    auto out = Tensor<T>::from_values(a.shape(), std::move(v));
    if (detail::any_requires_grad<T>({a, b})) {
        Node<T>* self = detail::attach(out, {a, b});
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        self->backward_fn = [self, pa, pb] {
            const auto& g = self->grad;
            if (pa->requires_grad) {
                auto& ga = pa->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (pb->requires_grad) {
                auto& gb = pb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        };
    }
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
    auto out = Tensor<T>::from_values(a.shape(), std::move(v));
    if (detail::any_requires_grad<T>({a, b})) {
        Node<T>* self = detail::attach(out, {a, b});
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        self->backward_fn = [self, pa, pb] {
            const auto& g = self->grad;
            if (pa->requires_grad) {
                auto& ga = pa->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                auto& gb = pb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->value[i];
            }
        };
    }
    return out;
}

// y = a*x + b with scalar constants.
template <class T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * x.value()[i] + b;
    auto out = Tensor<T>::from_values(x.shape(), std::move(v));
    if (detail::any_requires_grad<T>({x})) {
        Node<T>* self = detail::attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px, a] {
            auto& gx = px->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += a * self->grad[i];
        };
    }
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T a) {
    return affine(x, a, T(0));
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

// Shared skeleton: y_i = fwd(x_i), dx_i += dy_i * dfdx(x_i, y_i).
template <class T, class Fwd, class Dfdx>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Dfdx dfdx) {
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(x.value()[i]);
    auto out = Tensor<T>::from_values(x.shape(), std::move(v));
    if (any_requires_grad<T>({x})) {
        Node<T>* self = attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px, dfdx] {
            auto& gx = px->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += self->grad[i] * dfdx(px->value[i], self->value[i]);
        };
    }
    return out;
}

}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::unary_op(
        x,
        [=](T v) {
            return T(0.5) * v * (T(1) + T(std::erf(static_cast<double>(v) * inv_sqrt2)));
        },
        [=](T v, T) {
            const double vd = static_cast<double>(v);
            const double cdf = 0.5 * (1.0 + std::erf(vd * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * vd * vd);
            return T(cdf + vd * pdf);
        });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// ---------------------------------------------------------------------------
// Matrix ops (rank-2)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> v(m * n, T(0));
    detail::gemm_nn_acc(a.value().data(), b.value().data(), v.data(), m, k, n);
    auto out = Tensor<T>::from_values({m, n}, std::move(v));
    if (detail::any_requires_grad<T>({a, b})) {
        Node<T>* self = detail::attach(out, {a, b});
        Node<T>* pa = a.node().get();
        Node<T>* pb = b.node().get();
        self->backward_fn = [self, pa, pb, m, k, n] {
            const T* g = self->grad.data();
            if (pa->requires_grad)  // dA += dC * B^T
                detail::gemm_nt_acc(g, pb->value.data(), pa->ensure_grad().data(), m, n, k);
            if (pb->requires_grad)  // dB += A^T * dC
                detail::gemm_tn_acc(pa->value.data(), g, pb->ensure_grad().data(), m, k, n);
        };
    }
    return out;
}

template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("transpose_last2: expected rank-2, got " + shape_str(x.shape()));
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<T> v(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j * r + i] = x.value()[i * c + j];
    auto out = Tensor<T>::from_values({c, r}, std::move(v));
    if (detail::any_requires_grad<T>({x})) {
        Node<T>* self = detail::attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px, r, c] {
            auto& gx = px->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self->grad[j * r + i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Broadcast helpers
// ---------------------------------------------------------------------------

// x[..., C] + b[C]
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.rank() < 1 || b.rank() != 1 || x.dim(x.rank() - 1) != b.dim(0))
        throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not fit last axis of " +
                         shape_str(x.shape()));
    const std::size_t c = b.dim(0);
    const std::size_t rows = x.size() / c;
    std::vector<T> v(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) v[r * c + j] = x.value()[r * c + j] + b.value()[j];
    auto out = Tensor<T>::from_values(x.shape(), std::move(v));
    if (detail::any_requires_grad<T>({x, b})) {
        Node<T>* self = detail::attach(out, {x, b});
        Node<T>* px = x.node().get();
        Node<T>* pb = b.node().get();
        self->backward_fn = [self, px, pb, rows, c] {
            const auto& g = self->grad;
            if (px->requires_grad) {
                auto& gx = px->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (pb->requires_grad) {
                auto& gb = pb->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
            }
        };
    }
    return out;
}

// x*W + b, the usual linear layer.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_bias(matmul(x, w), b);
}

// x[R, C] scaled per row by r[R].
template <class T>
Tensor<T> mul_rowwise(const Tensor<T>& x, const Tensor<T>& r) {
    if (x.rank() != 2 || r.rank() != 1 || x.dim(0) != r.dim(0))
        throw ShapeError("mul_rowwise: rows of " + shape_str(x.shape()) + " vs " + shape_str(r.shape()));
    const std::size_t rows = x.dim(0), c = x.dim(1);
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] = x.value()[i * c + j] * r.value()[i];
    auto out = Tensor<T>::from_values(x.shape(), std::move(v));
    if (detail::any_requires_grad<T>({x, r})) {
        Node<T>* self = detail::attach(out, {x, r});
        Node<T>* px = x.node().get();
        Node<T>* pr = r.node().get();
        self->backward_fn = [self, px, pr, rows, c] {
            const auto& g = self->grad;
            if (px->requires_grad) {
                auto& gx = px->ensure_grad();
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] * pr->value[i];
            }
            if (pr->requires_grad) {
                auto& gr = pr->ensure_grad();
                for (std::size_t i = 0; i < rows; ++i) {
                    T s = T(0);
                    for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * px->value[i * c + j];
                    gr[i] += s;
                }
            }
        };
    }
    return out;
}

// x scaled by a one-element tensor (gradient flows into the scalar).
template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.size() != 1) throw ShapeError("mul_scalar: scale must have one element, got " + shape_str(s.shape()));
    const T sv = s.value()[0];
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = sv * x.value()[i];
    auto out = Tensor<T>::from_values(x.shape(), std::move(v));
    if (detail::any_requires_grad<T>({x, s})) {
        Node<T>* self = detail::attach(out, {x, s});
        Node<T>* px = x.node().get();
        Node<T>* ps = s.node().get();
        self->backward_fn = [self, px, ps, sv] {
            const auto& g = self->grad;
            if (px->requires_grad) {
                auto& gx = px->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sv * g[i];
            }
            if (ps->requires_grad) {
                T acc = T(0);
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * px->value[i];
                ps->ensure_grad()[0] += acc;
            }
        };
    }
    return out;
}

// Same data, new shape; element count must match.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.size())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape));
    auto out = Tensor<T>::from_values(std::move(new_shape), x.value());
    if (detail::any_requires_grad<T>({x})) {
        Node<T>* self = detail::attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px] {
            auto& gx = px->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self->grad[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax family (last axis, max-subtracted for stability)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) < 1)
        throw ShapeError("softmax_lastdim: bad shape " + shape_str(x.shape()));
    const std::size_t c = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / c;
    std::vector<T> v(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.value().data() + r * c;
        T* yr = v.data() + r * c;
        T mx = xr[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j < c; ++j) yr[j] *= inv;
    }
    auto out = Tensor<T>::from_values(x.shape(), std::move(v));
    if (detail::any_requires_grad<T>({x})) {
        Node<T>* self = detail::attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px, rows, c] {
            auto& gx = px->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self->value.data() + r * c;
                const T* g = self->grad.data() + r * c;
                T dot = T(0);
                for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[j] * (g[j] - dot);
            }
        };
    }
    return out;
}

template <class T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) < 1)
        throw ShapeError("log_softmax_lastdim: bad shape " + shape_str(x.shape()));
    const std::size_t c = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / c;
    std::vector<T> v(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.value().data() + r * c;
        T* yr = v.data() + r * c;
        T mx = xr[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(xr[j] - mx);
        const T lse = mx + std::log(sum);
        for (std::size_t j = 0; j < c; ++j) yr[j] = xr[j] - lse;
    }
    auto out = Tensor<T>::from_values(x.shape(), std::move(v));
    if (detail::any_requires_grad<T>({x})) {
        Node<T>* self = detail::attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px, rows, c] {
            auto& gx = px->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self->value.data() + r * c;
                const T* g = self->grad.data() + r * c;
                T gsum = T(0);
                for (std::size_t j = 0; j < c; ++j) gsum += g[j];
                for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[j] - std::exp(y[j]) * gsum;
            }
        };
    }
    return out;
}

// Reduces the last axis; a rank-1 input yields a scalar.
template <class T>
Tensor<T> logsumexp_lastdim(const Tensor<T>& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) < 1)
        throw ShapeError("logsumexp_lastdim: bad shape " + shape_str(x.shape()));
    const std::size_t c = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / c;
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    std::vector<T> v(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.value().data() + r * c;
        T mx = xr[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(xr[j] - mx);
        v[r] = mx + std::log(sum);
    }
    auto out = Tensor<T>::from_values(out_shape, std::move(v));
    if (detail::any_requires_grad<T>({x})) {
        Node<T>* self = detail::attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px, rows, c] {
            auto& gx = px->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T gr = self->grad[r];
                const T lse = self->value[r];
                for (std::size_t j = 0; j < c; ++j)
                    gx[r * c + j] += gr * std::exp(px->value[r * c + j] - lse);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layer norm over the last axis
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    const std::size_t c = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != c || bias.dim(0) != c)
        throw ShapeError("layer_norm: gain/bias must match last axis of " + shape_str(x.shape()));
    if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
    const std::size_t rows = x.size() / c;
    std::vector<T> v(x.size());
    std::vector<T> mean(rows), invstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.value().data() + r * c;
        T mu = T(0);
        for (std::size_t j = 0; j < c; ++j) mu += xr[j];
        mu /= T(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            const T d = xr[j] - mu;
            var += d * d;
        }
        var /= T(c);
        const T is = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        invstd[r] = is;
        for (std::size_t j = 0; j < c; ++j)
            v[r * c + j] = (xr[j] - mu) * is * gain.value()[j] + bias.value()[j];
    }
    auto out = Tensor<T>::from_values(x.shape(), std::move(v));
    if (detail::any_requires_grad<T>({x, gain, bias})) {
        Node<T>* self = detail::attach(out, {x, gain, bias});
        Node<T>* px = x.node().get();
        Node<T>* pg = gain.node().get();
        Node<T>* pb = bias.node().get();
        self->backward_fn = [self, px, pg, pb, rows, c, mean = std::move(mean),
                             invstd = std::move(invstd)] {
            for (std::size_t r = 0; r < rows; ++r) {
                const T* g = self->grad.data() + r * c;
                const T* xr = px->value.data() + r * c;
                const T mu = mean[r];
                const T is = invstd[r];
                if (px->requires_grad) {
                    auto& gx = px->ensure_grad();
                    T m1 = T(0), m2 = T(0);
                    for (std::size_t j = 0; j < c; ++j) {
                        const T xhat = (xr[j] - mu) * is;
                        const T dxhat = g[j] * pg->value[j];
                        m1 += dxhat;
                        m2 += dxhat * xhat;
                    }
                    m1 /= T(c);
                    m2 /= T(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const T xhat = (xr[j] - mu) * is;
                        const T dxhat = g[j] * pg->value[j];
                        gx[r * c + j] += is * (dxhat - m1 - xhat * m2);
                    }
                }
                if (pg->requires_grad) {
                    auto& gg = pg->ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) gg[j] += g[j] * (xr[j] - mu) * is;
                }
                if (pb->requires_grad) {
                    auto& gb = pb->ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g[j];
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Concat / split along a named axis
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
    std::size_t axis_total = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size())
            throw ShapeError("concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (i != axis && p.shape()[i] != ref[i])
                throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(ref) + " on axis " + std::to_string(i));
        axis_total += p.shape()[axis];
    }
    Shape out_shape = ref;
    out_shape[axis] = axis_total;
    std::size_t outer, mid, inner;
    detail::axis_extents(out_shape, axis, outer, mid, inner);

    std::vector<T> v(shape_numel(out_shape));
    std::size_t axis_off = 0;
    for (const auto& p : parts) {
        const std::size_t pm = p.shape()[axis];
        for (std::size_t o = 0; o < outer; ++o) {
            const T* src = p.value().data() + o * pm * inner;
            T* dst = v.data() + (o * mid + axis_off) * inner;
            std::copy(src, src + pm * inner, dst);
        }
        axis_off += pm;
    }
    auto out = Tensor<T>::from_values(std::move(out_shape), std::move(v));

    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parts)
            if (p.requires_grad()) needs = true;
    if (needs) {
        auto& n = out.node();
        n->requires_grad = true;
        std::vector<Node<T>*> raw;
        std::vector<std::size_t> sizes;
        for (const auto& p : parts) {
            n->parents.push_back(p.node());
            raw.push_back(p.node().get());
            sizes.push_back(p.shape()[axis]);
        }
        Node<T>* self = n.get();
        self->backward_fn = [self, raw, sizes, outer, mid, inner] {
            std::size_t axis_off = 0;
            for (std::size_t pi = 0; pi < raw.size(); ++pi) {
                const std::size_t pm = sizes[pi];
                if (raw[pi]->requires_grad) {
                    auto& gp = raw[pi]->ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o) {
                        const T* src = self->grad.data() + (o * mid + axis_off) * inner;
                        T* dst = gp.data() + o * pm * inner;
                        for (std::size_t i = 0; i < pm * inner; ++i) dst[i] += src[i];
                    }
                }
                axis_off += pm;
            }
        };
    }
    return out;
}

template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& sizes) {
    if (axis >= x.rank()) throw ShapeError("split: axis out of range for " + shape_str(x.shape()));
    std::size_t total = 0;
    for (std::size_t s : sizes) {
        if (s == 0) throw ContractError("split: zero-length part");
        total += s;
    }
    if (total != x.dim(axis))
        throw ShapeError("split: part sizes sum to " + std::to_string(total) + ", axis has " +
                         std::to_string(x.dim(axis)));
    std::size_t outer, mid, inner;
    detail::axis_extents(x.shape(), axis, outer, mid, inner);

    std::vector<Tensor<T>> outs;
    outs.reserve(sizes.size());
    std::size_t axis_off = 0;
    for (std::size_t part : sizes) {
        Shape s = x.shape();
        s[axis] = part;
        std::vector<T> v(shape_numel(s));
        for (std::size_t o = 0; o < outer; ++o) {
            const T* src = x.value().data() + (o * mid + axis_off) * inner;
            std::copy(src, src + part * inner, v.data() + o * part * inner);
        }
        auto out = Tensor<T>::from_values(std::move(s), std::move(v));
        if (detail::any_requires_grad<T>({x})) {
            Node<T>* self = detail::attach(out, {x});
            Node<T>* px = x.node().get();
            const std::size_t off = axis_off;
            self->backward_fn = [self, px, off, part, outer, mid, inner] {
                auto& gx = px->ensure_grad();
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = self->grad.data() + o * part * inner;
                    T* dst = gx.data() + (o * mid + off) * inner;
                    for (std::size_t i = 0; i < part * inner; ++i) dst[i] += src[i];
                }
            };
        }
        outs.push_back(std::move(out));
        axis_off += part;
    }
    return outs;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
Tensor<T> reduce_axis(const Tensor<T>& x, std::size_t axis, bool mean) {
    if (axis >= x.rank()) throw ShapeError("reduce: axis out of range for " + shape_str(x.shape()));
    std::size_t outer, mid, inner;
    axis_extents(x.shape(), axis, outer, mid, inner);
    Shape out_shape;
    for (std::size_t i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.shape()[i]);
    if (out_shape.empty()) out_shape = {1};
    const T w = mean ? T(1) / T(mid) : T(1);

    std::vector<T> v(outer * inner, T(0));
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t m = 0; m < mid; ++m) {
            const T* src = x.value().data() + (o * mid + m) * inner;
            T* dst = v.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    if (mean)
        for (auto& e : v) e *= w;

    auto out = Tensor<T>::from_values(std::move(out_shape), std::move(v));
    if (any_requires_grad<T>({x})) {
        Node<T>* self = attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px, outer, mid, inner, w] {
            auto& gx = px->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t m = 0; m < mid; ++m) {
                    const T* src = self->grad.data() + o * inner;
                    T* dst = gx.data() + (o * mid + m) * inner;
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += w * src[i];
                }
        };
    }
    return out;
}

}  // namespace detail

template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
    return detail::reduce_axis(x, axis, false);
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
    return detail::reduce_axis(x, axis, true);
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.value()) s += v;
    auto out = Tensor<T>::scalar(s);
    if (detail::any_requires_grad<T>({x})) {
        Node<T>* self = detail::attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px] {
            auto& gx = px->ensure_grad();
            const T g = self->grad[0];
            for (auto& e : gx) e += g;
        };
    }
    return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return scale(sum_all(x), T(1) / T(x.size()));
}

// ---------------------------------------------------------------------------
// Indexing
// ---------------------------------------------------------------------------

// Single element by flat index, as a scalar tensor.
template <class T>
Tensor<T> pick(const Tensor<T>& x, std::size_t flat_index) {
    if (flat_index >= x.size())
        throw ContractError("pick: index " + std::to_string(flat_index) + " out of range " +
                            std::to_string(x.size()));
    auto out = Tensor<T>::scalar(x.value()[flat_index]);
    if (detail::any_requires_grad<T>({x})) {
        Node<T>* self = detail::attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px, flat_index] { px->ensure_grad()[flat_index] += self->grad[0]; };
    }
    return out;
}

// Row selection along axis 0 (rank 1 or 2); rows may repeat.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> rows) {
    if (x.rank() < 1 || x.rank() > 2) throw ShapeError("gather_rows: expected rank 1 or 2");
    const std::size_t n0 = x.dim(0);
    const std::size_t stride = x.size() / n0;
    for (std::size_t r : rows)
        if (r >= n0) throw ContractError("gather_rows: row " + std::to_string(r) + " out of range");
    Shape out_shape = x.shape();
    out_shape[0] = rows.size();
    std::vector<T> v(rows.size() * stride);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(x.value().data() + rows[i] * stride, x.value().data() + (rows[i] + 1) * stride,
                  v.data() + i * stride);
    auto out = Tensor<T>::from_values(std::move(out_shape), std::move(v));
    if (detail::any_requires_grad<T>({x})) {
        Node<T>* self = detail::attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px, rows = std::move(rows), stride] {
            auto& gx = px->ensure_grad();
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (std::size_t j = 0; j < stride; ++j)
                    gx[rows[i] * stride + j] += self->grad[i * stride + j];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

// Inverted dropout: train mode zeroes each element with probability p and
// scales survivors by 1/(1-p); eval mode is the identity.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train_mode, RngStream& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0,1)");
    if (!train_mode || p == 0.0) return x;
    const T keep_scale = T(1.0 / (1.0 - p));
    std::vector<T> mult(x.size());
    for (auto& m : mult) m = rng.next_uniform() < p ? T(0) : keep_scale;
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.value()[i] * mult[i];
    auto out = Tensor<T>::from_values(x.shape(), std::move(v));
    if (detail::any_requires_grad<T>({x})) {
        Node<T>* self = detail::attach(out, {x});
        Node<T>* px = x.node().get();
        self->backward_fn = [self, px, mult = std::move(mult)] {
            auto& gx = px->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self->grad[i] * mult[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binary cross-entropy on probabilities
// ---------------------------------------------------------------------------

// Mean BCE between probabilities and 0/1 (or soft) targets. Probabilities are
// clamped to [eps, 1-eps]; the gradient is zero inside the clamped region.
template <class T>
Tensor<T> binary_cross_entropy(const Tensor<T>& probs, const std::vector<T>& targets, T eps = T(1e-7)) {
    if (probs.size() != targets.size())
        throw ShapeError("binary_cross_entropy: " + std::to_string(probs.size()) + " probs vs " +
                         std::to_string(targets.size()) + " targets");
    if (probs.size() == 0) throw ContractError("binary_cross_entropy: empty input");
    const std::size_t n = probs.size();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T ph = std::clamp(probs.value()[i], eps, T(1) - eps);
        acc -= targets[i] * std::log(ph) + (T(1) - targets[i]) * std::log(T(1) - ph);
    }
    auto out = Tensor<T>::scalar(acc / T(n));
    if (detail::any_requires_grad<T>({probs})) {
        Node<T>* self = detail::attach(out, {probs});
        Node<T>* pp = probs.node().get();
        self->backward_fn = [self, pp, targets, eps, n] {
            auto& gp = pp->ensure_grad();
            const T g = self->grad[0] / T(n);
            for (std::size_t i = 0; i < n; ++i) {
                const T p = pp->value[i];
                if (p <= eps || p >= T(1) - eps) continue;
                gp[i] += g * (p - targets[i]) / (p * (T(1) - p));
            }
        };
    }
    return out;
}

}  // namespace msxt
