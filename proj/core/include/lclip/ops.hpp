#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <vector>

#include "lclip/tensor.hpp"

// Differentiable primitives. Shapes use the conventions:
//   images/latents  [B, H, W, C]   (channels last)
//   token features  [B, T, W]
//   matrices        [rows, cols]
// Every op validates operand shapes and rejects non-finite inputs; backward
// closures propagate only into parents that require grad.

namespace lclip::ops {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapRM = Eigen::Map<MatRM<S>>;
template <class S>
using CMapRM = Eigen::Map<const MatRM<S>>;

namespace detail {

template <class S>
void check_finite(const Tensor<S>& t, const char* op) {
    check(t.all_finite(), op, ": non-finite input rejected");
}

inline void parallel_chunks(int64_t n, int64_t chunk, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    const int64_t nchunks = (n + chunk - 1) / chunk;
    if (nchunks == 1) {
        fn(0, n);
        return;
    }
#pragma omp parallel for schedule(dynamic, 1)
    for (int64_t c = 0; c < nchunks; ++c) {
        const int64_t lo = c * chunk;
        fn(lo, std::min(lo + chunk, n));
    }
}

// C (+)= op_a(A) * op_b(B). Row chunking is by fixed block size, so results
// are bit-identical for any thread count.
template <class S>
void gemm(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n,
          bool trans_a, bool trans_b, bool accumulate) {
    CMapRM<S> A(a, trans_a ? k : m, trans_a ? m : k);
    CMapRM<S> B(b, trans_b ? n : k, trans_b ? k : n);
    MapRM<S> C(c, m, n);
    const int64_t block = 64;
    parallel_chunks(m, block, [&](int64_t lo, int64_t hi) {
        auto rows = hi - lo;
        auto Cb = C.middleRows(lo, rows);
        if (!trans_a && !trans_b) {
            if (accumulate) Cb.noalias() += A.middleRows(lo, rows) * B;
            else Cb.noalias() = A.middleRows(lo, rows) * B;
        } else if (!trans_a && trans_b) {
            if (accumulate) Cb.noalias() += A.middleRows(lo, rows) * B.transpose();
            else Cb.noalias() = A.middleRows(lo, rows) * B.transpose();
        } else if (trans_a && !trans_b) {
            if (accumulate) Cb.noalias() += A.middleCols(lo, rows).transpose() * B;
            else Cb.noalias() = A.middleCols(lo, rows).transpose() * B;
        } else {
            if (accumulate) Cb.noalias() += A.middleCols(lo, rows).transpose() * B.transpose();
            else Cb.noalias() = A.middleCols(lo, rows).transpose() * B.transpose();
        }
    });
}

// True when `small` equals the trailing dimensions of `big` (or is the
// 1-element scalar), i.e. the supported broadcast pattern.
inline bool suffix_broadcastable(const Shape& big, const Shape& small) {
    if (numel_of(small) == 1) return true;
    if (small.size() > big.size()) return false;
    const size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i)
        if (big[off + i] != small[i]) return false;
    return true;
}

template <class S>
void accumulate_grad(const std::shared_ptr<TensorNode<S>>& node, const RawVec<S>& delta) {
    node->ensure_grad();
    for (size_t i = 0; i < delta.size(); ++i) node->grad[i] += delta[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise with suffix broadcasting
// ---------------------------------------------------------------------------

enum class BinKind { Add, Sub, Mul };

template <class S>
Tensor<S> binary_broadcast(const Tensor<S>& a, const Tensor<S>& b, BinKind kind, const char* name) {
    detail::check_finite(a, name);
    detail::check_finite(b, name);
    check(detail::suffix_broadcastable(a.shape(), b.shape()), name,
          ": shape ", shape_str(b.shape()), " does not broadcast over ",
          shape_str(a.shape()));
    const int64_t n = a.numel();
    const int64_t m = b.numel();
    Tensor<S> out = Tensor<S>::make_op(a.shape(), {a, b});
    const S* av = a.values().data();
    const S* bv = b.values().data();
    S* ov = out.values_mut().data();
    // b tiles contiguously over a, so the loop runs block-wise
    for (int64_t base = 0; base < n; base += m) {
        const S* ab = av + base;
        S* ob = ov + base;
        switch (kind) {
            case BinKind::Add:
                for (int64_t i = 0; i < m; ++i) ob[i] = ab[i] + bv[i];
                break;
            case BinKind::Sub:
                for (int64_t i = 0; i < m; ++i) ob[i] = ab[i] - bv[i];
                break;
            case BinKind::Mul:
                for (int64_t i = 0; i < m; ++i) ob[i] = ab[i] * bv[i];
                break;
        }
    }
    if (out.recorded()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        out.set_backward([an, bn, on, n, m, kind]() {
            const S* g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                S* ga = an->grad.data();
                if (kind == BinKind::Mul) {
                    const S* bv2 = bn->value.data();
                    for (int64_t base = 0; base < n; base += m)
                        for (int64_t i = 0; i < m; ++i) ga[base + i] += g[base + i] * bv2[i];
                } else {
                    for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                S* gb = bn->grad.data();
                const S* av2 = an->value.data();
                for (int64_t base = 0; base < n; base += m) {
                    switch (kind) {
                        case BinKind::Add:
                            for (int64_t i = 0; i < m; ++i) gb[i] += g[base + i];
                            break;
                        case BinKind::Sub:
                            for (int64_t i = 0; i < m; ++i) gb[i] -= g[base + i];
                            break;
                        case BinKind::Mul:
                            for (int64_t i = 0; i < m; ++i) gb[i] += g[base + i] * av2[base + i];
                            break;
                    }
                }
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_broadcast(a, b, BinKind::Add, "add");
}
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_broadcast(a, b, BinKind::Sub, "sub");
}
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_broadcast(a, b, BinKind::Mul, "mul");
}

// F computes the value from x, DF the derivative from (x, y); both must be
// cheap inlinable functors.
template <class S, class F, class DF>
Tensor<S> unary_map(const Tensor<S>& x, const char* name, F f, DF df_from_xy) {
    detail::check_finite(x, name);
    const int64_t n = x.numel();
    Tensor<S> out = Tensor<S>::make_op(x.shape(), {x});
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    detail::parallel_chunks(n, 1 << 15, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) ov[i] = f(xv[i]);
    });
    if (out.recorded()) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on, n, df_from_xy]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = on->grad.data();
            const S* xv2 = xn->value.data();
            const S* yv = on->value.data();
            S* gx = xn->grad.data();
            detail::parallel_chunks(n, 1 << 15, [&](int64_t lo, int64_t hi) {
                for (int64_t i = lo; i < hi; ++i) gx[i] += g[i] * df_from_xy(xv2[i], yv[i]);
            });
        });
    }
    return out;
}

template <class S>
Tensor<S> neg(const Tensor<S>& x) {
    return unary_map<S>(x, "neg", [](S v) { return -v; }, [](S, S) { return S(-1); });
}

template <class S>
Tensor<S> exp_(const Tensor<S>& x) {
    return unary_map<S>(x, "exp", [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <class S>
Tensor<S> log_(const Tensor<S>& x) {
    return unary_map<S>(x, "log", [](S v) { return std::log(v); },
                        [](S v, S) { return S(1) / v; });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    return unary_map<S>(x, "sigmoid",
                        [](S v) { return S(1) / (S(1) + std::exp(-v)); },
                        [](S, S y) { return y * (S(1) - y); });
}

// log(1 + e^x), computed without overflow.
template <class S>
Tensor<S> softplus(const Tensor<S>& x) {
    return unary_map<S>(x, "softplus",
                        [](S v) { return v > S(0) ? v + std::log1p(std::exp(-v))
                                                  : std::log1p(std::exp(v)); },
                        [](S v, S) { return S(1) / (S(1) + std::exp(-v)); });
}

// Exact gelu, x * Phi(x); Phi is cached for the backward pass.
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr S inv_sqrt2 = S(0.7071067811865475244);
    constexpr S inv_sqrt2pi = S(0.3989422804014326779);
    detail::check_finite(x, "gelu");
    const int64_t n = x.numel();
    Tensor<S> out = Tensor<S>::make_op(x.shape(), {x});
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    const bool recorded = out.recorded();
    auto cdf = recorded ? std::make_shared<RawVec<S>>() : nullptr;
    if (cdf) cdf->resize(static_cast<size_t>(n));
    detail::parallel_chunks(n, 1 << 15, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const S c = S(0.5) * (S(1) + std::erf(xv[i] * inv_sqrt2));
            if (cdf) (*cdf)[static_cast<size_t>(i)] = c;
            ov[i] = xv[i] * c;
        }
    });
    if (recorded) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on, cdf, n]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = on->grad.data();
            const S* xv2 = xn->value.data();
            const S* cv = cdf->data();
            S* gx = xn->grad.data();
            detail::parallel_chunks(n, 1 << 15, [&](int64_t lo, int64_t hi) {
                for (int64_t i = lo; i < hi; ++i) {
                    const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * xv2[i] * xv2[i]);
                    gx[i] += g[i] * (cv[i] + xv2[i] * pdf);
                }
            });
        });
    }
    return out;
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
    return unary_map<S>(x, "add_scalar", [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <class S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
    return unary_map<S>(x, "mul_scalar", [c](S v) { return v * c; }, [c](S, S) { return c; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
    detail::check_finite(x, "sum");
    Tensor<S> out = Tensor<S>::make_op({1}, {x});
    S acc = S(0);
    for (S v : x.values()) acc += v;
    out.values_mut()[0] = acc;
    if (out.recorded()) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S g = on->grad[0];
            for (S& gx : xn->grad) gx += g;
        });
    }
    return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
    return mul_scalar(sum(x), S(1) / static_cast<S>(x.numel()));
}

// ---------------------------------------------------------------------------
// matmul / transpose / reshape
// ---------------------------------------------------------------------------

// Contracts the last axis of `a` with the first (or, when transpose_b, the
// last) axis of the 2-d tensor `b`: [,.., K] x [K, N] -> [.., N].
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b = false) {
    detail::check_finite(a, "matmul");
    detail::check_finite(b, "matmul");
    check(a.ndim() >= 2 && b.ndim() == 2, "matmul: need [..,K] x 2-d, got ",
          shape_str(a.shape()), " x ", shape_str(b.shape()));
    const int64_t k = a.shape().back();
    const int64_t bk = transpose_b ? b.dim(1) : b.dim(0);
    const int64_t n = transpose_b ? b.dim(0) : b.dim(1);
    check(k == bk, "matmul: inner dimensions differ, ", shape_str(a.shape()),
          " x ", shape_str(b.shape()), (transpose_b ? " (b transposed)" : ""));
    const int64_t m = a.numel() / k;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    Tensor<S> out = Tensor<S>::make_op(std::move(out_shape), {a, b});
    detail::gemm(a.values().data(), b.values().data(), out.values_mut().data(),
                 m, k, n, false, transpose_b, false);
    if (out.recorded()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        out.set_backward([an, bn, on, m, k, n, transpose_b]() {
            const S* g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = dC * B^T   (or dC * B when b was transposed)
                detail::gemm(g, bn->value.data(), an->grad.data(), m, n, k,
                             false, !transpose_b, true);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (!transpose_b) {
                    // dB = A^T * dC
                    detail::gemm(an->value.data(), g, bn->grad.data(), k, m, n,
                                 true, false, true);
                } else {
                    // dB = dC^T * A
                    detail::gemm(g, an->value.data(), bn->grad.data(), n, m, k,
                                 true, false, true);
                }
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> transpose2d(const Tensor<S>& x) {
    detail::check_finite(x, "transpose2d");
    check(x.ndim() == 2, "transpose2d: expects 2-d, got ", shape_str(x.shape()));
    const int64_t r = x.dim(0), c = x.dim(1);
    Tensor<S> out = Tensor<S>::make_op({c, r}, {x});
    CMapRM<S> X(x.values().data(), r, c);
    MapRM<S> O(out.values_mut().data(), c, r);
    O = X.transpose();
    if (out.recorded()) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on, r, c]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            CMapRM<S> G(on->grad.data(), c, r);
            MapRM<S> GX(xn->grad.data(), r, c);
            GX += G.transpose();
        });
    }
    return out;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
    check(numel_of(new_shape) == x.numel(), "reshape: ", shape_str(x.shape()),
          " has ", x.numel(), " elements, target ", shape_str(new_shape));
    Tensor<S> out = Tensor<S>::make_op(std::move(new_shape), {x});
    std::copy(x.values().begin(), x.values().end(), out.values_mut().begin());
    if (out.recorded()) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on]() {
            if (!xn->requires_grad) return;
            detail::accumulate_grad(xn, on->grad);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / cross_entropy
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
    detail::check_finite(x, "softmax");
    if (axis < 0) axis += x.ndim();
    check(axis >= 0 && axis < x.ndim(), "softmax: axis out of range");
    const int64_t len = x.dim(axis);
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);

    Tensor<S> out = Tensor<S>::make_op(x.shape(), {x});
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            S mx = xv[base];
            for (int64_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
            S denom = S(0);
            for (int64_t j = 0; j < len; ++j) {
                const S e = std::exp(xv[base + j * inner] - mx);
                ov[base + j * inner] = e;
                denom += e;
            }
            const S inv = S(1) / denom;
            for (int64_t j = 0; j < len; ++j) ov[base + j * inner] *= inv;
        }
    }
    if (out.recorded()) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on, outer, len, inner]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = on->grad.data();
            const S* p = on->value.data();
            S* gx = xn->grad.data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * len * inner + in;
                    S dot = S(0);
                    for (int64_t j = 0; j < len; ++j)
                        dot += g[base + j * inner] * p[base + j * inner];
                    for (int64_t j = 0; j < len; ++j) {
                        const int64_t ix = base + j * inner;
                        gx[ix] += p[ix] * (g[ix] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// Normalizes over the last axis; gamma/beta have that axis's length.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
    detail::check_finite(x, "layer_norm");
    detail::check_finite(gamma, "layer_norm");
    detail::check_finite(beta, "layer_norm");
    const int64_t w = x.shape().back();
    check(gamma.numel() == w && beta.numel() == w,
          "layer_norm: gamma/beta must have ", w, " elements");
    const int64_t rows = x.numel() / w;
    Tensor<S> out = Tensor<S>::make_op(x.shape(), {x, gamma, beta});
    auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    const S* xv = x.values().data();
    const S* gv = gamma.values().data();
    const S* bv = beta.values().data();
    S* ov = out.values_mut().data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* xr = xv + r * w;
        S mu = S(0);
        for (int64_t j = 0; j < w; ++j) mu += xr[j];
        mu /= static_cast<S>(w);
        S var = S(0);
        for (int64_t j = 0; j < w; ++j) {
            const S d = xr[j] - mu;
            var += d * d;
        }
        var /= static_cast<S>(w);
        const S is = S(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        S* hr = xhat->data() + r * w;
        S* orow = ov + r * w;
        for (int64_t j = 0; j < w; ++j) {
            hr[j] = (xr[j] - mu) * is;
            orow[j] = gv[j] * hr[j] + bv[j];
        }
    }
    if (out.recorded()) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        out.set_backward([xn, gn, bn, on, xhat, inv_std, rows, w]() {
            const S* g = on->grad.data();
            if (gn->requires_grad) {
                gn->ensure_grad();
                S* gg = gn->grad.data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < w; ++j)
                        gg[j] += g[r * w + j] * (*xhat)[static_cast<size_t>(r * w + j)];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                S* gb = bn->grad.data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < w; ++j) gb[j] += g[r * w + j];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                S* gx = xn->grad.data();
                const S* gv2 = gn->value.data();
                for (int64_t r = 0; r < rows; ++r) {
                    const S* gr = g + r * w;
                    const S* hr = xhat->data() + r * w;
                    const S is = (*inv_std)[static_cast<size_t>(r)];
                    S mean_dh = S(0), mean_dh_h = S(0);
                    for (int64_t j = 0; j < w; ++j) {
                        const S dh = gr[j] * gv2[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= static_cast<S>(w);
                    mean_dh_h /= static_cast<S>(w);
                    for (int64_t j = 0; j < w; ++j) {
                        const S dh = gr[j] * gv2[j];
                        gx[r * w + j] += is * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
            }
        });
    }
    return out;
}

// Mean cross-entropy of logits [N, C] against integer targets, fused with a
// numerically stable log-softmax.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int32_t>& targets) {
    detail::check_finite(logits, "cross_entropy");
    check(logits.ndim() == 2, "cross_entropy: logits must be [N,C], got ",
          shape_str(logits.shape()));
    const int64_t n = logits.dim(0), c = logits.dim(1);
    check(static_cast<int64_t>(targets.size()) == n,
          "cross_entropy: ", targets.size(), " targets for ", n, " rows");
    for (int32_t t : targets)
        check(t >= 0 && t < c, "cross_entropy: target ", t, " outside [0,", c, ")");

    Tensor<S> out = Tensor<S>::make_op({1}, {logits});
    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(n * c));
    const S* lv = logits.values().data();
    S total = S(0);
    for (int64_t i = 0; i < n; ++i) {
        const S* row = lv + i * c;
        S mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        S denom = S(0);
        S* prow = probs->data() + i * c;
        for (int64_t j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            denom += prow[j];
        }
        const S inv = S(1) / denom;
        for (int64_t j = 0; j < c; ++j) prow[j] *= inv;
        total += std::log(denom) + mx - row[targets[static_cast<size_t>(i)]];
    }
    out.values_mut()[0] = total / static_cast<S>(n);
    if (out.recorded()) {
        auto ln = logits.node(), on = out.node();
        out.set_backward([ln, on, probs, targets, n, c]() {
            if (!ln->requires_grad) return;
            ln->ensure_grad();
            const S scale = on->grad[0] / static_cast<S>(n);
            S* gl = ln->grad.data();
            for (int64_t i = 0; i < n; ++i) {
                const S* prow = probs->data() + i * c;
                S* grow = gl + i * c;
                for (int64_t j = 0; j < c; ++j) grow[j] += scale * prow[j];
                grow[targets[static_cast<size_t>(i)]] -= scale;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

// Multi-head scaled dot-product attention over [B, T, W], W = heads * dh.
// `key_mask` (optional, length B*T, nonzero = attendable) hides padded keys.
template <class S>
Tensor<S> attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int heads,
                    const std::vector<uint8_t>* key_mask = nullptr) {
    detail::check_finite(q, "attention");
    detail::check_finite(k, "attention");
    detail::check_finite(v, "attention");
    check(q.ndim() == 3 && k.shape() == q.shape() && v.shape() == q.shape(),
          "attention: q/k/v must share shape [B,T,W], got ", shape_str(q.shape()),
          ", ", shape_str(k.shape()), ", ", shape_str(v.shape()));
    const int64_t b = q.dim(0), t = q.dim(1), w = q.dim(2);
    check(heads >= 1 && w % heads == 0, "attention: heads (", heads,
          ") must divide feature width (", w, ")");
    if (key_mask)
        check(static_cast<int64_t>(key_mask->size()) == b * t,
              "attention: key mask must have B*T entries");
    const int64_t dh = w / heads;
    const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));

    Tensor<S> out = Tensor<S>::make_op(q.shape(), {q, k, v});
    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(b * heads * t * t));
    const S* qv = q.values().data();
    const S* kv = k.values().data();
    const S* vv = v.values().data();
    S* ov = out.values_mut().data();
    std::vector<uint8_t> mask_copy;
    if (key_mask) mask_copy = *key_mask;
    const bool masked = key_mask != nullptr;

    using StridedMap = Eigen::Map<const MatRM<S>, 0, Eigen::OuterStride<>>;
    using StridedMapMut = Eigen::Map<MatRM<S>, 0, Eigen::OuterStride<>>;
    detail::parallel_chunks(b * heads, 1, [&](int64_t lo, int64_t hi) {
        for (int64_t bh = lo; bh < hi; ++bh) {
            const int64_t bi = bh / heads, h = bh % heads;
            const int64_t feat_off = bi * t * w + h * dh;
            StridedMap Q(qv + feat_off, t, dh, Eigen::OuterStride<>(w));
            StridedMap K(kv + feat_off, t, dh, Eigen::OuterStride<>(w));
            StridedMap V(vv + feat_off, t, dh, Eigen::OuterStride<>(w));
            MapRM<S> P(probs->data() + bh * t * t, t, t);
            P.noalias() = Q * K.transpose() * scale;
            for (int64_t i = 0; i < t; ++i) {
                S* row = P.data() + i * t;
                S mx = -std::numeric_limits<S>::infinity();
                for (int64_t j = 0; j < t; ++j) {
                    if (masked && !mask_copy[static_cast<size_t>(bi * t + j)]) continue;
                    mx = std::max(mx, row[j]);
                }
                S denom = S(0);
                for (int64_t j = 0; j < t; ++j) {
                    if (masked && !mask_copy[static_cast<size_t>(bi * t + j)]) {
                        row[j] = S(0);
                    } else {
                        row[j] = std::exp(row[j] - mx);
                        denom += row[j];
                    }
                }
                const S inv = S(1) / denom;
                for (int64_t j = 0; j < t; ++j) row[j] *= inv;
            }
            StridedMapMut O(ov + feat_off, t, dh, Eigen::OuterStride<>(w));
            O.noalias() = P * V;
        }
    });

    if (out.recorded()) {
        auto qn = q.node(), kn = k.node(), vn = v.node(), on = out.node();
        out.set_backward([qn, kn, vn, on, probs, b, t, w, heads, dh, scale]() {
            const S* g = on->grad.data();
            if (qn->requires_grad) qn->ensure_grad();
            if (kn->requires_grad) kn->ensure_grad();
            if (vn->requires_grad) vn->ensure_grad();
            using CSMap = Eigen::Map<const MatRM<S>, 0, Eigen::OuterStride<>>;
            using SMap = Eigen::Map<MatRM<S>, 0, Eigen::OuterStride<>>;
            detail::parallel_chunks(b * heads, 1, [&](int64_t lo, int64_t hi) {
                for (int64_t bh = lo; bh < hi; ++bh) {
                    const int64_t bi = bh / heads, h = bh % heads;
                    const int64_t feat_off = bi * t * w + h * dh;
                    CSMap Q(qn->value.data() + feat_off, t, dh, Eigen::OuterStride<>(w));
                    CSMap K(kn->value.data() + feat_off, t, dh, Eigen::OuterStride<>(w));
                    CSMap V(vn->value.data() + feat_off, t, dh, Eigen::OuterStride<>(w));
                    CSMap GO(g + feat_off, t, dh, Eigen::OuterStride<>(w));
                    CMapRM<S> P(probs->data() + bh * t * t, t, t);
                    if (vn->requires_grad) {
                        SMap GV(vn->grad.data() + feat_off, t, dh, Eigen::OuterStride<>(w));
                        GV.noalias() += P.transpose() * GO;
                    }
                    if (qn->requires_grad || kn->requires_grad) {
                        MatRM<S> GP = GO * V.transpose();      // [t,t]
                        MatRM<S> GS(t, t);
                        for (int64_t i = 0; i < t; ++i) {
                            S dot = S(0);
                            for (int64_t j = 0; j < t; ++j) dot += GP(i, j) * P(i, j);
                            for (int64_t j = 0; j < t; ++j)
                                GS(i, j) = P(i, j) * (GP(i, j) - dot);
                        }
                        if (qn->requires_grad) {
                            SMap GQ(qn->grad.data() + feat_off, t, dh, Eigen::OuterStride<>(w));
                            GQ.noalias() += GS * K * scale;
                        }
                        if (kn->requires_grad) {
                            SMap GK(kn->grad.data() + feat_off, t, dh, Eigen::OuterStride<>(w));
                            GK.noalias() += GS.transpose() * Q * scale;
                        }
                    }
                }
            });
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution and friends
// ---------------------------------------------------------------------------

// conv2d on channels-last images: x [B,H,W,C], kernel [KH,KW,C,OC].
// Output spatial size follows floor((n + 2p - k) / s) + 1.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, int stride, int pad) {
    detail::check_finite(x, "conv2d");
    detail::check_finite(kernel, "conv2d");
    check(x.ndim() == 4 && kernel.ndim() == 4, "conv2d: x must be [B,H,W,C] and kernel "
          "[KH,KW,C,OC], got ", shape_str(x.shape()), " and ", shape_str(kernel.shape()));
    check(stride >= 1, "conv2d: stride must be >= 1");
    check(pad >= 0, "conv2d: pad must be >= 0");
    const int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int64_t kh = kernel.dim(0), kw = kernel.dim(1), oc = kernel.dim(3);
    check(kernel.dim(2) == c, "conv2d: kernel expects ", kernel.dim(2),
          " input channels, image has ", c);
    const int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (w + 2 * pad - kw) / stride + 1;
    check(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input");

    const int64_t patch = kh * kw * c;
    const int64_t rows = b * oh * ow;
    auto cols = std::make_shared<std::vector<S>>(static_cast<size_t>(rows * patch), S(0));
    const S* xv = x.values().data();
    detail::parallel_chunks(rows, 256, [&](int64_t lo, int64_t hi) {
        for (int64_t r = lo; r < hi; ++r) {
            const int64_t bi = r / (oh * ow);
            const int64_t oy = (r / ow) % oh;
            const int64_t ox = r % ow;
            S* dst = cols->data() + r * patch;
            for (int64_t ky = 0; ky < kh; ++ky) {
                const int64_t iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) { dst += kw * c; continue; }
                for (int64_t kx = 0; kx < kw; ++kx) {
                    const int64_t ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= w) { dst += c; continue; }
                    const S* src = xv + ((bi * h + iy) * w + ix) * c;
                    for (int64_t ci = 0; ci < c; ++ci) dst[ci] = src[ci];
                    dst += c;
                }
            }
        }
    });

    Tensor<S> out = Tensor<S>::make_op({b, oh, ow, oc}, {x, kernel});
    detail::gemm(cols->data(), kernel.values().data(), out.values_mut().data(),
                 rows, patch, oc, false, false, false);

    if (out.recorded()) {
        auto xn = x.node(), kn = kernel.node(), on = out.node();
        out.set_backward([xn, kn, on, cols, b, h, w, c, kh, kw, oc, oh, ow, stride, pad,
                          patch, rows]() {
            const S* g = on->grad.data();
            if (kn->requires_grad) {
                kn->ensure_grad();
                detail::gemm(cols->data(), g, kn->grad.data(), patch, rows, oc,
                             true, false, true);
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                std::vector<S> dcols(static_cast<size_t>(rows * patch));
                detail::gemm(g, kn->value.data(), dcols.data(), rows, oc, patch,
                             false, true, false);
                S* gx = xn->grad.data();
                // col2im scatter-add, serial: output cells overlap across rows.
                for (int64_t r = 0; r < rows; ++r) {
                    const int64_t bi = r / (oh * ow);
                    const int64_t oy = (r / ow) % oh;
                    const int64_t ox = r % ow;
                    const S* src = dcols.data() + r * patch;
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) { src += kw * c; continue; }
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= w) { src += c; continue; }
                            S* dst = gx + ((bi * h + iy) * w + ix) * c;
                            for (int64_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
                            src += c;
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> upsample_nearest2(const Tensor<S>& x) {
    detail::check_finite(x, "upsample_nearest2");
    check(x.ndim() == 4, "upsample_nearest2: expects [B,H,W,C]");
    const int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Tensor<S> out = Tensor<S>::make_op({b, 2 * h, 2 * w, c}, {x});
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t y = 0; y < 2 * h; ++y)
            for (int64_t z = 0; z < 2 * w; ++z) {
                const S* src = xv + ((bi * h + y / 2) * w + z / 2) * c;
                S* dst = ov + ((bi * 2 * h + y) * 2 * w + z) * c;
                for (int64_t ci = 0; ci < c; ++ci) dst[ci] = src[ci];
            }
    if (out.recorded()) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on, b, h, w, c]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = on->grad.data();
            S* gx = xn->grad.data();
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t y = 0; y < 2 * h; ++y)
                    for (int64_t z = 0; z < 2 * w; ++z) {
                        const S* src = g + ((bi * 2 * h + y) * 2 * w + z) * c;
                        S* dst = gx + ((bi * h + y / 2) * w + z / 2) * c;
                        for (int64_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
                    }
        });
    }
    return out;
}

// Per-channel affine modulation: x [B,H,W,C] * gamma[B,C] + beta[B,C].
template <class S>
Tensor<S> film(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta) {
    detail::check_finite(x, "film");
    detail::check_finite(gamma, "film");
    detail::check_finite(beta, "film");
    check(x.ndim() == 4, "film: x must be [B,H,W,C]");
    const int64_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
    check(gamma.ndim() == 2 && gamma.dim(0) == b && gamma.dim(1) == c &&
              beta.shape() == gamma.shape(),
          "film: gamma/beta must be [B,C] = [", b, ",", c, "]");
    Tensor<S> out = Tensor<S>::make_op(x.shape(), {x, gamma, beta});
    const S* xv = x.values().data();
    const S* gv = gamma.values().data();
    const S* bv = beta.values().data();
    S* ov = out.values_mut().data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t p = 0; p < hw; ++p)
            for (int64_t ci = 0; ci < c; ++ci) {
                const int64_t ix = (bi * hw + p) * c + ci;
                ov[ix] = xv[ix] * gv[bi * c + ci] + bv[bi * c + ci];
            }
    if (out.recorded()) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        out.set_backward([xn, gn, bn, on, b, hw, c]() {
            const S* g = on->grad.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                S* gx = xn->grad.data();
                const S* gv2 = gn->value.data();
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t p = 0; p < hw; ++p)
                        for (int64_t ci = 0; ci < c; ++ci) {
                            const int64_t ix = (bi * hw + p) * c + ci;
                            gx[ix] += g[ix] * gv2[bi * c + ci];
                        }
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                S* gg = gn->grad.data();
                const S* xv2 = xn->value.data();
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t p = 0; p < hw; ++p)
                        for (int64_t ci = 0; ci < c; ++ci) {
                            const int64_t ix = (bi * hw + p) * c + ci;
                            gg[bi * c + ci] += g[ix] * xv2[ix];
                        }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                S* gb = bn->grad.data();
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t p = 0; p < hw; ++p)
                        for (int64_t ci = 0; ci < c; ++ci)
                            gb[bi * c + ci] += g[(bi * hw + p) * c + ci];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// token / sequence utilities
// ---------------------------------------------------------------------------

// [B,G,G,C] -> [B, (G/p)^2, p*p*C]; patches in row-major order, each patch
// flattened (row, col, channel).
template <class S>
Tensor<S> patchify(const Tensor<S>& grid, int patch) {
    detail::check_finite(grid, "patchify");
    check(grid.ndim() == 4, "patchify: expects [B,G,G,C], got ", shape_str(grid.shape()));
    const int64_t b = grid.dim(0), g = grid.dim(1), c = grid.dim(3);
    check(grid.dim(2) == g, "patchify: grid must be square");
    check(patch >= 1 && g % patch == 0, "patchify: patch size ", patch,
          " does not divide grid side ", g);
    const int64_t np = g / patch;
    const int64_t tokens = np * np;
    const int64_t tok_len = static_cast<int64_t>(patch) * patch * c;
    Tensor<S> out = Tensor<S>::make_op({b, tokens, tok_len}, {grid});
    const S* xv = grid.values().data();
    S* ov = out.values_mut().data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ty = 0; ty < np; ++ty)
            for (int64_t tx = 0; tx < np; ++tx) {
                S* dst = ov + ((bi * tokens) + ty * np + tx) * tok_len;
                for (int64_t py = 0; py < patch; ++py) {
                    const S* src = xv + ((bi * g + ty * patch + py) * g + tx * patch) * c;
                    std::copy(src, src + patch * c, dst);
                    dst += patch * c;
                }
            }
    if (out.recorded()) {
        auto xn = grid.node(), on = out.node();
        out.set_backward([xn, on, b, g, c, patch, np, tokens, tok_len]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* gsrc = on->grad.data();
            S* gx = xn->grad.data();
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t ty = 0; ty < np; ++ty)
                    for (int64_t tx = 0; tx < np; ++tx) {
                        const S* src = gsrc + ((bi * tokens) + ty * np + tx) * tok_len;
                        for (int64_t py = 0; py < patch; ++py) {
                            S* dst = gx + ((bi * g + ty * patch + py) * g + tx * patch) * c;
                            for (int64_t i = 0; i < patch * c; ++i) dst[i] += src[i];
                            src += patch * c;
                        }
                    }
        });
    }
    return out;
}

// Exact inverse of patchify.
template <class S>
Tensor<S> unpatchify(const Tensor<S>& tokens, int patch, int64_t channels) {
    detail::check_finite(tokens, "unpatchify");
    check(tokens.ndim() == 3, "unpatchify: expects [B,T,L]");
    const int64_t b = tokens.dim(0), t = tokens.dim(1), l = tokens.dim(2);
    check(l == static_cast<int64_t>(patch) * patch * channels,
          "unpatchify: token length mismatch");
    const int64_t np = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(t))));
    check(np * np == t, "unpatchify: token count must be a square");
    const int64_t g = np * patch;
    Tensor<S> out = Tensor<S>::make_op({b, g, g, channels}, {tokens});
    const S* xv = tokens.values().data();
    S* ov = out.values_mut().data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ty = 0; ty < np; ++ty)
            for (int64_t tx = 0; tx < np; ++tx) {
                const S* src = xv + ((bi * t) + ty * np + tx) * l;
                for (int64_t py = 0; py < patch; ++py) {
                    S* dst = ov + ((bi * g + ty * patch + py) * g + tx * patch) * channels;
                    std::copy(src, src + patch * channels, dst);
                    src += patch * channels;
                }
            }
    if (out.recorded()) {
        auto xn = tokens.node(), on = out.node();
        out.set_backward([xn, on, b, t, l, channels, patch, np, g]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* gsrc = on->grad.data();
            S* gx = xn->grad.data();
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t ty = 0; ty < np; ++ty)
                    for (int64_t tx = 0; tx < np; ++tx) {
                        S* dst = gx + ((bi * t) + ty * np + tx) * l;
                        for (int64_t py = 0; py < patch; ++py) {
                            const S* src =
                                gsrc + ((bi * g + ty * patch + py) * g + tx * patch) * channels;
                            for (int64_t i = 0; i < patch * channels; ++i) dst[i] += src[i];
                            dst += patch * channels;
                        }
                    }
        });
    }
    return out;
}

// Prepends one learned token to every sequence: [B,T,W] -> [B,T+1,W].
template <class S>
Tensor<S> prepend_token(const Tensor<S>& x, const Tensor<S>& tok) {
    detail::check_finite(x, "prepend_token");
    detail::check_finite(tok, "prepend_token");
    check(x.ndim() == 3, "prepend_token: x must be [B,T,W]");
    const int64_t b = x.dim(0), t = x.dim(1), w = x.dim(2);
    check(tok.numel() == w, "prepend_token: token must have width ", w);
    Tensor<S> out = Tensor<S>::make_op({b, t + 1, w}, {x, tok});
    const S* xv = x.values().data();
    const S* tv = tok.values().data();
    S* ov = out.values_mut().data();
    for (int64_t bi = 0; bi < b; ++bi) {
        std::copy(tv, tv + w, ov + bi * (t + 1) * w);
        std::copy(xv + bi * t * w, xv + (bi + 1) * t * w, ov + bi * (t + 1) * w + w);
    }
    if (out.recorded()) {
        auto xn = x.node(), tn = tok.node(), on = out.node();
        out.set_backward([xn, tn, on, b, t, w]() {
            const S* g = on->grad.data();
            if (tn->requires_grad) {
                tn->ensure_grad();
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t j = 0; j < w; ++j)
                        tn->grad[static_cast<size_t>(j)] += g[bi * (t + 1) * w + j];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                S* gx = xn->grad.data();
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t i = 0; i < t * w; ++i)
                        gx[bi * t * w + i] += g[bi * (t + 1) * w + w + i];
            }
        });
    }
    return out;
}

// Gathers one token per sequence: [B,T,W], idx[B] -> [B,W].
template <class S>
Tensor<S> select_token(const Tensor<S>& x, const std::vector<int64_t>& idx) {
    detail::check_finite(x, "select_token");
    check(x.ndim() == 3, "select_token: x must be [B,T,W]");
    const int64_t b = x.dim(0), t = x.dim(1), w = x.dim(2);
    check(static_cast<int64_t>(idx.size()) == b, "select_token: need one index per row");
    for (int64_t i : idx) check(i >= 0 && i < t, "select_token: index ", i, " outside [0,", t, ")");
    Tensor<S> out = Tensor<S>::make_op({b, w}, {x});
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    for (int64_t bi = 0; bi < b; ++bi)
        std::copy(xv + (bi * t + idx[static_cast<size_t>(bi)]) * w,
                  xv + (bi * t + idx[static_cast<size_t>(bi)]) * w + w, ov + bi * w);
    if (out.recorded()) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on, idx, b, t, w]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = on->grad.data();
            S* gx = xn->grad.data();
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t j = 0; j < w; ++j)
                    gx[(bi * t + idx[static_cast<size_t>(bi)]) * w + j] += g[bi * w + j];
        });
    }
    return out;
}

// Token-id embedding lookup: table [V,E], ids (B*T) -> [B,T,E].
template <class S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int32_t>& ids, int64_t b, int64_t t) {
    detail::check_finite(table, "embedding");
    check(table.ndim() == 2, "embedding: table must be [V,E]");
    const int64_t v = table.dim(0), e = table.dim(1);
    check(static_cast<int64_t>(ids.size()) == b * t, "embedding: ids size mismatch");
    for (int32_t id : ids) check(id >= 0 && id < v, "embedding: id ", id, " outside vocab");
    Tensor<S> out = Tensor<S>::make_op({b, t, e}, {table});
    const S* tv = table.values().data();
    S* ov = out.values_mut().data();
    for (int64_t i = 0; i < b * t; ++i)
        std::copy(tv + ids[static_cast<size_t>(i)] * e, tv + (ids[static_cast<size_t>(i)] + 1) * e,
                  ov + i * e);
    if (out.recorded()) {
        auto tn = table.node(), on = out.node();
        out.set_backward([tn, on, ids, b, t, e]() {
            if (!tn->requires_grad) return;
            tn->ensure_grad();
            const S* g = on->grad.data();
            S* gt = tn->grad.data();
            for (int64_t i = 0; i < b * t; ++i)
                for (int64_t j = 0; j < e; ++j)
                    gt[ids[static_cast<size_t>(i)] * e + j] += g[i * e + j];
        });
    }
    return out;
}

// Mean of the token features selected by mask: [B,T,E], mask(B*T) -> [B,E].
template <class S>
Tensor<S> masked_mean_tokens(const Tensor<S>& x, const std::vector<uint8_t>& mask) {
    detail::check_finite(x, "masked_mean_tokens");
    check(x.ndim() == 3, "masked_mean_tokens: x must be [B,T,E]");
    const int64_t b = x.dim(0), t = x.dim(1), e = x.dim(2);
    check(static_cast<int64_t>(mask.size()) == b * t, "masked_mean_tokens: mask size mismatch");
    std::vector<S> inv_count(static_cast<size_t>(b));
    for (int64_t bi = 0; bi < b; ++bi) {
        int64_t n = 0;
        for (int64_t ti = 0; ti < t; ++ti) n += mask[static_cast<size_t>(bi * t + ti)] ? 1 : 0;
        check(n > 0, "masked_mean_tokens: row ", bi, " has no selected tokens");
        inv_count[static_cast<size_t>(bi)] = S(1) / static_cast<S>(n);
    }
    Tensor<S> out = Tensor<S>::make_op({b, e}, {x});
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    std::fill(ov, ov + b * e, S(0));
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ti = 0; ti < t; ++ti) {
            if (!mask[static_cast<size_t>(bi * t + ti)]) continue;
            const S* src = xv + (bi * t + ti) * e;
            S* dst = ov + bi * e;
            for (int64_t j = 0; j < e; ++j) dst[j] += src[j] * inv_count[static_cast<size_t>(bi)];
        }
    if (out.recorded()) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on, mask, inv_count, b, t, e]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = on->grad.data();
            S* gx = xn->grad.data();
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t ti = 0; ti < t; ++ti) {
                    if (!mask[static_cast<size_t>(bi * t + ti)]) continue;
                    for (int64_t j = 0; j < e; ++j)
                        gx[(bi * t + ti) * e + j] += g[bi * e + j] * inv_count[static_cast<size_t>(bi)];
                }
        });
    }
    return out;
}

// Row-wise concatenation: [B,m] ++ [B,n] -> [B,m+n].
template <class S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_finite(a, "concat_cols");
    detail::check_finite(b, "concat_cols");
    check(a.ndim() == 2 && b.ndim() == 2 && a.dim(0) == b.dim(0),
          "concat_cols: rows must match, got ", shape_str(a.shape()), " and ",
          shape_str(b.shape()));
    const int64_t rows = a.dim(0), m = a.dim(1), n = b.dim(1);
    Tensor<S> out = Tensor<S>::make_op({rows, m + n}, {a, b});
    const S* av = a.values().data();
    const S* bv = b.values().data();
    S* ov = out.values_mut().data();
    for (int64_t r = 0; r < rows; ++r) {
        std::copy(av + r * m, av + (r + 1) * m, ov + r * (m + n));
        std::copy(bv + r * n, bv + (r + 1) * n, ov + r * (m + n) + m);
    }
    if (out.recorded()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        out.set_backward([an, bn, on, rows, m, n]() {
            const S* g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < m; ++j) an->grad[static_cast<size_t>(r * m + j)] += g[r * (m + n) + j];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < n; ++j) bn->grad[static_cast<size_t>(r * n + j)] += g[r * (m + n) + m + j];
            }
        });
    }
    return out;
}

// Channel slice on [B,H,W,C]: keeps channels [c0, c1).
template <class S>
Tensor<S> slice_channels(const Tensor<S>& x, int64_t c0, int64_t c1) {
    detail::check_finite(x, "slice_channels");
    check(x.ndim() == 4, "slice_channels: expects [B,H,W,C]");
    const int64_t c = x.dim(3);
    check(0 <= c0 && c0 < c1 && c1 <= c, "slice_channels: bad range [", c0, ",", c1, ")");
    const int64_t px = x.dim(0) * x.dim(1) * x.dim(2);
    const int64_t cs = c1 - c0;
    Tensor<S> out = Tensor<S>::make_op({x.dim(0), x.dim(1), x.dim(2), cs}, {x});
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    for (int64_t p = 0; p < px; ++p)
        std::copy(xv + p * c + c0, xv + p * c + c1, ov + p * cs);
    if (out.recorded()) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on, px, c, c0, cs]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = on->grad.data();
            S* gx = xn->grad.data();
            for (int64_t p = 0; p < px; ++p)
                for (int64_t j = 0; j < cs; ++j) gx[p * c + c0 + j] += g[p * cs + j];
        });
    }
    return out;
}

// Row-wise L2 normalization of [N,D] with a small epsilon in the norm.
template <class S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x, S eps = S(1e-12)) {
    detail::check_finite(x, "l2_normalize_rows");
    check(x.ndim() == 2, "l2_normalize_rows: expects [N,D]");
    const int64_t n = x.dim(0), d = x.dim(1);
    Tensor<S> out = Tensor<S>::make_op(x.shape(), {x});
    auto inv_norm = std::make_shared<std::vector<S>>(static_cast<size_t>(n));
    const S* xv = x.values().data();
    S* ov = out.values_mut().data();
    for (int64_t r = 0; r < n; ++r) {
        S sq = S(0);
        for (int64_t j = 0; j < d; ++j) sq += xv[r * d + j] * xv[r * d + j];
        const S inv = S(1) / std::sqrt(sq + eps);
        (*inv_norm)[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < d; ++j) ov[r * d + j] = xv[r * d + j] * inv;
    }
    if (out.recorded()) {
        auto xn = x.node(), on = out.node();
        out.set_backward([xn, on, inv_norm, n, d]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S* g = on->grad.data();
            const S* y = on->value.data();
            S* gx = xn->grad.data();
            for (int64_t r = 0; r < n; ++r) {
                S dot = S(0);
                for (int64_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
                const S inv = (*inv_norm)[static_cast<size_t>(r)];
                for (int64_t j = 0; j < d; ++j)
                    gx[r * d + j] += inv * (g[r * d + j] - y[r * d + j] * dot);
            }
        });
    }
    return out;
}

} // namespace lclip::ops
