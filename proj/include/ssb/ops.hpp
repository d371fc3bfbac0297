#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "ssb/graph.hpp"
#include "ssb/sampler.hpp"
#include "ssb/threading.hpp"

// Dense NN primitives on the tape. Layout is N,H,W,C row-major throughout;
// per-channel parameters are the only implicit broadcast, everything else
// must match shapes exactly.

namespace ssb {

namespace detail {

inline std::size_t out_size_same(std::size_t in, std::size_t stride) {
    return (in + stride - 1) / stride;
}
inline std::size_t out_size_valid(std::size_t in, std::size_t k, std::size_t stride) {
    if (in < k) throw shape_error("valid conv: input smaller than kernel");
    return (in - k) / stride + 1;
}

struct ConvGeom {
    std::size_t h_out, w_out;
    std::ptrdiff_t pad_top, pad_left;
};

inline ConvGeom conv_geom(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                          std::size_t stride, bool same) {
    ConvGeom g{};
    if (same) {
        g.h_out = out_size_same(h, stride);
        g.w_out = out_size_same(w, stride);
        std::size_t pad_h = std::max<std::ptrdiff_t>(
            0, static_cast<std::ptrdiff_t>((g.h_out - 1) * stride + kh) -
                   static_cast<std::ptrdiff_t>(h));
        std::size_t pad_w = std::max<std::ptrdiff_t>(
            0, static_cast<std::ptrdiff_t>((g.w_out - 1) * stride + kw) -
                   static_cast<std::ptrdiff_t>(w));
        g.pad_top = static_cast<std::ptrdiff_t>(pad_h / 2);
        g.pad_left = static_cast<std::ptrdiff_t>(pad_w / 2);
    } else {
        g.h_out = out_size_valid(h, kh, stride);
        g.w_out = out_size_valid(w, kw, stride);
        g.pad_top = g.pad_left = 0;
    }
    return g;
}

// Gather conv patches of one sample into rows: (h_out*w_out) x (kh*kw*cin).
template <class T>
void im2col(const T* x, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh,
            std::size_t kw, std::size_t stride, const ConvGeom& g, T* cols) {
    std::size_t row = 0;
    for (std::size_t oy = 0; oy < g.h_out; ++oy)
        for (std::size_t ox = 0; ox < g.w_out; ++ox, ++row) {
            T* dst = cols + row * kh * kw * cin;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - g.pad_top;
                for (std::size_t kx = 0; kx < kw; ++kx, dst += cin) {
                    std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - g.pad_left;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix < 0 ||
                        ix >= static_cast<std::ptrdiff_t>(w)) {
                        std::fill(dst, dst + cin, T(0));
                    } else {
                        const T* src = x + (static_cast<std::size_t>(iy) * w +
                                            static_cast<std::size_t>(ix)) *
                                               cin;
                        std::copy(src, src + cin, dst);
                    }
                }
            }
        }
}

template <class T>
void col2im(const T* cols, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh,
            std::size_t kw, std::size_t stride, const ConvGeom& g, T* x) {
    std::size_t row = 0;
    for (std::size_t oy = 0; oy < g.h_out; ++oy)
        for (std::size_t ox = 0; ox < g.w_out; ++ox, ++row) {
            const T* src = cols + row * kh * kw * cin;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - g.pad_top;
                for (std::size_t kx = 0; kx < kw; ++kx, src += cin) {
                    std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - g.pad_left;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix < 0 ||
                        ix >= static_cast<std::ptrdiff_t>(w))
                        continue;
                    T* dst = x + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) *
                                     cin;
                    for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
                }
            }
        }
}

}  // namespace detail

enum class Padding { same, valid };

// Cross-correlation, x: [N,H,W,Cin], w: [kh,kw,Cin,Cout].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::size_t stride, Padding padding) {
    const Tensor<T>& xv = x->value;
    const Tensor<T>& wv = w->value;
    if (xv.rank() != 4) throw shape_error("conv2d: input must be N,H,W,C");
    if (wv.rank() != 4) throw shape_error("conv2d: kernel must be kh,kw,Cin,Cout");
    std::size_t kh = wv.dim(0), kw = wv.dim(1);
    if (kh % 2 == 0 || kw % 2 == 0) throw shape_error("conv2d: kernel sides must be odd");
    if (wv.dim(2) != xv.dim(3))
        throw shape_error("conv2d: kernel Cin " + std::to_string(wv.dim(2)) +
                          " != input C " + std::to_string(xv.dim(3)));
    std::size_t n = xv.dim(0), h = xv.dim(1), ww = xv.dim(2), cin = xv.dim(3),
                cout = wv.dim(3);
    auto geom = detail::conv_geom(h, ww, kh, kw, stride, padding == Padding::same);
    std::size_t rows = geom.h_out * geom.w_out, cols = kh * kw * cin;

    Tensor<T> out({n, geom.h_out, geom.w_out, cout});
    parallel_for(n, [&](std::size_t i) {
        AlignedVec<T> patch(rows * cols);  // fully written by im2col
        detail::im2col(xv.ptr() + i * h * ww * cin, h, ww, cin, kh, kw, stride, geom,
                       patch.data());
        ConstMatMap<T> pm(patch.data(), rows, cols);
        ConstMatMap<T> wm(wv.ptr(), cols, cout);
        MatMap<T> om(out.ptr() + i * rows * cout, rows, cout);
        om.noalias() = pm * wm;
    });

    auto grad = [stride, padding, kh, kw](Node<T>& node) {
        Var<T> xp = node.parents[0], wp = node.parents[1];
        const Tensor<T>& xv2 = xp->value;
        const Tensor<T>& wv2 = wp->value;
        std::size_t n2 = xv2.dim(0), h2 = xv2.dim(1), w2 = xv2.dim(2), cin2 = xv2.dim(3),
                    cout2 = wv2.dim(3);
        auto g = detail::conv_geom(h2, w2, kh, kw, stride, padding == Padding::same);
        std::size_t rows2 = g.h_out * g.w_out, cols2 = kh * kw * cin2;
        bool need_x = xp->requires_grad, need_w = wp->requires_grad;
        std::vector<Tensor<T>> dw_partial;
        if (need_w) dw_partial.assign(n2, Tensor<T>(wv2.shape));
        if (need_x) xp->ensure_grad();
        parallel_for(n2, [&](std::size_t i) {
            ConstMatMap<T> dom(node.grad.ptr() + i * rows2 * cout2, rows2, cout2);
            if (need_w) {
                AlignedVec<T> patch(rows2 * cols2);
                detail::im2col(xv2.ptr() + i * h2 * w2 * cin2, h2, w2, cin2, kh, kw, stride, g,
                               patch.data());
                ConstMatMap<T> pm(patch.data(), rows2, cols2);
                MatMap<T> dwm(dw_partial[i].ptr(), cols2, cout2);
                dwm.noalias() = pm.transpose() * dom;
            }
            if (need_x) {
                AlignedVec<T> dpatch(rows2 * cols2);
                ConstMatMap<T> wm(wv2.ptr(), cols2, cout2);
                MatMap<T> dpm(dpatch.data(), rows2, cols2);
                dpm.noalias() = dom * wm.transpose();
                detail::col2im(dpatch.data(), h2, w2, cin2, kh, kw, stride, g,
                               xp->grad.ptr() + i * h2 * w2 * cin2);
            }
        });
        if (need_w) {
            Tensor<T>& dw = wp->ensure_grad();
            for (std::size_t i = 0; i < n2; ++i)
                for (std::size_t k = 0; k < dw.numel(); ++k) dw.data[k] += dw_partial[i].data[k];
        }
    };
    return make_op<T>(std::move(out), {x, w}, grad);
}

// Depthwise conv, w: [kh,kw,C], same padding.
template <class T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& w, std::size_t stride) {
    const Tensor<T>& xv = x->value;
    const Tensor<T>& wv = w->value;
    if (wv.rank() != 3 || wv.dim(2) != xv.dim(3))
        throw shape_error("depthwise_conv2d: kernel must be kh,kw,C matching input C");
    std::size_t n = xv.dim(0), h = xv.dim(1), ww = xv.dim(2), c = xv.dim(3);
    std::size_t kh = wv.dim(0), kw = wv.dim(1);
    auto g = detail::conv_geom(h, ww, kh, kw, stride, true);
    Tensor<T> out({n, g.h_out, g.w_out, c});
    auto run_fwd = [&](const Tensor<T>& xin, const Tensor<T>& ker, Tensor<T>& o) {
        parallel_for(n, [&](std::size_t i) {
            for (std::size_t oy = 0; oy < g.h_out; ++oy)
                for (std::size_t ox = 0; ox < g.w_out; ++ox)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        T acc = T(0);
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(oy * stride + ky) - g.pad_top;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * stride + kx) - g.pad_left;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(ww)) continue;
                                acc += ker.at3(ky, kx, ch) *
                                       xin.at4(i, static_cast<std::size_t>(iy),
                                               static_cast<std::size_t>(ix), ch);
                            }
                        }
                        o.at4(i, oy, ox, ch) = acc;
                    }
        });
    };
    run_fwd(xv, wv, out);

    auto grad = [stride, kh, kw, g, n, h, ww, c](Node<T>& node) {
        Var<T> xp = node.parents[0], wp = node.parents[1];
        bool need_x = xp->requires_grad, need_w = wp->requires_grad;
        if (need_x) xp->ensure_grad();
        if (need_w) wp->ensure_grad();
        // serial: the depthwise kernels here are tiny
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t oy = 0; oy < g.h_out; ++oy)
                for (std::size_t ox = 0; ox < g.w_out; ++ox)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        T go = node.grad.at4(i, oy, ox, ch);
                        if (go == T(0)) continue;
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(oy * stride + ky) - g.pad_top;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * stride + kx) - g.pad_left;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(ww)) continue;
                                std::size_t uy = static_cast<std::size_t>(iy);
                                std::size_t ux = static_cast<std::size_t>(ix);
                                if (need_x)
                                    xp->grad.at4(i, uy, ux, ch) +=
                                        go * wp->value.at3(ky, kx, ch);
                                if (need_w)
                                    wp->grad.at3(ky, kx, ch) +=
                                        go * xp->value.at4(i, uy, ux, ch);
                            }
                        }
                    }
    };
    return make_op<T>(std::move(out), {x, w}, grad);
}

// --- batch normalization ---------------------------------------------------

template <class T>
struct BatchNormParams {
    Var<T> gamma;
    Var<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    static BatchNormParams create(std::size_t channels, T gamma_init = T(1)) {
        BatchNormParams p;
        p.gamma = make_leaf(full<T>({channels}, gamma_init), true);
        p.beta = make_leaf(Tensor<T>({channels}), true);
        p.running_mean = Tensor<T>({channels});
        p.running_var = full<T>({channels}, T(1));
        return p;
    }
    std::size_t channels() const { return p_channels(); }
    std::size_t p_channels() const { return gamma->value.dim(0); }
};

template <class T>
Var<T> batchnorm(const Var<T>& x, BatchNormParams<T>& p, bool training) {
    const Tensor<T>& xv = x->value;
    if (xv.rank() != 4 && xv.rank() != 2)
        throw shape_error("batchnorm: input must be N,H,W,C or N,C");
    std::size_t c = xv.shape.back();
    if (c != p.channels()) throw shape_error("batchnorm: channel mismatch");
    std::size_t rows = xv.numel() / c;
    if (xv.dim(0) == 0 || rows == 0) throw shape_error("batchnorm: zero-size batch");

    using ArrT = Eigen::Array<T, Eigen::Dynamic, 1>;
    using MapT = Eigen::Map<const ArrT>;
    const Eigen::Index ci = static_cast<Eigen::Index>(c);

    // batch statistics, accumulated row by row in a fixed order
    AlignedVec<T> mean_t(c, T(0)), var_t(c, T(0));
    Eigen::Map<ArrT> mean_m(mean_t.data(), ci);
    Eigen::Map<ArrT> var_m(var_t.data(), ci);
    if (training) {
        for (std::size_t r = 0; r < rows; ++r) mean_m += MapT(xv.ptr() + r * c, ci);
        mean_m /= static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            var_m += (MapT(xv.ptr() + r * c, ci) - mean_m).square();
        var_m /= static_cast<T>(rows);
        Eigen::Map<ArrT>(p.running_mean.ptr(), ci) =
            (T(1) - p.momentum) * Eigen::Map<ArrT>(p.running_mean.ptr(), ci) +
            p.momentum * mean_m;
        Eigen::Map<ArrT>(p.running_var.ptr(), ci) =
            (T(1) - p.momentum) * Eigen::Map<ArrT>(p.running_var.ptr(), ci) + p.momentum * var_m;
    } else {
        mean_m = MapT(p.running_mean.ptr(), ci);
        var_m = MapT(p.running_var.ptr(), ci);
    }

    Tensor<T> out(xv.shape);
    AlignedVec<T> inv_std(c);
    Eigen::Map<ArrT>(inv_std.data(), ci) = (var_m + p.epsilon).sqrt().inverse();
    const Tensor<T>& gv = p.gamma->value;
    const Tensor<T>& bv = p.beta->value;
    {
        MapT mean_a(mean_t.data(), ci), inv_a(inv_std.data(), ci);
        MapT g_a(gv.ptr(), ci), b_a(bv.ptr(), ci);
        for (std::size_t r = 0; r < rows; ++r)
            Eigen::Map<ArrT>(out.ptr() + r * c, ci) =
                g_a * ((MapT(xv.ptr() + r * c, ci) - mean_a) * inv_a) + b_a;
    }

    auto grad = [training, rows, c, mean_t, inv_std](Node<T>& node) {
        Var<T> xp = node.parents[0], gp = node.parents[1], bp = node.parents[2];
        const Tensor<T>& xv2 = xp->value;
        const Tensor<T>& gv2 = gp->value;
        using ArrT = Eigen::Array<T, Eigen::Dynamic, 1>;
        using MapT = Eigen::Map<const ArrT>;
        const Eigen::Index ci = static_cast<Eigen::Index>(c);
        MapT mean_a(mean_t.data(), ci), inv_a(inv_std.data(), ci);

        ArrT dgamma = ArrT::Zero(ci), dbeta = ArrT::Zero(ci);
        ArrT dy_mean(ci), dyxhat_mean(ci), dy_row(ci), xhat_row(ci);
        for (std::size_t r = 0; r < rows; ++r) {
            dy_row = MapT(node.grad.ptr() + r * c, ci);
            xhat_row = (MapT(xv2.ptr() + r * c, ci) - mean_a) * inv_a;
            dgamma += dy_row * xhat_row;
            dbeta += dy_row;
        }
        dy_mean = dbeta / static_cast<T>(rows);
        dyxhat_mean = dgamma / static_cast<T>(rows);
        if (gp->requires_grad) {
            gp->ensure_grad();
            bp->ensure_grad();
            Eigen::Map<ArrT>(gp->grad.ptr(), ci) += dgamma;
            Eigen::Map<ArrT>(bp->grad.ptr(), ci) += dbeta;
        }
        if (xp->requires_grad) {
            xp->ensure_grad();
            ArrT scale = MapT(gv2.ptr(), ci) * inv_a;
            for (std::size_t r = 0; r < rows; ++r) {
                dy_row = MapT(node.grad.ptr() + r * c, ci);
                if (training) {
                    xhat_row = (MapT(xv2.ptr() + r * c, ci) - mean_a) * inv_a;
                    dy_row = scale * (dy_row - dy_mean - xhat_row * dyxhat_mean);
                } else {
                    dy_row = scale * dy_row;
                }
                Eigen::Map<ArrT>(xp->grad.ptr() + r * c, ci) += dy_row;
            }
        }
    };
    return make_op<T>(std::move(out), {x, p.gamma, p.beta}, grad);
}

// --- elementwise and reductions -------------------------------------------

template <class T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out(x->value.shape);
    {
        Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xm(x->value.ptr(),
                                                                static_cast<Eigen::Index>(
                                                                    x->value.numel()));
        Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> om(out.ptr(),
                                                          static_cast<Eigen::Index>(out.numel()));
        om = xm.max(T(0));
    }
    auto grad = [](Node<T>& node) {
        Var<T> xp = node.parents[0];
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        // subgradient at 0 is 0
        const std::size_t n = node.grad.numel();
        const T* xm = xp->value.ptr();
        const T* gm = node.grad.ptr();
        T* dm = xp->grad.ptr();
        for (std::size_t i = 0; i < n; ++i) dm[i] += xm[i] > T(0) ? gm[i] : T(0);
    };
    return make_op<T>(std::move(out), {x}, grad);
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out(x->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x->value.data[i]))));
    Tensor<T> saved = out;
    auto grad = [saved](Node<T>& node) {
        Var<T> xp = node.parents[0];
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (std::size_t i = 0; i < node.grad.numel(); ++i) {
            T y = saved.data[i];
            xp->grad.data[i] += node.grad.data[i] * y * (T(1) - y);
        }
    };
    return make_op<T>(std::move(out), {x}, grad);
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value))
        throw shape_error("add: shape mismatch " + shape_str(a->value.shape) + " vs " +
                          shape_str(b->value.shape));
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = a->value.data[i] + b->value.data[i];
    auto grad = [](Node<T>& node) {
        for (int k = 0; k < 2; ++k) {
            Var<T> p = node.parents[k];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < node.grad.numel(); ++i)
                p->grad.data[i] += node.grad.data[i];
        }
    };
    return make_op<T>(std::move(out), {a, b}, grad);
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value)) throw shape_error("mul: shape mismatch");
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = a->value.data[i] * b->value.data[i];
    auto grad = [](Node<T>& node) {
        Var<T> a2 = node.parents[0], b2 = node.parents[1];
        if (a2->requires_grad) {
            a2->ensure_grad();
            for (std::size_t i = 0; i < node.grad.numel(); ++i)
                a2->grad.data[i] += node.grad.data[i] * b2->value.data[i];
        }
        if (b2->requires_grad) {
            b2->ensure_grad();
            for (std::size_t i = 0; i < node.grad.numel(); ++i)
                b2->grad.data[i] += node.grad.data[i] * a2->value.data[i];
        }
    };
    return make_op<T>(std::move(out), {a, b}, grad);
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
    double s = 0;
    for (const T& v : x->value.data) s += static_cast<double>(v);
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(s);
    auto grad = [](Node<T>& node) {
        Var<T> xp = node.parents[0];
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (std::size_t i = 0; i < xp->grad.numel(); ++i)
            xp->grad.data[i] += node.grad.data[0];
    };
    return make_op<T>(std::move(out), {x}, grad);
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    const Tensor<T>& xv = x->value;
    if (xv.rank() != 4) throw shape_error("global_avg_pool: input must be N,H,W,C");
    std::size_t n = xv.dim(0), hw = xv.dim(1) * xv.dim(2), c = xv.dim(3);
    Tensor<T> out({n, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0;
            for (std::size_t p = 0; p < hw; ++p)
                s += static_cast<double>(xv.data[(i * hw + p) * c + ch]);
            out.data[i * c + ch] = static_cast<T>(s / static_cast<double>(hw));
        }
    auto grad = [n, hw, c](Node<T>& node) {
        Var<T> xp = node.parents[0];
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        T inv = static_cast<T>(1.0 / static_cast<double>(hw));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p)
                for (std::size_t ch = 0; ch < c; ++ch)
                    xp->grad.data[(i * hw + p) * c + ch] += node.grad.data[i * c + ch] * inv;
    };
    return make_op<T>(std::move(out), {x}, grad);
}

// x: [N,F], w: [F,K], b: [K]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const Tensor<T>& xv = x->value;
    const Tensor<T>& wv = w->value;
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) ||
        b->value.dim(0) != wv.dim(1))
        throw shape_error("linear: shape mismatch");
    std::size_t n = xv.dim(0), f = xv.dim(1), k = wv.dim(1);
    Tensor<T> out({n, k});
    ConstMatMap<T> xm(xv.ptr(), n, f);
    ConstMatMap<T> wm(wv.ptr(), f, k);
    MatMap<T> om(out.ptr(), n, k);
    om.noalias() = xm * wm;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) out.data[i * k + j] += b->value.data[j];
    auto grad = [n, f, k](Node<T>& node) {
        Var<T> xp = node.parents[0], wp = node.parents[1], bp = node.parents[2];
        ConstMatMap<T> dom(node.grad.ptr(), n, k);
        if (xp->requires_grad) {
            xp->ensure_grad();
            MatMap<T> dxm(xp->grad.ptr(), n, f);
            ConstMatMap<T> wm(wp->value.ptr(), f, k);
            dxm.noalias() += dom * wm.transpose();
        }
        if (wp->requires_grad) {
            wp->ensure_grad();
            MatMap<T> dwm(wp->grad.ptr(), f, k);
            ConstMatMap<T> xm(xp->value.ptr(), n, f);
            dwm.noalias() += xm.transpose() * dom;
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) bp->grad.data[j] += node.grad.data[i * k + j];
        }
    };
    return make_op<T>(std::move(out), {x, w, b}, grad);
}

// View with a new shape over the same elements.
template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    if (shape_numel(shape) != x->value.numel())
        throw shape_error("reshape: element count mismatch");
    Tensor<T> out(std::move(shape), x->value.data);
    auto grad = [](Node<T>& node) {
        Var<T> xp = node.parents[0];
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (std::size_t i = 0; i < node.grad.numel(); ++i)
            xp->grad.data[i] += node.grad.data[i];
    };
    return make_op<T>(std::move(out), {x}, grad);
}

// Non-overlapping k x k average pooling (the ResNet-D shortcut downsample).
template <class T>
Var<T> avg_pool2d(const Var<T>& x, std::size_t k) {
    const Tensor<T>& xv = x->value;
    if (xv.rank() != 4) throw shape_error("avg_pool2d: input must be N,H,W,C");
    std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    std::size_t ho = h / k, wo = w / k;
    if (ho == 0 || wo == 0) throw shape_error("avg_pool2d: input smaller than window");
    Tensor<T> out({n, ho, wo, c});
    T inv = static_cast<T>(1.0 / static_cast<double>(k * k));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    T acc = T(0);
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx)
                            acc += xv.at4(i, oy * k + ky, ox * k + kx, ch);
                    out.at4(i, oy, ox, ch) = acc * inv;
                }
    auto grad = [n, ho, wo, c, k, inv](Node<T>& node) {
        Var<T> xp = node.parents[0];
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        T g = node.grad.at4(i, oy, ox, ch) * inv;
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx)
                                xp->grad.at4(i, oy * k + ky, ox * k + kx, ch) += g;
                    }
    };
    return make_op<T>(std::move(out), {x}, grad);
}

// k x k max pooling with stride and same padding (deep-stem downsample).
template <class T>
Var<T> max_pool2d(const Var<T>& x, std::size_t k, std::size_t stride) {
    const Tensor<T>& xv = x->value;
    if (xv.rank() != 4) throw shape_error("max_pool2d: input must be N,H,W,C");
    std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    auto g = detail::conv_geom(h, w, k, k, stride, true);
    Tensor<T> out({n, g.h_out, g.w_out, c});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t oy = 0; oy < g.h_out; ++oy)
            for (std::size_t ox = 0; ox < g.w_out; ++ox)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - g.pad_top;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * stride + kx) - g.pad_left;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            std::size_t idx = ((i * h + static_cast<std::size_t>(iy)) * w +
                                               static_cast<std::size_t>(ix)) *
                                                  c +
                                              ch;
                            if (xv.data[idx] > best) {
                                best = xv.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    std::size_t oidx = ((i * g.h_out + oy) * g.w_out + ox) * c + ch;
                    out.data[oidx] = best;
                    (*argmax)[oidx] = best_idx;
                }
    auto grad = [argmax](Node<T>& node) {
        Var<T> xp = node.parents[0];
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (std::size_t i = 0; i < node.grad.numel(); ++i)
            xp->grad.data[(*argmax)[i]] += node.grad.data[i];
    };
    return make_op<T>(std::move(out), {x}, grad);
}

// Mean cross-entropy over the batch; numerically stabilized log-sum-exp.
template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    const Tensor<T>& lv = logits->value;
    if (lv.rank() != 2) throw shape_error("softmax_cross_entropy: logits must be N,K");
    std::size_t n = lv.dim(0), k = lv.dim(1);
    if (labels.size() != n) throw shape_error("softmax_cross_entropy: label count mismatch");
    for (int lab : labels)
        if (lab < 0 || static_cast<std::size_t>(lab) >= k)
            throw data_error("softmax_cross_entropy: label out of range: " + std::to_string(lab));
    Tensor<T> probs({n, k});
    double loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < k; ++j)
            mx = std::max(mx, static_cast<double>(lv.data[i * k + j]));
        double z = 0;
        for (std::size_t j = 0; j < k; ++j)
            z += std::exp(static_cast<double>(lv.data[i * k + j]) - mx);
        for (std::size_t j = 0; j < k; ++j)
            probs.data[i * k + j] =
                static_cast<T>(std::exp(static_cast<double>(lv.data[i * k + j]) - mx) / z);
        loss -= static_cast<double>(lv.data[i * k + labels[i]]) - mx - std::log(z);
    }
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(loss / static_cast<double>(n));
    auto grad = [n, k, labels, probs](Node<T>& node) {
        Var<T> lp = node.parents[0];
        if (!lp->requires_grad) return;
        lp->ensure_grad();
        T g = node.grad.data[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                T p = probs.data[i * k + j];
                if (j == static_cast<std::size_t>(labels[i])) p -= T(1);
                lp->grad.data[i * k + j] += g * p;
            }
    };
    return make_op<T>(std::move(out), {logits}, grad);
}

}  // namespace ssb
