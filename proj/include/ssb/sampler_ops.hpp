#pragma once

#include <memory>
#include <vector>

#include "ssb/graph.hpp"
#include "ssb/sampler.hpp"
#include "ssb/threading.hpp"

// Tape wrappers around the sampler: the core functions in sampler.hpp act on
// one map at a time; these batch them over N and record gradients.

namespace ssb {

// Row/column marginals of a batch of saliency maps, S: [N,H,W] -> [N,H],[N,W].
template <class T>
struct BatchMarginals {
    Var<T> sy;  // [N,H]
    Var<T> sx;  // [N,W]
};

template <class T>
BatchMarginals<T> marginalize_op(const Var<T>& s) {
    const Tensor<T>& sv = s->value;
    if (sv.rank() != 3) throw shape_error("marginalize_op: expected N,H,W saliency");
    std::size_t n = sv.dim(0), h = sv.dim(1), w = sv.dim(2);
    Tensor<T> syv({n, h}), sxv({n, w});
    auto margs = std::make_shared<std::vector<SaliencyMarginals<T>>>(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor<T> map({h, w},
                      std::vector<T>(sv.data.begin() + i * h * w, sv.data.begin() + (i + 1) * h * w));
        (*margs)[i] = marginalize(map);
        std::copy((*margs)[i].sy.begin(), (*margs)[i].sy.end(), syv.data.begin() + i * h);
        std::copy((*margs)[i].sx.begin(), (*margs)[i].sx.end(), sxv.data.begin() + i * w);
    }
    // each output node back-propagates its half; the other half gets zeros
    auto make_side = [&](Tensor<T> val, bool is_y) {
        auto grad = [n, h, w, margs, is_y](Node<T>& node) {
            Var<T> sp = node.parents[0];
            if (!sp->requires_grad) return;
            sp->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<T> dsy(h, T(0)), dsx(w, T(0));
                if (is_y)
                    std::copy(node.grad.data.begin() + i * h, node.grad.data.begin() + (i + 1) * h,
                              dsy.begin());
                else
                    std::copy(node.grad.data.begin() + i * w, node.grad.data.begin() + (i + 1) * w,
                              dsx.begin());
                Tensor<T> map({h, w},
                              std::vector<T>(sp->value.data.begin() + i * h * w,
                                             sp->value.data.begin() + (i + 1) * h * w));
                Tensor<T> ds = marginalize_backward(map, (*margs)[i], dsy, dsx);
                for (std::size_t k = 0; k < h * w; ++k) sp->grad.data[i * h * w + k] += ds.data[k];
            }
        };
        return make_op<T>(std::move(val), {s}, grad);
    };
    return BatchMarginals<T>{make_side(std::move(syv), true), make_side(std::move(sxv), false)};
}

// One axis of sampling weights for a batch of marginals. The node value is
// the dense [N, r, len] matrix (what gradients flow through); the AxisWeights
// carry the cumulative sums and run form for the kernels.
template <class T>
struct BatchAxisWeights {
    Var<T> dense;  // [N, r, len]
    std::shared_ptr<std::vector<AxisWeights<T>>> axes;
};

template <class T>
BatchAxisWeights<T> build_weights_op(const Var<T>& marginal, std::size_t target) {
    const Tensor<T>& mv = marginal->value;
    if (mv.rank() != 2) throw shape_error("build_weights_op: expected N,len marginals");
    std::size_t n = mv.dim(0), len = mv.dim(1);
    auto axes = std::make_shared<std::vector<AxisWeights<T>>>(n);
    Tensor<T> dense({n, target, len});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<T> m(mv.data.begin() + i * len, mv.data.begin() + (i + 1) * len);
        (*axes)[i] = build_axis_weights(m, target);
        std::copy((*axes)[i].dense.begin(), (*axes)[i].dense.end(),
                  dense.data.begin() + i * target * len);
    }
    auto grad = [n, len, target, axes](Node<T>& node) {
        Var<T> mp = node.parents[0];
        if (!mp->requires_grad) return;
        mp->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<T> dg(node.grad.data.begin() + i * target * len,
                              node.grad.data.begin() + (i + 1) * target * len);
            std::vector<T> dm = axis_weights_backward((*axes)[i], dg);
            for (std::size_t j = 0; j < len; ++j) mp->grad.data[i * len + j] += dm[j];
        }
    };
    return BatchAxisWeights<T>{make_op<T>(std::move(dense), {marginal}, grad), axes};
}

// Per-batch weights shared by sample/inverse ops. For the uniform variant the
// dense nodes are constants and the same AxisWeights are reused for every n.
template <class T>
struct BatchWeights {
    BatchAxisWeights<T> gy;
    BatchAxisWeights<T> gx;

    const SamplingWeights<T> at(std::size_t i) const {
        std::size_t iy = gy.axes->size() == 1 ? 0 : i;
        std::size_t ix = gx.axes->size() == 1 ? 0 : i;
        return SamplingWeights<T>{(*gy.axes)[iy], (*gx.axes)[ix]};
    }
};

template <class T>
BatchWeights<T> uniform_weights_op(std::size_t h_in, std::size_t w_in, std::size_t h_r,
                                   std::size_t w_r) {
    SamplingWeights<T> w = uniform_weights<T>(h_in, w_in, h_r, w_r);
    auto wrap = [](AxisWeights<T> a) {
        Tensor<T> dense({1, a.out, a.in}, a.dense);
        auto axes = std::make_shared<std::vector<AxisWeights<T>>>();
        axes->push_back(std::move(a));
        return BatchAxisWeights<T>{constant(std::move(dense)), axes};
    };
    return BatchWeights<T>{wrap(std::move(w.gy)), wrap(std::move(w.gx))};
}

namespace detail {

template <class T>
void scatter_axis_grad(const Var<T>& dense_node, std::size_t i, const std::vector<T>& dg) {
    if (!dense_node->requires_grad) return;
    dense_node->ensure_grad();
    std::size_t sz = dense_node->value.dim(1) * dense_node->value.dim(2);
    std::size_t base = (dense_node->value.dim(0) == 1 ? 0 : i) * sz;
    for (std::size_t k = 0; k < sz; ++k) dense_node->grad.data[base + k] += dg[k];
}

}  // namespace detail

// Batched scaled sampling. Uses the sparse kernels on the forward path.
template <class T>
Var<T> sample_op(const Var<T>& x, const BatchWeights<T>& w) {
    const Tensor<T>& xv = x->value;
    if (xv.rank() != 4) throw shape_error("sample_op: expected N,H,W,D input");
    std::size_t n = xv.dim(0), h = xv.dim(1), ww = xv.dim(2), d = xv.dim(3);
    std::size_t hr = (*w.gy.axes)[0].out, wr = (*w.gx.axes)[0].out;
    Tensor<T> out({n, hr, wr, d});
    parallel_for(n, [&](std::size_t i) {
        Tensor<T> xi({h, ww, d},
                     std::vector<T>(xv.data.begin() + i * h * ww * d,
                                    xv.data.begin() + (i + 1) * h * ww * d));
        Tensor<T> oi = sample_sparse(xi, w.at(i));
        std::copy(oi.data.begin(), oi.data.end(), out.data.begin() + i * hr * wr * d);
    });
    auto gyv = w.gy.dense, gxv = w.gx.dense;
    auto wcopy = w;
    auto grad = [n, h, ww, d, hr, wr, wcopy, gyv, gxv](Node<T>& node) {
        Var<T> xp = node.parents[0];
        bool need_x = xp->requires_grad;
        if (need_x) xp->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            Tensor<T> xi({h, ww, d},
                         std::vector<T>(xp->value.data.begin() + i * h * ww * d,
                                        xp->value.data.begin() + (i + 1) * h * ww * d));
            Tensor<T> go({hr, wr, d},
                         std::vector<T>(node.grad.data.begin() + i * hr * wr * d,
                                        node.grad.data.begin() + (i + 1) * hr * wr * d));
            SampleGrads<T> sg = sample_backward(go, xi, wcopy.at(i));
            if (need_x)
                for (std::size_t k = 0; k < h * ww * d; ++k)
                    xp->grad.data[i * h * ww * d + k] += sg.x.data[k];
            detail::scatter_axis_grad(gyv, i, sg.gy);
            detail::scatter_axis_grad(gxv, i, sg.gx);
        }
    };
    return make_op<T>(std::move(out), {x, w.gy.dense, w.gx.dense}, grad);
}

// Batched inverse sampling (transposed weights, H_in*W_in scaling).
template <class T>
Var<T> inverse_sample_op(const Var<T>& yr, const BatchWeights<T>& w) {
    const Tensor<T>& yv = yr->value;
    if (yv.rank() != 4) throw shape_error("inverse_sample_op: expected N,H,W,D input");
    std::size_t n = yv.dim(0), hr = yv.dim(1), wr = yv.dim(2), d = yv.dim(3);
    std::size_t h = (*w.gy.axes)[0].in, ww = (*w.gx.axes)[0].in;
    Tensor<T> out({n, h, ww, d});
    parallel_for(n, [&](std::size_t i) {
        Tensor<T> yi({hr, wr, d},
                     std::vector<T>(yv.data.begin() + i * hr * wr * d,
                                    yv.data.begin() + (i + 1) * hr * wr * d));
        Tensor<T> oi = inverse_sample_sparse(yi, w.at(i));
        std::copy(oi.data.begin(), oi.data.end(), out.data.begin() + i * h * ww * d);
    });
    auto gyv = w.gy.dense, gxv = w.gx.dense;
    auto wcopy = w;
    auto grad = [n, h, ww, d, hr, wr, wcopy, gyv, gxv](Node<T>& node) {
        Var<T> yp = node.parents[0];
        bool need_y = yp->requires_grad;
        if (need_y) yp->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            Tensor<T> yi({hr, wr, d},
                         std::vector<T>(yp->value.data.begin() + i * hr * wr * d,
                                        yp->value.data.begin() + (i + 1) * hr * wr * d));
            Tensor<T> go({h, ww, d},
                         std::vector<T>(node.grad.data.begin() + i * h * ww * d,
                                        node.grad.data.begin() + (i + 1) * h * ww * d));
            SampleGrads<T> sg = inverse_sample_backward(go, yi, wcopy.at(i));
            if (need_y)
                for (std::size_t k = 0; k < hr * wr * d; ++k)
                    yp->grad.data[i * hr * wr * d + k] += sg.x.data[k];
            detail::scatter_axis_grad(gyv, i, sg.gy);
            detail::scatter_axis_grad(gxv, i, sg.gx);
        }
    };
    return make_op<T>(std::move(out), {yr, w.gy.dense, w.gx.dense}, grad);
}

template <class T>
Var<T> bilinear_resize_op(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
    const Tensor<T>& xv = x->value;
    if (xv.rank() != 4) throw shape_error("bilinear_resize_op: expected N,H,W,D input");
    std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), d = xv.dim(3);
    Tensor<T> out({n, out_h, out_w, d});
    for (std::size_t i = 0; i < n; ++i) {
        Tensor<T> xi({h, w, d},
                     std::vector<T>(xv.data.begin() + i * h * w * d,
                                    xv.data.begin() + (i + 1) * h * w * d));
        Tensor<T> oi = bilinear_resize(xi, out_h, out_w);
        std::copy(oi.data.begin(), oi.data.end(), out.data.begin() + i * out_h * out_w * d);
    }
    auto grad = [n, h, w, d, out_h, out_w](Node<T>& node) {
        Var<T> xp = node.parents[0];
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            Tensor<T> go({out_h, out_w, d},
                         std::vector<T>(node.grad.data.begin() + i * out_h * out_w * d,
                                        node.grad.data.begin() + (i + 1) * out_h * out_w * d));
            Tensor<T> gx = bilinear_resize_backward(go, h, w);
            for (std::size_t k = 0; k < h * w * d; ++k)
                xp->grad.data[i * h * w * d + k] += gx.data[k];
        }
    };
    return make_op<T>(std::move(out), {x}, grad);
}

}  // namespace ssb
