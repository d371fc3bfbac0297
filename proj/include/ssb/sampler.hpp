#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "ssb/tensor.hpp"

// Adaptive spatial sampling: saliency marginalization, interval-overlap
// weight matrices built from cumulative sums, the scaled sampling /
// inverse-sampling contractions (dense and sparse), and their gradients.
// Everything here is a pure function of its inputs.

namespace ssb {

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// One axis of the sampling weights: a dense out x in matrix plus the
// cumulative sums that built it and a per-row contiguous-run form.
// Row i of the matrix is the overlap of the uniform output cell
// [cum_uniform[i], cum_uniform[i+1]) with the saliency cells
// [cum_marginal[j], cum_marginal[j+1]).
template <class T>
struct AxisWeights {
    std::size_t out = 0;  // rows (target size r)
    std::size_t in = 0;   // columns (source size n)
    std::vector<T> dense;               // out*in, row-major
    std::vector<double> cum_marginal;   // in+1; 64-bit so endpoints stay monotone
    std::vector<double> cum_uniform;    // out+1

    struct Run {
        std::size_t start = 0;     // first nonzero column
        std::vector<T> weights;    // contiguous nonzero values
    };
    std::vector<Run> runs;  // one per output row

    T at(std::size_t i, std::size_t j) const { return dense[i * in + j]; }

    std::size_t nnz() const {
        std::size_t n = 0;
        for (const auto& r : runs) n += r.weights.size();
        return n;
    }
};

template <class T>
struct SamplingWeights {
    AxisWeights<T> gy;  // H_r x H_in
    AxisWeights<T> gx;  // W_r x W_in
};

template <class T>
struct SaliencyMarginals {
    std::vector<T> sy;  // length H_in
    std::vector<T> sx;  // length W_in
};

namespace detail {

template <class T>
void normalize_marginal(std::vector<T>& m) {
    double s = 0;
    for (T v : m) s += static_cast<double>(v);
    if (!(s > 0) || !std::isfinite(s)) throw numeric_error("marginal has nonpositive total");
    if (std::abs(s - 1.0) > 1e-4)
        throw numeric_error("marginal not normalized: sum = " + std::to_string(s));
    if (s != 1.0)
        for (T& v : m) v = static_cast<T>(static_cast<double>(v) / s);
}

}  // namespace detail

// Per-axis saliency vectors: row/column sums of the map, normalized to 1.
template <class T>
SaliencyMarginals<T> marginalize(const Tensor<T>& s) {
    if (s.rank() != 2) throw shape_error("saliency map must be 2-D, got " + shape_str(s.shape));
    std::size_t h = s.dim(0), w = s.dim(1);
    std::vector<double> row(h, 0.0), col(w, 0.0);
    double total = 0;
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            double v = static_cast<double>(s.data[i * w + j]);
            if (!std::isfinite(v)) throw numeric_error("non-finite saliency value");
            row[i] += v;
            col[j] += v;
            total += v;
        }
    if (!(total > 0)) throw numeric_error("saliency map has nonpositive total");
    SaliencyMarginals<T> m;
    m.sy.resize(h);
    m.sx.resize(w);
    for (std::size_t i = 0; i < h; ++i) m.sy[i] = static_cast<T>(row[i] / total);
    for (std::size_t j = 0; j < w; ++j) m.sx[j] = static_cast<T>(col[j] / total);
    detail::normalize_marginal(m.sy);
    detail::normalize_marginal(m.sx);
    return m;
}

// Gradient of marginalize: given d(sy), d(sx), accumulate d(map).
// Follows the exact forward computation (ratio to the total, then the
// one-shot renormalization, whose effect is absorbed in the same formula
// since both steps are projective scalings).
template <class T>
Tensor<T> marginalize_backward(const Tensor<T>& s, const SaliencyMarginals<T>& m,
                               const std::vector<T>& dsy, const std::vector<T>& dsx) {
    std::size_t h = s.dim(0), w = s.dim(1);
    double total = 0;
    for (const T& v : s.data) total += static_cast<double>(v);
    // For a normalized output m = a / sum(a) with a_j = R_j / T, the
    // composite is m_j = R_j / T' with T' = sum(R); so grad flows as for a
    // single normalization by the raw total.
    double dot_y = 0, dot_x = 0;
    for (std::size_t i = 0; i < h; ++i) dot_y += static_cast<double>(dsy[i]) * static_cast<double>(m.sy[i]);
    for (std::size_t j = 0; j < w; ++j) dot_x += static_cast<double>(dsx[j]) * static_cast<double>(m.sx[j]);
    Tensor<T> ds(s.shape);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            double g = (static_cast<double>(dsy[i]) - dot_y) / total +
                       (static_cast<double>(dsx[j]) - dot_x) / total;
            ds.data[i * w + j] = static_cast<T>(g);
        }
    return ds;
}

// Interval-overlap weights for one axis (dense + run form).
template <class T>
AxisWeights<T> build_axis_weights(const std::vector<T>& marginal, std::size_t target) {
    std::size_t n = marginal.size();
    if (n < 1 || target < 1) throw shape_error("build_axis_weights: sizes must be >= 1");
    {
        double s = 0;
        for (T v : marginal) s += static_cast<double>(v);
        if (std::abs(s - 1.0) > 1e-4)
            throw numeric_error("build_axis_weights: marginal sum " + std::to_string(s));
    }
    AxisWeights<T> w;
    w.out = target;
    w.in = n;
    w.cum_marginal.resize(n + 1);
    w.cum_uniform.resize(target + 1);
    w.cum_marginal[0] = 0.0;
    for (std::size_t j = 0; j < n; ++j)
        w.cum_marginal[j + 1] = w.cum_marginal[j] + static_cast<double>(marginal[j]);
    for (std::size_t i = 0; i <= target; ++i)
        w.cum_uniform[i] = static_cast<double>(i) / static_cast<double>(target);

    w.dense.assign(target * n, T(0));
    w.runs.resize(target);
    for (std::size_t i = 0; i < target; ++i) {
        double lo = w.cum_uniform[i], hi = w.cum_uniform[i + 1];
        bool open = false;
        auto& run = w.runs[i];
        for (std::size_t j = 0; j < n; ++j) {
            double v = std::max(std::min(w.cum_marginal[j + 1], hi) -
                                    std::max(w.cum_marginal[j], lo),
                                0.0);
            T tv = static_cast<T>(v);
            if (tv > T(0)) {
                w.dense[i * n + j] = tv;
                if (!open) {
                    run.start = j;
                    open = true;
                }
                run.weights.push_back(tv);
            } else if (open && w.cum_marginal[j] >= hi) {
                break;  // past the output cell; run is complete
            } else if (open) {
                // zero-measure saliency cell inside the output interval:
                // keep the run contiguous with an explicit zero
                run.weights.push_back(T(0));
            }
        }
        if (run.weights.empty()) {
            // an output cell of positive width always overlaps something;
            // reaching here means the marginal was degenerate
            throw numeric_error("build_axis_weights: empty output row");
        }
        // trim trailing zeros introduced by interior zero cells
        while (run.weights.size() > 1 && run.weights.back() == T(0)) run.weights.pop_back();
    }
    return w;
}

// Gradient of build_axis_weights w.r.t. the marginal, given d(dense G).
// The clamp in the overlap formula is piecewise linear: each active entry
// contributes +g to the cumulative sum that realized the min and -g to the
// one that realized the max; ties get 0. Cumulative-sum adjoint is a
// suffix sum.
template <class T>
std::vector<T> axis_weights_backward(const AxisWeights<T>& w, const std::vector<T>& d_dense) {
    std::size_t n = w.in, r = w.out;
    std::vector<double> d_cum(n + 1, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        double lo = w.cum_uniform[i], hi = w.cum_uniform[i + 1];
        for (std::size_t j = 0; j < n; ++j) {
            double g = static_cast<double>(d_dense[i * n + j]);
            if (g == 0.0) continue;
            double a = std::min(w.cum_marginal[j + 1], hi);
            double b = std::max(w.cum_marginal[j], lo);
            if (a - b <= 0.0) continue;
            if (w.cum_marginal[j + 1] < hi) d_cum[j + 1] += g;
            if (w.cum_marginal[j] > lo) d_cum[j] -= g;
        }
    }
    std::vector<T> dm(n);
    double suffix = 0.0;
    for (std::size_t j = n; j-- > 0;) {
        suffix += d_cum[j + 1];
        dm[j] = static_cast<T>(suffix);
    }
    return dm;
}

template <class T>
SamplingWeights<T> build_weights(const SaliencyMarginals<T>& m, std::size_t h_r, std::size_t w_r) {
    return SamplingWeights<T>{build_axis_weights(m.sy, h_r), build_axis_weights(m.sx, w_r)};
}

template <class T>
SamplingWeights<T> uniform_weights(std::size_t h_in, std::size_t w_in, std::size_t h_r,
                                   std::size_t w_r) {
    auto uniform = [](std::size_t n) {
        std::vector<T> m(n, static_cast<T>(1.0 / static_cast<double>(n)));
        detail::normalize_marginal(m);
        return m;
    };
    return SamplingWeights<T>{build_axis_weights(uniform(h_in), h_r),
                              build_axis_weights(uniform(w_in), w_r)};
}

// Structural check on the run form; sample_sparse refuses corrupt weights.
template <class T>
void validate_runs(const AxisWeights<T>& w) {
    if (w.runs.size() != w.out) throw data_error("run count does not match output size");
    std::size_t prev_start = 0;
    for (std::size_t i = 0; i < w.runs.size(); ++i) {
        const auto& run = w.runs[i];
        if (run.weights.empty()) throw data_error("empty run in sampling weights");
        if (run.start + run.weights.size() > w.in) throw data_error("run exceeds input size");
        if (i > 0 && run.start < prev_start) throw data_error("non-monotone run starts");
        prev_start = run.start;
    }
}

namespace detail {

// y-axis contraction: out[i, w*d] = sum_h G[i,h] x[h, w*d], done as one GEMM.
template <class T>
void contract_y_dense(const AxisWeights<T>& g, const T* x, std::size_t wd, T* out) {
    ConstMatMap<T> gm(g.dense.data(), g.out, g.in);
    ConstMatMap<T> xm(x, g.in, wd);
    MatMap<T> om(out, g.out, wd);
    om.noalias() = gm * xm;
}

template <class T>
void contract_y_dense_t(const AxisWeights<T>& g, const T* x, std::size_t wd, T* out) {
    ConstMatMap<T> gm(g.dense.data(), g.out, g.in);
    ConstMatMap<T> xm(x, g.out, wd);
    MatMap<T> om(out, g.in, wd);
    om.noalias() = gm.transpose() * xm;
}

// x-axis contraction applied per y-row: out_i = G * x_i with x_i in W x D.
template <class T>
void contract_x_dense(const AxisWeights<T>& g, const T* x, std::size_t rows, std::size_t d,
                      T* out) {
    for (std::size_t i = 0; i < rows; ++i) {
        ConstMatMap<T> gm(g.dense.data(), g.out, g.in);
        ConstMatMap<T> xm(x + i * g.in * d, g.in, d);
        MatMap<T> om(out + i * g.out * d, g.out, d);
        om.noalias() = gm * xm;
    }
}

template <class T>
void contract_x_dense_t(const AxisWeights<T>& g, const T* x, std::size_t rows, std::size_t d,
                        T* out) {
    for (std::size_t i = 0; i < rows; ++i) {
        ConstMatMap<T> gm(g.dense.data(), g.out, g.in);
        ConstMatMap<T> xm(x + i * g.out * d, g.out, d);
        MatMap<T> om(out + i * g.in * d, g.in, d);
        om.noalias() = gm.transpose() * xm;
    }
}

template <class T>
void contract_y_sparse(const AxisWeights<T>& g, const T* x, std::size_t wd, T* out) {
    using Vec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
    using ConstVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
    std::fill(out, out + g.out * wd, T(0));
    for (std::size_t i = 0; i < g.out; ++i) {
        const auto& run = g.runs[i];
        Vec o(out + i * wd, wd);
        for (std::size_t k = 0; k < run.weights.size(); ++k) {
            T wgt = run.weights[k];
            if (wgt == T(0)) continue;
            ConstVec xr(x + (run.start + k) * wd, wd);
            o += wgt * xr;
        }
    }
}

// Transposed sparse contraction: scatter each output row into the runs.
template <class T>
void contract_y_sparse_t(const AxisWeights<T>& g, const T* x, std::size_t wd, T* out) {
    using Vec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
    using ConstVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
    std::fill(out, out + g.in * wd, T(0));
    for (std::size_t i = 0; i < g.out; ++i) {
        const auto& run = g.runs[i];
        ConstVec xr(x + i * wd, wd);
        for (std::size_t k = 0; k < run.weights.size(); ++k) {
            T wgt = run.weights[k];
            if (wgt == T(0)) continue;
            Vec o(out + (run.start + k) * wd, wd);
            o += wgt * xr;
        }
    }
}

template <class T>
void contract_x_sparse(const AxisWeights<T>& g, const T* x, std::size_t rows, std::size_t d,
                       T* out) {
    for (std::size_t i = 0; i < rows; ++i)
        contract_y_sparse(g, x + i * g.in * d, d, out + i * g.out * d);
}

template <class T>
void contract_x_sparse_t(const AxisWeights<T>& g, const T* x, std::size_t rows, std::size_t d,
                         T* out) {
    for (std::size_t i = 0; i < rows; ++i)
        contract_y_sparse_t(g, x + i * g.out * d, d, out + i * g.in * d);
}

template <class T>
void check_sample_shapes(const Tensor<T>& x, const SamplingWeights<T>& w, bool inverse) {
    if (x.rank() != 3) throw shape_error("sampler expects H,W,D input, got " + shape_str(x.shape));
    std::size_t h = inverse ? w.gy.out : w.gy.in;
    std::size_t ww = inverse ? w.gx.out : w.gx.in;
    if (x.dim(0) != h || x.dim(1) != ww)
        throw shape_error("sampler input " + shape_str(x.shape) + " does not match weights " +
                          std::to_string(h) + "x" + std::to_string(ww));
}

}  // namespace detail

// X^r[i,j,d] = H_r W_r * sum_{h,w} gy[i,h] gx[j,w] X[h,w,d], y-axis first.
template <class T>
Tensor<T> sample(const Tensor<T>& x, const SamplingWeights<T>& w) {
    detail::check_sample_shapes(x, w, false);
    std::size_t d = x.dim(2);
    T scale = static_cast<T>(w.gy.out * w.gx.out);
    AlignedVec<T> tmp(w.gy.out * w.gx.in * d);
    detail::contract_y_dense(w.gy, x.ptr(), w.gx.in * d, tmp.data());
    Tensor<T> out({w.gy.out, w.gx.out, d});
    detail::contract_x_dense(w.gx, tmp.data(), w.gy.out, d, out.ptr());
    for (T& v : out.data) v *= scale;
    return out;
}

// Transposed weights, scaled by H_in W_in (restores the input resolution).
template <class T>
Tensor<T> inverse_sample(const Tensor<T>& yr, const SamplingWeights<T>& w) {
    detail::check_sample_shapes(yr, w, true);
    std::size_t d = yr.dim(2);
    T scale = static_cast<T>(w.gy.in * w.gx.in);
    AlignedVec<T> tmp(w.gy.in * w.gx.out * d);
    detail::contract_y_dense_t(w.gy, yr.ptr(), w.gx.out * d, tmp.data());
    Tensor<T> out({w.gy.in, w.gx.in, d});
    detail::contract_x_dense_t(w.gx, tmp.data(), w.gy.in, d, out.ptr());
    for (T& v : out.data) v *= scale;
    return out;
}

template <class T>
Tensor<T> sample_sparse(const Tensor<T>& x, const SamplingWeights<T>& w) {
    detail::check_sample_shapes(x, w, false);
    validate_runs(w.gy);
    validate_runs(w.gx);
    std::size_t d = x.dim(2);
    T scale = static_cast<T>(w.gy.out * w.gx.out);
    AlignedVec<T> tmp(w.gy.out * w.gx.in * d);
    detail::contract_y_sparse(w.gy, x.ptr(), w.gx.in * d, tmp.data());
    Tensor<T> out({w.gy.out, w.gx.out, d});
    detail::contract_x_sparse(w.gx, tmp.data(), w.gy.out, d, out.ptr());
    for (T& v : out.data) v *= scale;
    return out;
}

template <class T>
Tensor<T> inverse_sample_sparse(const Tensor<T>& yr, const SamplingWeights<T>& w) {
    detail::check_sample_shapes(yr, w, true);
    validate_runs(w.gy);
    validate_runs(w.gx);
    std::size_t d = yr.dim(2);
    T scale = static_cast<T>(w.gy.in * w.gx.in);
    AlignedVec<T> tmp(w.gy.in * w.gx.out * d);
    detail::contract_y_sparse_t(w.gy, yr.ptr(), w.gx.out * d, tmp.data());
    Tensor<T> out({w.gy.in, w.gx.in, d});
    detail::contract_x_sparse_t(w.gx, tmp.data(), w.gy.in, d, out.ptr());
    for (T& v : out.data) v *= scale;
    return out;
}

template <class T>
struct SampleGrads {
    Tensor<T> x;        // d(input), H_in x W_in x D
    std::vector<T> gy;  // d(dense gy), H_r*H_in
    std::vector<T> gx;  // d(dense gx), W_r*W_in
};

// Gradients of sample() w.r.t. x and both weight matrices.
// Per channel: Out = s*Gy X Gx^T, so dX = s*Gy^T dOut Gx,
// dGy = s*dOut (X Gx^T)^T, dGx = s*dOut^T (Gy X).
template <class T>
SampleGrads<T> sample_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                               const SamplingWeights<T>& w) {
    detail::check_sample_shapes(x, w, false);
    detail::check_sample_shapes(grad_out, w, true);
    std::size_t hin = w.gy.in, win = w.gx.in, hr = w.gy.out, wr = w.gx.out, d = x.dim(2);
    T scale = static_cast<T>(hr * wr);

    SampleGrads<T> g;
    g.x = Tensor<T>({hin, win, d});
    g.gy.assign(hr * hin, T(0));
    g.gx.assign(wr * win, T(0));

    // tmp1 = Gy X : hr x (win*d); reused for dGx
    AlignedVec<T> tmp1(hr * win * d);
    detail::contract_y_dense(w.gy, x.ptr(), win * d, tmp1.data());
    // tmp2 = Gx-contraction of grad_out transposed back: hr x (win*d)
    AlignedVec<T> tmp2(hr * win * d);
    detail::contract_x_dense_t(w.gx, grad_out.ptr(), hr, d, tmp2.data());
    // dX = s * Gy^T tmp2
    detail::contract_y_dense_t(w.gy, tmp2.data(), win * d, g.x.ptr());
    for (T& v : g.x.data) v *= scale;

    ConstMatMap<T> gy(w.gy.dense.data(), hr, hin);
    ConstMatMap<T> gx(w.gx.dense.data(), wr, win);
    MatMap<T> dgy(g.gy.data(), hr, hin);
    MatMap<T> dgx(g.gx.data(), wr, win);
    for (std::size_t c = 0; c < d; ++c) {
        using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        using Stride = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
        Eigen::Map<const Mat, 0, Stride> xc(x.ptr() + c, hin, win,
                                            Stride(win * d, d));
        Eigen::Map<const Mat, 0, Stride> doc(grad_out.ptr() + c, hr, wr,
                                             Stride(wr * d, d));
        Eigen::Map<const Mat, 0, Stride> gyxc(tmp1.data() + c, hr, win,
                                              Stride(win * d, d));
        dgy.noalias() += scale * (doc * (gx * xc.transpose()));
        dgx.noalias() += scale * (doc.transpose() * gyxc);
    }
    return g;
}

// Gradients of inverse_sample() w.r.t. yr and both weight matrices.
// Per channel: Out = s*Gy^T Yr Gx (hin x win), so dYr = s*Gy dOut Gx^T,
// dGy = s*(Yr Gx) dOut^T ... accumulated below in matrix form.
template <class T>
SampleGrads<T> inverse_sample_backward(const Tensor<T>& grad_out, const Tensor<T>& yr,
                                       const SamplingWeights<T>& w) {
    detail::check_sample_shapes(yr, w, true);
    detail::check_sample_shapes(grad_out, w, false);
    std::size_t hin = w.gy.in, win = w.gx.in, hr = w.gy.out, wr = w.gx.out, d = yr.dim(2);
    T scale = static_cast<T>(hin * win);

    SampleGrads<T> g;
    g.x = Tensor<T>({hr, wr, d});  // gradient w.r.t. yr
    g.gy.assign(hr * hin, T(0));
    g.gx.assign(wr * win, T(0));

    // dYr = s * Gy dOut Gx^T
    AlignedVec<T> tmp(hr * win * d);
    detail::contract_y_dense(w.gy, grad_out.ptr(), win * d, tmp.data());
    detail::contract_x_dense(w.gx, tmp.data(), hr, d, g.x.ptr());
    for (T& v : g.x.data) v *= scale;

    ConstMatMap<T> gx(w.gx.dense.data(), wr, win);
    MatMap<T> dgy(g.gy.data(), hr, hin);
    MatMap<T> dgx(g.gx.data(), wr, win);
    for (std::size_t c = 0; c < d; ++c) {
        using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        using Stride = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
        Eigen::Map<const Mat, 0, Stride> yc(yr.ptr() + c, hr, wr, Stride(wr * d, d));
        Eigen::Map<const Mat, 0, Stride> doc(grad_out.ptr() + c, hin, win,
                                             Stride(win * d, d));
        // Out = s Gy^T Yr Gx => dGy = s Yr Gx dOut^T, dGx = s Yr^T Gy^T dOut... in
        // index form: dGy[h,i] = s sum_{j} (Yr Gx)[h,j] dOut[i,j]
        Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> yrgx =
            yc * gx;  // hr x win
        dgy.noalias() += scale * (yrgx * doc.transpose());
        Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gyt_do =
            yc.transpose() * (ConstMatMap<T>(w.gy.dense.data(), hr, hin) * doc);  // wr x win
        dgx.noalias() += scale * gyt_do;
    }
    return g;
}

template <class T>
struct SamplerGrads {
    Tensor<T> x;
    std::vector<T> sy;
    std::vector<T> sx;
};

// Full chain rule of the sampler: gradient of sample() pushed back to the input
// and to the saliency marginals.
template <class T>
SamplerGrads<T> sampler_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                 const SamplingWeights<T>& w) {
    SampleGrads<T> sg = sample_backward(grad_out, x, w);
    SamplerGrads<T> out;
    out.x = std::move(sg.x);
    out.sy = axis_weights_backward(w.gy, sg.gy);
    out.sx = axis_weights_backward(w.gx, sg.gx);
    return out;
}

// --- bilinear resize (align_corners = false) ------------------------------

struct BilinearAxis {
    std::vector<std::size_t> i0, i1;
    std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

inline BilinearAxis bilinear_axis(std::size_t in, std::size_t out) {
    BilinearAxis a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.w1.resize(out);
    double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
        std::size_t lo = static_cast<std::size_t>(src);
        if (lo >= in - 1) lo = in - 1;
        a.i0[i] = lo;
        a.i1[i] = std::min(lo + 1, in - 1);
        a.w1[i] = src - static_cast<double>(lo);
    }
    return a;
}

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 3) throw shape_error("bilinear_resize expects H,W,D input");
    std::size_t h = x.dim(0), w = x.dim(1), d = x.dim(2);
    BilinearAxis ay = bilinear_axis(h, out_h), ax = bilinear_axis(w, out_w);
    Tensor<T> out({out_h, out_w, d});
    for (std::size_t i = 0; i < out_h; ++i)
        for (std::size_t j = 0; j < out_w; ++j) {
            double wy1 = ay.w1[i], wx1 = ax.w1[j];
            for (std::size_t c = 0; c < d; ++c) {
                double v = (1 - wy1) * (1 - wx1) * x.at3(ay.i0[i], ax.i0[j], c) +
                           (1 - wy1) * wx1 * x.at3(ay.i0[i], ax.i1[j], c) +
                           wy1 * (1 - wx1) * x.at3(ay.i1[i], ax.i0[j], c) +
                           wy1 * wx1 * x.at3(ay.i1[i], ax.i1[j], c);
                out.at3(i, j, c) = static_cast<T>(v);
            }
        }
    return out;
}

template <class T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& grad_out, std::size_t in_h,
                                   std::size_t in_w) {
    std::size_t oh = grad_out.dim(0), ow = grad_out.dim(1), d = grad_out.dim(2);
    BilinearAxis ay = bilinear_axis(in_h, oh), ax = bilinear_axis(in_w, ow);
    Tensor<T> gx({in_h, in_w, d});
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            double wy1 = ay.w1[i], wx1 = ax.w1[j];
            for (std::size_t c = 0; c < d; ++c) {
                double g = static_cast<double>(grad_out.at3(i, j, c));
                gx.at3(ay.i0[i], ax.i0[j], c) += static_cast<T>((1 - wy1) * (1 - wx1) * g);
                gx.at3(ay.i0[i], ax.i1[j], c) += static_cast<T>((1 - wy1) * wx1 * g);
                gx.at3(ay.i1[i], ax.i0[j], c) += static_cast<T>(wy1 * (1 - wx1) * g);
                gx.at3(ay.i1[i], ax.i1[j], c) += static_cast<T>(wy1 * wx1 * g);
            }
        }
    return gx;
}

}  // namespace ssb
