#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>
#include <vector>

#include "ssb/sampler.hpp"

// Dense vs sparse sampling kernel timings. Each case times one
// sample + inverse_sample pair; median of N runs after warmup.

namespace ssb {

struct BenchRow {
    std::size_t h_in = 0, w_in = 0, h_r = 0, w_r = 0, d = 0;
    double dense_ns = 0, sparse_ns = 0;

    double speedup() const { return sparse_ns > 0 ? dense_ns / sparse_ns : 0; }
};

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "h_in,w_in,h_r,w_r,d,dense_ns,sparse_ns,speedup\n";
    for (const auto& r : rows)
        os << r.h_in << "," << r.w_in << "," << r.h_r << "," << r.w_r << "," << r.d << ","
           << static_cast<std::uint64_t>(r.dense_ns) << ","
           << static_cast<std::uint64_t>(r.sparse_ns) << "," << r.speedup() << "\n";
}

namespace detail {

template <class Fn>
double median_ns(Fn&& fn, int reps, int warmup) {
    for (int i = 0; i < warmup; ++i) fn();
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(reps));
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

}  // namespace detail

// Times one case; throws numeric_error if dense and sparse disagree beyond
// 1e-5 relative before any timing happens.
template <class T>
BenchRow bench_case(std::size_t h_in, std::size_t w_in, std::size_t h_r, std::size_t w_r,
                    std::size_t d, int reps = 25, int warmup = 3, std::uint64_t seed = 7) {
    std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
    std::uniform_real_distribution<double> u(0.05, 0.95);
    Tensor<T> map({h_in, w_in});
    for (auto& v : map.data) v = static_cast<T>(u(rng));
    SamplingWeights<T> w = build_weights(marginalize(map), h_r, w_r);

    Tensor<T> x({h_in, w_in, d});
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& v : x.data) v = static_cast<T>(g(rng));

    Tensor<T> down_d = sample(x, w);
    Tensor<T> down_s = sample_sparse(x, w);
    Tensor<T> up_d = inverse_sample(down_d, w);
    Tensor<T> up_s = inverse_sample_sparse(down_d, w);
    auto gate = [](const Tensor<T>& a, const Tensor<T>& b) {
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double ref = std::max(1.0, std::abs(static_cast<double>(a.data[i])));
            if (std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])) >
                1e-5 * ref)
                throw numeric_error("bench: dense and sparse kernels disagree");
        }
    };
    gate(down_d, down_s);
    gate(up_d, up_s);

    BenchRow row{h_in, w_in, h_r, w_r, d, 0, 0};
    volatile T sink = 0;
    row.dense_ns = detail::median_ns(
        [&] {
            Tensor<T> a = sample(x, w);
            Tensor<T> b = inverse_sample(a, w);
            sink = sink + b.data[0];
        },
        reps, warmup);
    row.sparse_ns = detail::median_ns(
        [&] {
            Tensor<T> a = sample_sparse(x, w);
            Tensor<T> b = inverse_sample_sparse(a, w);
            sink = sink + b.data[0];
        },
        reps, warmup);
    return row;
}

}  // namespace ssb
