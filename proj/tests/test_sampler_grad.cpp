#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ssb/sampler.hpp"

using ssb::SamplingWeights;
using ssb::Tensor;

namespace {

// loss = <R, sample(x, weights(marginalize(map)))>
struct SampleLoss {
    std::size_t hr, wr;
    Tensor<double> r;

    double operator()(const Tensor<double>& map, const Tensor<double>& x) const {
        auto w = ssb::build_weights(ssb::marginalize(map), hr, wr);
        auto out = ssb::sample(x, w);
        double l = 0;
        for (std::size_t i = 0; i < out.numel(); ++i) l += r.data[i] * out.data[i];
        return l;
    }
};

struct InverseLoss {
    std::size_t hr, wr;
    Tensor<double> r;

    double operator()(const Tensor<double>& map, const Tensor<double>& y) const {
        auto w = ssb::build_weights(ssb::marginalize(map), hr, wr);
        auto out = ssb::inverse_sample(y, w);
        double l = 0;
        for (std::size_t i = 0; i < out.numel(); ++i) l += r.data[i] * out.data[i];
        return l;
    }
};

template <class Loss>
void fd_check(Loss&& loss, Tensor<double>& map, Tensor<double>& x, const Tensor<double>& grad_map,
              const Tensor<double>& grad_x, double h = 1e-6, double tol = 1e-4) {
    auto rel = [](double a, double b) {
        const double scale = std::max({1.0, std::abs(a), std::abs(b)});
        return std::abs(a - b) / scale;
    };
    for (std::size_t i = 0; i < map.numel(); ++i) {
        const double keep = map.data[i];
        map.data[i] = keep + h;
        const double up = loss(map, x);
        map.data[i] = keep - h;
        const double dn = loss(map, x);
        map.data[i] = keep;
        CHECK(rel((up - dn) / (2 * h), grad_map.data[i]) < tol);
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double keep = x.data[i];
        x.data[i] = keep + h;
        const double up = loss(map, x);
        x.data[i] = keep - h;
        const double dn = loss(map, x);
        x.data[i] = keep;
        CHECK(rel((up - dn) / (2 * h), grad_x.data[i]) < tol);
    }
}

Tensor<double> random_map(std::size_t h, std::size_t w, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    Tensor<double> m({h, w});
    for (auto& v : m.data) v = u(rng);
    return m;
}

Tensor<double> random_tensor(ssb::Shape s, std::mt19937& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = g(rng);
    return t;
}

}  // namespace

TEST_CASE("uniform identity-size sampling passes gradients through unchanged") {
    auto w = ssb::uniform_weights<double>(8, 8, 8, 8);
    std::mt19937 rng(5);
    auto x = random_tensor({8, 8, 2}, rng);
    auto grad_out = random_tensor({8, 8, 2}, rng);
    auto g = ssb::sample_backward(grad_out, x, w);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(g.x.data[i] == doctest::Approx(grad_out.data[i]).epsilon(1e-12));
}

TEST_CASE("sample gradients match finite differences across seeds") {
    for (unsigned seed : {1u, 2u, 3u, 4u, 5u}) {
        std::mt19937 rng(seed);
        const std::size_t hin = 5, win = 4, hr = 3, wr = 2, d = 2;
        auto map = random_map(hin, win, rng);
        auto x = random_tensor({hin, win, d}, rng);
        SampleLoss loss{hr, wr, random_tensor({hr, wr, d}, rng)};

        auto m = ssb::marginalize(map);
        auto w = ssb::build_weights(m, hr, wr);
        auto sg = ssb::sampler_backward(loss.r, x, w);
        auto grad_map = ssb::marginalize_backward(map, m, sg.sy, sg.sx);
        fd_check(loss, map, x, grad_map, sg.x);
    }
}

TEST_CASE("inverse sample gradients match finite differences") {
    for (unsigned seed : {11u, 12u, 13u, 14u, 15u}) {
        std::mt19937 rng(seed);
        const std::size_t hin = 6, win = 5, hr = 3, wr = 2, d = 2;
        auto map = random_map(hin, win, rng);
        auto y = random_tensor({hr, wr, d}, rng);
        InverseLoss loss{hr, wr, random_tensor({hin, win, d}, rng)};

        auto m = ssb::marginalize(map);
        auto w = ssb::build_weights(m, hr, wr);
        auto ig = ssb::inverse_sample_backward(loss.r, y, w);
        auto dsy = ssb::axis_weights_backward(w.gy, ig.gy);
        auto dsx = ssb::axis_weights_backward(w.gx, ig.gx);
        auto grad_map = ssb::marginalize_backward(map, m, dsy, dsx);
        fd_check(loss, map, y, grad_map, ig.x);
    }
}

TEST_CASE("map gradient is orthogonal to the map") {
    // scaling the saliency map leaves the marginals, and hence the loss,
    // unchanged; the analytic map gradient must be orthogonal to that
    // direction
    std::mt19937 rng(99);
    const std::size_t hin = 7, win = 6, hr = 4, wr = 3, d = 3;
    auto map = random_map(hin, win, rng);
    auto x = random_tensor({hin, win, d}, rng);
    SampleLoss loss{hr, wr, random_tensor({hr, wr, d}, rng)};

    auto m = ssb::marginalize(map);
    auto w = ssb::build_weights(m, hr, wr);
    auto sg = ssb::sampler_backward(loss.r, x, w);
    auto grad_map = ssb::marginalize_backward(map, m, sg.sy, sg.sx);

    double dot = 0, norm = 0;
    for (std::size_t i = 0; i < map.numel(); ++i) {
        dot += grad_map.data[i] * map.data[i];
        norm += std::abs(grad_map.data[i] * map.data[i]);
    }
    CHECK(std::abs(dot) < 1e-9 * std::max(1.0, norm));

    const double base = loss(map, x);
    Tensor<double> scaled = map;
    for (auto& v : scaled.data) v *= 1.0 + 1e-5;
    CHECK(loss(scaled, x) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("bilinear resize gradient matches finite differences") {
    std::mt19937 rng(7);
    const std::size_t h = 6, w = 5, oh = 3, ow = 4, d = 2;
    auto x = random_tensor({h, w, d}, rng);
    auto r = random_tensor({oh, ow, d}, rng);
    auto grad = ssb::bilinear_resize_backward(r, h, w);
    const double step = 1e-6;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double keep = x.data[i];
        x.data[i] = keep + step;
        auto up = ssb::bilinear_resize(x, oh, ow);
        x.data[i] = keep - step;
        auto dn = ssb::bilinear_resize(x, oh, ow);
        x.data[i] = keep;
        double fd = 0;
        for (std::size_t k = 0; k < up.numel(); ++k)
            fd += r.data[k] * (up.data[k] - dn.data[k]) / (2 * step);
        CHECK(fd == doctest::Approx(grad.data[i]).epsilon(1e-6));
    }
}
