#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ssb/sampler.hpp"

using ssb::AxisWeights;
using ssb::SaliencyMarginals;
using ssb::SamplingWeights;
using ssb::Tensor;

namespace {

// Independent reference: overlap of [cs_j, cs_{j+1}) with [i/r, (i+1)/r)
// by direct enumeration in long double.
std::vector<long double> oracle_axis(const std::vector<double>& marginal, std::size_t r) {
    const std::size_t n = marginal.size();
    std::vector<long double> cs(n + 1, 0.0L);
    for (std::size_t j = 0; j < n; ++j) cs[j + 1] = cs[j] + static_cast<long double>(marginal[j]);
    std::vector<long double> g(r * n, 0.0L);
    for (std::size_t i = 0; i < r; ++i) {
        const long double lo = static_cast<long double>(i) / r;
        const long double hi = static_cast<long double>(i + 1) / r;
        for (std::size_t j = 0; j < n; ++j) {
            long double ov = std::min(cs[j + 1], hi) - std::max(cs[j], lo);
            if (ov > 0.0L) g[i * n + j] = ov;
        }
    }
    return g;
}

// Four-loop reference of the scaled sampling contraction.
template <class T>
Tensor<T> oracle_sample(const Tensor<T>& x, const SamplingWeights<T>& w) {
    const std::size_t hr = w.gy.out, wr = w.gx.out, hin = w.gy.in, win = w.gx.in, d = x.dim(2);
    Tensor<T> out({hr, wr, d});
    for (std::size_t i = 0; i < hr; ++i)
        for (std::size_t j = 0; j < wr; ++j)
            for (std::size_t c = 0; c < d; ++c) {
                long double acc = 0.0L;
                for (std::size_t h = 0; h < hin; ++h)
                    for (std::size_t ww = 0; ww < win; ++ww)
                        acc += static_cast<long double>(w.gy.at(i, h)) *
                               static_cast<long double>(w.gx.at(j, ww)) *
                               static_cast<long double>(x.at3(h, ww, c));
                out.at3(i, j, c) = static_cast<T>(acc * hr * wr);
            }
    return out;
}

template <class T>
Tensor<T> oracle_inverse(const Tensor<T>& yr, const SamplingWeights<T>& w) {
    const std::size_t hr = w.gy.out, wr = w.gx.out, hin = w.gy.in, win = w.gx.in, d = yr.dim(2);
    Tensor<T> out({hin, win, d});
    for (std::size_t h = 0; h < hin; ++h)
        for (std::size_t ww = 0; ww < win; ++ww)
            for (std::size_t c = 0; c < d; ++c) {
                long double acc = 0.0L;
                for (std::size_t i = 0; i < hr; ++i)
                    for (std::size_t j = 0; j < wr; ++j)
                        acc += static_cast<long double>(w.gy.at(i, h)) *
                               static_cast<long double>(w.gx.at(j, ww)) *
                               static_cast<long double>(yr.at3(i, j, c));
                out.at3(h, ww, c) = static_cast<T>(acc * hin * win);
            }
    return out;
}

template <class T>
Tensor<T> random_map(std::size_t h, std::size_t w, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(0.02, 0.98);
    Tensor<T> m({h, w});
    for (auto& v : m.data) v = static_cast<T>(u(rng));
    return m;
}

template <class T>
void check_axis_invariants(const AxisWeights<T>& w, const std::vector<T>& marginal) {
    const std::size_t r = w.out, n = w.in;
    for (T v : w.dense) CHECK(v >= T(0));
    for (std::size_t i = 0; i < r; ++i) {
        long double row = 0.0L;
        for (std::size_t j = 0; j < n; ++j) row += static_cast<long double>(w.at(i, j));
        CHECK(std::abs(static_cast<double>(row) - 1.0 / static_cast<double>(r)) < 1e-6);
    }
    for (std::size_t j = 0; j < n; ++j) {
        long double col = 0.0L;
        for (std::size_t i = 0; i < r; ++i) col += static_cast<long double>(w.at(i, j));
        CHECK(std::abs(static_cast<double>(col) - static_cast<double>(marginal[j])) < 1e-6);
    }
    CHECK(w.nnz() <= n + r);
    // runs are contiguous by construction; check monotone starts and that
    // the dense matrix has no nonzero outside its run
    std::size_t prev = 0;
    for (std::size_t i = 0; i < r; ++i) {
        const auto& run = w.runs[i];
        CHECK(run.start >= prev);
        prev = run.start;
        for (std::size_t j = 0; j < n; ++j) {
            const bool inside = j >= run.start && j < run.start + run.weights.size();
            if (!inside) CHECK(w.at(i, j) == T(0));
            else CHECK(w.at(i, j) == run.weights[j - run.start]);
        }
    }
}

}  // namespace

TEST_CASE("marginalize hand values") {
    Tensor<double> m({2, 2});
    m.data = {0.4, 0.4, 0.1, 0.1};
    auto mg = ssb::marginalize(m);
    CHECK(mg.sy[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(mg.sy[1] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(mg.sx[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(mg.sx[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("marginalize constant map is uniform and sums to one") {
    Tensor<double> m({5, 7});
    m.fill(0.37);
    auto mg = ssb::marginalize(m);
    double sum_y = 0, sum_x = 0;
    for (double v : mg.sy) {
        CHECK(v == doctest::Approx(1.0 / 5).epsilon(1e-12));
        sum_y += v;
    }
    for (double v : mg.sx) {
        CHECK(v == doctest::Approx(1.0 / 7).epsilon(1e-12));
        sum_x += v;
    }
    CHECK(sum_y == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sum_x == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("marginalize rejects nonpositive maps") {
    Tensor<double> m({2, 2});
    m.fill(0.0);
    CHECK_THROWS_AS(ssb::marginalize(m), ssb::numeric_error);
}

TEST_CASE("build_axis_weights frozen example") {
    std::vector<double> marginal = {0.4, 0.3, 0.2, 0.1};
    auto w = ssb::build_axis_weights(marginal, 2);
    const double expect[2][4] = {{0.4, 0.1, 0.0, 0.0}, {0.0, 0.2, 0.2, 0.1}};
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(w.at(i, j) == doctest::Approx(expect[i][j]).epsilon(1e-9));
}

TEST_CASE("build_axis_weights uniform examples") {
    std::vector<double> u4(4, 0.25);
    auto w = ssb::build_axis_weights(u4, 2);
    const double expect[2][4] = {{0.25, 0.25, 0.0, 0.0}, {0.0, 0.0, 0.25, 0.25}};
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(w.at(i, j) == doctest::Approx(expect[i][j]).epsilon(1e-12));

    std::vector<double> u8(8, 0.125);
    auto id = ssb::build_axis_weights(u8, 8);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(id.at(i, j) == doctest::Approx(i == j ? 0.125 : 0.0).epsilon(1e-12));
}

TEST_CASE("build_axis_weights rejects unnormalized marginals") {
    std::vector<double> bad = {0.4, 0.4, 0.4};
    CHECK_THROWS_AS(ssb::build_axis_weights(bad, 2), ssb::numeric_error);
}

TEST_CASE("build_axis_weights matches brute-force oracle") {
    std::mt19937 rng(11);
    for (int it = 0; it < 200; ++it) {
        std::uniform_int_distribution<std::size_t> nd(2, 24);
        const std::size_t n = nd(rng);
        const std::size_t r = std::uniform_int_distribution<std::size_t>(1, n)(rng);
        std::uniform_real_distribution<double> u(0.02, 1.0);
        std::vector<double> marginal(n);
        double s = 0;
        for (auto& v : marginal) s += (v = u(rng));
        for (auto& v : marginal) v /= s;
        auto w = ssb::build_axis_weights(marginal, r);
        auto ref = oracle_axis(marginal, r);
        for (std::size_t i = 0; i < r * n; ++i)
            CHECK(std::abs(w.dense[i] - static_cast<double>(ref[i])) < 1e-12);
    }
}

TEST_CASE("sample hand values") {
    // uniform 4 -> 2 on a single column
    auto w = ssb::uniform_weights<double>(4, 1, 2, 1);
    Tensor<double> x({4, 1, 1});
    x.data = {1, 2, 3, 4};
    auto out = ssb::sample(x, w);
    CHECK(out.data[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(out.data[1] == doctest::Approx(3.5).epsilon(1e-12));

    // weighted marginal on the y axis
    SaliencyMarginals<double> m;
    m.sy = {0.4, 0.3, 0.2, 0.1};
    m.sx = {1.0};
    auto wa = ssb::build_weights(m, 2, 1);
    auto out2 = ssb::sample(x, wa);
    CHECK(out2.data[0] == doctest::Approx(1.2).epsilon(1e-9));
    CHECK(out2.data[1] == doctest::Approx(2.8).epsilon(1e-9));
}

TEST_CASE("identity-size sampling with uniform saliency is exact") {
    auto w = ssb::uniform_weights<float>(8, 4, 8, 4);
    std::mt19937 rng(3);
    std::normal_distribution<float> g(0.f, 1.f);
    Tensor<float> x({8, 4, 3});
    for (auto& v : x.data) v = g(rng);
    auto out = ssb::sample(x, w);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(out.data[i] == x.data[i]);
    auto back = ssb::inverse_sample(out, w);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back.data[i] == x.data[i]);
}

TEST_CASE("inverse_sample block broadcast") {
    auto w = ssb::uniform_weights<double>(4, 1, 2, 1);
    Tensor<double> yr({2, 1, 1});
    yr.data = {5.0, -3.0};
    auto out = ssb::inverse_sample(yr, w);
    CHECK(out.data[0] == doctest::Approx(5.0));
    CHECK(out.data[1] == doctest::Approx(5.0));
    CHECK(out.data[2] == doctest::Approx(-3.0));
    CHECK(out.data[3] == doctest::Approx(-3.0));
}

TEST_CASE("dense kernels match the nested-loop oracle") {
    std::mt19937 rng(21);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int it = 0; it < 40; ++it) {
        std::uniform_int_distribution<std::size_t> sd(2, 8);
        const std::size_t h = sd(rng), w = sd(rng);
        const std::size_t hr = std::uniform_int_distribution<std::size_t>(1, h)(rng);
        const std::size_t wr = std::uniform_int_distribution<std::size_t>(1, w)(rng);
        const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
        auto map = random_map<double>(h, w, rng);
        auto sw = ssb::build_weights(ssb::marginalize(map), hr, wr);
        Tensor<double> x({h, w, d});
        for (auto& v : x.data) v = g(rng);
        auto out = ssb::sample(x, sw);
        auto ref = oracle_sample(x, sw);
        for (std::size_t i = 0; i < out.numel(); ++i)
            CHECK(out.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-6));
        Tensor<double> yr({hr, wr, d});
        for (auto& v : yr.data) v = g(rng);
        auto up = ssb::inverse_sample(yr, sw);
        auto upref = oracle_inverse(yr, sw);
        for (std::size_t i = 0; i < up.numel(); ++i)
            CHECK(up.data[i] == doctest::Approx(upref.data[i]).epsilon(1e-6));
    }
}

TEST_CASE("sparse kernels agree with dense") {
    std::mt19937 rng(31);
    std::normal_distribution<float> g(0.f, 1.f);
    for (int it = 0; it < 60; ++it) {
        std::uniform_int_distribution<std::size_t> sd(2, 33);
        const std::size_t h = sd(rng), w = sd(rng);
        const std::size_t hr = std::uniform_int_distribution<std::size_t>(1, h)(rng);
        const std::size_t wr = std::uniform_int_distribution<std::size_t>(1, w)(rng);
        const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
        auto map = random_map<float>(h, w, rng);
        auto sw = ssb::build_weights(ssb::marginalize(map), hr, wr);
        Tensor<float> x({h, w, d});
        for (auto& v : x.data) v = g(rng);
        auto dn = ssb::sample(x, sw);
        auto sp = ssb::sample_sparse(x, sw);
        for (std::size_t i = 0; i < dn.numel(); ++i)
            CHECK(std::abs(dn.data[i] - sp.data[i]) <=
                  1e-5f * std::max(1.0f, std::abs(dn.data[i])));
        Tensor<float> yr({hr, wr, d});
        for (auto& v : yr.data) v = g(rng);
        auto dup = ssb::inverse_sample(yr, sw);
        auto sup = ssb::inverse_sample_sparse(yr, sw);
        for (std::size_t i = 0; i < dup.numel(); ++i)
            CHECK(std::abs(dup.data[i] - sup.data[i]) <=
                  1e-5f * std::max(1.0f, std::abs(dup.data[i])));
    }
}

TEST_CASE("corrupt run structure is rejected") {
    auto sw = ssb::uniform_weights<float>(8, 8, 4, 4);
    Tensor<float> x({8, 8, 2});
    x.fill(1.f);

    auto broken = sw;
    broken.gy.runs[2].start = 0;  // non-monotone vs run 1
    CHECK_THROWS_AS(ssb::sample_sparse(x, broken), ssb::data_error);

    auto overflow = sw;
    overflow.gx.runs[3].start = 7;  // run would exceed the input size
    CHECK_THROWS_AS(ssb::sample_sparse(x, overflow), ssb::data_error);

    auto empty = sw;
    empty.gy.runs[1].weights.clear();
    CHECK_THROWS_AS(ssb::sample_sparse(x, empty), ssb::data_error);
}

TEST_CASE("weight invariants over random maps") {
    std::mt19937 rng(41);
    for (int it = 0; it < 300; ++it) {
        std::uniform_int_distribution<std::size_t> nd(4, 64);
        const std::size_t h = nd(rng), w = nd(rng);
        const std::size_t hr = std::uniform_int_distribution<std::size_t>(2, h)(rng);
        const std::size_t wr = std::uniform_int_distribution<std::size_t>(2, w)(rng);
        auto map = random_map<float>(h, w, rng);
        auto mg = ssb::marginalize(map);
        auto sw = ssb::build_weights(mg, hr, wr);
        check_axis_invariants(sw.gy, mg.sy);
        check_axis_invariants(sw.gx, mg.sx);
    }
}

TEST_CASE("nnz audit n=64 r=16") {
    std::mt19937 rng(51);
    for (int it = 0; it < 1000; ++it) {
        auto map = random_map<float>(64, 64, rng);
        auto sw = ssb::build_weights(ssb::marginalize(map), 16, 16);
        CHECK(sw.gy.nnz() <= 80);
        CHECK(sw.gx.nnz() <= 80);
    }
}

TEST_CASE("adjoint identity") {
    std::mt19937 rng(61);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int it = 0; it < 25; ++it) {
        const std::size_t h = 9, w = 7, hr = 4, wr = 3, d = 2;
        auto map = random_map<double>(h, w, rng);
        auto sw = ssb::build_weights(ssb::marginalize(map), hr, wr);
        Tensor<double> x({h, w, d}), y({hr, wr, d});
        for (auto& v : x.data) v = g(rng);
        for (auto& v : y.data) v = g(rng);
        auto sx = ssb::sample(x, sw);
        auto iy = ssb::inverse_sample(y, sw);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < sx.numel(); ++i) lhs += sx.data[i] * y.data[i];
        for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.data[i] * iy.data[i];
        CHECK(lhs / (hr * wr) == doctest::Approx(rhs / (h * w)).epsilon(1e-9));
    }
}

TEST_CASE("sample is linear in x") {
    std::mt19937 rng(71);
    std::normal_distribution<double> g(0.0, 1.0);
    auto map = random_map<double>(6, 5, rng);
    auto sw = ssb::build_weights(ssb::marginalize(map), 3, 2);
    Tensor<double> x({6, 5, 3}), y({6, 5, 3});
    for (auto& v : x.data) v = g(rng);
    for (auto& v : y.data) v = g(rng);
    const double a = 1.7, b = -0.3;
    Tensor<double> z({6, 5, 3});
    for (std::size_t i = 0; i < z.numel(); ++i) z.data[i] = a * x.data[i] + b * y.data[i];
    auto sz = ssb::sample(z, sw);
    auto sx = ssb::sample(x, sw);
    auto sy = ssb::sample(y, sw);
    for (std::size_t i = 0; i < sz.numel(); ++i)
        CHECK(sz.data[i] == doctest::Approx(a * sx.data[i] + b * sy.data[i]).epsilon(1e-10));
}

TEST_CASE("uniform sampling preserves channel means") {
    std::mt19937 rng(81);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::size_t h = 12, w = 8, hr = 3, wr = 4, d = 3;
    auto sw = ssb::uniform_weights<double>(h, w, hr, wr);
    Tensor<double> x({h, w, d});
    for (auto& v : x.data) v = g(rng);
    auto out = ssb::sample(x, sw);
    for (std::size_t c = 0; c < d; ++c) {
        double min = 0, mout = 0;
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) min += x.at3(i, j, c);
        for (std::size_t i = 0; i < hr; ++i)
            for (std::size_t j = 0; j < wr; ++j) mout += out.at3(i, j, c);
        CHECK(min / (h * w) == doctest::Approx(mout / (hr * wr)).epsilon(1e-9));
    }
}

TEST_CASE("weights are bitwise deterministic") {
    std::mt19937 rng(91);
    auto map = random_map<float>(17, 13, rng);
    auto a = ssb::build_weights(ssb::marginalize(map), 5, 4);
    auto b = ssb::build_weights(ssb::marginalize(map), 5, 4);
    CHECK(a.gy.dense == b.gy.dense);
    CHECK(a.gx.dense == b.gx.dense);
    for (std::size_t i = 0; i < a.gy.runs.size(); ++i) {
        CHECK(a.gy.runs[i].start == b.gy.runs[i].start);
        CHECK(a.gy.runs[i].weights == b.gy.runs[i].weights);
    }
}

TEST_CASE("uniform_weights equals build_weights on uniform marginals bitwise") {
    for (std::size_t n : {4u, 7u, 16u, 33u}) {
        for (std::size_t r : {2u, 3u, 4u}) {
            if (r > n) continue;
            auto uw = ssb::uniform_weights<float>(n, n, r, r);
            std::vector<float> m(n, static_cast<float>(1.0 / static_cast<double>(n)));
            ssb::detail::normalize_marginal(m);
            auto bw = ssb::build_axis_weights(m, r);
            CHECK(uw.gy.dense == bw.dense);
        }
    }
}

TEST_CASE("bilinear resize hand values") {
    Tensor<double> x({4, 1, 1});
    x.data = {1, 2, 3, 4};
    auto out = ssb::bilinear_resize(x, 2, 1);
    // src positions 0.5 and 2.5: midpoints of (1,2) and (3,4)
    CHECK(out.data[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(out.data[1] == doctest::Approx(3.5).epsilon(1e-12));

    auto same = ssb::bilinear_resize(x, 4, 1);
    for (std::size_t i = 0; i < 4; ++i) CHECK(same.data[i] == doctest::Approx(x.data[i]));

    Tensor<double> c({5, 6, 2});
    c.fill(0.7);
    auto cr = ssb::bilinear_resize(c, 3, 2);
    for (double v : cr.data) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
}
