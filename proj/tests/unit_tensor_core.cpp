#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "dpt/adamw.hpp"
#include "dpt/conv.hpp"
#include "dpt/gradcheck.hpp"
#include "dpt/net.hpp"
#include "dpt/norm.hpp"
#include "dpt/ops.hpp"
#include "dpt/sampling.hpp"

using namespace dpt;

namespace {

// Direct nested-loop convolution, no cleverness: the oracle the fast path is
// judged against.
std::vector<double> naive_conv2d(const std::vector<double>& x, int n, int ci, int h, int w,
                                 const std::vector<double>& wt, int co, int kh, int kw,
                                 const std::vector<double>& bias, int stride, int pad,
                                 int groups = 1) {
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (w + 2 * pad - kw) / stride + 1;
    const int cg = ci / groups;
    std::vector<double> out(static_cast<size_t>(n) * co * ho * wo, 0.0);
    for (int ni = 0; ni < n; ++ni)
        for (int o = 0; o < co; ++o) {
            const int g = o / (co / groups);
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(o)];
                    for (int c = 0; c < cg; ++c)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += wt[((static_cast<size_t>(o) * cg + c) * kh + ky) * kw + kx] *
                                       x[((static_cast<size_t>(ni) * ci + g * cg + c) * h + iy) * w +
                                         ix];
                            }
                    out[((static_cast<size_t>(ni) * co + o) * ho + oy) * wo + ox] = acc;
                }
        }
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max({den, std::abs(a[i]), std::abs(b[i])});
    }
    return num / std::max(den, 1e-12);
}

// Random tensor with entries bounded away from zero; keeps finite differences
// off the kinks of relu/abs/min/max.
TensorD randn_away_from_zero(Shape shape, Rng& rng, double margin = 0.1) {
    std::vector<double> v(static_cast<size_t>(numel(shape)));
    for (auto& x : v) {
        do {
            x = rng.normal();
        } while (std::abs(x) < margin);
    }
    return TensorD::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

TEST_CASE("backward populates exact gradients and accumulates") {
    Rng rng(7);
    TensorD x = TensorD::randn({3, 4}, rng, 1.0, true);

    SUBCASE("sum gives all-ones gradient") {
        backward(sum_all(x));
        for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
    }
    SUBCASE("sum of squares gives 2x") {
        backward(sum_all(mul(x, x)));
        for (size_t i = 0; i < x.grad().size(); ++i)
            CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]));
    }
    SUBCASE("repeated backward accumulates until zero_grad") {
        backward(sum_all(x));
        backward(sum_all(x));
        for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
        x.zero_grad();
        backward(sum_all(x));
        for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
    }
    SUBCASE("non-scalar root is rejected") { CHECK_THROWS_AS(backward(mul(x, x)), std::invalid_argument); }
    SUBCASE("diamond-shaped graph accumulates both paths") {
        TensorD y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x -> d = 2x + 3
        backward(sum_all(y));
        for (size_t i = 0; i < x.grad().size(); ++i)
            CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i] + 3.0));
    }
}

TEST_CASE("ops reject non-finite results") {
    TensorD a = TensorD::from_data({2}, {1.0, 2.0}, false);
    TensorD z = TensorD::from_data({2}, {1.0, 0.0}, false);
    CHECK_THROWS_AS(div(a, z), std::runtime_error);
    TensorD neg = TensorD::from_data({2}, {-1.0, 2.0}, false);
    CHECK_THROWS_AS(log(neg), std::runtime_error);
}

TEST_CASE("conv2d matches hand examples and the nested-loop oracle") {
    SUBCASE("all-ones 3x3 against all-ones kernel sums to 9") {
        TensorD x = TensorD::filled({1, 1, 3, 3}, 1.0);
        TensorD w = TensorD::filled({1, 1, 3, 3}, 1.0);
        TensorD y = conv2d(x, w, 1, 0);
        CHECK(y.shape() == Shape{1, 1, 1, 1});
        CHECK(y.item() == doctest::Approx(9.0));
    }
    SUBCASE("centered delta kernel is the identity") {
        Rng rng(11);
        TensorD x = TensorD::randn({1, 1, 4, 5}, rng);
        std::vector<double> wv(9, 0.0);
        wv[4] = 1.0;
        TensorD w = TensorD::from_data({1, 1, 3, 3}, wv);
        TensorD y = conv2d(x, w, 1, 1);
        CHECK(max_abs_diff(y.data(), x.data()) == 0.0);
    }
    SUBCASE("random case equals the oracle") {
        Rng rng(12);
        for (int trial = 0; trial < 20; ++trial) {
            const int stride = 1 + rng.uniform_int(2);
            const int pad = rng.uniform_int(2);
            TensorD x = TensorD::randn({1, 2, 5, 5}, rng);
            TensorD w = TensorD::randn({3, 2, 3, 3}, rng);
            TensorD b = TensorD::randn({3}, rng);
            TensorD y = conv2d(x, w, b, stride, pad);
            auto oracle = naive_conv2d(x.data(), 1, 2, 5, 5, w.data(), 3, 3, 3, b.data(), stride, pad);
            CHECK(rel_diff(y.data(), oracle) < 1e-12);
        }
    }
    SUBCASE("grouped and depthwise cases equal the oracle") {
        Rng rng(13);
        TensorD x = TensorD::randn({2, 4, 6, 6}, rng);
        TensorD w = TensorD::randn({4, 1, 3, 3}, rng);  // depthwise: groups == channels
        TensorD b = TensorD::randn({4}, rng);
        TensorD y = conv2d(x, w, b, 1, 1, 4);
        auto oracle = naive_conv2d(x.data(), 2, 4, 6, 6, w.data(), 4, 3, 3, b.data(), 1, 1, 4);
        CHECK(rel_diff(y.data(), oracle) < 1e-12);

        TensorD w2 = TensorD::randn({6, 2, 3, 3}, rng);  // 2 groups of 2 -> 3 outputs each
        TensorD y2 = conv2d(x, w2, TensorD(), 2, 1, 2);
        auto oracle2 = naive_conv2d(x.data(), 2, 4, 6, 6, w2.data(), 6, 3, 3, {}, 2, 1, 2);
        CHECK(rel_diff(y2.data(), oracle2) < 1e-12);
    }
    SUBCASE("shape mismatch raises a descriptive error") {
        TensorD x = TensorD::filled({1, 3, 4, 4}, 1.0);
        TensorD w = TensorD::filled({2, 2, 3, 3}, 1.0);
        CHECK_THROWS_WITH_AS(conv2d(x, w, 1, 1) /* 2 != 3 channels */,
                             doctest::Contains("channels"), std::invalid_argument);
    }
}

TEST_CASE("conv_transpose2d stamps kernels and is the exact adjoint of conv2d") {
    SUBCASE("1x1 input stamps the kernel") {
        TensorD y = TensorD::from_data({1, 1, 1, 1}, {2.5});
        TensorD w = TensorD::filled({1, 1, 2, 2}, 1.0);
        TensorD out = conv_transpose2d(y, w, 2, 0);
        CHECK(out.shape() == Shape{1, 1, 2, 2});
        for (double v : out.data()) CHECK(v == doctest::Approx(2.5));
    }
    SUBCASE("zero input gives bias") {
        TensorD y = TensorD::zeros({1, 2, 3, 3});
        TensorD w = TensorD::filled({2, 3, 4, 4}, 0.7);
        TensorD b = TensorD::from_data({3}, {1.0, -2.0, 0.5});
        TensorD out = conv_transpose2d(y, w, b, 2, 1);
        CHECK(out.shape() == Shape{1, 3, 6, 6});
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 36; ++i)
                CHECK(out.data()[static_cast<size_t>(c) * 36 + i] == doctest::Approx(b.data()[static_cast<size_t>(c)]));
    }
    SUBCASE("inner-product adjoint identity over 100 seeds") {
        for (uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed * 977 + 5);
            const int stride = 1 + rng.uniform_int(3);
            const int pad = rng.uniform_int(3);
            const int k = 1 + rng.uniform_int(4);
            const int ci = 1 + rng.uniform_int(3);
            const int co = 1 + rng.uniform_int(3);
            // size chosen so the conv output maps back onto exactly [h,w]
            const int h = k - 2 * pad + stride * (1 + rng.uniform_int(4));
            const int w = k - 2 * pad + stride * (1 + rng.uniform_int(4));
            if (h < 1 || w < 1) continue;
            TensorD x = TensorD::randn({1, ci, h, w}, rng);
            TensorD wt = TensorD::randn({co, ci, k, k}, rng);
            TensorD cx = conv2d(x, wt, stride, pad);
            TensorD y = TensorD::randn(cx.shape(), rng);
            TensorD cty = conv_transpose2d(y, wt, stride, pad);
            REQUIRE(cty.shape() == x.shape());
            const double lhs = dot(cx.data(), y.data());
            const double rhs = dot(x.data(), cty.data());
            CHECK(std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-9}) < 1e-5);
        }
    }
}

TEST_CASE("bilinear_sample interpolates, zero-pads, and differentiates through coordinates") {
    SUBCASE("integer points read the lattice exactly") {
        Rng rng(21);
        TensorD map = TensorD::randn({3, 4, 5}, rng);
        TensorD p = TensorD::from_data({2}, {1.0, 2.0});
        TensorD v = bilinear_sample(map, p);
        for (int c = 0; c < 3; ++c)
            CHECK(v.data()[static_cast<size_t>(c)] == map.data()[static_cast<size_t>(c) * 20 + 1 * 5 + 2]);
    }
    SUBCASE("center of a 2x2 map is the mean of its corners") {
        TensorD map = TensorD::from_data({1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
        TensorD p = TensorD::from_data({2}, {0.5, 0.5});
        CHECK(bilinear_sample(map, p).item() == doctest::Approx(1.5));
    }
    SUBCASE("far outside the grid reads zero") {
        TensorD map = TensorD::filled({2, 3, 3}, 4.0);
        TensorD p = TensorD::from_data({2}, {-7.5, 1.0});
        TensorD v = bilinear_sample(map, p);
        for (double x : v.data()) CHECK(x == 0.0);
    }
    SUBCASE("coordinate gradient at the worked 2x2 example is 1.0") {
        TensorD map = TensorD::from_data({1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
        TensorD p = TensorD::from_data({2}, {0.5, 0.5}, true);
        backward(sum_all(bilinear_sample(map, p)));
        CHECK(p.grad()[1] == doctest::Approx(1.0));  // d/dx
        CHECK(p.grad()[0] == doctest::Approx(2.0));  // d/dy
    }
}

TEST_CASE("layer_norm normalizes rows and matches a naive recomputation") {
    SUBCASE("constant row maps to beta") {
        TensorD x = TensorD::filled({2, 5}, 3.7);
        TensorD gamma = TensorD::filled({5}, 1.0);
        TensorD beta = TensorD::from_data({5}, {0.1, 0.2, 0.3, 0.4, 0.5});
        TensorD y = layer_norm(x, gamma, beta, 1e-5);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 5; ++j)
                CHECK(y.data()[static_cast<size_t>(i) * 5 + j] ==
                      doctest::Approx(beta.data()[static_cast<size_t>(j)]));
    }
    SUBCASE("already-normalized row passes through as eps -> 0") {
        TensorD x = TensorD::from_data({1, 2}, {1.0, -1.0});
        TensorD y = layer_norm(x, TensorD::filled({2}, 1.0), TensorD::zeros({2}), 1e-12);
        CHECK(y.data()[0] == doctest::Approx(1.0));
        CHECK(y.data()[1] == doctest::Approx(-1.0));
    }
    SUBCASE("random rows match the direct mean/variance oracle") {
        Rng rng(31);
        TensorD x = TensorD::randn({4, 7}, rng);
        TensorD gamma = TensorD::randn({7}, rng);
        TensorD beta = TensorD::randn({7}, rng);
        const double eps = 1e-5;
        TensorD y = layer_norm(x, gamma, beta, eps);
        for (int i = 0; i < 4; ++i) {
            double mu = 0.0;
            for (int j = 0; j < 7; ++j) mu += x.data()[static_cast<size_t>(i) * 7 + j];
            mu /= 7.0;
            double var = 0.0;
            for (int j = 0; j < 7; ++j) {
                const double c = x.data()[static_cast<size_t>(i) * 7 + j] - mu;
                var += c * c;
            }
            var /= 7.0;
            for (int j = 0; j < 7; ++j) {
                const double want = gamma.data()[static_cast<size_t>(j)] *
                                        (x.data()[static_cast<size_t>(i) * 7 + j] - mu) /
                                        std::sqrt(var + eps) +
                                    beta.data()[static_cast<size_t>(j)];
                CHECK(y.data()[static_cast<size_t>(i) * 7 + j] == doctest::Approx(want).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("mlp_forward composes linear-GELU-linear") {
    Rng rng(41);
    SUBCASE("zero weights give zero output") {
        Mlp<double> m{{TensorD::zeros({4, 8}, true), TensorD::zeros({8}, true)},
                      {TensorD::zeros({8, 4}, true), TensorD::zeros({4}, true)}};
        TensorD y = mlp_forward(m, TensorD::randn({3, 4}, rng));
        for (double v : y.data()) CHECK(v == 0.0);
    }
    SUBCASE("identity weights pass large positives through") {
        std::vector<double> eye(16, 0.0);
        for (int i = 0; i < 4; ++i) eye[static_cast<size_t>(i) * 4 + i] = 1.0;
        Mlp<double> m{{TensorD::from_data({4, 4}, eye), TensorD::zeros({4})},
                      {TensorD::from_data({4, 4}, eye), TensorD::zeros({4})}};
        TensorD x = TensorD::filled({1, 4}, 20.0);
        TensorD y = mlp_forward(m, x);
        for (double v : y.data()) CHECK(v == doctest::Approx(20.0).epsilon(1e-9));
    }
    SUBCASE("random case matches a naive recomputation") {
        Mlp<double> m = make_mlp<double>(5, 9, 5, rng, 0.5);
        TensorD x = TensorD::randn({3, 5}, rng);
        TensorD y = mlp_forward(m, x);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 5; ++j) {
                double want = m.fc2.b.data()[static_cast<size_t>(j)];
                for (int hid = 0; hid < 9; ++hid) {
                    double pre = m.fc1.b.data()[static_cast<size_t>(hid)];
                    for (int jj = 0; jj < 5; ++jj)
                        pre += x.data()[static_cast<size_t>(i) * 5 + jj] *
                               m.fc1.w.data()[static_cast<size_t>(jj) * 9 + hid];
                    const double act = pre * 0.5 * (1.0 + std::erf(pre / std::sqrt(2.0)));
                    want += act * m.fc2.w.data()[static_cast<size_t>(hid) * 5 + j];
                }
                CHECK(y.data()[static_cast<size_t>(i) * 5 + j] == doctest::Approx(want).epsilon(1e-9));
            }
    }
}

TEST_CASE("multi_head_attention matches the per-head oracle") {
    Rng rng(51);
    SUBCASE("softmax rows sum to one") {
        TensorD s = softmax_rows(TensorD::randn({6, 9}, rng));
        for (int i = 0; i < 6; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 9; ++j) sum += s.data()[static_cast<size_t>(i) * 9 + j];
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
    SUBCASE("single token with identity output projection returns its value projection") {
        const int d = 6;
        Attention<double> a = make_attention<double>(d, 2, rng, 0.3);
        std::vector<double> eye(static_cast<size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) eye[static_cast<size_t>(i) * d + i] = 1.0;
        a.o.w = TensorD::from_data({d, d}, eye, true);
        a.o.b = TensorD::zeros({d}, true);
        TensorD x = TensorD::randn({1, d}, rng);
        TensorD y = multi_head_attention(a, x);
        TensorD vproj = linear_forward(a.v, x);
        CHECK(max_abs_diff(y.data(), vproj.data()) < 1e-12);
    }
    SUBCASE("N=3 case equals a naive per-head computation") {
        const int d = 8, heads = 2, dh = d / heads, n = 3;
        Attention<double> a = make_attention<double>(d, heads, rng, 0.4);
        TensorD x = TensorD::randn({n, d}, rng);
        TensorD y = multi_head_attention(a, x);

        auto proj = [&](const Linear<double>& l, int row, int col) {
            double s = l.b.data()[static_cast<size_t>(col)];
            for (int j = 0; j < d; ++j)
                s += x.data()[static_cast<size_t>(row) * d + j] *
                     l.w.data()[static_cast<size_t>(j) * d + col];
            return s;
        };
        std::vector<double> concat_out(static_cast<size_t>(n) * d, 0.0);
        for (int hd = 0; hd < heads; ++hd)
            for (int i = 0; i < n; ++i) {
                std::vector<double> scores(static_cast<size_t>(n));
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int t = 0; t < dh; ++t)
                        s += proj(a.q, i, hd * dh + t) * proj(a.k, j, hd * dh + t);
                    scores[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
                }
                double mx = scores[0], sum = 0.0;
                for (double s : scores) mx = std::max(mx, s);
                for (auto& s : scores) {
                    s = std::exp(s - mx);
                    sum += s;
                }
                for (auto& s : scores) s /= sum;
                for (int t = 0; t < dh; ++t) {
                    double o = 0.0;
                    for (int j = 0; j < n; ++j) o += scores[static_cast<size_t>(j)] * proj(a.v, j, hd * dh + t);
                    concat_out[static_cast<size_t>(i) * d + hd * dh + t] = o;
                }
            }
        for (int i = 0; i < n; ++i)
            for (int col = 0; col < d; ++col) {
                double want = a.o.b.data()[static_cast<size_t>(col)];
                for (int j = 0; j < d; ++j)
                    want += concat_out[static_cast<size_t>(i) * d + j] *
                            a.o.w.data()[static_cast<size_t>(j) * d + col];
                CHECK(y.data()[static_cast<size_t>(i) * d + col] == doctest::Approx(want).epsilon(1e-7));
            }
    }
    SUBCASE("indivisible head count is rejected") {
        Rng r2(5);
        CHECK_THROWS_AS(make_attention<double>(6, 4, r2), std::invalid_argument);
    }
}

TEST_CASE("adamw_step reproduces the hand-computed update") {
    SUBCASE("zero gradient and zero weight decay leave parameters unchanged") {
        TensorD p = TensorD::from_data({3}, {1.0, -2.0, 0.5}, true);
        p.zero_grad();
        std::vector<double> m(3, 0.0), v(3, 0.0);
        adamw_step(p, m, v, 1, 0.1, 0.9, 0.999, 1e-8, 0.0);
        CHECK(p.data()[0] == 1.0);
        CHECK(p.data()[1] == -2.0);
        CHECK(p.data()[2] == 0.5);
    }
    SUBCASE("lr = 0 leaves parameters unchanged") {
        TensorD p = TensorD::from_data({1}, {1.0}, true);
        p.node()->ensure_grad();
        p.node()->grad[0] = 0.5;
        std::vector<double> m(1, 0.0), v(1, 0.0);
        adamw_step(p, m, v, 1, 0.0, 0.9, 0.999, 1e-8, 0.01);
        CHECK(p.data()[0] == 1.0);
    }
    SUBCASE("first step from zero state matches m-hat/v-hat arithmetic") {
        const double g = 0.5, lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
        TensorD p = TensorD::from_data({1}, {1.0}, true);
        p.node()->ensure_grad();
        p.node()->grad[0] = g;
        std::vector<double> m(1, 0.0), v(1, 0.0);
        adamw_step(p, m, v, 1, lr, b1, b2, eps, wd);
        const double m1 = (1 - b1) * g;
        const double v1 = (1 - b2) * g * g;
        const double mhat = m1 / (1 - b1);
        const double vhat = v1 / (1 - b2);
        const double want = 1.0 - lr * (mhat / (std::sqrt(vhat) + eps) + wd * 1.0);
        CHECK(p.data()[0] == doctest::Approx(want).epsilon(1e-12));
        CHECK(m[0] == doctest::Approx(m1));
        CHECK(v[0] == doctest::Approx(v1));
    }
}

TEST_CASE("finite differences confirm every op gradient") {
    Rng rng(61);
    const double tol = 1e-5;

    auto check_grads = [&](auto f, std::vector<std::pair<std::string, TensorD>> params) {
        auto rep = gradcheck<double>(f, params, rng);
        CAPTURE(rep.worst);
        CAPTURE(rep.max_err);
        CHECK(rep.ok(tol));
    };

    SUBCASE("elementwise binary ops") {
        TensorD a = randn_away_from_zero({3, 4}, rng);
        TensorD b = randn_away_from_zero({3, 4}, rng);
        // keep |a-b| off the min/max tie kink
        for (size_t i = 0; i < b.raw().size(); ++i)
            if (std::abs(a.data()[i] - b.raw()[i]) < 0.1) b.raw()[i] += 0.25;
        check_grads([&] { return mean_all(mul(add(a, b), sub(a, b))); }, {{"a", a}, {"b", b}});
        check_grads([&] { return mean_all(div(a, b)); }, {{"a", a}, {"b", b}});
        check_grads([&] { return mean_all(minimum(a, b)); }, {{"a", a}, {"b", b}});
        check_grads([&] { return mean_all(maximum(a, b)); }, {{"a", a}, {"b", b}});
    }
    SUBCASE("elementwise unary ops") {
        TensorD x = randn_away_from_zero({4, 5}, rng);
        check_grads([&] { return mean_all(relu(x)); }, {{"x", x}});
        check_grads([&] { return mean_all(leaky_relu(x, 0.1)); }, {{"x", x}});
        check_grads([&] { return mean_all(abs(x)); }, {{"x", x}});
        check_grads([&] { return mean_all(sigmoid(x)); }, {{"x", x}});
        check_grads([&] { return mean_all(gelu(x)); }, {{"x", x}});
        check_grads([&] { return mean_all(neg(scale(x, 1.7))); }, {{"x", x}});
        check_grads([&] { return mean_all(add_const(x, 0.3)); }, {{"x", x}});
        TensorD pos = TensorD::uniform({3, 3}, rng, 0.5, 2.0, true);
        check_grads([&] { return mean_all(log(pos)); }, {{"pos", pos}});
    }
    SUBCASE("learnable scalar scaling") {
        TensorD x = TensorD::randn({3, 4}, rng, 1.0, true);
        TensorD s = TensorD::scalar(0.7, true);
        check_grads([&] { return mean_all(scale_by(x, s)); }, {{"x", x}, {"s", s}});
    }
    SUBCASE("matmul family") {
        TensorD a = TensorD::randn({3, 4}, rng, 1.0, true);
        TensorD b = TensorD::randn({4, 5}, rng, 1.0, true);
        TensorD c = TensorD::randn({6, 4}, rng, 1.0, true);
        TensorD bias = TensorD::randn({5}, rng, 1.0, true);
        check_grads([&] { return mean_all(matmul(a, b)); }, {{"a", a}, {"b", b}});
        check_grads([&] { return mean_all(matmul_nt(a, c)); }, {{"a", a}, {"c", c}});
        check_grads([&] { return mean_all(add_row_bias(matmul(a, b), bias)); },
                    {{"a", a}, {"b", b}, {"bias", bias}});
    }
    SUBCASE("softmax and reductions") {
        TensorD x = TensorD::randn({4, 6}, rng, 1.0, true);
        TensorD w = TensorD::randn({4, 6}, rng, 1.0, true);
        check_grads([&] { return mean_all(mul(softmax_rows(x), w)); }, {{"x", x}});
        check_grads([&] { return sum_all(mul(x, x)); }, {{"x", x}});
        check_grads([&] { return gather_at(mul(x, w), 13); }, {{"x", x}, {"w", w}});
    }
    SUBCASE("shape ops") {
        TensorD x = TensorD::randn({2, 3, 4}, rng, 1.0, true);
        TensorD w = TensorD::randn({24}, rng, 1.0, true);
        check_grads([&] { return mean_all(mul(reshape(x, {24}), w)); }, {{"x", x}, {"w", w}});
        TensorD wa = TensorD::randn({2, 2, 4}, rng, 1.0, true);
        check_grads([&] { return mean_all(mul(slice(x, 1, 1, 2), wa)); }, {{"x", x}});
        TensorD y = TensorD::randn({2, 2, 4}, rng, 1.0, true);
        TensorD wc = TensorD::randn({2, 5, 4}, rng, 1.0, true);
        check_grads([&] { return mean_all(mul(concat<double>({x, y}, 1), wc)); },
                    {{"x", x}, {"y", y}});
        TensorD map = TensorD::randn({3, 2, 4}, rng, 1.0, true);
        TensorD wt = TensorD::randn({8, 3}, rng, 1.0, true);
        check_grads([&] { return mean_all(mul(channels_to_tokens(map), wt)); }, {{"map", map}});
        TensorD tok = TensorD::randn({8, 3}, rng, 1.0, true);
        TensorD wm = TensorD::randn({3, 2, 4}, rng, 1.0, true);
        check_grads([&] { return mean_all(mul(tokens_to_channels(tok, 2, 4), wm)); },
                    {{"tok", tok}});
    }
    SUBCASE("bce loss") {
        TensorD logits = TensorD::randn({3, 3}, rng, 1.0, true);
        std::vector<double> target(9);
        for (auto& t : target) t = rng.uniform(0.05, 0.95);
        check_grads([&] { return bce_mean(sigmoid(logits), target); }, {{"logits", logits}});
    }
    SUBCASE("conv2d and conv_transpose2d") {
        TensorD x = TensorD::randn({2, 2, 5, 5}, rng, 1.0, true);
        TensorD w = TensorD::randn({3, 2, 3, 3}, rng, 0.5, true);
        TensorD b = TensorD::randn({3}, rng, 0.5, true);
        check_grads([&] { return mean_all(conv2d(x, w, b, 2, 1)); },
                    {{"x", x}, {"w", w}, {"b", b}});
        TensorD wd = TensorD::randn({2, 1, 3, 3}, rng, 0.5, true);
        check_grads([&] { return mean_all(conv2d(x, wd, 1, 1, 2)); }, {{"x", x}, {"wd", wd}});
        TensorD wt = TensorD::randn({2, 3, 4, 4}, rng, 0.5, true);
        TensorD bt = TensorD::randn({3}, rng, 0.5, true);
        check_grads([&] { return mean_all(conv_transpose2d(x, wt, bt, 2, 1)); },
                    {{"x", x}, {"wt", wt}, {"bt", bt}});
        check_grads([&] { return mean_all(pad2d_replicate(x, 2)); }, {{"x", x}});
    }
    SUBCASE("bilinear sampling, including coordinates") {
        TensorD map = TensorD::randn({2, 5, 6}, rng, 1.0, true);
        TensorD p = TensorD::from_data({2}, {1.3, 2.6}, true);
        TensorD w = TensorD::randn({2}, rng, 1.0, true);
        check_grads([&] { return mean_all(mul(bilinear_sample(map, p), w)); },
                    {{"map", map}, {"p", p}, {"w", w}});
    }
    SUBCASE("deformable convolution: input, offsets, weights, bias") {
        TensorD x = TensorD::randn({1, 2, 5, 5}, rng, 1.0, true);
        std::vector<double> off(static_cast<size_t>(18 * 25));
        for (auto& o : off) o = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 0.4);
        TensorD offsets = TensorD::from_data({1, 18, 5, 5}, std::move(off), true);
        TensorD w = TensorD::randn({2, 2, 3, 3}, rng, 0.5, true);
        TensorD b = TensorD::randn({2}, rng, 0.5, true);
        check_grads([&] { return mean_all(deform_conv2d(x, offsets, w, b)); },
                    {{"x", x}, {"offsets", offsets}, {"w", w}, {"b", b}});
    }
    SUBCASE("layer_norm and batch_norm2d") {
        TensorD x = TensorD::randn({3, 6}, rng, 1.0, true);
        TensorD gamma = TensorD::randn({6}, rng, 0.5, true);
        TensorD beta = TensorD::randn({6}, rng, 0.5, true);
        check_grads([&] { return mean_all(layer_norm(x, gamma, beta, 1e-5)); },
                    {{"x", x}, {"gamma", gamma}, {"beta", beta}});

        TensorD xb = TensorD::randn({2, 3, 4, 4}, rng, 1.0, true);
        TensorD g2 = TensorD::randn({3}, rng, 0.5, true);
        TensorD b2 = TensorD::randn({3}, rng, 0.5, true);
        std::vector<double> rm(3, 0.0), rv(3, 1.0);
        check_grads([&] { return mean_all(batch_norm2d(xb, g2, b2, rm, rv, true)); },
                    {{"xb", xb}, {"g2", g2}, {"b2", b2}});
        std::vector<double> rm2 = {0.2, -0.1, 0.4}, rv2 = {1.5, 0.7, 2.0};
        check_grads([&] { return mean_all(batch_norm2d(xb, g2, b2, rm2, rv2, false)); },
                    {{"xb", xb}, {"g2", g2}, {"b2", b2}});
    }
    SUBCASE("attention and mlp blocks") {
        Attention<double> a = make_attention<double>(8, 2, rng, 0.4);
        TensorD x = TensorD::randn({5, 8}, rng, 1.0, true);
        ParamSet<double> ps;
        register_attention(ps, "attn", a);
        ps.add("x", x);
        check_grads([&] { return mean_all(multi_head_attention(a, x)); }, ps.items);

        Mlp<double> m = make_mlp<double>(6, 6, 6, rng, 0.4);
        TensorD xm = TensorD::randn({4, 6}, rng, 1.0, true);
        ParamSet<double> ps2;
        register_mlp(ps2, "mlp", m);
        ps2.add("xm", xm);
        check_grads([&] { return mean_all(mlp_forward(m, xm)); }, ps2.items);
    }
}

TEST_CASE("batch_norm2d running statistics and batch-size contract") {
    Rng rng(71);
    TensorD x = TensorD::randn({3, 2, 4, 4}, rng);
    TensorD gamma = TensorD::filled({2}, 1.0, true);
    TensorD beta = TensorD::zeros({2}, true);
    std::vector<double> rm(2, 0.0), rv(2, 1.0);

    SUBCASE("training updates running stats toward the batch statistics") {
        batch_norm2d(x, gamma, beta, rm, rv, true);
        const int64_t cnt = 3 * 16;
        for (int c = 0; c < 2; ++c) {
            double mu = 0.0;
            for (int n = 0; n < 3; ++n)
                for (int i = 0; i < 16; ++i) mu += x.data()[(static_cast<size_t>(n) * 2 + c) * 16 + i];
            mu /= static_cast<double>(cnt);
            double var = 0.0;
            for (int n = 0; n < 3; ++n)
                for (int i = 0; i < 16; ++i) {
                    const double d = x.data()[(static_cast<size_t>(n) * 2 + c) * 16 + i] - mu;
                    var += d * d;
                }
            const double var_u = var / static_cast<double>(cnt - 1);
            CHECK(rm[static_cast<size_t>(c)] == doctest::Approx(0.1 * mu).epsilon(1e-9));
            CHECK(rv[static_cast<size_t>(c)] == doctest::Approx(0.9 + 0.1 * var_u).epsilon(1e-9));
        }
    }
    SUBCASE("eval mode leaves running stats untouched and uses them") {
        std::vector<double> rm2 = {0.5, -0.5}, rv2 = {2.0, 0.5};
        auto rm_copy = rm2, rv_copy = rv2;
        TensorD y = batch_norm2d(x, gamma, beta, rm2, rv2, false);
        CHECK(rm2 == rm_copy);
        CHECK(rv2 == rv_copy);
        const double want = (x.data()[0] - 0.5) / std::sqrt(2.0 + 1e-5);
        CHECK(y.data()[0] == doctest::Approx(want).epsilon(1e-9));
    }
    SUBCASE("training with batch of one is an error") {
        TensorD x1 = TensorD::randn({1, 2, 4, 4}, rng);
        CHECK_THROWS_AS(batch_norm2d(x1, gamma, beta, rm, rv, true), std::invalid_argument);
    }
}

TEST_CASE("outputs are bit-identical across seeds and worker counts") {
    SUBCASE("same seed, same stream") {
        Rng a(123), b(123);
        for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
        Rng c(123), d(123);
        for (int i = 0; i < 100; ++i) CHECK(c.normal() == d.normal());
    }
    SUBCASE("forked streams differ from the parent") {
        Rng a(9);
        Rng f = a.fork(1);
        Rng g = a.fork(2);
        CHECK(f.next_u64() != g.next_u64());
    }
    SUBCASE("conv2d result does not depend on the worker count") {
        Rng rng(81);
        TensorF x = TensorF::randn({2, 8, 32, 32}, rng);
        TensorF w = TensorF::randn({8, 8, 3, 3}, rng);
        TensorF b = TensorF::randn({8}, rng);
        set_thread_count(1);
        TensorF y1 = conv2d(x, w, b, 1, 1);
        set_thread_count(4);
        TensorF y4 = conv2d(x, w, b, 1, 1);
        set_thread_count(1);
        REQUIRE(y1.numel() == y4.numel());
        CHECK(std::memcmp(y1.data().data(), y4.data().data(),
                          y1.data().size() * sizeof(float)) == 0);
    }
}
