#include "qlm/curvature.hpp"
#include "qlm/operators.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace qlm;
using qlm::testing::pi;

namespace {

GridPtr flat(std::vector<int> shape, std::vector<double> lengths)
{
    return build_grid(MetricKind::flat_torus, {}, std::move(shape), std::move(lengths));
}

GridPtr sphere(int ntheta, double r = 1.0)
{
    return build_grid(MetricKind::sphere_latlong, {r}, {ntheta, 2 * ntheta}, {pi, 2 * pi});
}

void expect_orders_in_band(const std::vector<double>& errors)
{
    for (double p : qlm::testing::dyadic_orders(errors)) {
        EXPECT_GE(p, 1.7);
        EXPECT_LE(p, 2.3);
    }
}

} // namespace

TEST(Grid, FlatTorusHasExactlyZeroCurvature)
{
    auto g = flat({64, 64}, {10, 1});
    for (std::size_t n = 0; n < g->size(); ++n) {
        for (int k = 0; k < 2; ++k)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    ASSERT_EQ(g->christoffel(n, k, i, j), 0.0);
        ASSERT_EQ(g->ricci(n).cwiseAbs().maxCoeff(), 0.0);
    }
    EXPECT_FALSE(g->curvature_by_differences());
}

TEST(Grid, UnitSphereRicciEqualsMetric)
{
    auto g = sphere(64);
    for (std::size_t n = 0; n < g->size(); ++n) {
        const double th = g->point(n)(0);
        // hand-derived symbols for diag(1, sin^2)
        EXPECT_NEAR(g->christoffel(n, 0, 1, 1), -std::sin(th) * std::cos(th), 1e-15);
        EXPECT_NEAR(g->christoffel(n, 1, 0, 1), std::cos(th) / std::sin(th), 1e-12);
        EXPECT_LE((g->ricci(n) - g->g(n)).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(Grid, ConformalWithZeroAmplitudeMatchesFlat)
{
    auto c = build_grid(MetricKind::conformal_torus, {0.0}, {32, 32}, {1, 1});
    auto f = flat({32, 32}, {1, 1});
    for (std::size_t n = 0; n < c->size(); ++n) {
        EXPECT_EQ(c->g(n), f->g(n));
        EXPECT_EQ(c->sqrt_det_g(n), f->sqrt_det_g(n));
        EXPECT_EQ(c->ricci(n), f->ricci(n));
        for (int k = 0; k < 2; ++k)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    EXPECT_EQ(c->christoffel(n, k, i, j), 0.0);
    }
    EXPECT_TRUE(c->curvature_by_differences());
}

TEST(Grid, ConformalCurvatureMatchesGaussFormula)
{
    // g = e^{2f} delta in 2D has K = -e^{-2f} (f_xx + f_yy), Ric = K g.
    const double a = 0.3;
    auto c = build_grid(MetricKind::conformal_torus, {a}, {16, 16}, {1, 1});
    const double w = 2 * pi;
    for (std::size_t n = 0; n < c->size(); ++n) {
        const Vec x = c->point(n);
        const double f = a * std::sin(w * x(0)) * std::sin(w * x(1));
        const double lap = -2 * w * w * f;
        const double k = -std::exp(-2 * f) * lap;
        EXPECT_NEAR(c->ricci(n)(0, 0), k * std::exp(2 * f), 1e-6);
        EXPECT_NEAR(c->ricci(n)(0, 1), 0.0, 1e-6);
    }
}

TEST(Grid, SymmetricChristoffelAndInverse)
{
    auto c = build_grid(MetricKind::conformal_torus, {0.4, 1, 2}, {12, 10, 8}, {1, 2, 3});
    for (std::size_t n = 0; n < c->size(); ++n) {
        for (int k = 0; k < 3; ++k)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    ASSERT_EQ(c->christoffel(n, k, i, j), c->christoffel(n, k, j, i));
        EXPECT_LE((c->g(n) * c->g_inv(n) - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(c->ricci(n), c->ricci(n).transpose());
    }
}

TEST(Grid, ValidationErrors)
{
    EXPECT_THROW(parse_metric_kind("hyperbolic"), ConfigError);
    EXPECT_THROW(flat({4, 64}, {1, 1}), ConfigError);
    EXPECT_THROW(flat({64, 64}, {1, -1}), ConfigError);
    EXPECT_THROW(build_grid(MetricKind::sphere_latlong, {-1.0}, {16, 32}, {pi, 2 * pi}), ConfigError);
    EXPECT_THROW(build_grid(MetricKind::sphere_latlong, {1.0}, {16, 31}, {pi, 2 * pi}), ConfigError);
    EXPECT_THROW(build_grid(MetricKind::conformal_torus, {9.0}, {16, 16}, {1, 1}), ConfigError);
    EXPECT_EQ(parse_metric_kind("sphere-latlong"), MetricKind::sphere_latlong);
}

TEST(Grid, PoleNeighborReflects)
{
    auto g = sphere(16);
    const std::size_t n = g->index({0, 3, 0});
    const auto up = g->neighbor(n, 0, -1);
    EXPECT_TRUE(up.reflected);
    EXPECT_EQ(up.index, g->index({0, 3 + 16, 0}));
    const auto two = g->neighbor(n, 0, -2);
    EXPECT_EQ(two.index, g->index({1, 3 + 16, 0}));
    EXPECT_FALSE(g->neighbor(n, 0, 1).reflected);
}

TEST(Operators, ConstantFieldHasZeroDerivatives)
{
    for (auto g : {flat({32, 16}, {2, 1}), sphere(16), build_grid(MetricKind::conformal_torus, {0.2}, {16, 16}, {1, 1})}) {
        ScalarField u(g, 3.5);
        const auto du = covariant_gradient(u);
        const auto h = covariant_hessian(u);
        EXPECT_EQ(*std::max_element(du.values().begin(), du.values().end()), 0.0);
        EXPECT_EQ(*std::min_element(h.values().begin(), h.values().end()), 0.0);
        EXPECT_EQ(*std::max_element(h.values().begin(), h.values().end()), 0.0);
        EXPECT_LE(laplace_beltrami(u).max_abs(), 1e-12);
    }
}

TEST(Operators, ThetaIndependentFieldOnSphere)
{
    auto g = sphere(16);
    auto u = ScalarField::sample(g, [](const Vec& x) { return std::cos(2 * x(1)); });
    const auto du = covariant_gradient(u);
    for (std::size_t n = 0; n < g->size(); ++n)
        EXPECT_NEAR(du(n, 0), 0.0, 1e-12);
}

TEST(Operators, GradientConvergesAtSecondOrder)
{
    const double L = 3.0, w = 2 * pi / L;
    std::vector<double> err;
    for (int n : {64, 128, 256}) {
        auto g = flat({n}, {L});
        auto u = ScalarField::sample(g, [&](const Vec& x) { return std::sin(w * x(0)); });
        const auto du = covariant_gradient(u);
        double e = 0;
        for (std::size_t i = 0; i < g->size(); ++i)
            e = std::max(e, std::abs(du(i, 0) - w * std::cos(w * g->point(i)(0))));
        err.push_back(e);
    }
    EXPECT_LE(err[2], 1e-3);
    expect_orders_in_band(err);
}

TEST(Operators, HessianOnFlatTorus)
{
    const double L = 2.0, w = 2 * pi / L;
    std::vector<double> err;
    for (int n : {64, 128, 256}) {
        auto g = flat({n, 16}, {L, 1});
        auto u = ScalarField::sample(g, [&](const Vec& x) { return std::sin(w * x(0)); });
        const auto h = covariant_hessian(u);
        double e = 0;
        for (std::size_t i = 0; i < g->size(); ++i) {
            e = std::max(e, std::abs(h(i, 0, 0) + w * w * std::sin(w * g->point(i)(0))));
            EXPECT_EQ(h(i, 0, 1), 0.0);
            EXPECT_EQ(h(i, 1, 1), 0.0);
        }
        err.push_back(e);
    }
    expect_orders_in_band(err);
}

TEST(Operators, SphereHessianOfFirstHarmonic)
{
    // u = cos(theta) satisfies Hess u = -cos(theta) g on the unit sphere.
    std::vector<double> err;
    for (int n : {32, 64, 128}) {
        auto g = sphere(n);
        auto u = ScalarField::sample(g, [](const Vec& x) { return std::cos(x(0)); });
        const auto h = covariant_hessian(u);
        double e = 0;
        for (std::size_t i = 0; i < g->size(); ++i)
            e = std::max(e, (h.at(i) + std::cos(g->point(i)(0)) * g->g(i)).cwiseAbs().maxCoeff());
        err.push_back(e);
    }
    expect_orders_in_band(err);
}

TEST(Operators, MixedHessianOnSphereThroughPole)
{
    // u = sin(theta) cos(phi) is the restriction of the ambient x coordinate, Hess u = -u g.
    std::vector<double> err;
    for (int n : {32, 64, 128}) {
        auto g = sphere(n);
        auto u = ScalarField::sample(g, [](const Vec& x) { return std::sin(x(0)) * std::cos(x(1)); });
        const auto h = covariant_hessian(u);
        double e = 0;
        for (std::size_t i = 0; i < g->size(); ++i)
            e = std::max(e, (h.at(i) + u[i] * g->g(i)).cwiseAbs().maxCoeff());
        err.push_back(e);
    }
    expect_orders_in_band(err);
}

TEST(Operators, DivergenceOfCosineField)
{
    const double L = 5.0, w = 2 * pi / L;
    std::vector<double> err;
    for (int n : {64, 128, 256}) {
        auto g = flat({n, 8}, {L, 1});
        VectorField v(g, Variance::contravariant);
        for (std::size_t i = 0; i < g->size(); ++i)
            v(i, 0) = std::cos(w * g->point(i)(0));
        const auto d = divergence(v);
        double e = 0;
        for (std::size_t i = 0; i < g->size(); ++i)
            e = std::max(e, std::abs(d[i] + w * std::sin(w * g->point(i)(0))));
        err.push_back(e);
    }
    expect_orders_in_band(err);
}

TEST(Operators, DivergenceTheoremOnEveryCatalog)
{
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd;
    for (auto g : {flat({24, 20}, {3, 1}), sphere(24, 2.0), build_grid(MetricKind::conformal_torus, {0.5, 1, 2}, {20, 24}, {1, 2}),
                   build_grid(MetricKind::conformal_torus, {0.3}, {10, 9, 8}, {1, 1, 1})}) {
        VectorField v(g, Variance::contravariant);
        double vmax = 0;
        for (std::size_t i = 0; i < g->size(); ++i)
            for (int a = 0; a < g->dim(); ++a) {
                v(i, a) = nd(rng);
                vmax = std::max(vmax, std::abs(v(i, a)));
            }
        EXPECT_LE(std::abs(integrate(divergence(v))), 1e-12 * std::max(1.0, vmax * g->total_volume()));
    }
}

TEST(Operators, LaplaceBeltramiOnSphere)
{
    // Spherical harmonic Y_2^0 ~ 3cos^2 - 1 has eigenvalue -6.
    std::vector<double> err;
    for (int n : {32, 64, 128}) {
        auto g = sphere(n);
        auto u = ScalarField::sample(g, [](const Vec& x) { return 3 * std::pow(std::cos(x(0)), 2) - 1; });
        const auto lap = laplace_beltrami(u);
        double e = 0;
        for (std::size_t i = 0; i < g->size(); ++i)
            e = std::max(e, std::abs(lap[i] + 6 * u[i]));
        err.push_back(e);
    }
    expect_orders_in_band(err);
}

TEST(Operators, RicciQuadratic)
{
    auto f = flat({16, 16}, {1, 1});
    VectorField v(f, Variance::contravariant);
    for (std::size_t i = 0; i < f->size(); ++i)
        v(i, 0) = 1.0 + i;
    EXPECT_EQ(ricci_quadratic(v).max_abs(), 0.0);

    auto s = sphere(32);
    VectorField w(s, Variance::contravariant);
    for (std::size_t i = 0; i < s->size(); ++i) {
        const double th = s->point(i)(0);
        w(i, 0) = std::cos(0.3 * i);
        w(i, 1) = std::sin(0.3 * i) / std::sin(th);
    }
    const auto q = ricci_quadratic(w);
    const auto nsq = norm_squared(w);
    for (std::size_t i = 0; i < s->size(); ++i) {
        EXPECT_NEAR(nsq[i], 1.0, 1e-12);
        EXPECT_NEAR(q[i], 1.0, 1e-12);
    }
    EXPECT_EQ(ricci_quadratic(VectorField(s, Variance::contravariant)).max_abs(), 0.0);
}

TEST(Operators, RaiseLowerRoundTrip)
{
    auto g = build_grid(MetricKind::conformal_torus, {0.5}, {16, 16}, {1, 1});
    VectorField v(g, Variance::covariant);
    for (std::size_t i = 0; i < g->size(); ++i) {
        v(i, 0) = std::sin(0.1 * i);
        v(i, 1) = std::cos(0.2 * i);
    }
    const auto back = lower(raise(v));
    for (std::size_t i = 0; i < g->size(); ++i)
        EXPECT_NEAR(back(i, 0), v(i, 0), 1e-13);
    EXPECT_THROW(raise(raise(v)), DomainError);
}

TEST(Operators, TensorDivergenceOfMetricVanishes)
{
    // g^{ij} is parallel, so its divergence is zero up to discretization error.
    for (int n : {32, 64}) {
        auto g = sphere(n);
        SymTensorField t(g, Variance::contravariant);
        for (std::size_t i = 0; i < g->size(); ++i)
            t.set(i, g->g_inv(i));
        const auto d = tensor_divergence(t);
        const auto norm = norm_squared(d);
        EXPECT_LE(std::sqrt(norm.max_abs()), 10.0 / (n * n) * 10);
    }
}

TEST(Curvature, MetricCompatibilityIsSecondOrder)
{
    std::vector<double> err;
    for (int n : {32, 64, 128})
        err.push_back(metric_compatibility_residual(*sphere(n)));
    expect_orders_in_band(err);
    EXPECT_EQ(metric_compatibility_residual(*flat({16, 16}, {1, 1})), 0.0);
}

TEST(Curvature, DiscreteRicciOnSphere)
{
    std::vector<double> err;
    for (int n : {32, 64, 128}) {
        auto g = sphere(n);
        const auto ric = discrete_ricci(g);
        double e = 0;
        for (std::size_t i = 0; i < g->size(); ++i)
            e = std::max(e, (ric.at(i) - g->ricci(i)).cwiseAbs().maxCoeff() / g->g(i).cwiseAbs().maxCoeff());
        err.push_back(e);
    }
    EXPECT_LE(err[1], 1e-3);
    expect_orders_in_band(err);
}

TEST(Curvature, DiscreteRicciOnConformalTorus)
{
    std::vector<double> err;
    for (int n : {32, 64, 128}) {
        auto g = build_grid(MetricKind::conformal_torus, {0.3}, {n, n}, {1, 1});
        const auto ric = discrete_ricci(g);
        double e = 0;
        for (std::size_t i = 0; i < g->size(); ++i)
            e = std::max(e, (ric.at(i) - g->ricci(i)).cwiseAbs().maxCoeff());
        err.push_back(e);
    }
    expect_orders_in_band(err);
}

TEST(Curvature, DiscreteRicciFlatIsZero)
{
    auto g = flat({16, 16, 16}, {1, 2, 3});
    const auto ric = discrete_ricci(g);
    EXPECT_EQ(*std::max_element(ric.values().begin(), ric.values().end()), 0.0);
    EXPECT_EQ(*std::min_element(ric.values().begin(), ric.values().end()), 0.0);
}
