#include "qlm/nonlinearity.hpp"

#include <gtest/gtest.h>

#include <array>
#include <random>

using namespace qlm;

namespace {

std::vector<PhiFamily> catalog()
{
    return {PhiFamily::linear(), PhiFamily::p_laplacian(3.0), PhiFamily::p_laplacian(4.0), PhiFamily::p_laplacian(1.5),
            PhiFamily::p_laplacian(3.0, 1e-8), PhiFamily::mean_curvature(),
            PhiFamily::custom_table({0, 0.5, 1, 2, 4, 8}, {0, 0.525, 1.1, 2.4, 5.6, 14.4})};
}

std::vector<double> random_t(int n, std::uint64_t seed, double hi = 5.0, double lo = 0.05)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> out;
    for (int i = 0; i < n; ++i) out.push_back(u(rng));
    return out;
}

} // namespace

TEST(Phi, LambdaSpotValues)
{
    EXPECT_EQ(lambda_eval(PhiFamily::linear(), 7.3), 1.0);
    EXPECT_NEAR(lambda_eval(PhiFamily::p_laplacian(3.0), 4.0), 4.0, 1e-14);
    EXPECT_NEAR(lambda_eval(PhiFamily::mean_curvature(), 3.0), 0.125, 1e-15);
}

TEST(Phi, PsiSpotValues)
{
    EXPECT_EQ(psi_eval(PhiFamily::linear(), 5.0), 5.0);
    EXPECT_NEAR(psi_eval(PhiFamily::p_laplacian(4.0), 1.0), 1.5, 1e-15);
    EXPECT_NEAR(psi_eval(PhiFamily::mean_curvature(), 3.0), 1.0, 1e-15);
}

TEST(Phi, ZeroAtOrigin)
{
    for (const auto& f : catalog()) EXPECT_EQ(f.phi(0.0), 0.0) << f.name();
}

TEST(Phi, DerivativesAreConsistent)
{
    for (const auto& f : catalog()) {
        for (double t : random_t(50, 3, 5.0, 0.5)) {
            // O(d^2): the error must drop about fourfold when d halves.
            std::array<double, 3> e1{}, e2{};
            for (int k = 0; k < 2; ++k) {
                const double d = k == 0 ? 1e-3 : 5e-4;
                auto& e = k == 0 ? e1 : e2;
                e[0] = std::abs((f.phi(t + d) - f.phi(t - d)) / (2 * d) - f.d1(t));
                e[1] = std::abs((f.d1(t + d) - f.d1(t - d)) / (2 * d) - f.d2(t));
                e[2] = std::abs((f.d2(t + d) - f.d2(t - d)) / (2 * d) - f.d3(t));
            }
            const int checked = f.kind() == PhiKind::custom_table ? 1 : 3;
            for (int i = 0; i < checked; ++i) {
                EXPECT_LE(e1[static_cast<std::size_t>(i)], 1e-5) << f.name() << " t=" << t;
                if (e1[static_cast<std::size_t>(i)] > 1e-11)
                    EXPECT_NEAR(e1[static_cast<std::size_t>(i)] / e2[static_cast<std::size_t>(i)], 4.0, 0.5) << f.name() << " t=" << t;
            }
        }
    }
}

TEST(Phi, PsiDerivativeIsLambda)
{
    for (const auto& f : catalog()) {
        const double d = 1e-4;
        for (double t : random_t(100, 11)) {
            EXPECT_NEAR((f.psi(t + d) - f.psi(t - d)) / (2 * d), f.lambda(t), 1e-6) << f.name() << " t=" << t;
            EXPECT_GT(f.lambda(t), 0.0);
            EXPECT_NEAR(f.lambda(t), 2 * t * f.d2(t) + f.d1(t), 1e-12 * (1 + std::abs(f.lambda(t))));
        }
    }
}

TEST(Phi, PsiIsIncreasing)
{
    for (const auto& f : catalog()) {
        double prev = f.psi(0.0);
        for (int i = 1; i <= 400; ++i) {
            const double t = 0.02 * i;
            EXPECT_GT(f.psi(t), prev) << f.name();
            prev = f.psi(t);
        }
    }
}

TEST(Phi, MeanCurvaturePsiBelowTwo)
{
    const auto f = PhiFamily::mean_curvature();
    for (double t : {0.0, 1.0, 1e3, 1e8, 1e15}) EXPECT_LT(f.psi(t), 2.0);
    EXPECT_EQ(f.psi_sup(), 2.0);
}

TEST(Phi, PLaplacianClosedForms)
{
    for (double p : {1.5, 2.5, 3.0, 4.0, 6.0}) {
        const auto f = PhiFamily::p_laplacian(p, 0.0);
        for (double t : random_t(20, 5)) {
            EXPECT_NEAR(f.lambda(t), (p - 1) * std::pow(t, (p - 2) / 2), 1e-12 * f.lambda(t));
            EXPECT_NEAR(f.psi(t), 2 * (1 - 1 / p) * std::pow(t, p / 2), 1e-12 * std::max(1.0, f.psi(t)));
            EXPECT_NEAR(2 * t * f.d1(t) - f.phi(t), f.psi(t), 1e-12 * std::max(1.0, f.psi(t)));
        }
    }
}

TEST(Phi, SingularPLaplacianAtZero)
{
    const auto f = PhiFamily::p_laplacian(1.5, 0.0);
    EXPECT_TRUE(f.singular_at_zero());
    EXPECT_THROW(lambda_eval(f, 0.0), DomainError);
    EXPECT_THROW(a_tensor(f, Vec::Zero(2)), DomainError);
    const auto reg = PhiFamily::p_laplacian(1.5);
    EXPECT_EQ(reg.epsilon(), 1e-8);
    EXPECT_TRUE(std::isfinite(lambda_eval(reg, 0.0)));
    EXPECT_EQ(PhiFamily::p_laplacian(3.0).epsilon(), 0.0);
    EXPECT_THROW(PhiFamily::p_laplacian(1.0), ConfigError);
    EXPECT_THROW(lambda_eval(PhiFamily::linear(), -1.0), DomainError);
}

TEST(Phi, PsiInverseRoundTrip)
{
    for (const auto& f : catalog()) {
        for (double t : random_t(30, 9, 7.5)) {
            const double y = f.psi(t);
            EXPECT_NEAR(psi_inverse(f, y), t, 1e-10 * std::max(1.0, t)) << f.name();
        }
    }
    EXPECT_THROW(psi_inverse(PhiFamily::mean_curvature(), 2.0), DomainError);
    EXPECT_EQ(psi_inverse(PhiFamily::mean_curvature(), 0.0), 0.0);
}

TEST(ATensor, SpotValues)
{
    Vec s(2);
    s << 3, -4;
    EXPECT_EQ(a_tensor(PhiFamily::linear(), s), Mat::Identity(2, 2));
    Vec e(2);
    e << 1, 0;
    const Mat a = a_tensor(PhiFamily::p_laplacian(4.0), e);
    EXPECT_NEAR(a(0, 0), 3.0, 1e-15);
    EXPECT_NEAR(a(1, 1), 1.0, 1e-15);
    EXPECT_EQ(a(0, 1), 0.0);
}

TEST(ATensor, SpectrumIsPhiPrimeAndLambda)
{
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd;
    for (const auto& f : catalog()) {
        for (int dim : {2, 3}) {
            for (int k = 0; k < 20; ++k) {
                Vec s(dim);
                for (int i = 0; i < dim; ++i) s(i) = nd(rng);
                const double t = s.squaredNorm();
                if (f.kind() == PhiKind::custom_table && t > 8) continue;
                Eigen::SelfAdjointEigenSolver<Mat> es(a_tensor(f, s));
                std::vector<double> want(static_cast<std::size_t>(dim - 1), f.d1(t));
                want.push_back(f.lambda(t));
                std::sort(want.begin(), want.end());
                for (int i = 0; i < dim; ++i)
                    EXPECT_NEAR(es.eigenvalues()(i), want[static_cast<std::size_t>(i)], 1e-12 * std::max(1.0, want.back()))
                        << f.name();
            }
        }
    }
}

TEST(Assumptions, LinearSatisfiesA)
{
    const auto r = check_assumption_A(PhiFamily::linear(), 2.0, 0.0, 5000, 1);
    EXPECT_TRUE(r.pass);
    EXPECT_NEAR(r.c1, 1.0, 1e-14);
    EXPECT_NEAR(r.c2, 1.0, 1e-14);
}

TEST(Assumptions, PLaplacianSatisfiesA)
{
    const auto r = check_assumption_A(PhiFamily::p_laplacian(3.0), 3.0, 0.0, 5000, 2);
    EXPECT_TRUE(r.pass);
    EXPECT_GE(r.c1, 1.0 - 1e-12);
    EXPECT_LE(r.c2, 2.0 + 1e-12);
    EXPECT_LE(r.c1, r.c2);
}

TEST(Assumptions, MeanCurvatureFailsAWithP3)
{
    const auto r = check_assumption_A(PhiFamily::mean_curvature(), 3.0, 0.0, 5000, 3);
    EXPECT_FALSE(r.pass);
    EXPECT_GT(r.c2 / r.c1, 1e10);
}

TEST(Assumptions, LinearFailsB)
{
    const auto r = check_assumption_B(PhiFamily::linear(), 10000, 4);
    EXPECT_FALSE(r.pass);
    EXPECT_GT(r.phi_prime_c2, 1e5);
}

TEST(Assumptions, MeanCurvatureB)
{
    // (1+|s|) / sqrt(1+|s|^2) lies in [1, sqrt 2].
    const auto r = check_assumption_B(PhiFamily::mean_curvature(), 10000, 5);
    EXPECT_TRUE(r.phi_prime_pass);
    EXPECT_GE(r.phi_prime_c1, 1.0 - 1e-12);
    EXPECT_LE(r.phi_prime_c2, std::sqrt(2.0) + 1e-12);
    EXPECT_TRUE(std::isfinite(r.form_c2));
    EXPECT_GT(r.form_c1, 0.0);
    // Along sigma the quadratic form decays like (1+|s|)(1+|s|^2)^-5/2 relative to the
    // weight, so the printed quadratic sandwich is not uniform over 12 decades.
    EXPECT_FALSE(r.form_pass);
    EXPECT_FALSE(r.pass);
}

TEST(Assumptions, ZeroSigmaHyperplane)
{
    // At sigma = 0 the admissible xi' have xi_{n+1} = 0, so the first sample sees a = Phi'(0) I.
    const auto r = check_assumption_B(PhiFamily::linear(), 1000, 6);
    EXPECT_LE(r.form_c1, 1.0);
    EXPECT_LE(r.phi_prime_c1, 1.0 + 1e-15);
    EXPECT_THROW(check_assumption_B(PhiFamily::linear(), 10, 6), ConfigError);
}

TEST(Assumptions, UndefinedFamilyFailsWithSigma)
{
    const auto table = PhiFamily::custom_table({0, 1, 2}, {0, 1, 2.5});
    const auto r = check_assumption_A(table, 2.0, 0.0, 1000, 7);
    EXPECT_FALSE(r.pass);
    EXPECT_NE(r.failure.find("|sigma|"), std::string::npos);
}

TEST(Potential, Catalog)
{
    const auto ac = Potential::allen_cahn();
    EXPECT_EQ(ac.F(1.0), 0.0);
    EXPECT_EQ(ac.dF(1.0), 0.0);
    EXPECT_EQ(ac.F(0.0), 0.25);
    EXPECT_EQ(ac.d2F(0.0), -1.0);
    EXPECT_TRUE(ac.nonneg());
    EXPECT_FALSE(ac.convex());
    EXPECT_EQ(Potential::quadratic(2.0).dF(3.0), 1.0);
    EXPECT_EQ(Potential::cosh_potential().d2F(0.0), 1.0);
    EXPECT_TRUE(Potential::zero().identically_zero());
    EXPECT_TRUE(Potential::polynomial({3.0}, true, true).identically_zero());
    EXPECT_EQ(ac.with_scale(2.0).F(0.0), 0.5);
    EXPECT_THROW(Potential::zero().with_scale(2.0), ConfigError);
}

TEST(Potential, DerivativesAreConsistent)
{
    const std::vector<Potential> pots{Potential::allen_cahn(1.7), Potential::quadratic(0.3), Potential::cosh_potential(),
                                      Potential::zero(), Potential::polynomial({1, -2, 0.5, 0.25, 0.1}, false, false)};
    for (const auto& p : pots)
        for (double u : {-1.3, -0.2, 0.0, 0.7, 2.1}) {
            const double d = 1e-4;
            EXPECT_NEAR((p.F(u + d) - p.F(u - d)) / (2 * d), p.dF(u), 1e-6) << p.name();
            EXPECT_NEAR((p.dF(u + d) - p.dF(u - d)) / (2 * d), p.d2F(u), 1e-6) << p.name();
        }
}

TEST(Potential, FlagCheckBySampling)
{
    const auto c = Potential::allen_cahn().check_flags(-2, 2);
    EXPECT_TRUE(c.nonneg_holds);
    EXPECT_FALSE(c.convex_holds);
    const auto lie = Potential::polynomial({0, 0, -1}, true, true).check_flags(-1, 1);
    EXPECT_FALSE(lie.nonneg_holds);
    EXPECT_FALSE(lie.convex_holds);
    EXPECT_TRUE(lie.concave_holds);
}

TEST(Phi, CustomTableRejectsNonElliptic)
{
    // Strongly concave samples force 2t Phi'' + Phi' < 0 somewhere.
    EXPECT_THROW(PhiFamily::custom_table({0, 1, 2, 3}, {0, 2.0, 2.1, 2.11}), ConfigError);
    EXPECT_THROW(PhiFamily::custom_table({0, 1, 1}, {0, 1, 2}), ConfigError);
    const auto f = PhiFamily::custom_table({0, 1, 2, 4}, {0, 1, 2, 4});
    EXPECT_NEAR(f.phi(3.0), 3.0, 1e-14);
    EXPECT_THROW(f.phi(5.0), DomainError);
}
