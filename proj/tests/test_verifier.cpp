#include "qlm/ode.hpp"
#include "qlm/verifier.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

using namespace qlm;
using qlm::testing::pi;

namespace {

// Allen-Cahn on the circle of length 10, cached per resolution.
const SolveReport& circle_solution(int n)
{
    static std::map<int, SolveReport> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    SolveConfig cfg;
    cfg.initial_guess.kind = InitialGuess::Kind::sin_mode;
    cfg.initial_guess.amplitude = 0.365;
    cfg.pin = PinKind::phase;
    cfg.continuation = Continuation{"length0", 2 * pi * 1.05, 10.0, 10, 8};
    auto rep = newton_solve(cfg, PhiFamily::linear(), Potential::allen_cahn(), build_grid(MetricKind::flat_torus, {}, {n}, {10.0}));
    return cache.emplace(n, std::move(rep)).first->second;
}

double e_circle()
{
    static const double e = energy_for_period(PhiFamily::linear(), Potential::allen_cahn(), 10.0);
    return e;
}

GridPtr torus(int n, double L = 1.0) { return build_grid(MetricKind::flat_torus, {}, {n, n}, {L, L}); }

double claim_field(const Vec& x) { return std::sin(2 * pi * x(0)) * std::cos(2 * pi * x(1)) + 2; }

} // namespace

TEST(PFunction, LinearFamilyIsGradSquaredMinusTwiceF)
{
    const auto g = torus(32);
    const auto u = ScalarField::sample(g, [](const Vec& x) { return 0.3 * std::sin(2 * pi * x(0)) + 0.1 * std::cos(2 * pi * x(1)); });
    const auto pot = Potential::allen_cahn();
    const auto b = p_function(u, PhiFamily::linear(), pot);
    const auto du = covariant_gradient(u);
    for (std::size_t n = 0; n < g->size(); ++n)
        EXPECT_NEAR(b.P[n], du.at(n).squaredNorm() - 2 * pot.F(u[n]), 1e-15);
}

TEST(PFunction, ConstantFieldGivesMinusTwiceF)
{
    const auto g = torus(16);
    const auto pot = Potential::allen_cahn();
    for (auto fam : {PhiFamily::linear(), PhiFamily::mean_curvature(), PhiFamily::p_laplacian(3, 1e-8)}) {
        const auto b = p_function(ScalarField(g, 0.4), fam, pot);
        for (std::size_t n = 0; n < g->size(); ++n) EXPECT_NEAR(b.P[n], -2 * pot.F(0.4), 1e-15) << fam.name();
    }
}

TEST(PFunction, PsiFormAgreesForEveryFamily)
{
    const auto g = torus(32);
    const auto u = ScalarField::sample(g, claim_field);
    for (auto fam : {PhiFamily::linear(), PhiFamily::mean_curvature(), PhiFamily::p_laplacian(4, 1e-3), PhiFamily::p_laplacian(1.5)})
        EXPECT_LE(p_function(u, fam, Potential::cosh_potential()).psi_form_discrepancy, 1e-12) << fam.name();
}

TEST(PFunction, DegenerateLambdaThrows)
{
    const auto g = torus(8);
    EXPECT_THROW(p_function(ScalarField(g, 1.0), PhiFamily::p_laplacian(4), Potential::zero()), DomainError);
}

TEST(PFunction, GradientTwoPathsConvergeAtSecondOrder)
{
    const double e1 = p_function(circle_solution(512).solution, PhiFamily::linear(), Potential::allen_cahn()).gradP_discrepancy;
    const double e2 = p_function(circle_solution(1024).solution, PhiFamily::linear(), Potential::allen_cahn()).gradP_discrepancy;
    const double order = std::log2(e1 / e2);
    EXPECT_GE(order, 1.7);
    EXPECT_LE(order, 2.3);
}

TEST(PFunction, LaplacianDecompositionOnMeanCurvatureSolutions)
{
    const auto fam = PhiFamily::mean_curvature();
    const auto pot = Potential::allen_cahn();
    std::vector<double> err;
    for (int n : {256, 512}) {
        SolveConfig cfg;
        cfg.initial_guess.kind = InitialGuess::Kind::sin_mode;
        cfg.initial_guess.amplitude = 0.8;
        cfg.pin = PinKind::phase;
        const auto rep = newton_solve(cfg, fam, pot, build_grid(MetricKind::flat_torus, {}, {n}, {10.0}));
        ASSERT_TRUE(rep.converged);
        err.push_back(laplacian_decomposition_residual(rep.solution, fam, pot));
        // Dropping the factor 2 on Phi'' leaves an O(1) mismatch.
        EXPECT_GT(laplacian_decomposition_residual(rep.solution, fam, pot, 1.0), 1e-2);
    }
    const double order = std::log2(err[0] / err[1]);
    EXPECT_GE(order, 1.7);
    EXPECT_LE(order, 2.3);
}

TEST(GradientBound, AllenCahnCircle)
{
    const auto& rep = circle_solution(1024);
    ASSERT_TRUE(rep.converged);
    const auto r = check_gradient_bound(rep.solution, PhiFamily::linear(), Potential::allen_cahn());
    EXPECT_TRUE(r.hypotheses_met);
    EXPECT_EQ(r.status(), CheckStatus::pass);
    EXPECT_LT(r.get("max_P"), 0.0);
    EXPECT_NEAR(r.get("mean_P") / (2 * e_circle()), 1.0, 1e-4);
    EXPECT_EQ(r.tag, "thm1.1");
}

TEST(GradientBound, ConstantAtTheWellIsEquality)
{
    const auto g = torus(16);
    const auto r = check_gradient_bound(ScalarField(g, 1.0), PhiFamily::linear(), Potential::allen_cahn());
    EXPECT_EQ(r.get("max_P"), 0.0);
    EXPECT_TRUE(r.pass);
}

TEST(GradientBound, MixedRicciIsDiagnosticOnly)
{
    const auto g = build_grid(MetricKind::conformal_torus, {0.2}, {32, 32}, {1.0, 1.0});
    const auto u = ScalarField::sample(g, [](const Vec& x) { return 0.1 * std::sin(2 * pi * x(0)); });
    const auto r = check_gradient_bound(u, PhiFamily::linear(), Potential::allen_cahn());
    EXPECT_FALSE(r.hypotheses_met);
    EXPECT_EQ(r.status(), CheckStatus::diagnostic);
}

TEST(GradientBound, NegativePotentialIsDiagnosticOnly)
{
    const auto g = torus(8);
    const auto pot = Potential::polynomial({-1.0, 0, 1.0}, false, true);
    const auto r = check_gradient_bound(ScalarField(g, 0.0), PhiFamily::linear(), pot);
    EXPECT_FALSE(r.hypotheses_met);
}

TEST(ClaimIdentity, LinearFamilyIsExact)
{
    const auto r = lemma21_claim_residual(claim_field, PhiFamily::linear(), {torus(64), torus(128), torus(256)});
    EXPECT_LE(r.get("max_discrepancy"), 1e-12);
    EXPECT_TRUE(r.pass);
}

TEST(ClaimIdentity, PLaplacianSecondOrder)
{
    const auto r = lemma21_claim_residual(claim_field, PhiFamily::p_laplacian(4), {torus(64), torus(128), torus(256)});
    ASSERT_EQ(r.orders.size(), 2u);
    for (double p : r.orders) {
        EXPECT_GE(p, 1.7);
        EXPECT_LE(p, 2.3);
    }
    EXPECT_TRUE(r.pass);
}

TEST(ClaimIdentity, MeanCurvatureSecondOrder)
{
    const auto r = lemma21_claim_residual(claim_field, PhiFamily::mean_curvature(), {torus(32), torus(64), torus(128)});
    for (double p : r.orders) {
        EXPECT_GE(p, 1.7);
        EXPECT_LE(p, 2.3);
    }
}

TEST(ClaimIdentity, SphereSpotValue)
{
    // u = cos(theta), p = 4 on the unit sphere: both sides equal -(2/3) cos(theta).
    const auto g = build_grid(MetricKind::sphere_latlong, {1.0}, {256, 512}, {pi, 2 * pi});
    const auto u = ScalarField::sample(g, [](const Vec& x) { return std::cos(x(0)); });
    const auto c = lemma21_claim_fields(u, PhiFamily::p_laplacian(4), 0.05);
    const std::size_t i0 = g->index({63, 7, 0}), i1 = g->index({64, 7, 0});
    const double t0 = g->point(i0)(0), t1 = g->point(i1)(0);
    const double w = (pi / 4 - t0) / (t1 - t0);
    const double exact = -std::sqrt(2.0) / 3;
    EXPECT_NEAR((1 - w) * c.lhs[i0] + w * c.lhs[i1], exact, 1e-3);
    EXPECT_NEAR((1 - w) * c.rhs[i0] + w * c.rhs[i1], exact, 1e-3);
    EXPECT_GT(c.n_skipped, 0u);  // polar caps fall under the floor
}

TEST(Inequality, CirclePassesWithFlatP)
{
    const auto r = lemma21_inequality_residual(circle_solution(1024).solution, PhiFamily::linear(), Potential::allen_cahn());
    EXPECT_TRUE(r.pass);
    EXPECT_GE(r.get("min_residual"), -r.tolerance);
    EXPECT_GT(r.get("evaluated_nodes"), 1000.0);
}

TEST(Inequality, ConstantIsVacuous)
{
    const auto r = lemma21_inequality_residual(ScalarField(torus(16), 1.0), PhiFamily::linear(), Potential::allen_cahn());
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.get("evaluated_nodes"), 0.0);
}

TEST(Inequality, LinearReductionMatchesDirectFormula)
{
    // For Phi(t) = t the residual is t Lap P - 2F' <grad u, grad P> - |grad P|^2/2 - 2t Ric(grad u, grad u);
    // here evaluated with the compact Laplacian, so the two agree to O(h^2).
    const auto pot = Potential::allen_cahn();
    std::vector<double> diffs;
    for (int n : {32, 64, 128}) {
        const auto g = torus(n);
        const auto u = ScalarField::sample(g, [](const Vec& x) { return 0.4 * std::sin(2 * pi * x(0)) + 0.2 * std::cos(2 * pi * x(1)); });
        const auto r = lemma21_inequality_residual(u, PhiFamily::linear(), pot);
        const auto b = p_function(u, PhiFamily::linear(), pot);
        const auto lap = laplace_beltrami(b.P);
        double d = 0;
        for (std::size_t k = 0; k < g->size(); ++k) {
            const Vec du = b.grad_u.at(k), dp = b.gradP.at(k);
            const double t = du.squaredNorm();
            const double direct = t * lap[k] - 2 * pot.dF(u[k]) * du.dot(dp) - 0.5 * dp.squaredNorm();
            d = std::max(d, std::abs(direct - (*r.residual_field)[k]));
        }
        diffs.push_back(d);
    }
    for (double p : qlm::testing::dyadic_orders(diffs)) {
        EXPECT_GE(p, 1.7);
        EXPECT_LE(p, 2.3);
    }
}

TEST(SquaredGradientInequality, LinearCirclePasses)
{
    const auto r = lemma31_residual(circle_solution(1024).solution, PhiFamily::linear(), Potential::allen_cahn());
    EXPECT_TRUE(r.pass);
    EXPECT_DOUBLE_EQ(r.get("C0"), 1.0);
}

TEST(SquaredGradientInequality, ConstantBothSidesZero)
{
    const auto r = lemma31_residual(ScalarField(torus(8), 0.3), PhiFamily::linear(), Potential::allen_cahn());
    EXPECT_EQ(r.get("min_residual"), 0.0);
    EXPECT_EQ(r.get("max_residual"), 0.0);
}

TEST(SquaredGradientInequality, SphereRicciTermTwoPaths)
{
    const double radius = 2.0;
    const auto g = build_grid(MetricKind::sphere_latlong, {radius}, {32, 64}, {pi, 2 * pi});
    const auto u = ScalarField::sample(g, [](const Vec& x) { return std::cos(x(0)) + 0.3 * std::sin(x(0)) * std::cos(x(1)); });
    const auto du = covariant_gradient(u);
    const auto rq = ricci_quadratic(raise(du));
    const auto nsq = norm_squared(du);
    for (std::size_t n = 0; n < g->size(); ++n)
        EXPECT_NEAR(2 * rq[n], 2 * nsq[n] / (radius * radius), 1e-12);
}

TEST(Liouville, QuadraticPotentialOnTorus)
{
    SolveConfig cfg;
    cfg.initial_guess.amplitude = 1.0;
    const auto r = liouville_experiment(PhiFamily::linear(), Potential::quadratic(), torus(24), 5, 7, cfg);
    EXPECT_TRUE(r.hypotheses_met);
    EXPECT_EQ(r.get("converged"), 5.0);
    EXPECT_LE(r.get("max_oscillation"), 1e-10);
    EXPECT_EQ(r.status(), CheckStatus::pass);
}

TEST(Liouville, CoshWithRegularizedPLaplacian)
{
    SolveConfig cfg;
    cfg.initial_guess.amplitude = 0.5;
    std::vector<SolveReport> runs;
    const auto r = liouville_experiment(PhiFamily::p_laplacian(3, 1e-8), Potential::cosh_potential(), torus(16), 3, 11, cfg, {}, &runs);
    EXPECT_EQ(runs.size(), 3u);
    EXPECT_EQ(r.get("converged"), 3.0);
    EXPECT_TRUE(r.pass);
}

TEST(Liouville, HarmonicCaseIsTheMean)
{
    SolveConfig cfg;
    cfg.initial_guess.amplitude = 1.0;
    std::vector<SolveReport> runs;
    const auto r = liouville_experiment(PhiFamily::linear(), Potential::zero(), torus(16), 2, 3, cfg, {}, &runs);
    EXPECT_TRUE(r.pass);
    for (const auto& run : runs) {
        EXPECT_EQ(run.pin, "mean");
        EXPECT_LE(oscillation(run.solution), 1e-10);
    }
}

TEST(Liouville, NonConvexIsDiagnostic)
{
    SolveConfig cfg;
    cfg.initial_guess.amplitude = 0.2;
    const auto r = liouville_experiment(PhiFamily::linear(), Potential::allen_cahn(), torus(8), 1, 1, cfg);
    EXPECT_FALSE(r.hypotheses_met);
}

TEST(ZeroPotential, ConstantAtWell)
{
    const auto r = zero_potential_experiment(ScalarField(torus(8), 1.0), Potential::allen_cahn(), 1e-10);
    EXPECT_EQ(r.get("antecedent"), 1.0);
    EXPECT_EQ(r.get("oscillation"), 0.0);
    EXPECT_TRUE(r.pass);
}

TEST(ZeroPotential, CircleIsVacuous)
{
    const auto r = zero_potential_experiment(circle_solution(512).solution, Potential::allen_cahn(), 1e-10);
    EXPECT_EQ(r.get("antecedent"), 0.0);
    EXPECT_GT(r.get("min_F_of_u"), 1e-8);
    EXPECT_TRUE(r.pass);
}

TEST(ZeroPotential, CounterexampleIsCaught)
{
    const auto g = build_grid(MetricKind::flat_torus, {}, {16}, {1.0});
    const auto u = ScalarField::sample(g, [](const Vec& x) { return std::cos(2 * pi * x(0)); });
    EXPECT_FALSE(zero_potential_experiment(u, Potential::allen_cahn(), 1e-10).pass);
}

TEST(Balls, FlatMinimumImage)
{
    const auto g = build_grid(MetricKind::flat_torus, {}, {10, 10}, {1.0, 1.0});
    const auto d = distances_from(*g, g->index({0, 0, 0}));
    EXPECT_NEAR(d[g->index({9, 0, 0})], 0.1, 1e-15);
    EXPECT_NEAR(d[g->index({5, 5, 0})], std::sqrt(0.5), 1e-15);
}

TEST(Balls, SphereGreatCircle)
{
    const auto g = build_grid(MetricKind::sphere_latlong, {2.0}, {16, 32}, {pi, 2 * pi});
    const std::size_t c = g->index({0, 0, 0});
    const auto d = distances_from(*g, c);
    // Across the pole: theta_0 on both meridians phi and phi + pi.
    EXPECT_NEAR(d[g->index({0, 16, 0})], 2.0 * 2 * g->point(c)(0), 1e-12);
}

TEST(Balls, ConformalDijkstraMatchesFlatWhenFactorVanishes)
{
    const auto g = build_grid(MetricKind::conformal_torus, {0.0}, {16, 16}, {1.0, 1.0});
    const auto d = distances_from(*g, 0);
    EXPECT_NEAR(d[g->index({3, 0, 0})], 3.0 / 16, 1e-14);
    EXPECT_NEAR(d[g->index({3, 2, 0})], 5.0 / 16, 1e-14);  // graph distance along edges
}

TEST(Harnack, ConstantGivesZero)
{
    const auto r = harnack_diagnostic(ScalarField(torus(32), 0.7), PhiFamily::linear(), Potential::allen_cahn(), Vec::Constant(2, 0.5),
                                      0.2, 2.0);
    EXPECT_EQ(r.get("C_emp"), 0.0);
    EXPECT_EQ(r.status(), CheckStatus::diagnostic);
}

TEST(Harnack, CircleStableUnderRefinement)
{
    const auto fam = PhiFamily::linear();
    const auto pot = Potential::allen_cahn();
    const Vec c = Vec::Constant(1, 2.5);
    const double c1 = harnack_diagnostic(circle_solution(512).solution, fam, pot, c, 1.0, 2.0).get("C_emp");
    const double c2 = harnack_diagnostic(circle_solution(1024).solution, fam, pot, c, 1.0, 2.0).get("C_emp");
    EXPECT_TRUE(std::isfinite(c1));
    EXPECT_GT(c1, 0.0);
    EXPECT_LE(std::abs(c2 - c1) / c1, 0.2);
}

TEST(Harnack, BallLeavingChartThrows)
{
    EXPECT_THROW(harnack_diagnostic(circle_solution(512).solution, PhiFamily::linear(), Potential::allen_cahn(), Vec::Constant(1, 2.5),
                                    3.0, 2.0),
                 DomainError);
}

TEST(Abp, ConstantGivesZero)
{
    const auto g = torus(32);
    const auto r = abp_diagnostic(ScalarField(g, 0.2), Potential::allen_cahn(), strip_mask(*g, 0, 0.5, 0.1), 0.25, 0.25);
    EXPECT_EQ(r.get("C_emp"), 0.0);
}

TEST(Abp, FullDomainViolatesMeasureProperty)
{
    const auto g = torus(16);
    EXPECT_THROW(abp_diagnostic(ScalarField(g, 0.2), Potential::allen_cahn(), std::vector<char>(g->size(), 1), 0.25, 0.25), DomainError);
}

TEST(Abp, CircleStableUnderRefinement)
{
    const auto pot = Potential::allen_cahn();
    std::vector<double> c;
    for (int n : {512, 1024}) {
        const auto& u = circle_solution(n).solution;
        c.push_back(abp_diagnostic(u, pot, strip_mask(*u.grid(), 0, 2.5, 0.5), 1.0, 0.25).get("C_emp"));
    }
    EXPECT_TRUE(std::isfinite(c[0]));
    EXPECT_LE(std::abs(c[1] - c[0]) / c[0], 0.2);
}

TEST(EqualityLocus, CircleHasNone)
{
    const auto loc = equality_locus(circle_solution(1024).solution, PhiFamily::linear(), Potential::allen_cahn());
    EXPECT_TRUE(loc.nodes.empty());
    EXPECT_TRUE(loc.report.pass);
}

TEST(EqualityLocus, ConstantExcludedByGradientFloor)
{
    const auto loc = equality_locus(ScalarField(torus(16), 1.0), PhiFamily::linear(), Potential::allen_cahn());
    EXPECT_TRUE(loc.nodes.empty());
}

TEST(EqualityLocus, SyntheticEqualityField)
{
    // u(x, y) = phi(x - 8) with phi the equality profile, sampled on [0, 16) x [0, 1).
    const int nx = 512, ny = 8, sub = 32;
    const double h = 16.0 / nx;
    const auto prof = equality_profile(PhiFamily::linear(), Potential::allen_cahn(), 0.0, 1, {-8, 8}, h / sub);
    const auto g = build_grid(MetricKind::flat_torus, {}, {nx, ny}, {16.0, 1.0});
    ScalarField u(g);
    for (std::size_t n = 0; n < g->size(); ++n) u[n] = prof.phi[static_cast<std::size_t>(g->coords(n)[0] * sub)];
    // The seam dominates max |grad u|^2 and the third-derivative estimate, so the floor and
    // the P tolerance are set explicitly: |P| = O(h^2) away from the seam.
    VerifyOptions opt;
    opt.gradient_floor = 1e-14;
    const auto loc = equality_locus(u, PhiFamily::linear(), Potential::allen_cahn(), opt, 5e-4);
    // The periodic seam (columns 0 and nx-1) is the only place the profile is not smooth.
    EXPECT_EQ(loc.nodes.size(), static_cast<std::size_t>((nx - 2) * ny));
    EXPECT_EQ(loc.components.size(), 1u);
    EXPECT_EQ(loc.report.get("max_ricci_on_locus"), 0.0);
    EXPECT_TRUE(loc.report.pass);
}

TEST(Report, ValuesAreKeyed)
{
    VerifyReport r;
    r.tag = "x";
    r.set("a", 1.0);
    r.set("a", 2.0);
    EXPECT_EQ(r.values.size(), 1u);
    EXPECT_EQ(r.get("a"), 2.0);
    EXPECT_THROW(r.get("b"), ConfigError);
    r.pass = true;
    EXPECT_EQ(r.status(), CheckStatus::pass);
    r.hypotheses_met = false;
    EXPECT_EQ(r.status(), CheckStatus::diagnostic);
}
