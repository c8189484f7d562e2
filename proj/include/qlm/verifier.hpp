#pragma once

#include "qlm/curvature.hpp"
#include "qlm/nonlinearity.hpp"
#include "qlm/operators.hpp"
#include "qlm/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

namespace qlm {

/// P-function of a field and the quantities derived alongside it.
struct PFieldBundle {
    ScalarField P;
    ScalarField grad_sq;       // |grad u|^2
    ScalarField Lambda;        // Lambda(|grad u|^2)
    ScalarField f_of_u;        // F'(u)
    VectorField grad_u;        // covariant
    VectorField gradP;         // covariant, central differences of P
    VectorField gradP_closed;  // covariant, 2 Lambda H(., grad u) - 2 f grad u
    SymTensorField hessian;    // covariant
    SymTensorField d_tensor;   // contravariant, a^ij / Lambda
    double gradP_discrepancy = 0;   // max_n |gradP - gradP_closed|_g
    double psi_form_discrepancy = 0;  // max_n |P - (Psi(t) - 2F)|
    bool from_solution = false;
};

enum class CheckStatus { pass, fail, diagnostic };

inline std::string to_string(CheckStatus s)
{
    switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::diagnostic: return "diagnostic";
    }
    return "?";
}

/// Outcome of one theorem or lemma check. `pass` is decided from the recorded values.
struct VerifyReport {
    std::string tag;
    bool pass = false;
    bool hypotheses_met = true;
    bool measurement = false;  // no pass/fail semantics (Harnack/ABP constants)
    double tolerance = 0;
    std::vector<std::pair<std::string, double>> values;
    std::vector<double> orders;
    std::vector<std::string> notes;
    std::uint64_t provenance = 0;
    std::optional<ScalarField> residual_field;

    void set(const std::string& key, double v)
    {
        for (auto& kv : values)
            if (kv.first == key) {
                kv.second = v;
                return;
            }
        values.emplace_back(key, v);
    }
    bool has(const std::string& key) const
    {
        return std::any_of(values.begin(), values.end(), [&](const auto& kv) { return kv.first == key; });
    }
    double get(const std::string& key) const
    {
        for (const auto& kv : values)
            if (kv.first == key) return kv.second;
        throw ConfigError("report " + tag + " has no value '" + key + "'");
    }
    CheckStatus status() const
    {
        if (measurement || !hypotheses_met) return CheckStatus::diagnostic;
        return pass ? CheckStatus::pass : CheckStatus::fail;
    }
};

struct VerifyOptions {
    double c_tol = 0;              // 0 selects 10 * max |u'''|
    double gradient_floor = 1e-10; // relative to max |grad u|^2
    double claim_floor = 0.2;      // relative floor for the d-tensor identity
    double exact_tol = 1e-12;
    double order_lo = 1.7, order_hi = 2.3;
    double potential_zero_tol = 1e-8;
    double newton_tol = 1e-10;
    std::uint64_t provenance = 0;
};

/// tol_grid = C_tol h^2 with the default C_tol derived from the field's third derivatives.
inline double tol_grid(const ScalarField& u, double c_tol = 0)
{
    const double c = c_tol > 0 ? c_tol : 10.0 * third_derivative_max(u);
    const double h = u.grid()->max_spacing();
    return c * h * h;
}

namespace detail {

inline double safe_ratio(double num, double den)
{
    if (num == 0.0) return 0.0;
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return num / den;
}

inline double volume_mean(const ScalarField& f)
{
    return integrate(f) / f.grid()->total_volume();
}

} // namespace detail

/// Sampled hypotheses shared by the theorem checks.
struct Hypotheses {
    PotentialFlagCheck flags;
    double ricci_min = 0;   // min over nodes of the smallest eigenvalue of Ric relative to g
    double ricci_max = 0;
    bool ricci_nonneg = true;
    bool ricci_nonpos = true;
};

inline Hypotheses sample_hypotheses(const ScalarField& u, const Potential& pot)
{
    Hypotheses h;
    h.flags = pot.check_flags(u.min(), u.max());
    const MetricGrid& grid = *u.grid();
    h.ricci_min = std::numeric_limits<double>::infinity();
    h.ricci_max = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const double lo = grid.ricci_min_eigenvalue(n);
        h.ricci_min = std::min(h.ricci_min, lo);
        if (grid.dim() == 1) {
            h.ricci_max = std::max(h.ricci_max, 0.0);
            continue;
        }
        Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(grid.ricci(n), grid.g(n), Eigen::EigenvaluesOnly);
        h.ricci_max = std::max(h.ricci_max, es.eigenvalues().maxCoeff());
    }
    h.ricci_nonneg = h.ricci_min >= -1e-12;
    h.ricci_nonpos = h.ricci_max <= 1e-12;
    return h;
}

/// P = 2 Phi'(t) t - Phi(t) - 2F(u) with t = |grad u|^2, and its gradient two ways.
inline PFieldBundle p_function(const ScalarField& u, const PhiFamily& phi, const Potential& pot, bool from_solution = false)
{
    const GridPtr& gp = u.grid();
    const MetricGrid& grid = *gp;
    const int dim = grid.dim();
    PFieldBundle b;
    b.from_solution = from_solution;
    b.grad_u = covariant_gradient(u);
    b.hessian = covariant_hessian(u);
    b.P = ScalarField(gp);
    b.grad_sq = ScalarField(gp);
    b.Lambda = ScalarField(gp);
    b.f_of_u = ScalarField(gp);
    b.d_tensor = SymTensorField(gp, Variance::contravariant);
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const Vec du = b.grad_u.at(n);
        const Mat ginv = grid.g_inv(n);
        const double t = du.dot(ginv * du);
        const double lam = phi.lambda(t);
        if (!(lam > 0))
            throw DomainError("p_function: Lambda(|grad u|^2) = " + std::to_string(lam) + " <= 0 at node " + std::to_string(n));
        b.grad_sq[n] = t;
        b.Lambda[n] = lam;
        b.f_of_u[n] = pot.dF(u[n]);
        b.P[n] = 2 * phi.d1(t) * t - phi.phi(t) - 2 * pot.F(u[n]);
        b.psi_form_discrepancy = std::max(b.psi_form_discrepancy, std::abs(b.P[n] - (phi.psi(t) - 2 * pot.F(u[n]))));
        b.d_tensor.set(n, a_tensor(phi, du, ginv) / lam);
    }
    b.gradP = covariant_gradient(b.P);
    b.gradP_closed = VectorField(gp, Variance::covariant);
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const Vec du = b.grad_u.at(n);
        const Mat ginv = grid.g_inv(n);
        const Vec closed = 2 * b.Lambda[n] * (b.hessian.at(n) * (ginv * du)) - 2 * b.f_of_u[n] * du;
        b.gradP_closed.set(n, closed);
        const Vec diff = b.gradP.at(n) - closed;
        b.gradP_discrepancy = std::max(b.gradP_discrepancy, std::sqrt(std::max(0.0, diff.dot(ginv * diff))));
    }
    (void)dim;
    return b;
}

/// Max over nodes of |Laplace-Beltrami(u) - (f/Phi' - (2 Phi''/Phi') H(grad u, grad u))|,
/// the trace form of the equation solved for the Laplacian. Nodes with Phi' = 0 are skipped.
inline double laplacian_decomposition_residual(const ScalarField& u, const PhiFamily& phi, const Potential& pot,
                                               double phi2_factor = 2.0)
{
    const MetricGrid& grid = *u.grid();
    const ScalarField lap = laplace_beltrami(u);
    const VectorField du = covariant_gradient(u);
    const SymTensorField h = covariant_hessian(u);
    double worst = 0;
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const Vec up = grid.g_inv(n) * du.at(n);
        const double t = du.at(n).dot(up);
        const double d1 = phi.d1(t);
        if (!(d1 > 0)) continue;  // degenerate families at critical points
        const double d2 = 0.5 * phi.two_d2_or_zero(t);
        const double rhs = pot.dF(u[n]) / d1 - phi2_factor * d2 / d1 * up.dot(h.at(n) * up);
        worst = std::max(worst, std::abs(lap[n] - rhs));
    }
    return worst;
}

/// Gradient bound: max P <= tol_grid, gated on F >= 0 and Ric >= 0.
inline VerifyReport check_gradient_bound(const ScalarField& u, const PhiFamily& phi, const Potential& pot,
                                         const VerifyOptions& opt = {})
{
    VerifyReport r;
    r.tag = "thm1.1";
    r.provenance = opt.provenance;
    const PFieldBundle b = p_function(u, phi, pot, true);
    const Hypotheses hy = sample_hypotheses(u, pot);
    r.hypotheses_met = hy.flags.nonneg_holds && hy.ricci_nonneg;
    if (!r.hypotheses_met) r.notes.push_back("hypotheses unmet, diagnostic only");
    r.tolerance = tol_grid(u, opt.c_tol);
    const double mean = detail::volume_mean(b.P);
    ScalarField dev(u.grid());
    for (std::size_t n = 0; n < dev.size(); ++n) dev[n] = (b.P[n] - mean) * (b.P[n] - mean);
    const double sd = std::sqrt(detail::volume_mean(dev));
    r.set("max_P", b.P.max());
    r.set("min_P", b.P.min());
    r.set("mean_P", mean);
    r.set("stddev_P", sd);
    r.set("relative_stddev_P", detail::safe_ratio(sd, std::abs(mean)));
    r.set("min_F_sampled", hy.flags.min_F);
    r.set("ricci_min_eigenvalue", hy.ricci_min);
    r.set("gradP_two_path_discrepancy", b.gradP_discrepancy);
    r.set("psi_form_discrepancy", b.psi_form_discrepancy);
    r.pass = b.P.max() <= r.tolerance;
    r.residual_field = b.P;
    return r;
}

/// Nodewise sides of the d-tensor identity
///   div(d)(grad u) = (2 Phi''/Lambda)(|grad u|^2 Lap u - H(grad u, grad u)).
struct ClaimFields {
    ScalarField lhs, rhs;
    std::vector<char> evaluated;
    std::size_t n_evaluated = 0, n_skipped = 0;
    double discrepancy = 0;  // max over evaluated nodes
};

inline ClaimFields lemma21_claim_fields(const ScalarField& u, const PhiFamily& phi, double relative_floor)
{
    const GridPtr& gp = u.grid();
    const MetricGrid& grid = *gp;
    const int dim = grid.dim();
    const VectorField du = covariant_gradient(u);
    const SymTensorField h = covariant_hessian(u);
    ScalarField t(gp);
    for (std::size_t n = 0; n < grid.size(); ++n) t[n] = du.at(n).dot(grid.g_inv(n) * du.at(n));
    const double floor = relative_floor * t.max();

    ClaimFields c;
    c.lhs = ScalarField(gp);
    c.rhs = ScalarField(gp);
    c.evaluated.assign(grid.size(), 0);
    // A node is evaluated when it and its stencil neighbours clear the floor.
    for (std::size_t n = 0; n < grid.size(); ++n) {
        bool ok = t[n] >= floor && t[n] > 0;
        for (int a = 0; a < dim && ok; ++a)
            for (int s : {-1, 1})
                ok = ok && t[grid.neighbor(n, a, s).index] >= floor && t[grid.neighbor(n, a, s).index] > 0;
        c.evaluated[n] = ok ? 1 : 0;
    }
    std::vector<char> need(grid.size(), 0);
    for (std::size_t n = 0; n < grid.size(); ++n)
        if (c.evaluated[n]) {
            need[n] = 1;
            for (int a = 0; a < dim; ++a)
                for (int s : {-1, 1}) need[grid.neighbor(n, a, s).index] = 1;
        }
    SymTensorField d(gp, Variance::contravariant);
    for (std::size_t n = 0; n < grid.size(); ++n) {
        if (!need[n]) continue;
        const double lam = phi.lambda(t[n]);
        if (!(lam > 0)) throw DomainError("claim identity: Lambda <= 0 at node " + std::to_string(n));
        d.set(n, a_tensor(phi, du.at(n), grid.g_inv(n)) / lam);
    }
    const VectorField divd = tensor_divergence(d);
    for (std::size_t n = 0; n < grid.size(); ++n) {
        if (!c.evaluated[n]) {
            ++c.n_skipped;
            continue;
        }
        ++c.n_evaluated;
        const Mat ginv = grid.g_inv(n);
        const Vec g = du.at(n);
        const Vec up = ginv * g;
        const Mat hn = h.at(n);
        c.lhs[n] = divd.at(n).dot(g);
        const double lap = (ginv * hn).trace();
        c.rhs[n] = phi.two_d2_or_zero(t[n]) / phi.lambda(t[n]) * (t[n] * lap - up.dot(hn * up));
        c.discrepancy = std::max(c.discrepancy, std::abs(c.lhs[n] - c.rhs[n]));
    }
    return c;
}

/// Observed orders log(e_k / e_{k+1}) / log(h_k / h_{k+1}).
inline std::vector<double> observed_orders(const std::vector<double>& h, const std::vector<double>& e)
{
    std::vector<double> out;
    for (std::size_t k = 0; k + 1 < e.size(); ++k)
        out.push_back(std::log(e[k] / e[k + 1]) / std::log(h[k] / h[k + 1]));
    return out;
}

/// The claim identity on a sequence of grids for an analytic field u.
inline VerifyReport lemma21_claim_residual(const std::function<double(const Vec&)>& u, const PhiFamily& phi,
                                           const std::vector<GridPtr>& grids, const VerifyOptions& opt = {})
{
    QLM_THROW_IF(grids.empty(), ConfigError, "claim identity: need at least one grid");
    VerifyReport r;
    r.tag = "lem2.1-claim";
    r.provenance = opt.provenance;
    std::vector<double> hs, es;
    double tol_last = 0;
    for (std::size_t k = 0; k < grids.size(); ++k) {
        const ScalarField f = ScalarField::sample(grids[k], u);
        const ClaimFields c = lemma21_claim_fields(f, phi, opt.claim_floor);
        hs.push_back(grids[k]->max_spacing());
        es.push_back(c.discrepancy);
        r.set("discrepancy_" + std::to_string(k), c.discrepancy);
        r.set("evaluated_" + std::to_string(k), static_cast<double>(c.n_evaluated));
        r.set("skipped_" + std::to_string(k), static_cast<double>(c.n_skipped));
        tol_last = tol_grid(f, opt.c_tol);
        if (k + 1 == grids.size()) r.residual_field = c.lhs;
    }
    const double worst = *std::max_element(es.begin(), es.end());
    r.set("max_discrepancy", worst);
    if (worst <= opt.exact_tol) {
        r.tolerance = opt.exact_tol;
        r.pass = true;
        r.notes.push_back("exact at every level");
        return r;
    }
    if (grids.size() == 1) {
        r.tolerance = tol_last;
        r.pass = worst <= tol_last;
        return r;
    }
    r.orders = observed_orders(hs, es);
    r.pass = std::all_of(r.orders.begin(), r.orders.end(), [&](double p) { return p >= opt.order_lo && p <= opt.order_hi; });
    r.tolerance = opt.order_lo;
    return r;
}

/// LHS - RHS of the P-function inequality multiplied through by |grad u|^2:
///   t div(d grad P) + B.grad P - |grad P|^2/(2 Lambda) - 2 t Phi' Ric(grad u, grad u),
///   B_i = -[2 Phi'' f t/(Lambda Phi') + 2 f/Lambda] d_i u.
inline VerifyReport lemma21_inequality_residual(const ScalarField& u, const PhiFamily& phi, const Potential& pot,
                                                const VerifyOptions& opt = {})
{
    VerifyReport r;
    r.tag = "lem2.1";
    r.provenance = opt.provenance;
    const GridPtr& gp = u.grid();
    const MetricGrid& grid = *gp;
    const PFieldBundle b = p_function(u, phi, pot, true);
    r.tolerance = tol_grid(u, opt.c_tol);
    const double floor = opt.gradient_floor * b.grad_sq.max();

    VectorField v(gp, Variance::contravariant);
    for (std::size_t n = 0; n < grid.size(); ++n) v.set(n, b.d_tensor.at(n) * b.gradP.at(n));
    const ScalarField divv = divergence(v);

    ScalarField res(gp);
    std::size_t evaluated = 0, skipped = 0;
    double min_res = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const double t = b.grad_sq[n];
        if (!(t > floor)) {
            ++skipped;
            continue;
        }
        ++evaluated;
        const Mat ginv = grid.g_inv(n);
        const Vec du = b.grad_u.at(n), dp = b.gradP.at(n);
        const Vec up = ginv * du;
        const double lam = b.Lambda[n], d1 = phi.d1(t), d2 = 0.5 * phi.two_d2_or_zero(t), f = b.f_of_u[n];
        const double coef_b = -(2 * d2 * f * t / (lam * d1) + 2 * f / lam);
        const double lhs = t * divv[n] + coef_b * up.dot(dp);
        const double rhs = dp.dot(ginv * dp) / (2 * lam) + 2 * t * d1 * up.dot(grid.ricci(n) * up);
        res[n] = lhs - rhs;
        min_res = std::min(min_res, res[n]);
    }
    r.set("evaluated_nodes", static_cast<double>(evaluated));
    r.set("skipped_nodes", static_cast<double>(skipped));
    if (evaluated == 0) {
        r.pass = true;
        r.notes.push_back("vacuous: every node below the gradient floor");
        r.set("min_residual", 0.0);
    }
    else {
        r.set("min_residual", min_res);
        r.pass = min_res >= -r.tolerance;
    }
    r.notes.push_back("B_i = -[2 Phi'' f t/(Lambda Phi') + 2 f/Lambda] d_i u");
    r.residual_field = res;
    return r;
}

/// div(a grad t) - 2 C0 |H|^2 - 2 F'' t - 2 Phi' Ric(grad u, grad u) with t = |grad u|^2
/// and C0 the ellipticity floor over the solution's gradient range.
inline VerifyReport lemma31_residual(const ScalarField& u, const PhiFamily& phi, const Potential& pot,
                                     const VerifyOptions& opt = {})
{
    VerifyReport r;
    r.tag = "lem3.1";
    r.provenance = opt.provenance;
    const GridPtr& gp = u.grid();
    const MetricGrid& grid = *gp;
    const VectorField du = covariant_gradient(u);
    const SymTensorField h = covariant_hessian(u);
    ScalarField t(gp);
    std::vector<double> tv(grid.size());
    for (std::size_t n = 0; n < grid.size(); ++n) tv[n] = t[n] = du.at(n).dot(grid.g_inv(n) * du.at(n));
    const double c0 = ellipticity_floor(phi, tv);
    const VectorField dt = covariant_gradient(t);
    VectorField v(gp, Variance::contravariant);
    for (std::size_t n = 0; n < grid.size(); ++n) v.set(n, a_tensor(phi, du.at(n), grid.g_inv(n)) * dt.at(n));
    const ScalarField lhs = divergence(v);
    ScalarField res(gp);
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const Mat ginv = grid.g_inv(n);
        const Vec up = ginv * du.at(n);
        const double rhs = 2 * c0 * tensor_norm_squared(h.at(n), ginv) + 2 * pot.d2F(u[n]) * t[n] +
                           2 * phi.d1(t[n]) * up.dot(grid.ricci(n) * up);
        res[n] = lhs[n] - rhs;
    }
    r.tolerance = tol_grid(u, opt.c_tol);
    r.set("C0", c0);
    r.set("min_residual", res.min());
    r.set("max_residual", res.max());
    r.pass = res.min() >= -r.tolerance;
    r.residual_field = res;
    return r;
}

inline double oscillation(const ScalarField& u) { return u.max() - u.min(); }

/// Random-start solves under a convex potential; every converged solution must be constant.
inline VerifyReport liouville_experiment(const PhiFamily& phi, const Potential& pot, const GridPtr& grid, int n_starts,
                                         std::uint64_t seed, SolveConfig base, const VerifyOptions& opt = {},
                                         std::vector<SolveReport>* runs = nullptr)
{
    QLM_THROW_IF(n_starts < 1, ConfigError, "liouville: need at least one start");
    VerifyReport r;
    r.tag = "thm1.2";
    base.initial_guess.kind = InitialGuess::Kind::random;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    int converged = 0;
    double worst = 0;
    for (int k = 0; k < n_starts; ++k) {
        SolveConfig cfg = base;
        cfg.initial_guess.seed = seed + static_cast<std::uint64_t>(k);
        const ScalarField guess = make_initial_guess(grid, cfg.initial_guess);
        lo = std::min(lo, guess.min());
        hi = std::max(hi, guess.max());
        SolveReport rep = newton_solve(cfg, phi, pot, grid);
        const double osc = oscillation(rep.solution);
        r.set("residual_" + std::to_string(k), rep.final_residual_maxnorm);
        r.set("oscillation_" + std::to_string(k), osc);
        r.set("iterations_" + std::to_string(k), rep.iterations);
        if (rep.converged) {
            ++converged;
            worst = std::max(worst, osc);
            lo = std::min(lo, rep.solution.min());
            hi = std::max(hi, rep.solution.max());
        }
        else {
            r.notes.push_back("start " + std::to_string(k) + " did not converge: " + rep.message);
        }
        if (runs) runs->push_back(std::move(rep));
    }
    const auto flags = pot.check_flags(lo, hi);
    double ric_min = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < grid->size(); ++n) ric_min = std::min(ric_min, grid->ricci_min_eigenvalue(n));
    r.hypotheses_met = flags.convex_holds && ric_min >= -1e-12;
    if (!r.hypotheses_met) r.notes.push_back("hypotheses unmet, diagnostic only");
    r.tolerance = 10 * base.newton_tol;
    r.set("starts", n_starts);
    r.set("converged", converged);
    r.set("max_oscillation", worst);
    r.set("min_F2_sampled", flags.min_F2);
    r.set("ricci_min_eigenvalue", ric_min);
    r.pass = converged > 0 && worst <= r.tolerance;
    if (converged == 0) r.notes.push_back("no start converged");
    (void)opt;
    return r;
}

/// A zero of F(u) anywhere forces u to be constant.
inline VerifyReport zero_potential_experiment(const ScalarField& u, const Potential& pot, double newton_tol,
                                              const VerifyOptions& opt = {})
{
    VerifyReport r;
    r.tag = "thm1.3";
    r.provenance = opt.provenance;
    const Hypotheses hy = sample_hypotheses(u, pot);
    r.hypotheses_met = hy.flags.nonneg_holds && hy.ricci_nonneg;
    if (!r.hypotheses_met) r.notes.push_back("hypotheses unmet, diagnostic only");
    double min_f = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < u.size(); ++n) min_f = std::min(min_f, pot.F(u[n]));
    const double osc = oscillation(u);
    const bool antecedent = min_f <= opt.potential_zero_tol;
    r.tolerance = 10 * newton_tol;
    r.set("min_F_of_u", min_f);
    r.set("oscillation", osc);
    r.set("potential_zero_tol", opt.potential_zero_tol);
    r.set("antecedent", antecedent ? 1.0 : 0.0);
    r.pass = !antecedent || osc <= r.tolerance;
    if (!antecedent) r.notes.push_back("antecedent false: implication holds vacuously");
    return r;
}

// ---- balls ----------------------------------------------------------------

inline std::size_t nearest_node(const MetricGrid& grid, const Vec& x)
{
    std::array<int, 3> c{0, 0, 0};
    for (int a = 0; a < grid.dim(); ++a) {
        const double h = grid.spacing(a);
        const double off = grid.kind() == MetricKind::sphere_latlong && a == 0 ? 0.5 : 0.0;
        int i = static_cast<int>(std::lround(x(a) / h - off));
        const int n = grid.extent(a);
        if (grid.kind() == MetricKind::sphere_latlong && a == 0) i = std::clamp(i, 0, n - 1);
        else i = ((i % n) + n) % n;
        c[static_cast<std::size_t>(a)] = i;
    }
    return grid.index(c);
}

namespace detail {

inline double min_image(double d, double L)
{
    d = std::fmod(d, L);
    if (d > 0.5 * L) d -= L;
    if (d < -0.5 * L) d += L;
    return d;
}

} // namespace detail

/// Geodesic distance from `center` to every node: minimum-image Euclidean on flat tori,
/// great circles on the sphere, Dijkstra over the 2*dim edge graph on conformal tori.
inline std::vector<double> distances_from(const MetricGrid& grid, std::size_t center)
{
    const int dim = grid.dim();
    std::vector<double> d(grid.size(), std::numeric_limits<double>::infinity());
    const Vec xc = grid.point(center);
    switch (grid.kind()) {
    case MetricKind::flat_torus:
        for (std::size_t n = 0; n < grid.size(); ++n) {
            const Vec x = grid.point(n);
            double s = 0;
            for (int a = 0; a < dim; ++a) {
                const double dx = detail::min_image(x(a) - xc(a), grid.length(a));
                s += dx * dx;
            }
            d[n] = std::sqrt(s);
        }
        break;
    case MetricKind::sphere_latlong: {
        const double r = grid.spec().params[0];
        for (std::size_t n = 0; n < grid.size(); ++n) {
            const Vec x = grid.point(n);
            const double c = std::cos(x(0)) * std::cos(xc(0)) + std::sin(x(0)) * std::sin(xc(0)) * std::cos(x(1) - xc(1));
            d[n] = r * std::acos(std::clamp(c, -1.0, 1.0));
        }
        break;
    }
    case MetricKind::conformal_torus: {
        using Item = std::pair<double, std::size_t>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        d[center] = 0;
        pq.emplace(0.0, center);
        while (!pq.empty()) {
            const auto [dn, n] = pq.top();
            pq.pop();
            if (dn > d[n]) continue;
            for (int a = 0; a < dim; ++a)
                for (int s : {-1, 1}) {
                    const std::size_t m = grid.neighbor(n, a, s).index;
                    Vec mid = grid.point(n);
                    mid(a) += 0.5 * s * grid.spacing(a);
                    const double w = std::sqrt(grid.metric_at(mid)(a, a)) * grid.spacing(a);
                    if (dn + w < d[m]) {
                        d[m] = dn + w;
                        pq.emplace(d[m], m);
                    }
                }
        }
        break;
    }
    }
    return d;
}

/// Throws when the ball of `radius` around `center` wraps around the chart: on tori a
/// node in the antipodal column along some axis lies strictly inside the ball.
inline void require_ball_in_chart(const MetricGrid& grid, std::size_t center, double radius, const std::vector<double>& dist)
{
    if (grid.kind() == MetricKind::sphere_latlong) {
        const double r = grid.spec().params[0];
        QLM_THROW_IF(radius >= std::numbers::pi * r, DomainError, "ball of radius " + std::to_string(radius) + " covers the sphere");
        return;
    }
    const Vec xc = grid.point(center);
    for (std::size_t n = 0; n < grid.size(); ++n) {
        if (!(dist[n] < radius * (1 - 1e-12))) continue;
        const Vec x = grid.point(n);
        for (int a = 0; a < grid.dim(); ++a) {
            const double dx = std::abs(detail::min_image(x(a) - xc(a), grid.length(a)));
            if (dx >= 0.5 * grid.length(a) - 0.5 * grid.spacing(a) - 1e-12)
                throw DomainError("ball of radius " + std::to_string(radius) + " around node " + std::to_string(center) +
                                  " exits the grid chart along axis " + std::to_string(a));
        }
    }
}

/// Gradient Harnack measurement: C_emp = LHS / RHS with
///   LHS = |B_R|^{-1/p} (int_{B_R} |grad u|^{2p})^{1/p},
///   RHS = inf_{B_R} |grad u|^2 + R^2 |B_2R|^{-1/n} (|Hes u|^2_{L^{2n}(B_2R)} + |Phi' Ric(grad u, grad u)|_{L^n(B_2R)}).
inline VerifyReport harnack_diagnostic(const ScalarField& u, const PhiFamily& phi, const Potential& pot, const Vec& center,
                                       double R, double p_exp, const VerifyOptions& opt = {})
{
    QLM_THROW_IF(!(R > 0) || !(p_exp >= 1), ConfigError, "harnack: need R > 0 and p >= 1");
    VerifyReport r;
    r.tag = "thm1.4-diag";
    r.measurement = true;
    r.provenance = opt.provenance;
    const MetricGrid& grid = *u.grid();
    const double n_dim = grid.dim();
    const std::size_t c = nearest_node(grid, center);
    const auto dist = distances_from(grid, c);
    require_ball_in_chart(grid, c, 2 * R, dist);

    const VectorField du = covariant_gradient(u);
    const SymTensorField h = covariant_hessian(u);
    ScalarField t(u.grid());
    for (std::size_t n = 0; n < grid.size(); ++n) t[n] = du.at(n).dot(grid.g_inv(n) * du.at(n));
    const SymTensorField ht = covariant_hessian(t);
    const Hypotheses hy = sample_hypotheses(u, pot);

    double vol_r = 0, vol_2r = 0, int_p = 0, inf_t = std::numeric_limits<double>::infinity();
    double int_h = 0, int_ric = 0, hess_t_max = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const double w = grid.volume_weight(n);
        if (dist[n] <= R) {
            vol_r += w;
            int_p += std::pow(t[n], p_exp) * w;
            inf_t = std::min(inf_t, t[n]);
        }
        if (dist[n] <= 2 * R) {
            vol_2r += w;
            const Mat ginv = grid.g_inv(n);
            const double hn = std::sqrt(std::max(0.0, tensor_norm_squared(h.at(n), ginv)));
            int_h += std::pow(hn, 2 * n_dim) * w;
            const Vec up = ginv * du.at(n);
            int_ric += std::pow(std::abs(phi.d1(t[n]) * up.dot(grid.ricci(n) * up)), n_dim) * w;
            if (grid.dim() == 1) hess_t_max = std::max(hess_t_max, ht.at(n)(0, 0) * ginv(0, 0));
            else {
                Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(ht.at(n), grid.g(n), Eigen::EigenvaluesOnly);
                hess_t_max = std::max(hess_t_max, es.eigenvalues().maxCoeff());
            }
        }
    }
    QLM_THROW_IF(vol_r <= 0, DomainError, "harnack: empty ball");
    const double lhs = std::pow(int_p, 1.0 / p_exp) / std::pow(vol_r, 1.0 / p_exp);
    const double scale = R * R / std::pow(vol_2r, 1.0 / n_dim);
    const double hess_term = scale * std::pow(int_h, 1.0 / n_dim);
    const double ric_term = hy.ricci_nonpos && hy.ricci_min >= -1e-12 ? 0.0 : scale * std::pow(int_ric, 1.0 / n_dim);
    const double rhs = inf_t + hess_term + ric_term;
    r.set("lhs", lhs);
    r.set("inf_grad_sq", inf_t);
    r.set("hessian_term", hess_term);
    r.set("ricci_term", ric_term);
    r.set("rhs", rhs);
    r.set("C_emp", detail::safe_ratio(lhs, rhs));
    r.set("R", R);
    r.set("p", p_exp);
    r.set("ball_volume", vol_r);
    r.set("hessian_of_grad_sq_max_eigenvalue", hess_t_max);
    r.hypotheses_met = hy.flags.concave_holds;
    if (!hy.flags.concave_holds) r.notes.push_back("F'' <= 0 fails on the solution range, diagnostic only");
    if (ric_term == 0.0) r.notes.push_back("flat variant: Ricci term dropped");
    r.pass = std::isfinite(r.get("C_emp"));
    return r;
}

/// ABP-type measurement on a sub-domain given as a node mask.
inline VerifyReport abp_diagnostic(const ScalarField& u, const Potential& pot, const std::vector<char>& mask, double R,
                                   double theta, double boundary_tol = 1e-6, const VerifyOptions& opt = {})
{
    const MetricGrid& grid = *u.grid();
    QLM_THROW_IF(mask.size() != grid.size(), ConfigError, "abp: mask size must equal the node count");
    QLM_THROW_IF(!(theta > 0 && theta < 1), ConfigError, "abp: theta must lie in (0, 1)");
    QLM_THROW_IF(!(R > 0), ConfigError, "abp: R must be > 0");
    VerifyReport r;
    r.tag = "thm1.5-diag";
    r.measurement = true;
    r.provenance = opt.provenance;

    // Exterior measure property, by node counting.
    double worst_fraction = 1.0;
    for (std::size_t x = 0; x < grid.size(); ++x) {
        if (!mask[x]) continue;
        const auto dist = distances_from(grid, x);
        double ball = 0, outside = 0;
        for (std::size_t n = 0; n < grid.size(); ++n)
            if (dist[n] <= R) {
                ball += grid.volume_weight(n);
                if (!mask[n]) outside += grid.volume_weight(n);
            }
        const double frac = outside / ball;
        worst_fraction = std::min(worst_fraction, frac);
        if (frac < theta) {
            const auto c = grid.coords(x);
            throw DomainError("abp: measure property fails at node " + std::to_string(x) + " (" + std::to_string(c[0]) + ", " +
                              std::to_string(c[1]) + "): exterior fraction " + std::to_string(frac) + " < theta");
        }
    }

    const VectorField du = covariant_gradient(u);
    ScalarField t(u.grid());
    for (std::size_t n = 0; n < grid.size(); ++n) t[n] = du.at(n).dot(grid.g_inv(n) * du.at(n));
    double boundary = 0, sup_t = -1;
    std::size_t z0 = grid.size();
    for (std::size_t n = 0; n < grid.size(); ++n) {
        if (!mask[n]) continue;
        bool ring = false;
        for (int a = 0; a < grid.dim(); ++a)
            for (int s : {-1, 1}) ring = ring || !mask[grid.neighbor(n, a, s).index];
        if (ring) boundary = std::max(boundary, std::sqrt(t[n]));
        if (t[n] > sup_t) {
            sup_t = t[n];
            z0 = n;
        }
    }
    QLM_THROW_IF(z0 == grid.size(), ConfigError, "abp: empty mask");
    const auto dz = distances_from(grid, z0);
    require_ball_in_chart(grid, z0, 2 * R, dz);
    const double n_dim = grid.dim();
    double vol_2r = 0, integral = 0;
    for (std::size_t n = 0; n < grid.size(); ++n) {
        if (dz[n] > 2 * R) continue;
        vol_2r += grid.volume_weight(n);
        if (mask[n]) integral += std::pow(std::abs(pot.d2F(u[n]) * t[n]), n_dim) * grid.volume_weight(n);
    }
    const double rhs = R * R / std::pow(vol_2r, 1.0 / n_dim) * std::pow(integral, 1.0 / n_dim);
    double ric_min = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < grid.size(); ++n) ric_min = std::min(ric_min, grid.ricci_min_eigenvalue(n));
    const bool decay = boundary <= boundary_tol;
    r.hypotheses_met = decay && ric_min >= -1e-12;
    if (!decay) r.notes.push_back("gradient does not vanish on the domain boundary ring, diagnostic only");
    r.set("lhs", sup_t);
    r.set("rhs", rhs);
    r.set("C_emp", detail::safe_ratio(sup_t, rhs));
    r.set("z0", static_cast<double>(z0));
    r.set("boundary_grad_max", boundary);
    r.set("min_exterior_fraction", worst_fraction);
    r.set("R", R);
    r.set("theta", theta);
    r.pass = std::isfinite(r.get("C_emp"));
    return r;
}

/// Strip {|x_axis - center| < half_width} on a torus, as a node mask.
inline std::vector<char> strip_mask(const MetricGrid& grid, int axis, double center, double half_width)
{
    std::vector<char> m(grid.size(), 0);
    for (std::size_t n = 0; n < grid.size(); ++n)
        m[n] = std::abs(detail::min_image(grid.point(n)(axis) - center, grid.length(axis))) < half_width ? 1 : 0;
    return m;
}

/// Regular nodes where the gradient bound is attained, grouped by grid adjacency.
struct EqualityLocus {
    std::vector<std::size_t> nodes;
    std::vector<std::vector<std::size_t>> components;
    std::vector<double> component_ricci_max;
    VerifyReport report;
};

inline EqualityLocus equality_locus(const ScalarField& u, const PhiFamily& phi, const Potential& pot,
                                    const VerifyOptions& opt = {}, std::optional<double> p_tol = std::nullopt)
{
    const MetricGrid& grid = *u.grid();
    const PFieldBundle b = p_function(u, phi, pot, true);
    EqualityLocus out;
    VerifyReport& r = out.report;
    r.tag = "thm5.1-locus";
    r.provenance = opt.provenance;
    r.tolerance = tol_grid(u, opt.c_tol);
    const double ptol = p_tol.value_or(r.tolerance);
    const double floor = opt.gradient_floor * b.grad_sq.max();
    std::vector<char> in(grid.size(), 0);
    for (std::size_t n = 0; n < grid.size(); ++n)
        if (std::abs(b.P[n]) <= ptol && b.grad_sq[n] > floor && b.grad_sq[n] > 0) {
            in[n] = 1;
            out.nodes.push_back(n);
        }
    std::vector<char> seen(grid.size(), 0);
    for (std::size_t s : out.nodes) {
        if (seen[s]) continue;
        std::vector<std::size_t> comp;
        std::vector<std::size_t> stack{s};
        seen[s] = 1;
        double ric = 0;
        while (!stack.empty()) {
            const std::size_t n = stack.back();
            stack.pop_back();
            comp.push_back(n);
            const Vec up = grid.g_inv(n) * b.grad_u.at(n);
            ric = std::max(ric, std::abs(up.dot(grid.ricci(n) * up)));
            for (int a = 0; a < grid.dim(); ++a)
                for (int st : {-1, 1}) {
                    const std::size_t m = grid.neighbor(n, a, st).index;
                    if (in[m] && !seen[m]) {
                        seen[m] = 1;
                        stack.push_back(m);
                    }
                }
        }
        std::sort(comp.begin(), comp.end());
        out.components.push_back(std::move(comp));
        out.component_ricci_max.push_back(ric);
    }
    double worst = 0;
    for (double v : out.component_ricci_max) worst = std::max(worst, v);
    r.set("locus_nodes", static_cast<double>(out.nodes.size()));
    r.set("components", static_cast<double>(out.components.size()));
    r.set("max_ricci_on_locus", worst);
    r.set("p_tolerance", ptol);
    r.pass = worst <= r.tolerance;
    if (out.nodes.empty()) r.notes.push_back("empty locus");
    return out;
}

} // namespace qlm
