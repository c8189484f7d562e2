#pragma once

#include "qlm/curvature.hpp"
#include "qlm/harness/analytic.hpp"
#include "qlm/harness/dump.hpp"
#include "qlm/harness/experiment.hpp"
#include "qlm/harness/manifest.hpp"
#include "qlm/ode.hpp"
#include "qlm/solver.hpp"
#include "qlm/verifier.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace qlm::harness {

enum class Mode { solve, verify, ode };

inline std::string to_string(Mode m)
{
    switch (m) {
    case Mode::solve: return "solve";
    case Mode::verify: return "verify";
    case Mode::ode: return "ode";
    }
    return "?";
}

struct RunOptions {
    std::string output_root;  // empty: $QLM_OUTPUT_ROOT, then "runs"
    bool write_files = true;
};

struct RunResult {
    RunManifest manifest;
    std::string directory;
    std::optional<SolveReport> solve;
    std::optional<SolveReport> profile_solve;
    std::vector<SolveReport> extra_solves;
    std::vector<std::pair<std::string, VerifyReport>> reports;
    bool ok = false;

    const VerifyReport& report(const std::string& name) const
    {
        for (const auto& r : reports)
            if (r.first == name || r.second.tag == name) return r.second;
        throw ConfigError("run has no check '" + name + "'");
    }
};

inline std::filesystem::path output_directory(const ExperimentConfig& cfg, const RunOptions& opt)
{
    namespace fs = std::filesystem;
    if (fs::path(cfg.output).is_absolute()) return cfg.output;
    std::string root = opt.output_root;
    if (root.empty())
        if (const char* env = std::getenv("QLM_OUTPUT_ROOT"); env && *env) root = env;
    if (root.empty()) root = "runs";
    return fs::path(root) / cfg.output;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct RunContext {
    const ExperimentConfig& cfg;
    GridPtr grid;
    PhiFamily phi = PhiFamily::linear();
    Potential pot = Potential::zero();
    const SolveReport* sol = nullptr;
    const SolveReport* profile1d = nullptr;
    std::vector<SolveReport>* extra = nullptr;
    std::optional<VerifyReport> thm11;
    std::filesystem::path dir;
    bool write = true;
    Json* files = nullptr;

    void add_file(const std::string& name, const std::string& role)
    {
        if (write) files->push_back(file_entry(dir, name, role));
    }
};

inline const ScalarField& require_solution(const RunContext& ctx)
{
    QLM_THROW_IF(!ctx.sol, DomainError, "no solution was computed");
    QLM_THROW_IF(!ctx.sol->converged, DomainError, "solve did not converge: " + ctx.sol->message);
    return ctx.sol->solution;
}

inline const VerifyReport& thm11_report(RunContext& ctx)
{
    if (!ctx.thm11) {
        VerifyOptions o = ctx.cfg.verify;
        ctx.thm11 = check_gradient_bound(require_solution(ctx), ctx.phi, ctx.pot, o);
    }
    return *ctx.thm11;
}

inline GridSpec refined(const GridSpec& s, int level)
{
    GridSpec r = s;
    for (int& n : r.shape) n <<= level;
    return r;
}

inline double node_count(const GridSpec& s, int level)
{
    double n = 1;
    for (int e : s.shape) n *= static_cast<double>(e) * std::ldexp(1.0, level);
    return n;
}

inline double max_profile_difference(const Profile& a, const Profile& b)
{
    double worst = 0;
    for (std::size_t i = 0; i < a.s.size(); ++i) {
        const long j = static_cast<long>(i) - static_cast<long>(a.origin) + static_cast<long>(b.origin);
        if (j < 0 || j >= static_cast<long>(b.s.size())) continue;
        const auto jj = static_cast<std::size_t>(j);
        if (std::abs(a.s[i] - b.s[jj]) > 1e-9) continue;
        worst = std::max(worst, std::abs(a.phi[i] - b.phi[jj]));
    }
    return worst;
}

inline VerifyReport check_zero_potential(const CheckSpec& cs, RunContext& ctx)
{
    VerifyOptions o = ctx.cfg.verify;
    o.potential_zero_tol = cs.number("potential_zero_tol", o.potential_zero_tol);
    std::vector<const SolveReport*> runs;
    if (ctx.sol && ctx.sol->converged) runs.push_back(ctx.sol);
    for (const auto& r : *ctx.extra)
        if (r.converged) runs.push_back(&r);
    VerifyReport agg;
    agg.tag = "thm1.3";
    agg.provenance = o.provenance;
    agg.tolerance = 10 * o.newton_tol;
    if (runs.empty()) {
        agg.notes.push_back("no converged solution to test");
        return agg;
    }
    int antecedent = 0, counter = 0;
    double worst_osc = 0, min_f = std::numeric_limits<double>::infinity();
    bool hyp = true;
    for (const auto* r : runs) {
        const VerifyReport z = zero_potential_experiment(r->solution, ctx.pot, o.newton_tol, o);
        hyp = hyp && z.hypotheses_met;
        min_f = std::min(min_f, z.get("min_F_of_u"));
        if (z.get("antecedent") > 0) {
            ++antecedent;
            worst_osc = std::max(worst_osc, z.get("oscillation"));
            if (!z.pass) ++counter;
        }
    }
    agg.set("counterexamples", counter);
    agg.set("solutions_checked", static_cast<double>(runs.size()));
    agg.set("antecedent_true", antecedent);
    agg.set("min_F_of_u", min_f);
    agg.set("max_oscillation_when_antecedent", worst_osc);
    agg.set("potential_zero_tol", o.potential_zero_tol);
    agg.hypotheses_met = hyp;
    if (!hyp) agg.notes.push_back("hypotheses unmet, diagnostic only");
    if (antecedent == 0) agg.notes.push_back("antecedent false for every solution: implication holds vacuously");
    agg.pass = counter == 0;
    return agg;
}

inline VerifyReport check_ricci(const CheckSpec& cs, RunContext& ctx)
{
    VerifyReport r;
    r.tag = "geometry-ricci";
    r.provenance = ctx.cfg.hash;
    const int levels = cs.integer("levels", 3);
    const double tol = cs.number("tol", 1e-3);
    const double lo = cs.number("order_lo", ctx.cfg.verify.order_lo), hi = cs.number("order_hi", ctx.cfg.verify.order_hi);
    QLM_THROW_IF(levels < 1, ConfigError, "check.ricci.levels must be >= 1");
    std::vector<double> hs, es;
    double max_gamma = 0, max_ric = 0;
    for (int k = 0; k < levels; ++k) {
        const GridPtr g = MetricGrid::build(refined(ctx.cfg.grid, k));
        const SymTensorField ric = discrete_ricci(g);
        double e = 0;
        for (std::size_t n = 0; n < g->size(); ++n) {
            e = std::max(e, (ric.at(n) - g->ricci(n)).cwiseAbs().maxCoeff() / g->g(n).cwiseAbs().maxCoeff());
            max_ric = std::max(max_ric, ric.at(n).cwiseAbs().maxCoeff());
            for (int a = 0; a < g->dim(); ++a)
                for (int b = 0; b < g->dim(); ++b)
                    for (int c = 0; c < g->dim(); ++c) max_gamma = std::max(max_gamma, std::abs(g->christoffel(n, a, b, c)));
        }
        hs.push_back(g->max_spacing());
        es.push_back(e);
        r.set("relative_error_" + std::to_string(k), e);
    }
    r.set("max_christoffel", max_gamma);
    r.set("max_discrete_ricci", max_ric);
    if (ctx.cfg.grid.kind == MetricKind::flat_torus) {
        r.tolerance = 0;
        r.pass = max_gamma == 0 && max_ric == 0;
        r.notes.push_back("flat torus: Christoffel symbols and Ricci must vanish exactly");
        return r;
    }
    r.tolerance = tol;
    r.orders = observed_orders(hs, es);
    r.pass = es.front() <= tol &&
             std::all_of(r.orders.begin(), r.orders.end(), [&](double p) { return p >= lo && p <= hi; });
    return r;
}

inline VerifyReport check_claim(const CheckSpec& cs, RunContext& ctx)
{
    VerifyOptions o = ctx.cfg.verify;
    o.claim_floor = cs.number("claim_floor", o.claim_floor);
    o.order_lo = cs.number("order_lo", o.order_lo);
    o.order_hi = cs.number("order_hi", o.order_hi);
    o.exact_tol = cs.number("exact_tol", o.exact_tol);
    const int levels = cs.integer("levels", 3);
    const auto field = analytic_field(cs.string("field", "sin-cos"), ctx.cfg.grid, 1.0, cs.number("offset", 2.0));
    std::vector<GridPtr> grids;
    for (int k = 0; k < levels; ++k) grids.push_back(MetricGrid::build(refined(ctx.cfg.grid, k)));
    VerifyReport r = lemma21_claim_residual(field.u, ctx.phi, grids, o);
    if (cs.boolean("linear_check", false)) {
        double worst = 0;
        for (const auto& g : grids)
            worst = std::max(worst, lemma21_claim_fields(ScalarField::sample(g, field.u), PhiFamily::linear(), o.claim_floor).discrepancy);
        r.set("linear_max_discrepancy", worst);
        if (worst > o.exact_tol) {
            r.pass = false;
            r.notes.push_back("linear family discrepancy above exact_tol");
        }
    }
    return r;
}

inline VerifyReport check_ode_profile(const CheckSpec& cs, RunContext& ctx)
{
    VerifyReport r;
    r.tag = "ode-first-integral";
    r.provenance = ctx.cfg.hash;
    const auto span = cs.numbers("span", {-8.0, 8.0});
    QLM_THROW_IF(span.size() != 2, ConfigError, "check.ode_profile.span needs two entries");
    const Profile p = integrate_profile(cs.number("phi0", 0.0), cs.number("dphi0", 0.0), {span[0], span[1]},
                                        cs.number("step", 1e-3), ctx.phi, ctx.pot, cs.number("cap", 1e6));
    const double drift_tol = cs.number("drift_tol", 1e-10);
    r.tolerance = drift_tol;
    r.set("max_drift", p.max_drift);
    r.set("energy_constant", p.energy_constant);
    r.set("samples", static_cast<double>(p.s.size()));
    r.set("truncated", p.truncated ? 1 : 0);
    r.set("monotone", p.monotone ? 1 : 0);
    r.notes.push_back("profile kind: " + to_string(p.kind));
    r.pass = p.max_drift <= drift_tol;
    const std::string ref = cs.string("reference", "none");
    if (ref == "tanh") {
        QLM_THROW_IF(ctx.pot.kind() != PotentialKind::allen_cahn, ConfigError, "reference tanh needs the allen-cahn potential");
        const double k = std::sqrt(ctx.pot.params()[0] / 2);
        double err = 0;
        for (std::size_t i = 0; i < p.s.size(); ++i) err = std::max(err, std::abs(p.phi[i] - std::tanh(k * p.s[i])));
        const double ref_tol = cs.number("reference_tol", 1e-8);
        r.set("reference_error", err);
        r.set("reference_tol", ref_tol);
        r.pass = r.pass && err <= ref_tol;
    }
    else QLM_THROW_IF(ref != "none", ConfigError, "check.ode_profile.reference must be none or tanh");
    if (ctx.write) {
        write_columns((ctx.dir / "profile.dat").string(), "profile", {"s", "phi", "dphi"}, {&p.s, &p.phi, &p.dphi}, ctx.cfg.seed);
        ctx.add_file("profile.dat", "ode profile (s, phi, dphi)");
    }
    return r;
}

inline VerifyReport check_ode_equality(const CheckSpec& cs, RunContext& ctx)
{
    VerifyReport r;
    r.tag = "thm5.1-profile";
    r.provenance = ctx.cfg.hash;
    const auto span = cs.numbers("span", {-8.0, 8.0});
    QLM_THROW_IF(span.size() != 2, ConfigError, "check.ode_equality.span needs two entries");
    const double phi0 = cs.number("phi0", 0.0), step = cs.number("step", 1e-3);
    const int sign = cs.integer("sign", 1);
    const Profile p = equality_profile(ctx.phi, ctx.pot, phi0, sign, {span[0], span[1]}, step);
    const QTransform q = q_transform(p);
    const double drift_tol = cs.number("drift_tol", 1e-10);
    const double unit_tol = cs.number("unit_tol", 1e-8);
    const double lap_tol = cs.number("laplacian_tol", 1e-6);
    r.tolerance = unit_tol;
    r.set("max_drift", p.max_drift);
    r.set("max_unit_defect", q.max_unit_defect);
    r.set("max_discrete_laplacian", q.max_second_difference);
    r.set("max_laplacian_over_h2", q.max_laplacian);
    r.set("s_min", p.s.front());
    r.set("s_max", p.s.back());
    r.set("truncated", p.truncated ? 1 : 0);
    r.set("drift_tol", drift_tol);
    r.set("laplacian_tol", lap_tol);
    r.pass = p.max_drift <= drift_tol && q.max_unit_defect <= unit_tol && q.max_second_difference <= lap_tol;
    const double ivp_tol = cs.number("ivp_tol", 0.0);
    if (ivp_tol > 0) {
        const double g0 = equality_speed_squared(ctx.phi, ctx.pot, phi0);
        const Profile ivp = integrate_profile(phi0, sign * std::sqrt(g0), {p.s.front(), p.s.back()}, step, ctx.phi, ctx.pot);
        const double d = max_profile_difference(p, ivp);
        r.set("ivp_difference", d);
        r.pass = r.pass && d <= ivp_tol;
    }
    if (ctx.write) {
        write_columns((ctx.dir / "equality_profile.dat").string(), "equality_profile", {"s", "phi", "dphi"},
                      {&p.s, &p.phi, &p.dphi}, ctx.cfg.seed);
        write_columns((ctx.dir / "q_transform.dat").string(), "q_transform", {"s", "w", "dw"}, {&q.s, &q.w, &q.dw},
                      ctx.cfg.seed);
        ctx.add_file("equality_profile.dat", "equality profile (s, phi, dphi)");
        ctx.add_file("q_transform.dat", "Q-transform (s, w, dw)");
    }
    return r;
}

inline VerifyReport check_period(const CheckSpec& cs, RunContext& ctx, bool against_solution)
{
    VerifyReport r;
    r.provenance = ctx.cfg.hash;
    const double step = cs.number("step", 1e-3);
    if (against_solution) {
        r.tag = "ode-period-crosscheck";
        const ScalarField& u = require_solution(ctx);
        QLM_THROW_IF(u.grid()->dim() != 1 || u.grid()->kind() != MetricKind::flat_torus, ConfigError,
                     "period_crosscheck needs a circle grid");
        const double L = u.grid()->length(0);
        const double e = energy_for_period(ctx.phi, ctx.pot, L, 0.0, step);
        const double mean_p = thm11_report(ctx).get("mean_P");
        const double rel = std::abs(mean_p - 2 * e) / std::abs(2 * e);
        r.tolerance = cs.number("tol", 1e-4);
        r.set("relative_difference", rel);
        r.set("e_L", e);
        r.set("two_e_L", 2 * e);
        r.set("mean_P", mean_p);
        r.set("period", L);
        r.pass = rel <= r.tolerance;
        return r;
    }
    r.tag = "ode-period-map";
    const double period = cs.number("period", 10.0), center = cs.number("center", 0.0);
    const double e = energy_for_period(ctx.phi, ctx.pot, period, center, step);
    const double T = period_map(ctx.phi, ctx.pot, e, center, step);
    r.tolerance = cs.number("tol", 1e-8);
    r.set("period_error", std::abs(T - period));
    r.set("energy", e);
    r.set("two_energy", 2 * e);
    r.set("period_measured", T);
    r.pass = std::abs(T - period) <= r.tolerance;
    return r;
}

inline VerifyReport run_check(const CheckSpec& cs, RunContext& ctx)
{
    const std::string& n = cs.name;
    VerifyOptions o = ctx.cfg.verify;
    if (n == "gradient_bound") {
        o.c_tol = cs.number("c_tol", o.c_tol);
        if (o.c_tol == ctx.cfg.verify.c_tol) return thm11_report(ctx);
        return check_gradient_bound(require_solution(ctx), ctx.phi, ctx.pot, o);
    }
    if (n == "p_constancy") {
        const VerifyReport& b = thm11_report(ctx);
        VerifyReport r;
        r.tag = "p-constancy";
        r.provenance = o.provenance;
        r.tolerance = cs.number("tol", 1e-5);
        r.set("relative_stddev_P", b.get("relative_stddev_P"));
        r.set("stddev_P", b.get("stddev_P"));
        r.set("mean_P", b.get("mean_P"));
        r.set("max_P", b.get("max_P"));
        r.set("min_P", b.get("min_P"));
        r.hypotheses_met = b.hypotheses_met;
        r.pass = b.get("relative_stddev_P") <= r.tolerance;
        return r;
    }
    if (n == "period_crosscheck") return check_period(cs, ctx, true);
    if (n == "period_map") return check_period(cs, ctx, false);
    if (n == "lemma21_inequality") {
        o.c_tol = cs.number("c_tol", o.c_tol);
        o.gradient_floor = cs.number("gradient_floor", o.gradient_floor);
        return lemma21_inequality_residual(require_solution(ctx), ctx.phi, ctx.pot, o);
    }
    if (n == "lemma31") {
        o.c_tol = cs.number("c_tol", o.c_tol);
        return lemma31_residual(require_solution(ctx), ctx.phi, ctx.pot, o);
    }
    if (n == "zero_potential") return check_zero_potential(cs, ctx);
    if (n == "equality_locus") {
        o.c_tol = cs.number("c_tol", o.c_tol);
        o.gradient_floor = cs.number("gradient_floor", o.gradient_floor);
        std::optional<double> p_tol;
        if (cs.raw.count("p_tol")) p_tol = cs.number("p_tol", 0.0);
        EqualityLocus loc = equality_locus(require_solution(ctx), ctx.phi, ctx.pot, o, p_tol);
        return loc.report;
    }
    if (n == "harnack") {
        const ScalarField& u = require_solution(ctx);
        std::vector<double> mid;
        for (int a = 0; a < u.grid()->dim(); ++a) mid.push_back(0.5 * u.grid()->length(a));
        const auto c = cs.numbers("center", mid);
        QLM_THROW_IF(static_cast<int>(c.size()) != u.grid()->dim(), ConfigError, "check.harnack.center needs one entry per axis");
        Vec center(u.grid()->dim());
        for (int a = 0; a < u.grid()->dim(); ++a) center(a) = c[static_cast<std::size_t>(a)];
        return harnack_diagnostic(u, ctx.phi, ctx.pot, center, cs.number("radius", 1.0), cs.number("p", 2.0), o);
    }
    if (n == "abp") {
        const ScalarField& u = require_solution(ctx);
        const int axis = cs.integer("axis", 0);
        QLM_THROW_IF(axis < 0 || axis >= u.grid()->dim(), ConfigError, "check.abp.axis out of range");
        const double L = u.grid()->length(axis);
        const double hw = cs.number("half_width", 0.05 * L);
        const auto mask = strip_mask(*u.grid(), axis, cs.number("center", 0.5 * L), hw);
        return abp_diagnostic(u, ctx.pot, mask, cs.number("radius", 2 * hw), cs.number("theta", 0.25),
                              cs.number("boundary_tol", 1e-6), o);
    }
    if (n == "quasi1d_rows") {
        const ScalarField& u = require_solution(ctx);
        QLM_THROW_IF(!ctx.profile1d || !ctx.profile1d->converged, DomainError, "quasi1d_rows needs a converged profile_config solve");
        const MetricGrid& g = *u.grid();
        const ScalarField& u1 = ctx.profile1d->solution;
        QLM_THROW_IF(u1.size() != static_cast<std::size_t>(g.extent(0)), ConfigError,
                     "quasi1d_rows: 1D solution does not match the first grid axis");
        VerifyReport r;
        r.tag = "quasi-1d";
        r.provenance = o.provenance;
        r.tolerance = cs.number("tol", 1e-8);
        double dev = 0, spread = 0;
        std::vector<double> lo(u1.size(), std::numeric_limits<double>::infinity()), hi(u1.size(), -lo[0]);
        for (std::size_t k = 0; k < g.size(); ++k) {
            const auto i = static_cast<std::size_t>(g.coords(k)[0]);
            dev = std::max(dev, std::abs(u[k] - u1[i]));
            lo[i] = std::min(lo[i], u[k]);
            hi[i] = std::max(hi[i], u[k]);
        }
        for (std::size_t i = 0; i < u1.size(); ++i) spread = std::max(spread, hi[i] - lo[i]);
        r.set("max_row_deviation", dev);
        r.set("max_row_spread", spread);
        r.pass = dev <= r.tolerance;
        return r;
    }
    if (n == "solver_hygiene") {
        const ScalarField& u = require_solution(ctx);
        (void)u;
        const SolveReport& s = *ctx.sol;
        VerifyReport r;
        r.tag = "solver-hygiene";
        r.provenance = o.provenance;
        const double bound = cs.number("tail_bound", 0.0);
        std::size_t ok = 0;
        double worst_ratio = 0;
        for (const auto& c : s.jacobian_checks) {
            ok += c.consistent ? 1 : 0;
            worst_ratio = std::max(worst_ratio, std::abs(std::log2(std::max(c.ratio, 1e-300) / 10.0)));
        }
        const auto tails = quadratic_tail_constants(s.residual_history, 2, ctx.cfg.solve.newton_tol);
        double tail = 0;
        for (double t : tails) tail = std::max(tail, t);
        r.tolerance = bound;
        r.set("jacobian_checks", static_cast<double>(s.jacobian_checks.size()));
        r.set("jacobian_consistent", static_cast<double>(ok));
        r.set("max_log2_ratio_offset", worst_ratio);
        r.set("tail_constant_max", tail);
        r.set("newton_iterations", s.iterations);
        r.set("final_residual", s.final_residual_maxnorm);
        // One directional-derivative check per accepted Newton iterate.
        const bool jac_ok = !ctx.cfg.solve.check_jacobian ||
                            (ok == s.jacobian_checks.size() && s.jacobian_checks.size() >= static_cast<std::size_t>(s.iterations));
        if (s.iterations == 0) r.notes.push_back("initial guess already converged: no iterates to check");
        r.pass = jac_ok && (bound <= 0 || (!tails.empty() && tail <= bound));
        if (bound <= 0) r.notes.push_back("tail_bound = 0: quadratic tail recorded, not enforced");
        return r;
    }
    if (n == "liouville") {
        SolveConfig base = ctx.cfg.solve;
        base.continuation.reset();
        base.initial_guess.amplitude = cs.number("amplitude", base.initial_guess.amplitude);
        const int starts = cs.integer("starts", 5);
        const bool all = cs.boolean("require_all", true);
        VerifyReport r = liouville_experiment(ctx.phi, ctx.pot, ctx.grid, starts,
                                              static_cast<std::uint64_t>(cs.number("seed", static_cast<double>(ctx.cfg.seed))),
                                              base, o, ctx.extra);
        r.provenance = o.provenance;
        if (all && r.get("converged") < starts) {
            r.pass = false;
            r.notes.push_back("require_all: not every start converged");
        }
        return r;
    }
    if (n == "claim_identity") return check_claim(cs, ctx);
    if (n == "ricci") return check_ricci(cs, ctx);
    if (n == "ellipticity") {
        const std::string which = cs.string("assumption", "B");
        const int samples = cs.integer("samples", 20000);
        const auto seed = static_cast<std::uint64_t>(cs.number("seed", static_cast<double>(ctx.cfg.seed)));
        const double spread = cs.number("max_spread", kDefaultEllipticitySpread);
        const int dim = ctx.cfg.grid.shape.empty() ? 2 : static_cast<int>(ctx.cfg.grid.shape.size());
        EllipticityReport e;
        if (which == "A") e = check_assumption_A(ctx.phi, cs.number("p", 2.0), cs.number("a", 0.0), samples, seed, dim, spread);
        else if (which == "B") e = check_assumption_B(ctx.phi, samples, seed, dim, spread);
        else throw ConfigError("check.ellipticity.assumption must be A or B");
        VerifyReport r;
        r.tag = "assumption-" + which;
        r.provenance = o.provenance;
        r.tolerance = spread;
        r.set("c1", e.c1);
        r.set("c2", e.c2);
        r.set("phi_prime_c1", e.phi_prime_c1);
        r.set("phi_prime_c2", e.phi_prime_c2);
        r.set("form_c1", e.form_c1);
        r.set("form_c2", e.form_c2);
        r.pass = e.pass;
        if (!e.failure.empty()) r.notes.push_back(e.failure);
        return r;
    }
    if (n == "ode_profile") return check_ode_profile(cs, ctx);
    if (n == "ode_equality") return check_ode_equality(cs, ctx);
    throw ConfigError("unknown check '" + n + "'");
}

inline std::vector<double> profile_coordinates(const ScalarField& u)
{
    std::vector<double> s(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) s[i] = u.grid()->coordinate(0, static_cast<int>(i));
    return s;
}

/// Solves the config named by profile_config on the first axis of `target`.
inline SolveReport solve_profile_source(const ExperimentConfig& cfg, const GridSpec& target)
{
    QLM_THROW_IF(target.kind != MetricKind::flat_torus, ConfigError, "profile-extension needs a flat torus");
    ExperimentConfig src = load_experiment(cfg.profile.config_path);
    QLM_THROW_IF(src.solve.initial_guess.kind == InitialGuess::Kind::profile, ConfigError,
                 cfg.profile.config_path + ": a profile source cannot itself use profile-extension");
    src.grid = GridSpec{MetricKind::flat_torus, {}, {target.shape[0]}, {target.lengths[0]}};
    return newton_solve(src.solve, src.family.build(), src.potential.build(), MetricGrid::build(src.grid));
}

inline Json describe_config(const ExperimentConfig& cfg)
{
    Json j;
    if (!cfg.grid.shape.empty()) {
        Json g;
        g["kind"] = to_string(cfg.grid.kind);
        g["params"] = cfg.grid.params;
        g["shape"] = cfg.grid.shape;
        g["lengths"] = cfg.grid.lengths;
        j["grid"] = g;
    }
    const PhiFamily phi = cfg.family.build();
    j["family"] = {{"kind", phi.name()}, {"params", phi.params()}};
    const Potential pot = cfg.potential.build();
    j["potential"] = {{"kind", pot.name()}, {"params", pot.params()}, {"nonneg", pot.nonneg()}, {"convex", pot.convex()}};
    const SolveConfig& s = cfg.solve;
    Json sj;
    sj["newton_tol"] = s.newton_tol;
    sj["max_newton_iters"] = s.max_newton_iters;
    sj["backtrack"] = s.backtrack;
    sj["min_step"] = s.min_step;
    sj["linear_solver"] = to_string(s.linear_solver);
    sj["linear_tol"] = s.linear_tol > 0 ? s.linear_tol : 1e-2 * s.newton_tol;
    sj["pin"] = to_string(s.pin);
    sj["check_jacobian"] = s.check_jacobian;
    sj["jacobian_seed"] = s.jacobian_seed;
    sj["jacobian_ratio_band"] = {s.jacobian_ratio_lo, s.jacobian_ratio_hi};
    const InitialGuess& g = s.initial_guess;
    sj["initial_guess"] = {{"kind", to_string(g.kind)}, {"amplitude", g.amplitude}, {"value", g.value},
                           {"seed", g.seed},           {"mode", g.mode},           {"axis", g.axis}};
    if (!cfg.profile.config_path.empty()) sj["initial_guess"]["profile_config"] = cfg.profile.config_path;
    if (!cfg.profile.file_path.empty()) sj["initial_guess"]["file"] = cfg.profile.file_path;
    if (s.continuation) {
        const auto& c = *s.continuation;
        sj["continuation"] = {{"parameter", c.parameter}, {"start", c.start}, {"end", c.end}, {"steps", c.steps},
                              {"max_bisections", c.max_bisections}};
    }
    j["solve_config"] = sj;
    const VerifyOptions& v = cfg.verify;
    j["tolerances"] = {{"c_tol", v.c_tol},
                       {"gradient_floor", v.gradient_floor},
                       {"claim_floor", v.claim_floor},
                       {"exact_tol", v.exact_tol},
                       {"order_lo", v.order_lo},
                       {"order_hi", v.order_hi},
                       {"potential_zero_tol", v.potential_zero_tol},
                       {"newton_tol", v.newton_tol},
                       {"jacobian_deltas", {1e-4, 1e-5}}};
    return j;
}

inline void dump_solution(RunContext& ctx, const ScalarField& u, const std::string& stem)
{
    if (!ctx.write) return;
    const std::string name = stem + ".dat";
    std::optional<ScalarField> P;
    try {
        P = p_function(u, ctx.phi, ctx.pot).P;
    }
    catch (const DomainError&) {
    }
    if (u.grid()->dim() == 1) {
        if (P) write_field_dump((ctx.dir / name).string(), stem, {{"u", &u}, {"P", &*P}}, ctx.cfg.seed);
        else write_field_dump((ctx.dir / name).string(), stem, {{"u", &u}}, ctx.cfg.seed);
        ctx.add_file(name, P ? "1D field (s, u, P)" : "1D field (s, u)");
        return;
    }
    write_field_dump((ctx.dir / name).string(), stem, {{"u", &u}}, ctx.cfg.seed);
    ctx.add_file(name, "grid field, row-major (x, y, u)");
    if (P) {
        const std::string pn = stem + "_P.dat";
        write_field_dump((ctx.dir / pn).string(), stem + "_P", {{"P", &*P}}, ctx.cfg.seed);
        ctx.add_file(pn, "P-function, row-major (x, y, P)");
    }
}

} // namespace detail

/// Builds the grid, solves when needed, runs the declared checks in order and
/// writes the manifest plus field dumps. A failing or throwing check never stops
/// the ones after it.
inline RunResult run(const ExperimentConfig& cfg, Mode mode, const RunOptions& opt = {})
{
    namespace fs = std::filesystem;
    const auto t_start = detail::Clock::now();
    RunResult res;
    const fs::path dir = output_directory(cfg, opt);
    res.directory = dir.string();
    if (opt.write_files) fs::create_directories(dir);

    Json files = Json::array();
    detail::RunContext ctx{cfg};
    ctx.phi = cfg.family.build();
    ctx.pot = cfg.potential.build();
    ctx.dir = dir;
    ctx.write = opt.write_files;
    ctx.files = &files;
    ctx.extra = &res.extra_solves;

    std::vector<const CheckSpec*> selected;
    for (const auto& c : cfg.checks) {
        const bool is_ode = check_info(c.name).ode;
        if (mode == Mode::verify || (mode == Mode::ode && is_ode)) selected.push_back(&c);
    }
    std::vector<std::string> warnings = cfg.warnings;
    if (mode == Mode::ode && selected.empty()) warnings.push_back("config declares no ODE checks");

    bool needs_grid = mode == Mode::solve, needs_solution = mode == Mode::solve;
    for (const auto* c : selected) {
        needs_grid = needs_grid || !check_info(c->name).ode;
        needs_solution = needs_solution || check_info(c->name).needs_solution;
    }
    if (needs_grid) ctx.grid = cfg.build_grid();

    Json timing = Json::object();
    if (needs_solution) {
        const auto t0 = detail::Clock::now();
        SolveConfig sc = cfg.solve;
        using K = InitialGuess::Kind;
        if (sc.initial_guess.kind == K::field) {
            const DumpData d = read_dump(cfg.profile.file_path);
            sc.initial_guess.values = d.column("u");
        }
        else if (sc.initial_guess.kind == K::profile) {
            if (!cfg.profile.config_path.empty()) {
                res.profile_solve = detail::solve_profile_source(cfg, cfg.grid);
                QLM_THROW_IF(!res.profile_solve->converged, DomainError,
                             "profile source " + cfg.profile.config_path + " did not converge: " + res.profile_solve->message);
                sc.initial_guess.profile_s = detail::profile_coordinates(res.profile_solve->solution);
                const auto v = res.profile_solve->solution.values();
                sc.initial_guess.profile_u.assign(v.begin(), v.end());
                ctx.profile1d = &*res.profile_solve;
            }
            else {
                const DumpData d = read_dump(cfg.profile.file_path);
                sc.initial_guess.profile_s = d.columns.front();
                sc.initial_guess.profile_u = d.column("u");
            }
        }
        res.solve = newton_solve(sc, ctx.phi, ctx.pot, ctx.grid);
        ctx.sol = &*res.solve;
        timing["solve_s"] = detail::seconds_since(t0);
        detail::dump_solution(ctx, res.solve->solution, "solution");
    }

    Json checks = Json::array();
    Json check_times = Json::object();
    bool ok = !res.solve || res.solve->converged;
    for (const auto* cs : selected) {
        const auto t0 = detail::Clock::now();
        cs->used.clear();
        VerifyReport r;
        try {
            r = detail::run_check(*cs, ctx);
        }
        catch (const Error& e) {
            r = VerifyReport{};
            r.tag = cs->name;
            r.pass = false;
            r.notes.push_back(std::string("error: ") + e.what());
        }
        check_times[cs->name] = detail::seconds_since(t0);
        Json j = to_json(r, cs->name);
        Json params = Json::object();
        for (const auto& [k, v] : cs->used) params[k] = to_json(v);
        j["params"] = params;
        if (ctx.write && cfg.dump_residuals && r.residual_field && r.residual_field->grid()) {
            const std::string fn = cs->name + "_field.dat";
            write_field_dump((dir / fn).string(), cs->name, {{"value", &*r.residual_field}}, cfg.seed);
            ctx.add_file(fn, "per-node field of " + r.tag);
            j["field_file"] = fn;
        }
        checks.push_back(j);
        ok = ok && r.status() != CheckStatus::fail;
        res.reports.emplace_back(cs->name, std::move(r));
    }
    timing["checks_s"] = check_times;

    Json& m = res.manifest.doc;
    m["artifact"] = {{"name", "qlm"}, {"version", kArtifactVersion}};
    m["command"] = to_string(mode);
    m["config"] = {{"path", cfg.path}, {"hash", hex64(cfg.hash)}};
    m["seed"] = cfg.seed;
    m["description"] = cfg.description;
    const Json described = detail::describe_config(cfg);
    for (const auto& [k, v] : described.items()) m[k] = v;
    if (ctx.grid) m["grid"]["hash"] = hex64(ctx.grid->hash());
    if (res.profile_solve) m["profile_solve"] = to_json(*res.profile_solve);
    m["solve"] = res.solve ? to_json(*res.solve) : Json();
    m["checks"] = checks;
    m["warnings"] = warnings;
    m["files"] = files;
    m["all_ok"] = ok;
    m["output_directory"] = dir.string();
    timing["total_s"] = detail::seconds_since(t_start);
    m["timing"] = timing;
    res.ok = ok;
    if (opt.write_files) res.manifest.save((dir / "manifest.json").string());
    return res;
}

inline RunResult run(const std::string& config_path, Mode mode = Mode::verify, const RunOptions& opt = {})
{
    return run(load_experiment(config_path), mode, opt);
}

struct StudyRow {
    int level = 0;
    std::vector<int> shape;
    double h = 0;
    double error = 0;
    double tail_constant = 0;
    std::vector<double> residual_history;  // manufactured only
};

struct StudyTable {
    std::string quantity, field;
    std::vector<StudyRow> rows;
    std::vector<double> orders;  // consecutive levels
    double slope = std::nan("");  // least squares of log error against log h
    bool exact = false;
    RunManifest manifest;
};

/// Least-squares slope of log(e) against log(h) over the positive errors.
inline double least_squares_slope(const std::vector<double>& h, const std::vector<double>& e)
{
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (!(e[i] > 0)) continue;
        const double x = std::log(h[i]), y = std::log(e[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    if (n < 2) return std::nan("");
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Dyadic refinement of the config's grid; the measured quantity is one of
/// gradient, laplacian (operator errors against the analytic field), claim (the
/// d-tensor identity) or manufactured (solver error against a known solution).
inline StudyTable convergence_study(const ExperimentConfig& cfg, int levels, const RunOptions& opt = {})
{
    namespace fs = std::filesystem;
    const auto t_start = detail::Clock::now();
    QLM_THROW_IF(levels < 3, ConfigError, "study: levels must be >= 3, got " + std::to_string(levels));
    QLM_THROW_IF(cfg.grid.shape.empty(), ConfigError, cfg.path + ": missing required key 'shape' in [grid]");
    const StudySpec& st = cfg.study;
    const double finest = detail::node_count(cfg.grid, levels - 1);
    QLM_THROW_IF(finest > st.node_cap, ConfigError,
                 "study: finest level has " + std::to_string(static_cast<long long>(finest)) + " nodes, above node_cap " +
                     std::to_string(static_cast<long long>(st.node_cap)));
    const PhiFamily phi = cfg.family.build();
    const Potential pot = cfg.potential.build();
    const AnalyticField f = analytic_field(st.field, cfg.grid, st.amplitude, st.offset);

    StudyTable t;
    t.quantity = st.quantity;
    t.field = st.field;
    std::vector<double> hs, es;
    for (int k = 0; k < levels; ++k) {
        const GridSpec spec = detail::refined(cfg.grid, k);
        const GridPtr g = MetricGrid::build(spec);
        const ScalarField u = ScalarField::sample(g, f.u);
        StudyRow row;
        row.level = k;
        row.shape = spec.shape;
        row.h = g->max_spacing();
        if (st.quantity == "gradient") {
            const VectorField du = covariant_gradient(u);
            for (std::size_t n = 0; n < g->size(); ++n)
                row.error = std::max(row.error, (du.at(n) - f.grad(g->point(n))).cwiseAbs().maxCoeff());
        }
        else if (st.quantity == "laplacian") {
            const ScalarField lap = laplace_beltrami(u);
            for (std::size_t n = 0; n < g->size(); ++n)
                row.error = std::max(row.error, std::abs(lap[n] - f.laplacian(g->point(n))));
        }
        else if (st.quantity == "claim") {
            row.error = lemma21_claim_fields(u, phi, cfg.verify.claim_floor).discrepancy;
        }
        else if (st.quantity == "manufactured") {
            QLM_THROW_IF(st.field != "sin-x", ConfigError, "study: manufactured needs field sin-x");
            const double A = st.amplitude, c = st.offset, k0 = 2 * std::numbers::pi / spec.lengths[0];
            const auto forcing = manufactured_forcing_axis0(
                g, phi, pot, [&](double x) { return A * std::sin(k0 * x) + c; },
                [&](double x) { return A * k0 * std::cos(k0 * x); }, [&](double x) { return -A * k0 * k0 * std::sin(k0 * x); });
            const SolveReport s = newton_solve(cfg.solve, phi, pot, g, forcing);
            QLM_THROW_IF(!s.converged, DomainError, "study: manufactured solve failed at level " + std::to_string(k) + ": " + s.message);
            for (std::size_t n = 0; n < g->size(); ++n) row.error = std::max(row.error, std::abs(s.solution[n] - u[n]));
            const auto tails = quadratic_tail_constants(s.residual_history, 2, cfg.solve.newton_tol);
            row.tail_constant = tails.empty() ? 0.0 : *std::max_element(tails.begin(), tails.end());
            row.residual_history = s.residual_history;
        }
        else throw ConfigError("study.quantity: unknown quantity '" + st.quantity + "'");
        hs.push_back(row.h);
        es.push_back(row.error);
        t.rows.push_back(row);
    }
    t.exact = std::all_of(es.begin(), es.end(), [&](double e) { return e <= st.exact_tol; });
    if (!t.exact) {
        t.orders = observed_orders(hs, es);
        t.slope = least_squares_slope(hs, es);
    }

    const fs::path dir = output_directory(cfg, opt);
    Json rows = Json::array();
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        Json jr = {{"level", r.level}, {"shape", r.shape}, {"h", json_number(r.h)}, {"error", json_number(r.error)}};
        if (st.quantity == "manufactured") {
            jr["tail_constant"] = json_number(r.tail_constant);
            Json hist = Json::array();
            for (double v : r.residual_history) hist.push_back(json_number(v));
            jr["residual_history"] = hist;
        }
        rows.push_back(jr);
    }
    Json& m = t.manifest.doc;
    m["artifact"] = {{"name", "qlm"}, {"version", kArtifactVersion}};
    m["command"] = "study";
    m["config"] = {{"path", cfg.path}, {"hash", hex64(cfg.hash)}};
    m["seed"] = cfg.seed;
    const Json described = detail::describe_config(cfg);
    for (const auto& [k, v] : described.items()) m[k] = v;
    m["study"] = {{"quantity", st.quantity}, {"field", st.field}, {"levels", levels}, {"node_cap", st.node_cap},
                  {"amplitude", st.amplitude}, {"offset", st.offset}, {"exact_tol", st.exact_tol}};
    Json orders = Json::array();
    for (double o : t.orders) orders.push_back(json_number(o));
    m["table"] = {{"rows", rows},
                  {"orders", orders},
                  {"slope", t.exact ? Json("exact") : json_number(t.slope)},
                  {"status", t.exact ? "exact" : "measured"}};
    m["warnings"] = cfg.warnings;
    Json files = Json::array();
    m["output_directory"] = dir.string();
    if (opt.write_files) {
        fs::create_directories(dir);
        std::ofstream out(dir / "study.dat");
        out << "# qlm-study quantity=" << st.quantity << " field=" << st.field << " columns=level,h,error,order\n";
        for (std::size_t i = 0; i < t.rows.size(); ++i)
            out << t.rows[i].level << ' ' << detail::fmt(t.rows[i].h) << ' ' << detail::fmt(t.rows[i].error) << ' '
                << (i == 0 || t.exact ? std::string("nan") : detail::fmt(t.orders[i - 1])) << '\n';
        out.close();
        files.push_back(file_entry(dir, "study.dat", "convergence table (level, h, error, order)"));
    }
    m["files"] = files;
    m["all_ok"] = true;
    m["timing"] = {{"total_s", detail::seconds_since(t_start)}};
    if (opt.write_files) t.manifest.save((dir / "manifest.json").string());
    return t;
}

inline StudyTable convergence_study(const std::string& config_path, int levels, const RunOptions& opt = {})
{
    return convergence_study(load_experiment(config_path), levels, opt);
}

} // namespace qlm::harness
