#pragma once

#include "qlm/nonlinearity.hpp"
#include "qlm/operators.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace qlm {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// One instance of div(Phi'(|grad u|^2) grad u) = F'(u) + forcing on a grid.
/// `forcing` is empty except for manufactured-solution runs.
struct Problem {
    GridPtr grid;
    PhiFamily phi;
    Potential pot;
    std::vector<double> forcing;
};

enum class LinearSolverKind { direct_sparse, iterative };

inline LinearSolverKind parse_linear_solver(std::string_view tag)
{
    if (tag == "direct-sparse") return LinearSolverKind::direct_sparse;
    if (tag == "iterative" || tag == "conjugate-residual") return LinearSolverKind::iterative;
    throw ConfigError("unknown linear_solver '" + std::string(tag) + "'");
}

inline std::string to_string(LinearSolverKind k)
{
    return k == LinearSolverKind::direct_sparse ? "direct-sparse" : "iterative";
}

enum class PinKind { automatic, none, mean, phase };

inline PinKind parse_pin(std::string_view tag)
{
    if (tag == "auto") return PinKind::automatic;
    if (tag == "none") return PinKind::none;
    if (tag == "mean") return PinKind::mean;
    if (tag == "phase") return PinKind::phase;
    throw ConfigError("unknown pin '" + std::string(tag) + "'");
}

inline std::string to_string(PinKind k)
{
    switch (k) {
    case PinKind::automatic: return "auto";
    case PinKind::none: return "none";
    case PinKind::mean: return "mean";
    case PinKind::phase: return "phase";
    }
    return "?";
}

struct InitialGuess {
    enum class Kind { zero, constant, random, sin_mode, field, profile };
    Kind kind = Kind::zero;
    double amplitude = 0.5;
    double value = 0.0;          // constant value, or offset added to sin-mode
    std::uint64_t seed = 1;
    int mode = 1;
    int axis = 0;
    std::vector<double> values;  // field
    std::vector<double> profile_s, profile_u;
    bool profile_periodic = true;
};

inline std::string to_string(InitialGuess::Kind k)
{
    switch (k) {
    case InitialGuess::Kind::zero: return "zero";
    case InitialGuess::Kind::constant: return "constant";
    case InitialGuess::Kind::random: return "random";
    case InitialGuess::Kind::sin_mode: return "sin-mode";
    case InitialGuess::Kind::field: return "field-file";
    case InitialGuess::Kind::profile: return "profile-extension";
    }
    return "?";
}

struct Continuation {
    std::string parameter;  // "length0" or "potential_scale"
    double start = 0;
    double end = 0;
    int steps = 10;
    int max_bisections = 8;
};

struct SolveConfig {
    double newton_tol = 1e-10;
    int max_newton_iters = 50;
    double backtrack = 0.5;
    double min_step = 1.0 / 1024;
    LinearSolverKind linear_solver = LinearSolverKind::direct_sparse;
    double linear_tol = 0;  // 0 selects 1e-2 * newton_tol
    InitialGuess initial_guess;
    std::optional<Continuation> continuation;
    PinKind pin = PinKind::automatic;
    bool check_jacobian = true;
    std::uint64_t jacobian_seed = 12345;
    double jacobian_ratio_lo = 5.0;
    double jacobian_ratio_hi = 20.0;

    void validate() const
    {
        QLM_THROW_IF(!(newton_tol > 0), ConfigError, "solve: newton_tol must be > 0");
        QLM_THROW_IF(max_newton_iters < 1, ConfigError, "solve: max_newton_iters must be >= 1");
        QLM_THROW_IF(!(backtrack > 0 && backtrack < 1), ConfigError, "solve: backtrack factor must lie in (0, 1)");
        QLM_THROW_IF(!(min_step > 0 && min_step <= 1), ConfigError, "solve: min_step must lie in (0, 1]");
        if (continuation) {
            QLM_THROW_IF(continuation->parameter != "length0" && continuation->parameter != "potential_scale", ConfigError,
                         "solve: continuation parameter must be length0 or potential_scale");
            QLM_THROW_IF(continuation->steps < 1, ConfigError, "solve: continuation steps must be >= 1");
        }
    }
};

/// Directional-derivative check of the assembled Jacobian at one iterate.
struct JacobianCheck {
    int iteration = 0;
    double err_large = 0;  // delta = 1e-4
    double err_small = 0;  // delta = 1e-5
    double ratio = 0;
    double jv_norm = 0;
    bool consistent = false;
};

struct SolveReport {
    bool converged = false;
    double final_residual_maxnorm = std::numeric_limits<double>::infinity();
    int iterations = 0;
    int continuation_steps = 0;
    ScalarField solution;
    double jacobian_condition_estimate = 0;
    std::vector<double> residual_history;
    std::vector<JacobianCheck> jacobian_checks;
    std::string pin;
    double compatibility_defect = 0;  // |sum F'(u) w| / volume
    std::string message;
    std::uint64_t solution_hash = 0;
};

namespace detail {

// Face flux and the tensor dF/dsigma needed for the Jacobian.
struct FaceFlux {
    double flux;
    Vec dflux;  // derivative with respect to covariant sigma
};

inline FaceFlux face_flux(const MetricGrid& grid, const PhiFamily& phi, const Vec& sigma, std::size_t node, int axis,
                          bool with_derivative)
{
    const Mat ginv = grid.face_g_inv(node, axis);
    const Vec up = ginv * sigma;
    const double t = std::max(0.0, sigma.dot(up));
    const double sq = grid.face_sqrt_det_g(node, axis);
    FaceFlux out{};
    try {
        const double d1 = phi.d1(t);
        out.flux = sq * d1 * up(axis);
        if (with_derivative) {
            const double c2 = phi.two_d2_or_zero(t);
            out.dflux = sq * (d1 * ginv.row(axis).transpose() + c2 * up(axis) * up);
        }
    }
    catch (const DomainError& e) {
        throw DomainError(std::string(e.what()) + " (face of node " + std::to_string(node) + ", axis " +
                          std::to_string(axis) + ", |grad u|^2 = " + std::to_string(t) + ")");
    }
    if (!std::isfinite(out.flux))
        throw DomainError("non-finite flux at node " + std::to_string(node) + ", |grad u|^2 = " + std::to_string(t));
    return out;
}

inline std::uint64_t hash_values(std::span<const double> v)
{
    std::string bytes(v.size() * sizeof(double), '\0');
    if (!v.empty()) std::memcpy(bytes.data(), v.data(), bytes.size());
    return fnv1a(bytes);
}

inline double max_abs(std::span<const double> v)
{
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

} // namespace detail

/// div(Phi'(|grad u|^2) grad u) - F'(u) - forcing, nodewise. For the linear family the
/// flux part is exactly the Laplace-Beltrami stencil.
inline ScalarField residual(const ScalarField& u, const Problem& prob)
{
    const MetricGrid& grid = *u.grid();
    const auto vals = u.values();
    ScalarField acc(u.grid());
    for (int a = 0; a < grid.dim(); ++a) {
        const double inv_h = 1.0 / grid.spacing(a);
        for (std::size_t n = 0; n < grid.size(); ++n) {
            if (!grid.face_valid(n, a)) continue;
            const Vec s = face_gradient(grid, vals, n, a);
            const double f = detail::face_flux(grid, prob.phi, s, n, a, false).flux;
            const auto nb = grid.neighbor(n, a, 1);
            acc[n] += f * inv_h;
            acc[nb.index] -= f * inv_h;
        }
    }
    for (std::size_t n = 0; n < grid.size(); ++n) {
        acc[n] = acc[n] / grid.sqrt_det_g(n) - prob.pot.dF(vals[n]);
        if (!prob.forcing.empty()) acc[n] -= prob.forcing[n];
    }
    return acc;
}

inline ScalarField residual(const ScalarField& u, const PhiFamily& phi, const Potential& pot)
{
    return residual(u, Problem{u.grid(), phi, pot, {}});
}

/// Jacobian of `residual` assembled with the same stencils.
inline SparseMatrix linearize(const ScalarField& u, const Problem& prob)
{
    const MetricGrid& grid = *u.grid();
    const int dim = grid.dim();
    const auto vals = u.values();
    const auto N = static_cast<Eigen::Index>(grid.size());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(grid.size() * static_cast<std::size_t>(dim) * static_cast<std::size_t>(2 + 4 * (dim - 1)) * 2 + grid.size());
    for (int a = 0; a < dim; ++a) {
        const double h = grid.spacing(a);
        for (std::size_t n = 0; n < grid.size(); ++n) {
            if (!grid.face_valid(n, a)) continue;
            const auto nb = grid.neighbor(n, a, 1).index;
            const Vec s = face_gradient(grid, vals, n, a);
            const Vec df = detail::face_flux(grid, prob.phi, s, n, a, true).dflux;
            const double row_n = 1.0 / (h * grid.sqrt_det_g(n));
            const double row_nb = -1.0 / (h * grid.sqrt_det_g(nb));
            const auto add = [&](std::size_t col, double d) {
                trip.emplace_back(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(col), row_n * d);
                trip.emplace_back(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(col), row_nb * d);
            };
            add(nb, df(a) / h);
            add(n, -df(a) / h);
            for (int l = 0; l < dim; ++l) {
                if (l == a) continue;
                const double c = df(l) / (4.0 * grid.spacing(l));
                add(grid.neighbor(n, l, 1).index, c);
                add(grid.neighbor(n, l, -1).index, -c);
                add(grid.neighbor(nb, l, 1).index, c);
                add(grid.neighbor(nb, l, -1).index, -c);
            }
        }
    }
    for (std::size_t n = 0; n < grid.size(); ++n)
        trip.emplace_back(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), -prob.pot.d2F(vals[n]));
    SparseMatrix J(N, N);
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
}

inline SparseMatrix linearize(const ScalarField& u, const PhiFamily& phi, const Potential& pot)
{
    return linearize(u, Problem{u.grid(), phi, pot, {}});
}

/// Evaluates an initial guess on a grid.
inline ScalarField make_initial_guess(const GridPtr& grid, const InitialGuess& g)
{
    using K = InitialGuess::Kind;
    ScalarField u(grid);
    switch (g.kind) {
    case K::zero: break;
    case K::constant: u = ScalarField(grid, g.value); break;
    case K::sin_mode: {
        QLM_THROW_IF(g.axis < 0 || g.axis >= grid->dim(), ConfigError, "initial guess: sin-mode axis out of range");
        const double w = 2.0 * std::numbers::pi * g.mode / grid->length(g.axis);
        for (std::size_t n = 0; n < grid->size(); ++n)
            u[n] = g.value + g.amplitude * std::sin(w * grid->point(n)(g.axis));
        break;
    }
    case K::random: {
        // Smooth random field: a few random low Fourier modes (or low-degree
        // polynomials in the embedding coordinates on the sphere), scaled to the amplitude.
        std::mt19937_64 rng(g.seed);
        std::normal_distribution<double> nd;
        const int dim = grid->dim();
        if (grid->kind() == MetricKind::sphere_latlong) {
            std::array<double, 10> c{};
            for (double& x : c) x = nd(rng);
            for (std::size_t n = 0; n < grid->size(); ++n) {
                const Vec p = grid->point(n);
                const double X = std::sin(p(0)) * std::cos(p(1)), Y = std::sin(p(0)) * std::sin(p(1)), Z = std::cos(p(0));
                u[n] = c[0] * X + c[1] * Y + c[2] * Z + c[3] * X * X + c[4] * Y * Y + c[5] * Z * Z + c[6] * X * Y +
                       c[7] * Y * Z + c[8] * Z * X + c[9];
            }
        }
        else {
            constexpr int K_MAX = 3;
            struct Mode {
                std::array<int, 3> k;
                double a, b;
            };
            std::vector<Mode> modes;
            std::array<int, 3> k{0, 0, 0};
            const int span = 2 * K_MAX + 1;
            const int total = dim == 1 ? span : dim == 2 ? span * span : span * span * span;
            for (int m = 0; m < total; ++m) {
                int r = m;
                for (int a = 0; a < dim; ++a) {
                    k[static_cast<std::size_t>(a)] = r % span - K_MAX;
                    r /= span;
                }
                const double a0 = nd(rng), b0 = nd(rng);
                modes.push_back({k, a0, b0});
            }
            for (std::size_t n = 0; n < grid->size(); ++n) {
                const Vec p = grid->point(n);
                double s = 0;
                for (const auto& md : modes) {
                    double phase = 0;
                    for (int a = 0; a < dim; ++a)
                        phase += 2.0 * std::numbers::pi * md.k[static_cast<std::size_t>(a)] * p(a) / grid->length(a);
                    s += md.a * std::cos(phase) + md.b * std::sin(phase);
                }
                u[n] = s;
            }
        }
        const double m = u.max_abs();
        for (std::size_t n = 0; n < grid->size(); ++n) u[n] = g.value + (m > 0 ? g.amplitude * u[n] / m : 0.0);
        break;
    }
    case K::field:
        QLM_THROW_IF(g.values.size() != grid->size(), ConfigError, "initial guess: field has the wrong number of values");
        u = ScalarField(grid, g.values);
        break;
    case K::profile: {
        const auto& s = g.profile_s;
        const auto& v = g.profile_u;
        QLM_THROW_IF(s.size() < 2 || s.size() != v.size(), ConfigError, "initial guess: profile needs >= 2 samples");
        const double L = grid->length(0);
        for (std::size_t n = 0; n < grid->size(); ++n) {
            double x = grid->point(n)(0);
            if (g.profile_periodic) x = s.front() + std::fmod(std::fmod(x - s.front(), L) + L, L);
            double val;
            if (x <= s.front()) val = v.front();
            else if (x >= s.back()) {
                // Periodic profiles wrap between the last and first sample.
                if (g.profile_periodic) {
                    const double gap = s.front() + L - s.back();
                    const double w = gap > 0 ? (x - s.back()) / gap : 0.0;
                    val = (1 - w) * v.back() + w * v.front();
                }
                else val = v.back();
            }
            else {
                const auto it = std::upper_bound(s.begin(), s.end(), x);
                const auto i = static_cast<std::size_t>(it - s.begin()) - 1;
                const double w = (x - s[i]) / (s[i + 1] - s[i]);
                val = (1 - w) * v[i] + w * v[i + 1];
            }
            u[n] = val;
        }
        break;
    }
    }
    u.check_finite();
    return u;
}

namespace detail {

// Border vectors for a pinned (Lagrange-augmented) Newton system
//   [J b; c^T 0] [du; lambda] = [-R; target - c^T u].
struct Pin {
    PinKind kind = PinKind::none;
    Eigen::VectorXd b, c;
    double target = 0;
};

inline Pin make_pin(PinKind kind, const ScalarField& ref)
{
    const MetricGrid& grid = *ref.grid();
    const auto N = static_cast<Eigen::Index>(grid.size());
    Pin p;
    p.kind = kind;
    if (kind == PinKind::mean) {
        p.c.resize(N);
        p.b = Eigen::VectorXd::Ones(N);
        for (std::size_t n = 0; n < grid.size(); ++n) p.c(static_cast<Eigen::Index>(n)) = grid.volume_weight(n);
        p.target = p.c.dot(Eigen::Map<const Eigen::VectorXd>(ref.values().data(), N));
    }
    else if (kind == PinKind::phase) {
        // Fixes the translation along axis 0: c = w * d_0 u_ref.
        p.c.resize(N);
        for (std::size_t n = 0; n < grid.size(); ++n)
            p.c(static_cast<Eigen::Index>(n)) = grid.volume_weight(n) * central_scalar(grid, ref.values(), n, 0);
        QLM_THROW_IF(p.c.norm() == 0.0, DomainError, "phase pin needs a reference field that varies along axis 0");
        p.c /= p.c.norm();
        p.b = p.c;
        p.target = p.c.dot(Eigen::Map<const Eigen::VectorXd>(ref.values().data(), N));
    }
    return p;
}

inline SparseMatrix border(const SparseMatrix& J, const Pin& pin)
{
    if (pin.kind == PinKind::none) return J;
    const auto N = J.rows();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(J.nonZeros() + 2 * N));
    for (int k = 0; k < J.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(J, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
    for (Eigen::Index i = 0; i < N; ++i) {
        if (pin.b(i) != 0) trip.emplace_back(i, N, pin.b(i));
        if (pin.c(i) != 0) trip.emplace_back(N, i, pin.c(i));
    }
    SparseMatrix A(N + 1, N + 1);
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
}

// Factorizes once and solves; wraps the direct and iterative back ends.
class LinearSolver {
public:
    LinearSolver(LinearSolverKind kind, double tol) : kind_(kind), tol_(tol) {}

    // The ordering is computed once: Newton Jacobians share one sparsity pattern.
    bool factorize(const SparseMatrix& A)
    {
        A_ = &A;
        if (kind_ == LinearSolverKind::direct_sparse) {
            if (!analyzed_) lu_.analyzePattern(A);
            analyzed_ = true;
            lu_.factorize(A);
            return lu_.info() == Eigen::Success;
        }
        it_.setTolerance(tol_);
        it_.setMaxIterations(std::max<Eigen::Index>(1000, 10 * A.rows()));
        it_.preconditioner().setDroptol(1e-6);
        it_.preconditioner().setFillfactor(20);
        it_.compute(A);
        return it_.info() == Eigen::Success;
    }

    bool solve(const Eigen::VectorXd& rhs, Eigen::VectorXd& x)
    {
        if (kind_ == LinearSolverKind::direct_sparse) {
            x = lu_.solve(rhs);
            return lu_.info() == Eigen::Success && x.allFinite();
        }
        x = it_.solve(rhs);
        return it_.info() == Eigen::Success && x.allFinite();
    }

    // ||A||_1 times a few inverse power iterations for ||A^-1||.
    double condition_estimate()
    {
        double norm1 = 0;
        Eigen::VectorXd colsum = Eigen::VectorXd::Zero(A_->cols());
        for (int k = 0; k < A_->outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(*A_, k); it; ++it) colsum(it.col()) += std::abs(it.value());
        norm1 = colsum.maxCoeff();
        Eigen::VectorXd x = Eigen::VectorXd::Ones(A_->rows()) / static_cast<double>(A_->rows());
        double inv = 0;
        for (int i = 0; i < 6; ++i) {
            Eigen::VectorXd y;
            if (!solve(x, y)) return std::numeric_limits<double>::infinity();
            inv = std::max(inv, y.lpNorm<1>() / x.lpNorm<1>());
            x = y / y.lpNorm<1>();
        }
        return norm1 * inv;
    }

private:
    LinearSolverKind kind_;
    double tol_;
    const SparseMatrix* A_ = nullptr;
    bool analyzed_ = false;
    Eigen::SparseLU<SparseMatrix> lu_;
    Eigen::BiCGSTAB<SparseMatrix, Eigen::IncompleteLUT<double>> it_;
};

inline Eigen::VectorXd as_vector(const ScalarField& f)
{
    return Eigen::Map<const Eigen::VectorXd>(f.values().data(), static_cast<Eigen::Index>(f.size()));
}

} // namespace detail

/// Finite-difference check of J v against (R(u + delta v) - R(u)) / delta for two deltas.
inline JacobianCheck check_jacobian(const ScalarField& u, const Problem& prob, const SparseMatrix& J, std::uint64_t seed,
                                    double ratio_lo = 5.0, double ratio_hi = 20.0)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    const auto N = static_cast<Eigen::Index>(u.size());
    Eigen::VectorXd v(N);
    for (Eigen::Index i = 0; i < N; ++i) v(i) = ud(rng);
    const Eigen::VectorXd jv = J * v;
    const Eigen::VectorXd r0 = detail::as_vector(residual(u, prob));
    JacobianCheck c;
    c.jv_norm = jv.lpNorm<Eigen::Infinity>();
    double errs[2];
    const double deltas[2] = {1e-4, 1e-5};
    for (int k = 0; k < 2; ++k) {
        ScalarField up = u;
        for (std::size_t i = 0; i < u.size(); ++i) up[i] += deltas[k] * v(static_cast<Eigen::Index>(i));
        const Eigen::VectorXd r1 = detail::as_vector(residual(up, prob));
        errs[k] = ((r1 - r0) / deltas[k] - jv).lpNorm<Eigen::Infinity>();
    }
    c.err_large = errs[0];
    c.err_small = errs[1];
    c.ratio = errs[1] > 0 ? errs[0] / errs[1] : std::numeric_limits<double>::infinity();
    // Below this level the difference quotient is dominated by rounding, not by the
    // O(delta) term, and the ratio is meaningless; the operator is then affine in v.
    const double floor = 1e-7 * std::max(1.0, c.jv_norm);
    c.consistent = (c.err_large <= floor) || (c.ratio >= ratio_lo && c.ratio <= ratio_hi);
    return c;
}

namespace detail {

inline PinKind resolve_pin(PinKind requested, const Problem& prob)
{
    if (requested != PinKind::automatic) return requested;
    return prob.pot.identically_zero() && prob.forcing.empty() ? PinKind::mean : PinKind::none;
}

// Damped Newton from u (modified in place). Appends to the report's history.
inline bool newton_iterate(ScalarField& u, const Problem& prob, const SolveConfig& cfg, SolveReport& rep,
                           int& jacobian_check_index)
{
    const PinKind pin_kind = resolve_pin(cfg.pin, prob);
    const Pin pin = make_pin(pin_kind, u);
    rep.pin = to_string(pin_kind);
    const auto N = static_cast<Eigen::Index>(u.size());
    const double lin_tol = cfg.linear_tol > 0 ? cfg.linear_tol : 1e-2 * cfg.newton_tol;
    ScalarField r = residual(u, prob);
    double rn = r.max_abs();
    rep.residual_history.push_back(rn);
    LinearSolver ls(cfg.linear_solver, lin_tol);
    SparseMatrix A;
    bool factored = false;
    // Condition estimate of the last factorized Jacobian, taken on exit only.
    const auto finish = [&](bool ok, const char* message) {
        rep.final_residual_maxnorm = rn;
        if (factored) rep.jacobian_condition_estimate = ls.condition_estimate();
        if (message) rep.message = message;
        return ok;
    };
    for (int it = 0; it < cfg.max_newton_iters; ++it) {
        if (rn <= cfg.newton_tol && (pin.kind == PinKind::none || std::abs(pin.c.dot(as_vector(u)) - pin.target) <= 1e-12 * std::max(1.0, std::abs(pin.target))))
            return finish(true, nullptr);
        const SparseMatrix J = linearize(u, prob);
        if (cfg.check_jacobian) {
            auto chk = check_jacobian(u, prob, J, cfg.jacobian_seed + static_cast<std::uint64_t>(jacobian_check_index),
                                      cfg.jacobian_ratio_lo, cfg.jacobian_ratio_hi);
            chk.iteration = jacobian_check_index++;
            rep.jacobian_checks.push_back(chk);
        }
        A = border(J, pin);
        factored = false;
        if (!ls.factorize(A)) return finish(false, "singular Jacobian");
        factored = true;
        Eigen::VectorXd rhs(A.rows());
        rhs.head(N) = -as_vector(r);
        if (pin.kind != PinKind::none) rhs(N) = pin.target - pin.c.dot(as_vector(u));
        Eigen::VectorXd x;
        if (!ls.solve(rhs, x)) return finish(false, "linear solve failed");
        // Backtracking on the residual max-norm. A pinned step is accepted at full length
        // when it only restores the constraint.
        double alpha = 1.0;
        bool accepted = false;
        ScalarField trial(u.grid());
        ScalarField rt;
        while (alpha >= cfg.min_step) {
            for (std::size_t i = 0; i < u.size(); ++i) trial[i] = u[i] + alpha * x(static_cast<Eigen::Index>(i));
            try {
                rt = residual(trial, prob);
            }
            catch (const DomainError&) {
                alpha *= cfg.backtrack;
                continue;
            }
            const double tn = rt.max_abs();
            if (std::isfinite(tn) && (tn < rn || (tn <= cfg.newton_tol))) {
                accepted = true;
                break;
            }
            alpha *= cfg.backtrack;
        }
        if (!accepted) return finish(false, "line search stalled");
        u = trial;
        r = rt;
        rn = r.max_abs();
        rep.residual_history.push_back(rn);
        ++rep.iterations;
    }
    if (rn <= cfg.newton_tol) return finish(true, nullptr);
    return finish(false, "no convergence within max_newton_iters");
}

inline GridPtr with_length0(const MetricGrid& grid, double L)
{
    GridSpec s = grid.spec();
    s.lengths[0] = L;
    return MetricGrid::build(s);
}

} // namespace detail

/// Damped Newton with optional continuation. Never throws on mathematical failure;
/// the report records it.
inline SolveReport newton_solve(const SolveConfig& cfg, const PhiFamily& phi, const Potential& pot, const GridPtr& grid,
                                const std::vector<double>& forcing = {})
{
    cfg.validate();
    SolveReport rep;
    int checks = 0;
    if (!cfg.continuation) {
        Problem prob{grid, phi, pot, forcing};
        ScalarField u = make_initial_guess(grid, cfg.initial_guess);
        rep.converged = detail::newton_iterate(u, prob, cfg, rep, checks);
        rep.solution = u;
    }
    else {
        const Continuation& c = *cfg.continuation;
        QLM_THROW_IF(!forcing.empty(), ConfigError, "solve: continuation cannot be combined with a forcing field");
        const bool by_length = c.parameter == "length0";
        if (by_length)
            QLM_THROW_IF(std::abs(c.end - grid->length(0)) > 1e-12 * c.end, ConfigError,
                         "solve: continuation end must equal the grid length along axis 0");
        const auto problem_at = [&](double p) {
            if (by_length) return Problem{detail::with_length0(*grid, p), phi, pot, {}};
            return Problem{grid, phi, pot.with_scale(p), {}};
        };
        Problem prob = problem_at(c.start);
        ScalarField u = make_initial_guess(prob.grid, cfg.initial_guess);
        bool ok = detail::newton_iterate(u, prob, cfg, rep, checks);
        double p = c.start;
        const double full = (c.end - c.start) / c.steps;
        double step = full;
        int bisections = 0;
        while (ok && std::abs(p - c.end) > 1e-14 * std::max(1.0, std::abs(c.end))) {
            double next = p + step;
            if ((step > 0 && next > c.end) || (step < 0 && next < c.end)) next = c.end;
            if (next == c.end && by_length) prob = Problem{grid, phi, pot, {}};
            else prob = problem_at(next);
            ScalarField trial(prob.grid, std::vector<double>(u.values().begin(), u.values().end()));
            SolveReport sub;
            const bool sub_ok = detail::newton_iterate(trial, prob, cfg, sub, checks);
            rep.iterations += sub.iterations;
            rep.residual_history.insert(rep.residual_history.end(), sub.residual_history.begin(), sub.residual_history.end());
            rep.jacobian_checks.insert(rep.jacobian_checks.end(), sub.jacobian_checks.begin(), sub.jacobian_checks.end());
            if (sub_ok) {
                u = trial;
                p = next;
                rep.jacobian_condition_estimate = sub.jacobian_condition_estimate;
                rep.final_residual_maxnorm = sub.final_residual_maxnorm;
                rep.pin = sub.pin;
                ++rep.continuation_steps;
                step = full;
            }
            else if (++bisections <= c.max_bisections) {
                step *= 0.5;
            }
            else {
                ok = false;
                rep.message = "continuation failed near parameter " + std::to_string(next) + ": " + sub.message;
                rep.final_residual_maxnorm = sub.final_residual_maxnorm;
            }
        }
        rep.converged = ok;
        rep.solution = ScalarField(grid, std::vector<double>(u.values().begin(), u.values().end()));
        if (ok) rep.final_residual_maxnorm = residual(rep.solution, Problem{grid, phi, pot, {}}).max_abs();
        rep.converged = ok && rep.final_residual_maxnorm <= cfg.newton_tol;
        if (ok && !rep.converged) rep.message = "final residual above tolerance";
    }
    if (rep.converged) rep.message = "converged";
    // Discrete compatibility: the flux part integrates to zero, so F'(u) must too.
    double s = 0;
    for (std::size_t n = 0; n < grid->size(); ++n) {
        double rhs = pot.dF(rep.solution[n]);
        if (!forcing.empty()) rhs += forcing[n];
        s += rhs * grid->volume_weight(n);
    }
    rep.compatibility_defect = std::abs(s) / grid->total_volume();
    rep.solution_hash = detail::hash_values(rep.solution.values());
    return rep;
}

/// r_{k+1} / r_k^2 over the last `count` Newton steps of a history. Steps that
/// land at or below `floor` are skipped: there the residual is roundoff.
inline std::vector<double> quadratic_tail_constants(const std::vector<double>& history, int count = 3, double floor = 0)
{
    std::vector<double> out;
    for (std::size_t k = 0; k + 1 < history.size(); ++k)
        if (history[k] > 0 && history[k + 1] > floor) out.push_back(history[k + 1] / (history[k] * history[k]));
    if (out.size() > static_cast<std::size_t>(count)) out.erase(out.begin(), out.end() - count);
    return out;
}

/// Forcing for a manufactured solution u*(x) that varies along axis 0 of a flat grid only:
/// there div(Phi'(u'^2) u') = Lambda(u'^2) u'', so forcing = Lambda(u'^2) u'' - F'(u*).
template <class U, class DU, class D2U>
std::vector<double> manufactured_forcing_axis0(const GridPtr& grid, const PhiFamily& phi, const Potential& pot, U u,
                                               DU du, D2U d2u)
{
    QLM_THROW_IF(grid->kind() != MetricKind::flat_torus, ConfigError, "manufactured forcing needs a flat torus");
    std::vector<double> f(grid->size());
    for (std::size_t n = 0; n < grid->size(); ++n) {
        const double x = grid->point(n)(0);
        const double d = du(x);
        f[n] = phi.lambda(d * d) * d2u(x) - pot.dF(u(x));
    }
    return f;
}

} // namespace qlm
