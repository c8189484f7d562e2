#pragma once

#include "qlm/nonlinearity.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace qlm {

enum class ProfileKind { heteroclinic_approx, periodic, generic_ivp };

inline std::string to_string(ProfileKind k)
{
    switch (k) {
    case ProfileKind::heteroclinic_approx: return "heteroclinic-approx";
    case ProfileKind::periodic: return "periodic";
    case ProfileKind::generic_ivp: return "generic-IVP";
    }
    return "?";
}

/// Sampled solution of phi'' = F'(phi) / Lambda(phi'^2) in arc length s.
struct Profile {
    std::vector<double> s, phi, dphi;
    PhiFamily family = PhiFamily::linear();
    Potential potential = Potential::zero();
    ProfileKind kind = ProfileKind::generic_ivp;
    double energy_constant = 0;  // Psi(phi'^2) - 2F(phi) at s = 0
    double max_drift = 0;        // max_s |Psi(phi'^2) - 2F(phi) - energy_constant|
    bool monotone = false;
    bool truncated = false;
    std::size_t origin = 0;      // index of s = 0
};

namespace detail {

using State = std::array<double, 2>;

// Classical RK4 step for y' = f(y) (autonomous).
template <class F>
State rk4_step(const F& f, const State& y, double h)
{
    const State k1 = f(y);
    const State k2 = f({y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]});
    const State k3 = f({y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]});
    const State k4 = f({y[0] + h * k3[0], y[1] + h * k3[1]});
    return {y[0] + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]), y[1] + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])};
}

inline auto profile_rhs(const PhiFamily& fam, const Potential& pot)
{
    return [&fam, &pot](const State& y) -> State {
        const double lam = fam.lambda(y[1] * y[1]);
        if (!(lam > 0))
            throw DomainError("profile: Lambda(phi'^2) <= 0 at phi = " + std::to_string(y[0]) +
                              ", phi' = " + std::to_string(y[1]));
        return {y[1], pot.dF(y[0]) / lam};
    };
}

// Integrates from s = 0 to `end` (either sign) and returns the samples excluding s = 0.
template <class F, class Stop = bool (*)(const State&, const State&)>
std::vector<std::pair<double, State>> sweep(const F& f, const State& y0, double end, double step, double cap,
                                            bool& truncated, Stop stop = [](const State&, const State&) { return false; })
{
    std::vector<std::pair<double, State>> out;
    if (end == 0.0) return out;
    const double dir = end > 0 ? 1.0 : -1.0;
    const auto n = static_cast<long>(std::ceil(std::abs(end) / step - 1e-9));
    State y = y0;
    for (long k = 1; k <= n; ++k) {
        const double s_prev = dir * step * static_cast<double>(k - 1);
        const double s_next = k == n ? end : dir * step * static_cast<double>(k);
        const State prev = y;
        y = rk4_step(f, y, s_next - s_prev);
        if (!std::isfinite(y[0]) || !std::isfinite(y[1]) || std::abs(y[0]) > cap || stop(prev, y)) {
            truncated = true;
            break;
        }
        out.emplace_back(s_next, y);
    }
    return out;
}

inline void finish_profile(Profile& p, std::vector<std::pair<double, State>>& back, std::vector<std::pair<double, State>>& fwd,
                           const State& y0)
{
    p.s.clear();
    p.phi.clear();
    p.dphi.clear();
    for (auto it = back.rbegin(); it != back.rend(); ++it) {
        p.s.push_back(it->first);
        p.phi.push_back(it->second[0]);
        p.dphi.push_back(it->second[1]);
    }
    p.origin = p.s.size();
    p.s.push_back(0.0);
    p.phi.push_back(y0[0]);
    p.dphi.push_back(y0[1]);
    for (const auto& [s, y] : fwd) {
        p.s.push_back(s);
        p.phi.push_back(y[0]);
        p.dphi.push_back(y[1]);
    }
    p.energy_constant = p.family.psi(y0[1] * y0[1]) - 2 * p.potential.F(y0[0]);
    p.max_drift = 0;
    bool pos = true, neg = true;
    for (std::size_t i = 0; i < p.s.size(); ++i) {
        const double e = p.family.psi(p.dphi[i] * p.dphi[i]) - 2 * p.potential.F(p.phi[i]);
        p.max_drift = std::max(p.max_drift, std::abs(e - p.energy_constant));
        pos = pos && p.dphi[i] > 0;
        neg = neg && p.dphi[i] < 0;
    }
    p.monotone = pos || neg;
}

} // namespace detail

/// RK4 integration of the profile equation as a first-order system, from s = 0
/// forward to s_span[1] and backward to s_span[0].
inline Profile integrate_profile(double phi0, double dphi0, std::array<double, 2> s_span, double step, const PhiFamily& fam,
                                 const Potential& pot, double cap = 1e6)
{
    QLM_THROW_IF(!(step > 0), ConfigError, "integrate_profile: step must be > 0");
    QLM_THROW_IF(!(s_span[0] <= 0 && s_span[1] >= 0), ConfigError, "integrate_profile: span must contain s = 0");
    Profile p;
    p.family = fam;
    p.potential = pot;
    p.kind = ProfileKind::generic_ivp;
    const auto f = detail::profile_rhs(p.family, p.potential);
    const detail::State y0{phi0, dphi0};
    f(y0);
    bool trunc = false;
    auto back = detail::sweep(f, y0, s_span[0], step, cap, trunc);
    auto fwd = detail::sweep(f, y0, s_span[1], step, cap, trunc);
    p.truncated = trunc;
    detail::finish_profile(p, back, fwd, y0);
    return p;
}

/// G(phi) = Psi^-1(2F(phi)), gated on the range of Psi.
inline double equality_speed_squared(const PhiFamily& fam, const Potential& pot, double phi)
{
    const double y = 2 * pot.F(phi);
    QLM_THROW_IF(y < 0, DomainError, "equality profile: F < 0 at phi = " + std::to_string(phi));
    if (!(y < fam.psi_sup()))
        throw DomainError("equality profile: 2F(phi) = " + std::to_string(y) + " at phi = " + std::to_string(phi) +
                          " is outside the range of Psi");
    return psi_inverse(fam, y);
}

/// Integrates phi' = sign * sqrt(G(phi)), the equality case of the gradient bound.
/// Starting at a zero of F gives the constant profile.
inline Profile equality_profile(const PhiFamily& fam, const Potential& pot, double phi0, int sign,
                                std::array<double, 2> s_span, double step)
{
    QLM_THROW_IF(sign != 1 && sign != -1, ConfigError, "equality_profile: sign must be +1 or -1");
    QLM_THROW_IF(!(step > 0), ConfigError, "equality_profile: step must be > 0");
    QLM_THROW_IF(!(s_span[0] <= 0 && s_span[1] >= 0), ConfigError, "equality_profile: span must contain s = 0");
    Profile p;
    p.family = fam;
    p.potential = pot;
    p.kind = ProfileKind::heteroclinic_approx;
    const double sgn = sign;
    const auto& fr = p.family;
    const auto& pr = p.potential;
    // The second slot carries nothing; phi' is recomputed from phi afterwards.
    const auto f = [&](const detail::State& y) -> detail::State {
        return {sgn * std::sqrt(equality_speed_squared(fr, pr, y[0])), 0.0};
    };
    const detail::State y0{phi0, 0.0};
    equality_speed_squared(fr, pr, phi0);
    // phi reaches a zero of F in finite s when sqrt(G) is not Lipschitz there (p > 2);
    // stop before stepping past the minimum of F.
    const auto past_minimum = [&](const detail::State& a, const detail::State& b) {
        const double d = b[0] - a[0];
        return d * pr.dF(a[0]) < 0 && d * pr.dF(b[0]) > 0;
    };
    bool trunc = false;
    auto back = detail::sweep(f, y0, s_span[0], step, 1e6, trunc, past_minimum);
    auto fwd = detail::sweep(f, y0, s_span[1], step, 1e6, trunc, past_minimum);
    for (auto* part : {&back, &fwd})
        for (auto& [s, y] : *part) y[1] = sgn * std::sqrt(equality_speed_squared(fr, pr, y[0]));
    p.truncated = trunc;
    detail::finish_profile(p, back, fwd, {phi0, sgn * std::sqrt(equality_speed_squared(fr, pr, phi0))});
    return p;
}

/// w = Q(phi(s)) with Q(u) = int_{phi(0)}^{u} G^{-1/2}, plus its s-derivatives by differences.
struct QTransform {
    std::vector<double> s, w, dw;
    double max_unit_defect = 0;      // max | |dw/ds| - 1 |
    double max_second_difference = 0;  // max |w_{k+1} - 2 w_k + w_{k-1}|
    double max_laplacian = 0;          // same divided by h^2
};

inline QTransform q_transform(const Profile& prof)
{
    static constexpr std::array<double, 4> x{0.1834346424956498, 0.5255324099163290, 0.7966664774136267, 0.9602898564975363};
    static constexpr std::array<double, 4> wt{0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
    const auto integrand = [&](double u) {
        const double g = equality_speed_squared(prof.family, prof.potential, u);
        if (!(g > 0)) throw DomainError("q_transform: G <= 0 at phi = " + std::to_string(u));
        return 1.0 / std::sqrt(g);
    };
    // 8-point Gauss-Legendre on [a, b].
    const auto gl = [&](double a, double b) {
        const double c = 0.5 * (a + b), r = 0.5 * (b - a);
        double s = 0;
        for (std::size_t i = 0; i < x.size(); ++i) s += wt[i] * (integrand(c - r * x[i]) + integrand(c + r * x[i]));
        return r * s;
    };
    QTransform q;
    const std::size_t n = prof.s.size();
    QLM_THROW_IF(n < 3, ConfigError, "q_transform: profile too short");
    q.s = prof.s;
    q.w.assign(n, 0.0);
    for (std::size_t i = prof.origin + 1; i < n; ++i) q.w[i] = q.w[i - 1] + gl(prof.phi[i - 1], prof.phi[i]);
    for (std::size_t i = prof.origin; i-- > 0;) q.w[i] = q.w[i + 1] - gl(prof.phi[i], prof.phi[i + 1]);
    q.dw.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (i == 0)
            q.dw[i] = (-3 * q.w[0] + 4 * q.w[1] - q.w[2]) / (q.s[2] - q.s[0]);
        else if (i == n - 1)
            q.dw[i] = (3 * q.w[n - 1] - 4 * q.w[n - 2] + q.w[n - 3]) / (q.s[n - 1] - q.s[n - 3]);
        else
            q.dw[i] = (q.w[i + 1] - q.w[i - 1]) / (q.s[i + 1] - q.s[i - 1]);
        q.max_unit_defect = std::max(q.max_unit_defect, std::abs(std::abs(q.dw[i]) - 1.0));
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double h1 = q.s[i] - q.s[i - 1], h2 = q.s[i + 1] - q.s[i];
        const double d2 = q.w[i + 1] - 2 * q.w[i] + q.w[i - 1];
        q.max_second_difference = std::max(q.max_second_difference, std::abs(d2));
        const double lap = 2.0 * ((q.w[i + 1] - q.w[i]) / h2 - (q.w[i] - q.w[i - 1]) / h1) / (h1 + h2);
        q.max_laplacian = std::max(q.max_laplacian, std::abs(lap));
    }
    return q;
}

/// Energy convention for closed orbits: e = Psi(phi'^2)/2 - F(phi), so the P-function
/// of the corresponding periodic solution equals 2e.
inline double orbit_energy(const PhiFamily& fam, const Potential& pot, double phi, double dphi)
{
    return 0.5 * fam.psi(dphi * dphi) - pot.F(phi);
}

namespace detail {

// First u on the `dir` side of `center` with F(u) = level. F decreases away from
// the maximum; hitting a local minimum of F above the level means no closed orbit.
inline double turning_point(const Potential& pot, double center, double level, double dir)
{
    const double h = 1e-3;
    double prev = center;
    for (long k = 1; k < 10000000; ++k) {
        const double u = center + dir * h * static_cast<double>(k);
        if (pot.F(u) <= level) {
            double lo = prev, hi = u;
            for (int i = 0; i < 200; ++i) {
                const double mid = 0.5 * (lo + hi);
                if (pot.F(mid) > level) lo = mid; else hi = mid;
            }
            return 0.5 * (lo + hi);
        }
        if (pot.F(u) > pot.F(prev)) {
            // Passed a local minimum between prev - dir*h and u; golden-section for its value.
            double a = prev - dir * h, b = u;
            if (a > b) std::swap(a, b);
            const double r = 0.5 * (std::sqrt(5.0) - 1);
            for (int i = 0; i < 200; ++i) {
                const double c = b - r * (b - a), d = a + r * (b - a);
                if (pot.F(c) < pot.F(d)) b = d; else a = c;
            }
            const double umin = 0.5 * (a + b);
            if (pot.F(umin) > level) break;
            double lo = prev, hi = umin;
            for (int i = 0; i < 200; ++i) {
                const double mid = 0.5 * (lo + hi);
                if (pot.F(mid) > level) lo = mid; else hi = mid;
            }
            return 0.5 * (lo + hi);
        }
        prev = u;
    }
    throw DomainError("period_map: orbit is not closed at this energy");
}

} // namespace detail

/// Period of the closed orbit of phi'' = F'(phi)/Lambda(phi'^2) at energy e around a
/// local maximum `center` of F. Integrates one full loop from the right turning point and
/// locates the two sign changes of phi' by bisection on the last step length.
inline double period_map(const PhiFamily& fam, const Potential& pot, double energy, double center = 0.0, double step = 1e-3)
{
    QLM_THROW_IF(!(pot.d2F(center) < 0) || std::abs(pot.dF(center)) > 1e-12, DomainError,
                 "period_map: center must be a nondegenerate local maximum of F");
    const double fmax = pot.F(center);
    if (!(energy > -fmax && energy < 0.0))
        throw DomainError("period_map: no closed orbit at energy " + std::to_string(energy) + " (need -F(center) < e < 0)");
    // Closed orbits need the levels {F = -e} on both sides; F must drop to 0 beyond them.
    const double right = detail::turning_point(pot, center, -energy, +1.0);
    detail::turning_point(pot, center, -energy, -1.0);
    const auto f = detail::profile_rhs(fam, pot);
    detail::State y{right, 0.0};
    double s = 0;
    int crossings = 0;
    const long max_steps = 100000000;
    for (long k = 0; k < max_steps; ++k) {
        const detail::State next = detail::rk4_step(f, y, step);
        const bool want_up = crossings == 0;
        const bool crossed = k > 0 && (want_up ? (y[1] < 0 && next[1] >= 0) : (y[1] > 0 && next[1] <= 0));
        if (crossed) {
            double a = 0, b = step;
            for (int i = 0; i < 80; ++i) {
                const double m = 0.5 * (a + b);
                const double v = detail::rk4_step(f, y, m)[1];
                if ((want_up && v < 0) || (!want_up && v > 0)) a = m; else b = m;
            }
            if (++crossings == 2) return s + 0.5 * (a + b);
        }
        y = next;
        s += step;
    }
    throw DomainError("period_map: orbit did not close");
}

/// Energy whose orbit has the requested period, by bisection; the period increases
/// with the energy on (-F(center), 0).
inline double energy_for_period(const PhiFamily& fam, const Potential& pot, double period, double center = 0.0,
                                double step = 1e-3)
{
    const double fmax = pot.F(center);
    double lo = -fmax * (1 - 1e-9), hi = -fmax * 1e-12;
    QLM_THROW_IF(!(period_map(fam, pot, lo, center, step) < period && period_map(fam, pot, hi, center, step) > period),
                 DomainError, "energy_for_period: target period outside the sampled branch");
    for (int i = 0; i < 100 && hi - lo > 1e-15 * fmax; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (period_map(fam, pot, mid, center, step) < period) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace qlm
