#pragma once

#include "qlm/error.hpp"
#include "qlm/small_linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace qlm {

enum class PhiKind { linear, p_laplacian, mean_curvature, custom_table };

inline std::string to_string(PhiKind kind)
{
    switch (kind) {
    case PhiKind::linear: return "linear";
    case PhiKind::p_laplacian: return "p-laplacian";
    case PhiKind::mean_curvature: return "mean-curvature";
    case PhiKind::custom_table: return "custom-table";
    }
    return "?";
}

inline PhiKind parse_phi_kind(std::string_view tag)
{
    if (tag == "linear") return PhiKind::linear;
    if (tag == "p-laplacian") return PhiKind::p_laplacian;
    if (tag == "mean-curvature") return PhiKind::mean_curvature;
    if (tag == "custom-table") return PhiKind::custom_table;
    throw ConfigError("unknown family '" + std::string(tag) + "'");
}

/// Phi(t) on t >= 0 with Phi(0) = 0, and its first three derivatives.
///
/// The p-laplacian may be regularized by t -> t + eps^2 (Phi shifted so that
/// Phi(0) stays 0); eps defaults to 1e-8 for p < 2 and to 0 otherwise.
class PhiFamily {
public:
    static PhiFamily linear() { return PhiFamily(PhiKind::linear); }

    static PhiFamily p_laplacian(double p, std::optional<double> eps = std::nullopt)
    {
        QLM_THROW_IF(!(p > 1.0) || !std::isfinite(p), ConfigError, "p-laplacian: exponent p must be > 1");
        PhiFamily f(PhiKind::p_laplacian);
        f.p_ = p;
        f.eps_ = eps.value_or(p < 2.0 ? 1e-8 : 0.0);
        QLM_THROW_IF(!(f.eps_ >= 0.0), ConfigError, "p-laplacian: regularization eps must be >= 0");
        return f;
    }

    static PhiFamily mean_curvature() { return PhiFamily(PhiKind::mean_curvature); }

    /// Monotone piecewise-cubic interpolant through (t_k, Phi_k); t_0 must be 0 and Phi_0 = 0.
    static PhiFamily custom_table(std::vector<double> t, std::vector<double> phi)
    {
        QLM_THROW_IF(t.size() != phi.size() || t.size() < 3, ConfigError, "custom-table: need >= 3 matching samples");
        QLM_THROW_IF(t.front() != 0.0 || phi.front() != 0.0, ConfigError, "custom-table: table must start at (0, 0)");
        for (std::size_t i = 1; i < t.size(); ++i) {
            QLM_THROW_IF(!(t[i] > t[i - 1]), ConfigError, "custom-table: t samples must increase");
            QLM_THROW_IF(!(phi[i] > phi[i - 1]), ConfigError, "custom-table: Phi samples must increase");
        }
        PhiFamily f(PhiKind::custom_table);
        f.tt_ = std::move(t);
        f.tp_ = std::move(phi);
        f.build_slopes();
        for (std::size_t i = 0; i + 1 < f.tt_.size(); ++i)
            for (int k = 0; k <= 32; ++k) {
                const double t = f.tt_[i] + (f.tt_[i + 1] - f.tt_[i]) * k / 32.0;
                if (!(f.lambda(t) > 0))
                    throw ConfigError("custom-table: 2t Phi'' + Phi' <= 0 near t = " + std::to_string(t));
            }
        return f;
    }

    PhiKind kind() const { return kind_; }
    std::string name() const { return to_string(kind_); }
    double exponent() const { return p_; }
    double epsilon() const { return eps_; }
    /// Parameters as recorded in reports.
    std::vector<double> params() const
    {
        if (kind_ == PhiKind::p_laplacian) return {p_, eps_};
        return {};
    }
    /// True when Phi'(0) is not finite (p < 2 without regularization).
    bool singular_at_zero() const { return kind_ == PhiKind::p_laplacian && p_ < 2.0 && eps_ == 0.0; }
    /// sup of Psi over t >= 0.
    double psi_sup() const
    {
        if (kind_ == PhiKind::mean_curvature) return 2.0;
        if (kind_ == PhiKind::custom_table) return psi(tt_.back());
        return std::numeric_limits<double>::infinity();
    }

    double phi(double t) const
    {
        check_t(t);
        switch (kind_) {
        case PhiKind::linear: return t;
        case PhiKind::p_laplacian: return (2.0 / p_) * (std::pow(t + eps_ * eps_, p_ / 2) - std::pow(eps_, p_));
        case PhiKind::mean_curvature: return 2.0 * std::sqrt(1.0 + t) - 2.0;
        case PhiKind::custom_table: return table(t, 0);
        }
        return 0;
    }

    double d1(double t) const
    {
        check_t(t);
        switch (kind_) {
        case PhiKind::linear: return 1.0;
        case PhiKind::p_laplacian: return std::pow(shifted(t), (p_ - 2) / 2);
        case PhiKind::mean_curvature: return 1.0 / std::sqrt(1.0 + t);
        case PhiKind::custom_table: return table(t, 1);
        }
        return 0;
    }

    double d2(double t) const
    {
        check_t(t);
        switch (kind_) {
        case PhiKind::linear: return 0.0;
        case PhiKind::p_laplacian: return p_ == 2.0 ? 0.0 : 0.5 * (p_ - 2) * std::pow(shifted(t), (p_ - 4) / 2);
        case PhiKind::mean_curvature: return -0.5 * std::pow(1.0 + t, -1.5);
        case PhiKind::custom_table: return table(t, 2);
        }
        return 0;
    }

    double d3(double t) const
    {
        check_t(t);
        switch (kind_) {
        case PhiKind::linear: return 0.0;
        case PhiKind::p_laplacian:
            return (p_ == 2.0 || p_ == 4.0) ? 0.0 : 0.25 * (p_ - 2) * (p_ - 4) * std::pow(shifted(t), (p_ - 6) / 2);
        case PhiKind::mean_curvature: return 0.75 * std::pow(1.0 + t, -2.5);
        case PhiKind::custom_table: return table(t, 3);
        }
        return 0;
    }

    /// 2 t Phi''(t) + Phi'(t), in closed form where one exists so t = 0 is safe.
    double lambda(double t) const
    {
        check_t(t);
        switch (kind_) {
        case PhiKind::linear: return 1.0;
        case PhiKind::p_laplacian: {
            const double s = shifted(t);
            if (eps_ == 0.0) return (p_ - 1) * std::pow(s, (p_ - 2) / 2);
            return std::pow(s, (p_ - 4) / 2) * ((p_ - 1) * t + eps_ * eps_);
        }
        case PhiKind::mean_curvature: return std::pow(1.0 + t, -1.5);
        case PhiKind::custom_table: return 2.0 * t * table(t, 2) + table(t, 1);
        }
        return 0;
    }

    /// 2 t Phi'(t) - Phi(t).
    double psi(double t) const
    {
        check_t(t);
        switch (kind_) {
        case PhiKind::linear: return t;
        case PhiKind::p_laplacian:
            if (eps_ == 0.0) return 2.0 * (1.0 - 1.0 / p_) * std::pow(t, p_ / 2);
            return 2.0 * t * d1(t) - phi(t);
        case PhiKind::mean_curvature: return 2.0 - 2.0 / std::sqrt(1.0 + t);
        case PhiKind::custom_table: return 2.0 * t * table(t, 1) - table(t, 0);
        }
        return 0;
    }

    /// 2 Phi''(t), with the convention that it is multiplied by a vanishing
    /// outer product at t = 0 (where Phi'' may be unbounded for 2 < p < 4).
    double two_d2_or_zero(double t) const { return t == 0.0 && eps_ == 0.0 ? 0.0 : 2.0 * d2(t); }

private:
    explicit PhiFamily(PhiKind kind) : kind_(kind) {}

    double shifted(double t) const
    {
        const double s = t + eps_ * eps_;
        if (s == 0.0 && p_ < 2.0)
            throw DomainError("p-laplacian with p < 2 is singular at |grad u|^2 = 0; enable regularization");
        return s;
    }

    void check_t(double t) const
    {
        if (!(t >= 0.0) || !std::isfinite(t))
            throw DomainError(name() + ": argument t must be finite and >= 0, got " + std::to_string(t));
        if (kind_ == PhiKind::custom_table && t > tt_.back())
            throw DomainError("custom-table: t = " + std::to_string(t) + " beyond the last table sample");
    }

    // Fritsch-Carlson slopes for a monotone cubic Hermite interpolant.
    void build_slopes()
    {
        const std::size_t n = tt_.size();
        std::vector<double> delta(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i)
            delta[i] = (tp_[i + 1] - tp_[i]) / (tt_[i + 1] - tt_[i]);
        m_.assign(n, 0.0);
        // One-sided three-point end slopes, limited to keep monotonicity.
        const auto end_slope = [](double h0, double h1, double d0, double d1) {
            double m = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if (m * d0 <= 0) m = 0;
            else if (d0 * d1 <= 0 && std::abs(m) > 3 * std::abs(d0)) m = 3 * d0;
            return m;
        };
        m_[0] = end_slope(tt_[1] - tt_[0], tt_[2] - tt_[1], delta[0], delta[1]);
        m_[n - 1] = end_slope(tt_[n - 1] - tt_[n - 2], tt_[n - 2] - tt_[n - 3], delta[n - 2], delta[n - 3]);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (delta[i - 1] * delta[i] <= 0) continue;
            const double h0 = tt_[i] - tt_[i - 1], h1 = tt_[i + 1] - tt_[i];
            const double w1 = 2 * h1 + h0, w2 = h1 + 2 * h0;
            m_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }

    double table(double t, int order) const
    {
        auto it = std::upper_bound(tt_.begin(), tt_.end(), t);
        std::size_t i = it == tt_.begin() ? 0 : static_cast<std::size_t>(it - tt_.begin()) - 1;
        i = std::min(i, tt_.size() - 2);
        const double h = tt_[i + 1] - tt_[i];
        const double s = (t - tt_[i]) / h;
        const double y0 = tp_[i], y1 = tp_[i + 1], m0 = m_[i] * h, m1 = m_[i + 1] * h;
        // Hermite cubic in s and its s-derivatives.
        const double a = 2 * y0 - 2 * y1 + m0 + m1;
        const double b = -3 * y0 + 3 * y1 - 2 * m0 - m1;
        switch (order) {
        case 0: return ((a * s + b) * s + m0) * s + y0;
        case 1: return ((3 * a * s + 2 * b) * s + m0) / h;
        case 2: return (6 * a * s + 2 * b) / (h * h);
        default: return 6 * a / (h * h * h);
        }
    }

    PhiKind kind_;
    double p_ = 2.0;
    double eps_ = 0.0;
    std::vector<double> tt_, tp_, m_;
};

inline double lambda_eval(const PhiFamily& phi, double t) { return phi.lambda(t); }
inline double psi_eval(const PhiFamily& phi, double t) { return phi.psi(t); }

/// Solves Psi(t) = y for t >= 0 by safeguarded Newton (Psi' = Lambda) inside a bisection bracket.
inline double psi_inverse(const PhiFamily& phi, double y)
{
    QLM_THROW_IF(!(y >= 0.0) || !std::isfinite(y), DomainError, "psi_inverse: target must be finite and >= 0");
    if (y == 0.0) return 0.0;
    if (!(y < phi.psi_sup()))
        throw DomainError("psi_inverse: value " + std::to_string(y) + " outside the range of Psi (sup " +
                          std::to_string(phi.psi_sup()) + ")");
    if (phi.kind() == PhiKind::linear) return y;
    double lo = 0.0, hi = 1.0;
    while (phi.psi(hi) < y) {
        lo = hi;
        hi *= 2.0;
        QLM_THROW_IF(hi > 1e300, DomainError, "psi_inverse: could not bracket the target");
    }
    double t = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double r = phi.psi(t) - y;
        if (std::abs(r) <= 1e-14 * std::max(1.0, y)) return t;
        if (r > 0) hi = t; else lo = t;
        const double slope = phi.lambda(t);
        double next = slope > 0 ? t - r / slope : lo - 1.0;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (hi - lo <= 4 * std::numeric_limits<double>::epsilon() * hi) return next;
        t = next;
    }
    return t;
}

/// a_ij(sigma) = 2 Phi''(|sigma|^2) sigma_i sigma_j + Phi'(|sigma|^2) delta_ij (Euclidean).
inline Mat a_tensor(const PhiFamily& phi, const Vec& sigma)
{
    QLM_THROW_IF(!sigma.allFinite(), DomainError, "a_tensor: sigma must be finite");
    const double t = sigma.squaredNorm();
    const auto dim = sigma.size();
    return phi.two_d2_or_zero(t) * sigma * sigma.transpose() + phi.d1(t) * Mat::Identity(dim, dim);
}

/// Same tensor with indices raised by a metric: a^ij = 2 Phi'' s^i s^j + Phi' g^ij, s = g^-1 sigma.
inline Mat a_tensor(const PhiFamily& phi, const Vec& sigma_cov, const Mat& g_inv)
{
    const Vec s = g_inv * sigma_cov;
    const double t = sigma_cov.dot(s);
    return phi.two_d2_or_zero(t) * s * s.transpose() + phi.d1(t) * g_inv;
}

enum class PotentialKind { allen_cahn, quadratic, cosh, zero, polynomial };

inline std::string to_string(PotentialKind kind)
{
    switch (kind) {
    case PotentialKind::allen_cahn: return "allen-cahn";
    case PotentialKind::quadratic: return "quadratic";
    case PotentialKind::cosh: return "cosh";
    case PotentialKind::zero: return "zero";
    case PotentialKind::polynomial: return "polynomial";
    }
    return "?";
}

/// Sampled check of the flags a potential claims.
struct PotentialFlagCheck {
    double lo = 0, hi = 0;
    double min_F = 0, min_F2 = 0, max_F2 = 0;
    bool nonneg_holds = false, convex_holds = false, concave_holds = false;
};

/// F(u) with F', F'' and the claimed sign flags.
class Potential {
public:
    static Potential allen_cahn(double scale = 1.0)
    {
        QLM_THROW_IF(!(scale > 0), ConfigError, "allen-cahn: scale must be > 0");
        Potential p(PotentialKind::allen_cahn, {scale});
        p.nonneg_ = true;
        p.convex_ = false;
        return p;
    }
    static Potential quadratic(double center = 0.0)
    {
        Potential p(PotentialKind::quadratic, {center});
        p.nonneg_ = p.convex_ = true;
        return p;
    }
    static Potential cosh_potential()
    {
        Potential p(PotentialKind::cosh, {});
        p.nonneg_ = p.convex_ = true;
        return p;
    }
    static Potential zero()
    {
        Potential p(PotentialKind::zero, {});
        p.nonneg_ = p.convex_ = true;
        return p;
    }
    /// F(u) = sum_k c_k u^k; the flags are the caller's claims and are re-checked by sampling.
    static Potential polynomial(std::vector<double> coeffs, bool nonneg, bool convex)
    {
        QLM_THROW_IF(coeffs.empty(), ConfigError, "polynomial potential: need at least one coefficient");
        Potential p(PotentialKind::polynomial, std::move(coeffs));
        p.nonneg_ = nonneg;
        p.convex_ = convex;
        return p;
    }

    PotentialKind kind() const { return kind_; }
    std::string name() const { return to_string(kind_); }
    const std::vector<double>& params() const { return params_; }
    bool nonneg() const { return nonneg_; }
    bool convex() const { return convex_; }
    bool identically_zero() const
    {
        if (kind_ == PotentialKind::zero) return true;
        if (kind_ != PotentialKind::polynomial) return false;
        for (std::size_t k = 1; k < params_.size(); ++k)
            if (params_[k] != 0.0) return false;
        return true;
    }

    /// Copy with the Allen-Cahn scale replaced (continuation parameter).
    Potential with_scale(double scale) const
    {
        QLM_THROW_IF(kind_ != PotentialKind::allen_cahn, ConfigError, "potential_scale continuation needs allen-cahn");
        return allen_cahn(scale);
    }

    double F(double u) const
    {
        switch (kind_) {
        case PotentialKind::allen_cahn: return params_[0] * 0.25 * (1 - u * u) * (1 - u * u);
        case PotentialKind::quadratic: return 0.5 * (u - params_[0]) * (u - params_[0]);
        case PotentialKind::cosh: return std::cosh(u) - 1.0;
        case PotentialKind::zero: return 0.0;
        case PotentialKind::polynomial: return poly(u, 0);
        }
        return 0;
    }
    double dF(double u) const
    {
        switch (kind_) {
        case PotentialKind::allen_cahn: return params_[0] * (u * u * u - u);
        case PotentialKind::quadratic: return u - params_[0];
        case PotentialKind::cosh: return std::sinh(u);
        case PotentialKind::zero: return 0.0;
        case PotentialKind::polynomial: return poly(u, 1);
        }
        return 0;
    }
    double d2F(double u) const
    {
        switch (kind_) {
        case PotentialKind::allen_cahn: return params_[0] * (3 * u * u - 1);
        case PotentialKind::quadratic: return 1.0;
        case PotentialKind::cosh: return std::cosh(u);
        case PotentialKind::zero: return 0.0;
        case PotentialKind::polynomial: return poly(u, 2);
        }
        return 0;
    }

    /// Samples F and F'' on [lo, hi] (endpoints included).
    PotentialFlagCheck check_flags(double lo, double hi, int samples = 2001) const
    {
        PotentialFlagCheck c;
        c.lo = lo;
        c.hi = hi;
        c.min_F = c.min_F2 = std::numeric_limits<double>::infinity();
        c.max_F2 = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < samples; ++i) {
            const double u = samples == 1 ? lo : lo + (hi - lo) * i / (samples - 1);
            c.min_F = std::min(c.min_F, F(u));
            c.min_F2 = std::min(c.min_F2, d2F(u));
            c.max_F2 = std::max(c.max_F2, d2F(u));
        }
        c.nonneg_holds = c.min_F >= 0.0;
        c.convex_holds = c.min_F2 >= 0.0;
        c.concave_holds = c.max_F2 <= 0.0;
        return c;
    }

private:
    Potential(PotentialKind kind, std::vector<double> params) : kind_(kind), params_(std::move(params)) {}

    // Horner evaluation of the deriv-th derivative.
    double poly(double u, int deriv) const
    {
        double s = 0;
        for (std::size_t k = params_.size(); k-- > 0;) {
            if (static_cast<int>(k) < deriv) break;
            double c = params_[k];
            for (int d = 0; d < deriv; ++d) c *= static_cast<double>(static_cast<int>(k) - d);
            s = s * u + c;
        }
        return s;
    }

    PotentialKind kind_;
    std::vector<double> params_;
    bool nonneg_ = false;
    bool convex_ = false;
};

/// Result of an empirical sandwich test of Assumption (A) or (B).
struct EllipticityReport {
    std::string family;
    std::string assumption;
    int dim = 2;
    std::size_t sigma_samples = 0;
    std::size_t xi_samples = 0;
    double p = 2.0;
    double a = 0.0;
    // Tightest constants over both sandwich lines, and per line.
    double c1 = 0, c2 = 0;
    double phi_prime_c1 = 0, phi_prime_c2 = 0;
    double form_c1 = 0, form_c2 = 0;
    double max_spread = 0;
    bool phi_prime_pass = false;
    bool form_pass = false;
    bool pass = false;
    std::string failure;
};

namespace detail {

inline Vec random_unit(std::mt19937_64& rng, int dim)
{
    std::normal_distribution<double> nd;
    Eigen::VectorXd v(dim);
    do {
        for (int i = 0; i < dim; ++i) v(i) = nd(rng);
    } while (v.norm() < 1e-12);
    return Vec(v.normalized());
}

inline bool sandwich_ok(double c1, double c2, double spread)
{
    return c1 > 0 && std::isfinite(c2) && c1 <= c2 && c2 / c1 <= spread;
}

inline void finish_report(EllipticityReport& r, double spread)
{
    r.max_spread = spread;
    r.phi_prime_pass = detail::sandwich_ok(r.phi_prime_c1, r.phi_prime_c2, spread);
    r.form_pass = detail::sandwich_ok(r.form_c1, r.form_c2, spread);
    r.c1 = std::min(r.phi_prime_c1, r.form_c1);
    r.c2 = std::max(r.phi_prime_c2, r.form_c2);
    r.pass = r.failure.empty() && r.phi_prime_pass && r.form_pass;
}

} // namespace detail

/// Default bound on c2/c1: a finite sample always yields finite constants, so
/// uniformity is judged by the spread of the sampled ratios over 12 decades of |sigma|.
inline constexpr double kDefaultEllipticitySpread = 1e4;

/// Samples |sigma| log-uniformly in [1e-6, 1e6] with random directions and unit xi,
/// and records the extreme ratios Phi'/(a+|sigma|)^(p-2) and a(sigma)[xi,xi]/(a+|sigma|)^(p-2).
inline EllipticityReport check_assumption_A(const PhiFamily& phi, double p, double a, int n_samples, std::uint64_t seed,
                                            int dim = 2, double max_spread = kDefaultEllipticitySpread)
{
    QLM_THROW_IF(!(p > 1), ConfigError, "assumption A: p must be > 1");
    QLM_THROW_IF(!(a >= 0), ConfigError, "assumption A: a must be >= 0");
    QLM_THROW_IF(n_samples < 1000, ConfigError, "assumption A: need at least 1000 samples");
    QLM_THROW_IF(dim < 1 || dim > kMaxDim, ConfigError, "assumption A: dim must be 1..3");
    EllipticityReport r;
    r.family = phi.name();
    r.assumption = "A";
    r.dim = dim;
    r.p = p;
    r.a = a;
    const double inf = std::numeric_limits<double>::infinity();
    r.phi_prime_c1 = r.form_c1 = inf;
    r.phi_prime_c2 = r.form_c2 = 0;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ex(-6.0, 6.0);
    for (int k = 0; k < n_samples; ++k) {
        const double mag = std::pow(10.0, ex(rng));
        const Vec sigma = mag * detail::random_unit(rng, dim);
        const Vec xi = detail::random_unit(rng, dim);
        const double w = std::pow(a + mag, p - 2);
        double d1, q;
        try {
            d1 = phi.d1(mag * mag);
            q = xi.dot(a_tensor(phi, sigma) * xi);
        }
        catch (const DomainError& e) {
            r.failure = "family undefined at |sigma| = " + std::to_string(mag) + ": " + e.what();
            break;
        }
        if (!std::isfinite(d1) || !std::isfinite(q) || !(w > 0) || !std::isfinite(w)) {
            r.failure = "non-finite evaluation at |sigma| = " + std::to_string(mag);
            break;
        }
        r.phi_prime_c1 = std::min(r.phi_prime_c1, d1 / w);
        r.phi_prime_c2 = std::max(r.phi_prime_c2, d1 / w);
        r.form_c1 = std::min(r.form_c1, q / w);
        r.form_c2 = std::max(r.form_c2, q / w);
        ++r.sigma_samples;
        ++r.xi_samples;
    }
    detail::finish_report(r, max_spread);
    return r;
}

/// Same with weight (1+|sigma|)^-1 and xi' = (xi, xi_{n+1}) drawn uniformly from the
/// unit sphere of the hyperplane orthogonal to (-sigma, 1); the quadratic form is
/// compared with |xi'|^2 = 1. The first sample is sigma = 0.
inline EllipticityReport check_assumption_B(const PhiFamily& phi, int n_samples, std::uint64_t seed, int dim = 2,
                                            double max_spread = kDefaultEllipticitySpread)
{
    QLM_THROW_IF(n_samples < 1000, ConfigError, "assumption B: need at least 1000 samples");
    QLM_THROW_IF(dim < 1 || dim > kMaxDim, ConfigError, "assumption B: dim must be 1..3");
    EllipticityReport r;
    r.family = phi.name();
    r.assumption = "B";
    r.dim = dim;
    r.p = 1.0;
    r.a = 1.0;
    const double inf = std::numeric_limits<double>::infinity();
    r.phi_prime_c1 = r.form_c1 = inf;
    r.phi_prime_c2 = r.form_c2 = 0;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ex(-6.0, 6.0);
    std::normal_distribution<double> nd;
    for (int k = 0; k < n_samples; ++k) {
        const double mag = k == 0 ? 0.0 : std::pow(10.0, ex(rng));
        const Vec sigma = mag * detail::random_unit(rng, dim);
        // Gaussian in R^{n+1}, projected onto the hyperplane normal to (-sigma, 1).
        Eigen::VectorXd normal(dim + 1), z(dim + 1);
        normal.head(dim) = -sigma;
        normal(dim) = 1.0;
        normal.normalize();
        do {
            for (int i = 0; i <= dim; ++i) z(i) = nd(rng);
            z -= z.dot(normal) * normal;
        } while (z.norm() < 1e-12);
        z.normalize();
        const Vec xi = z.head(dim);
        const double w = 1.0 / (1.0 + mag);
        double d1, q;
        try {
            d1 = phi.d1(mag * mag);
            q = xi.dot(a_tensor(phi, sigma) * xi);
        }
        catch (const DomainError& e) {
            r.failure = "family undefined at |sigma| = " + std::to_string(mag) + ": " + e.what();
            break;
        }
        if (!std::isfinite(d1) || !std::isfinite(q)) {
            r.failure = "non-finite evaluation at |sigma| = " + std::to_string(mag);
            break;
        }
        r.phi_prime_c1 = std::min(r.phi_prime_c1, d1 / w);
        r.phi_prime_c2 = std::max(r.phi_prime_c2, d1 / w);
        r.form_c1 = std::min(r.form_c1, q / w);
        r.form_c2 = std::max(r.form_c2, q / w);
        ++r.sigma_samples;
        ++r.xi_samples;
    }
    detail::finish_report(r, max_spread);
    return r;
}

/// Lower ellipticity constant min(Phi'(t), Lambda(t)) over the given t values.
inline double ellipticity_floor(const PhiFamily& phi, const std::vector<double>& t_values)
{
    double c = std::numeric_limits<double>::infinity();
    for (double t : t_values)
        c = std::min({c, phi.d1(t), phi.lambda(t)});
    return c;
}

} // namespace qlm
