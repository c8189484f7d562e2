#pragma once

#include "qlm/fields.hpp"

#include <cmath>
#include <functional>

namespace qlm {

namespace detail {

// Sign a tensor component picks up across a pole, given how many of its
// indices point along the reflection axis.
inline double reflection_sign(bool reflected, int axis_index_count)
{
    return (reflected && (axis_index_count % 2 == 1)) ? -1.0 : 1.0;
}

inline int count_axis(int reflection_axis, int i) { return i == reflection_axis ? 1 : 0; }
inline int count_axis(int reflection_axis, int i, int j) { return (i == reflection_axis) + (j == reflection_axis); }

inline double central_scalar(const MetricGrid& grid, std::span<const double> u, std::size_t node, int axis)
{
    const auto p = grid.neighbor(node, axis, 1);
    const auto m = grid.neighbor(node, axis, -1);
    return (u[p.index] - u[m.index]) / (2.0 * grid.spacing(axis));
}

} // namespace detail

/// Covariant components d_i u by second-order central differences.
inline VectorField covariant_gradient(const ScalarField& u)
{
    const MetricGrid& grid = *u.grid();
    VectorField out(u.grid(), Variance::covariant);
    for (std::size_t n = 0; n < grid.size(); ++n)
        for (int a = 0; a < grid.dim(); ++a)
            out(n, a) = detail::central_scalar(grid, u.values(), n, a);
    return out;
}

inline VectorField raise(const VectorField& v)
{
    QLM_THROW_IF(v.variance() != Variance::covariant, DomainError, "raise: field is already contravariant");
    const MetricGrid& grid = *v.grid();
    VectorField out(v.grid(), Variance::contravariant);
    for (std::size_t n = 0; n < grid.size(); ++n)
        out.set(n, grid.g_inv(n) * v.at(n));
    return out;
}

inline VectorField lower(const VectorField& v)
{
    QLM_THROW_IF(v.variance() != Variance::contravariant, DomainError, "lower: field is already covariant");
    const MetricGrid& grid = *v.grid();
    VectorField out(v.grid(), Variance::covariant);
    for (std::size_t n = 0; n < grid.size(); ++n)
        out.set(n, grid.g(n) * v.at(n));
    return out;
}

/// Pointwise |V|^2_g for either variance.
inline ScalarField norm_squared(const VectorField& v)
{
    const MetricGrid& grid = *v.grid();
    ScalarField out(v.grid());
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const Vec x = v.at(n);
        const Mat m = v.variance() == Variance::covariant ? grid.g_inv(n) : grid.g(n);
        out[n] = x.dot(m * x);
    }
    return out;
}

/// Second covariant derivative H_ij = d_i d_j u - Gamma^k_ij d_k u.
inline SymTensorField covariant_hessian(const ScalarField& u)
{
    const MetricGrid& grid = *u.grid();
    const int dim = grid.dim();
    const auto vals = u.values();
    SymTensorField out(u.grid(), Variance::covariant);
    for (std::size_t n = 0; n < grid.size(); ++n) {
        Vec du(dim);
        for (int a = 0; a < dim; ++a)
            du(a) = detail::central_scalar(grid, vals, n, a);
        Mat h(dim, dim);
        for (int i = 0; i < dim; ++i) {
            const double hi = grid.spacing(i);
            h(i, i) = (vals[grid.neighbor(n, i, 1).index] - 2.0 * vals[n] + vals[grid.neighbor(n, i, -1).index]) / (hi * hi);
            for (int j = i + 1; j < dim; ++j) {
                const double pp = vals[grid.neighbor(n, i, 1, j, 1).index];
                const double pm = vals[grid.neighbor(n, i, 1, j, -1).index];
                const double mp = vals[grid.neighbor(n, i, -1, j, 1).index];
                const double mm = vals[grid.neighbor(n, i, -1, j, -1).index];
                h(i, j) = h(j, i) = (pp - pm - mp + mm) / (4.0 * hi * grid.spacing(j));
            }
        }
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j)
                for (int k = 0; k < dim; ++k)
                    h(i, j) -= grid.christoffel(n, k, i, j) * du(k);
        out.set(n, h);
    }
    return out;
}

/// (1/sqrt g) d_k (sqrt g V^k) in flux form: face fluxes are sqrt g at the face
/// times the average of the two adjacent nodal components, so the volume-weighted
/// sum over a closed grid telescopes to zero.
inline ScalarField divergence(const VectorField& v)
{
    QLM_THROW_IF(v.variance() != Variance::contravariant, DomainError, "divergence: field must be contravariant");
    const MetricGrid& grid = *v.grid();
    const int axis_r = grid.reflection_axis();
    ScalarField acc(v.grid());
    for (int a = 0; a < grid.dim(); ++a) {
        const double inv_h = 1.0 / grid.spacing(a);
        for (std::size_t n = 0; n < grid.size(); ++n) {
            if (!grid.face_valid(n, a)) continue;
            const auto nb = grid.neighbor(n, a, 1);
            const double other = v(nb.index, a) * detail::reflection_sign(nb.reflected, detail::count_axis(axis_r, a));
            const double flux = grid.face_sqrt_det_g(n, a) * 0.5 * (v(n, a) + other);
            acc[n] += flux * inv_h;
            acc[nb.index] -= flux * inv_h;
        }
    }
    for (std::size_t n = 0; n < grid.size(); ++n)
        acc[n] /= grid.sqrt_det_g(n);
    return acc;
}

/// Ric(V, V) = R_ij V^i V^j.
inline ScalarField ricci_quadratic(const VectorField& v)
{
    QLM_THROW_IF(v.variance() != Variance::contravariant, DomainError, "ricci_quadratic: field must be contravariant");
    const MetricGrid& grid = *v.grid();
    ScalarField out(v.grid());
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const Vec x = v.at(n);
        out[n] = x.dot(grid.ricci(n) * x);
    }
    return out;
}

/// Covariant gradient at the face between `node` and its +1 neighbor on `axis`:
/// the normal component is the compact difference, transverse components average
/// the nodal central differences of both sides.
inline Vec face_gradient(const MetricGrid& grid, std::span<const double> u, std::size_t node, int axis)
{
    const int dim = grid.dim();
    const auto nb = grid.neighbor(node, axis, 1);
    Vec s(dim);
    for (int l = 0; l < dim; ++l) {
        if (l == axis)
            s(l) = (u[nb.index] - u[node]) / grid.spacing(axis);
        else
            s(l) = 0.5 * (detail::central_scalar(grid, u, node, l) + detail::central_scalar(grid, u, nb.index, l));
    }
    return s;
}

/// Compact flux-form discretization of div(c(|grad u|^2) grad u). With c == 1
/// this is the Laplace-Beltrami operator (1/sqrt g) d_k(sqrt g g^kl d_l u).
inline ScalarField flux_divergence(const ScalarField& u, const std::function<double(double)>& coefficient)
{
    const MetricGrid& grid = *u.grid();
    const auto vals = u.values();
    ScalarField acc(u.grid());
    for (int a = 0; a < grid.dim(); ++a) {
        const double inv_h = 1.0 / grid.spacing(a);
        for (std::size_t n = 0; n < grid.size(); ++n) {
            if (!grid.face_valid(n, a)) continue;
            const Vec s = face_gradient(grid, vals, n, a);
            const Mat ginv = grid.face_g_inv(n, a);
            const Vec up = ginv * s;
            const double flux = grid.face_sqrt_det_g(n, a) * coefficient(s.dot(up)) * up(a);
            const auto nb = grid.neighbor(n, a, 1);
            acc[n] += flux * inv_h;
            acc[nb.index] -= flux * inv_h;
        }
    }
    for (std::size_t n = 0; n < grid.size(); ++n)
        acc[n] /= grid.sqrt_det_g(n);
    return acc;
}

inline ScalarField laplace_beltrami(const ScalarField& u)
{
    return flux_divergence(u, [](double) { return 1.0; });
}

/// Divergence of a symmetric (2,0) tensor: (div T)^i = d_j T^ij + G^i_jk T^kj + G^j_jk T^ik,
/// with the partial derivatives by central differences of the components.
inline VectorField tensor_divergence(const SymTensorField& t)
{
    QLM_THROW_IF(t.variance() != Variance::contravariant, DomainError, "tensor_divergence: tensor must be contravariant");
    const MetricGrid& grid = *t.grid();
    const int dim = grid.dim();
    const int axis_r = grid.reflection_axis();
    VectorField out(t.grid(), Variance::contravariant);
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const Mat here = t.at(n);
        for (int i = 0; i < dim; ++i) {
            double s = 0;
            for (int j = 0; j < dim; ++j) {
                const auto p = grid.neighbor(n, j, 1);
                const auto m = grid.neighbor(n, j, -1);
                const int cnt = detail::count_axis(axis_r, i, j);
                const double tp = t(p.index, i, j) * detail::reflection_sign(p.reflected, cnt);
                const double tm = t(m.index, i, j) * detail::reflection_sign(m.reflected, cnt);
                s += (tp - tm) / (2.0 * grid.spacing(j));
                for (int k = 0; k < dim; ++k)
                    s += grid.christoffel(n, i, j, k) * here(k, j) + grid.christoffel(n, j, j, k) * here(i, k);
            }
            out(n, i) = s;
        }
    }
    return out;
}

/// Volume integral sum_n f_n sqrt(g_n) * cell volume, summed in node order.
inline double integrate(const ScalarField& f)
{
    const MetricGrid& grid = *f.grid();
    double s = 0;
    for (std::size_t n = 0; n < grid.size(); ++n)
        s += f[n] * grid.volume_weight(n);
    return s;
}

/// |H|^2_g = g^ik g^jl H_ij H_kl for a covariant tensor.
inline double tensor_norm_squared(const Mat& h, const Mat& ginv)
{
    return (ginv * h * ginv * h).trace();
}

/// Largest |d^3 u / dx_a^3| over nodes and axes (five-point central stencil).
inline double third_derivative_max(const ScalarField& u)
{
    const MetricGrid& grid = *u.grid();
    const auto v = u.values();
    double m = 0;
    for (std::size_t n = 0; n < grid.size(); ++n)
        for (int a = 0; a < grid.dim(); ++a) {
            const double h = grid.spacing(a);
            const double d3 = (v[grid.neighbor(n, a, 2).index] - 2.0 * v[grid.neighbor(n, a, 1).index] +
                               2.0 * v[grid.neighbor(n, a, -1).index] - v[grid.neighbor(n, a, -2).index]) /
                              (2.0 * h * h * h);
            m = std::max(m, std::abs(d3));
        }
    return m;
}

} // namespace qlm
