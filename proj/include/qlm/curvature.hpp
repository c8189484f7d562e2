#pragma once

#include "qlm/operators.hpp"

#include <cmath>

namespace qlm {

namespace detail {

// Central difference of a packed metric component across the grid.
inline double central_metric_component(const MetricGrid& grid, std::size_t node, int axis, int i, int j)
{
    const auto p = grid.neighbor(node, axis, 1);
    const auto m = grid.neighbor(node, axis, -1);
    const int cnt = count_axis(grid.reflection_axis(), i, j);
    const double gp = grid.g(p.index)(i, j) * reflection_sign(p.reflected, cnt);
    const double gm = grid.g(m.index)(i, j) * reflection_sign(m.reflected, cnt);
    return (gp - gm) / (2.0 * grid.spacing(axis));
}

inline bool metric_is_diagonal(const MetricGrid& grid)
{
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const Mat g = grid.g(n);
        for (int i = 0; i < grid.dim(); ++i)
            for (int j = i + 1; j < grid.dim(); ++j)
                if (g(i, j) != 0.0) return false;
    }
    return true;
}

// Christoffel symbols from second-order central differences of the nodal metric.
inline std::vector<double> grid_christoffel(const MetricGrid& grid)
{
    const int dim = grid.dim();
    const auto d3 = static_cast<std::size_t>(dim * dim * dim);
    std::vector<double> gamma(grid.size() * d3, 0.0);
    for (std::size_t n = 0; n < grid.size(); ++n) {
        std::array<Mat, kMaxDim> dg;
        for (int a = 0; a < dim; ++a) {
            dg[a] = Mat(dim, dim);
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j)
                    dg[a](i, j) = central_metric_component(grid, n, a, i, j);
        }
        const Mat ginv = grid.g_inv(n);
        for (int k = 0; k < dim; ++k)
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j) {
                    double s = 0;
                    for (int l = 0; l < dim; ++l)
                        s += ginv(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
                    gamma[n * d3 + static_cast<std::size_t>((k * dim + i) * dim + j)] = 0.5 * s;
                }
    }
    return gamma;
}

} // namespace detail

/// Ricci tensor computed from the nodal metric values alone, with second-order
/// stencils, as an independent check of the catalog curvature.
///
/// Two-dimensional diagonal metrics g = diag(E, G) use Ric = K g with
///   K = -(1/sqrt(EG)) [ d_0(d_0 sqrt(G) / sqrt(E)) + d_1(d_1 sqrt(E) / sqrt(G)) ]
/// in compact flux form. Through a sphere pole sqrt(G) = r sin(theta) continues
/// as an odd function, which keeps the pole rows second-order accurate.
/// Other grids use central differences of grid Christoffel symbols.
inline SymTensorField discrete_ricci(const GridPtr& grid_ptr)
{
    const MetricGrid& grid = *grid_ptr;
    const int dim = grid.dim();
    SymTensorField out(grid_ptr, Variance::covariant);
    if (dim == 1) return out;

    if (dim == 2 && detail::metric_is_diagonal(grid)) {
        const auto root = [&](std::size_t n, int c) { return std::sqrt(grid.g(n)(c, c)); };
        for (std::size_t n = 0; n < grid.size(); ++n) {
            double bracket = 0;
            for (int a = 0; a < 2; ++a) {
                // Along axis a differentiate sqrt of the *other* diagonal entry, divided by sqrt of this one.
                const int other = 1 - a;
                const double h = grid.spacing(a);
                double flux[2];
                for (int side = 0; side < 2; ++side) {
                    const int step = side == 0 ? 1 : -1;
                    const auto nb = grid.neighbor(n, a, step);
                    const double odd = nb.reflected ? -1.0 : 1.0;
                    const double d_other = step * (odd * root(nb.index, other) - root(n, other)) / h;
                    const double this_face = 0.5 * (root(n, a) + root(nb.index, a));
                    flux[side] = d_other / this_face;
                }
                bracket += (flux[0] - flux[1]) / h;
            }
            const double k = -bracket / grid.sqrt_det_g(n);
            out.set(n, k * grid.g(n));
        }
        return out;
    }

    const auto gamma = detail::grid_christoffel(grid);
    const auto d3 = static_cast<std::size_t>(dim * dim * dim);
    const auto G = [&](std::size_t n, int k, int i, int j) {
        return gamma[n * d3 + static_cast<std::size_t>((k * dim + i) * dim + j)];
    };
    for (std::size_t n = 0; n < grid.size(); ++n) {
        Mat ric = Mat::Zero(dim, dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) {
                double s = 0;
                for (int k = 0; k < dim; ++k) {
                    const auto kp = grid.neighbor(n, k, 1).index, km = grid.neighbor(n, k, -1).index;
                    const auto jp = grid.neighbor(n, j, 1).index, jm = grid.neighbor(n, j, -1).index;
                    s += (G(kp, k, i, j) - G(km, k, i, j)) / (2.0 * grid.spacing(k));
                    s -= (G(jp, k, i, k) - G(jm, k, i, k)) / (2.0 * grid.spacing(j));
                    for (int l = 0; l < dim; ++l)
                        s += G(n, k, k, l) * G(n, l, i, j) - G(n, k, j, l) * G(n, l, i, k);
                }
                ric(i, j) = s;
            }
        out.set(n, ric);
    }
    return out;
}

/// max over nodes of |d_k g_ij - G^l_ki g_lj - G^l_kj g_il|, with the metric
/// derivative by central differences and G taken from the grid record.
inline double metric_compatibility_residual(const MetricGrid& grid)
{
    const int dim = grid.dim();
    double worst = 0;
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const Mat g = grid.g(n);
        for (int k = 0; k < dim; ++k)
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j) {
                    double r = detail::central_metric_component(grid, n, k, i, j);
                    for (int l = 0; l < dim; ++l)
                        r -= grid.christoffel(n, l, k, i) * g(l, j) + grid.christoffel(n, l, k, j) * g(i, l);
                    worst = std::max(worst, std::abs(r));
                }
    }
    return worst;
}

} // namespace qlm
