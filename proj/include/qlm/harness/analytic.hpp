#pragma once

#include "qlm/grid.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <string>

namespace qlm::harness {

/// Closed-form test field with its covariant gradient and Laplace-Beltrami value.
struct AnalyticField {
    std::string name;
    std::function<double(const Vec&)> u;
    std::function<Vec(const Vec&)> grad;
    std::function<double(const Vec&)> laplacian;
};

/// Catalog:
///   constant  : u = offset
///   sin-cos   : u = A sin(k0 x0) prod_{a>0} cos(k_a x_a) + offset, k_a = 2 pi / L_a (flat grids)
///   sin-x     : u = A sin(k0 x0) + offset (flat grids)
///   cos-theta : u = A cos(theta) + offset (sphere)
inline AnalyticField analytic_field(const std::string& name, const GridSpec& spec, double amplitude, double offset)
{
    const int dim = static_cast<int>(spec.shape.size());
    AnalyticField f;
    f.name = name;
    if (name == "constant") {
        f.u = [offset](const Vec&) { return offset; };
        f.grad = [dim](const Vec&) { return Vec(Vec::Zero(dim)); };
        f.laplacian = [](const Vec&) { return 0.0; };
        return f;
    }
    if (name == "cos-theta") {
        QLM_THROW_IF(spec.kind != MetricKind::sphere_latlong, ConfigError, "field cos-theta needs a sphere grid");
        const double r = spec.params.empty() ? 1.0 : spec.params[0];
        f.u = [=](const Vec& x) { return amplitude * std::cos(x(0)) + offset; };
        f.grad = [=](const Vec& x) {
            Vec g = Vec::Zero(2);
            g(0) = -amplitude * std::sin(x(0));
            return g;
        };
        f.laplacian = [=](const Vec& x) { return -2.0 * amplitude * std::cos(x(0)) / (r * r); };
        return f;
    }
    QLM_THROW_IF(spec.kind != MetricKind::flat_torus, ConfigError, "field " + name + " needs a flat torus");
    std::vector<double> k;
    for (double L : spec.lengths) k.push_back(2 * std::numbers::pi / L);
    if (name == "sin-x") {
        f.u = [=](const Vec& x) { return amplitude * std::sin(k[0] * x(0)) + offset; };
        f.grad = [=](const Vec& x) {
            Vec g = Vec::Zero(dim);
            g(0) = amplitude * k[0] * std::cos(k[0] * x(0));
            return g;
        };
        f.laplacian = [=](const Vec& x) { return -amplitude * k[0] * k[0] * std::sin(k[0] * x(0)); };
        return f;
    }
    if (name == "sin-cos") {
        // Factors s_0 = sin, s_a = cos for a > 0, with derivatives d_a.
        const auto factor = [=](int a, double x) { return a == 0 ? std::sin(k[0] * x) : std::cos(k[a] * x); };
        const auto dfactor = [=](int a, double x) { return a == 0 ? k[0] * std::cos(k[0] * x) : -k[a] * std::sin(k[a] * x); };
        f.u = [=](const Vec& x) {
            double p = amplitude;
            for (int a = 0; a < dim; ++a) p *= factor(a, x(a));
            return p + offset;
        };
        f.grad = [=](const Vec& x) {
            Vec g(dim);
            for (int a = 0; a < dim; ++a) {
                double p = amplitude * dfactor(a, x(a));
                for (int b = 0; b < dim; ++b)
                    if (b != a) p *= factor(b, x(b));
                g(a) = p;
            }
            return g;
        };
        f.laplacian = [=](const Vec& x) {
            double p = amplitude, ksq = 0;
            for (int a = 0; a < dim; ++a) {
                p *= factor(a, x(a));
                ksq += k[a] * k[a];
            }
            return -ksq * p;
        };
        return f;
    }
    throw ConfigError("unknown analytic field '" + name + "'");
}

} // namespace qlm::harness
