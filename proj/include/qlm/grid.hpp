#pragma once

#include "qlm/error.hpp"
#include "qlm/small_linalg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace qlm {

enum class MetricKind { flat_torus, conformal_torus, sphere_latlong };

inline std::string to_string(MetricKind kind)
{
    switch (kind) {
    case MetricKind::flat_torus: return "flat-torus";
    case MetricKind::conformal_torus: return "conformal-torus";
    case MetricKind::sphere_latlong: return "sphere-latlong";
    }
    return "?";
}

inline MetricKind parse_metric_kind(std::string_view tag)
{
    if (tag == "flat-torus") return MetricKind::flat_torus;
    if (tag == "conformal-torus") return MetricKind::conformal_torus;
    if (tag == "sphere-latlong") return MetricKind::sphere_latlong;
    throw ConfigError("unknown metric catalog tag '" + std::string(tag) + "'");
}

struct GridSpec {
    MetricKind kind = MetricKind::flat_torus;
    std::vector<double> params;
    std::vector<int> shape;
    std::vector<double> lengths;
};

/// Result of stepping from a node along one axis. `reflected` is set when the
/// step crossed a sphere pole: the chart continues as (theta, phi) -> (-theta, phi + pi),
/// which flips the sign of every tensor component carrying a theta index.
struct Neighbor {
    std::size_t index;
    bool reflected;
};

// 64-bit FNV-1a, used for grid and config fingerprints.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull)
{
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {

// Fourth-order central difference of a callable along one coordinate.
template <class Fn>
auto fd4(const Fn& fn, const Vec& x, int axis, double delta)
{
    Vec xp2 = x, xp1 = x, xm1 = x, xm2 = x;
    xp2(axis) += 2 * delta;
    xp1(axis) += delta;
    xm1(axis) -= delta;
    xm2(axis) -= 2 * delta;
    return ((-fn(xp2) + 8.0 * fn(xp1) - 8.0 * fn(xm1) + fn(xm2)) / (12.0 * delta)).eval();
}

} // namespace detail

/// Christoffel symbols of a metric given as a callable, via fourth-order finite
/// differences with step `delta`. Layout: gamma[(k * dim + i) * dim + j] = Gamma^k_ij.
template <class MetricFn>
std::vector<double> christoffel_by_differences(const MetricFn& metric, const Vec& x, double delta)
{
    const auto dim = static_cast<int>(x.size());
    std::array<Mat, kMaxDim> dg;
    for (int a = 0; a < dim; ++a)
        dg[a] = detail::fd4(metric, x, a, delta);
    const Mat ginv = metric(x).inverse();
    std::vector<double> gamma(static_cast<std::size_t>(dim * dim * dim), 0.0);
    for (int k = 0; k < dim; ++k)
        for (int i = 0; i < dim; ++i)
            for (int j = i; j < dim; ++j) {
                double s = 0;
                for (int l = 0; l < dim; ++l)
                    s += ginv(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
                gamma[(k * dim + i) * dim + j] = gamma[(k * dim + j) * dim + i] = 0.5 * s;
            }
    return gamma;
}

/// Ricci tensor R_ij = d_k G^k_ij - d_j G^k_ik + G^k_kl G^l_ij - G^k_jl G^l_ik, with
/// the Christoffel derivatives taken by nested fourth-order differences.
template <class MetricFn>
Mat ricci_by_differences(const MetricFn& metric, const Vec& x, double delta)
{
    const auto dim = static_cast<int>(x.size());
    const auto gamma_at = [&](const Vec& y) {
        const auto g = christoffel_by_differences(metric, y, delta);
        Eigen::VectorXd v(static_cast<Eigen::Index>(g.size()));
        for (std::size_t n = 0; n < g.size(); ++n)
            v(static_cast<Eigen::Index>(n)) = g[n];
        return v;
    };
    const Eigen::VectorXd gamma = gamma_at(x);
    std::array<Eigen::VectorXd, kMaxDim> dgamma;
    for (int a = 0; a < dim; ++a)
        dgamma[a] = detail::fd4(gamma_at, x, a, delta);
    const auto G = [&](int k, int i, int j) { return gamma((k * dim + i) * dim + j); };
    const auto dG = [&](int a, int k, int i, int j) { return dgamma[a]((k * dim + i) * dim + j); };
    Mat ric = Mat::Zero(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) {
            double s = 0;
            for (int k = 0; k < dim; ++k) {
                s += dG(k, k, i, j) - dG(j, k, i, k);
                for (int l = 0; l < dim; ++l)
                    s += G(k, k, l) * G(l, i, j) - G(k, j, l) * G(l, i, k);
            }
            ric(i, j) = s;
        }
    return (0.5 * (ric + ric.transpose())).eval();
}

/// A compact manifold discretized as a structured periodic coordinate grid with
/// an analytic metric from a small catalog. Immutable once built; share it via
/// `std::shared_ptr<const MetricGrid>`.
///
/// Node layout is row-major with axis 0 slowest. Torus nodes sit at x_i = i*h.
/// Sphere nodes sit at theta_j = (j + 1/2) h_theta, phi_k = k h_phi (axis 0 is
/// theta), so no node lies on a pole.
class MetricGrid {
public:
    static std::shared_ptr<const MetricGrid> build(const GridSpec& spec)
    {
        return std::shared_ptr<const MetricGrid>(new MetricGrid(spec));
    }

    const GridSpec& spec() const { return spec_; }
    MetricKind kind() const { return spec_.kind; }
    int dim() const { return dim_; }
    std::size_t size() const { return size_; }
    int extent(int axis) const { return spec_.shape[static_cast<std::size_t>(axis)]; }
    double length(int axis) const { return spec_.lengths[static_cast<std::size_t>(axis)]; }
    double spacing(int axis) const { return h_[static_cast<std::size_t>(axis)]; }
    double max_spacing() const
    {
        double m = 0;
        for (int a = 0; a < dim_; ++a)
            m = std::max(m, spacing(a));
        return m;
    }
    /// Coordinate volume of one cell, prod_a h_a.
    double cell_volume() const { return cell_volume_; }
    /// True when Christoffel symbols and Ricci came from finite differences of the metric.
    bool curvature_by_differences() const { return curvature_by_differences_; }
    std::uint64_t hash() const { return hash_; }
    /// Axis whose components flip sign across a pole, or -1 when the grid has no poles.
    int reflection_axis() const { return spec_.kind == MetricKind::sphere_latlong ? 0 : -1; }

    std::array<int, 3> coords(std::size_t node) const
    {
        std::array<int, 3> c{0, 0, 0};
        for (int a = dim_ - 1; a >= 0; --a) {
            const auto n = static_cast<std::size_t>(extent(a));
            c[static_cast<std::size_t>(a)] = static_cast<int>(node % n);
            node /= n;
        }
        return c;
    }

    std::size_t index(const std::array<int, 3>& c) const
    {
        std::size_t idx = 0;
        for (int a = 0; a < dim_; ++a)
            idx = idx * static_cast<std::size_t>(extent(a)) + static_cast<std::size_t>(c[static_cast<std::size_t>(a)]);
        return idx;
    }

    double coordinate(int axis, int i) const
    {
        if (spec_.kind == MetricKind::sphere_latlong && axis == 0)
            return (i + 0.5) * spacing(0);
        return i * spacing(axis);
    }

    Vec point(std::size_t node) const
    {
        const auto c = coords(node);
        Vec x(dim_);
        for (int a = 0; a < dim_; ++a)
            x(a) = coordinate(a, c[static_cast<std::size_t>(a)]);
        return x;
    }

    /// Step `step` nodes along `axis` with periodic wrap (and pole reflection on the sphere).
    Neighbor neighbor(std::size_t node, int axis, int step) const
    {
        auto c = coords(node);
        const auto ax = static_cast<std::size_t>(axis);
        const int n = extent(axis);
        int j = c[ax] + step;
        bool reflected = false;
        if (reflection_axis() == axis) {
            if (j < 0 || j >= n) {
                j = j < 0 ? -1 - j : 2 * n - 1 - j;
                const int nphi = extent(1);
                c[1] = (c[1] + nphi / 2) % nphi;
                reflected = true;
            }
        }
        else {
            j = ((j % n) + n) % n;
        }
        c[ax] = j;
        return {index(c), reflected};
    }

    /// Compose two axis steps; reflections accumulate by parity.
    Neighbor neighbor(std::size_t node, int axis_a, int step_a, int axis_b, int step_b) const
    {
        const Neighbor first = neighbor(node, axis_a, step_a);
        const Neighbor second = neighbor(first.index, axis_b, step_b);
        return {second.index, first.reflected != second.reflected};
    }

    /// Analytic metric at an arbitrary coordinate point.
    Mat metric_at(const Vec& x) const
    {
        Mat g = Mat::Identity(dim_, dim_);
        switch (spec_.kind) {
        case MetricKind::flat_torus: break;
        case MetricKind::conformal_torus: g *= std::exp(2.0 * conformal_factor(x)); break;
        case MetricKind::sphere_latlong: {
            const double r = spec_.params[0];
            const double s = std::sin(x(0));
            g(0, 0) = r * r;
            g(1, 1) = r * r * s * s;
            break;
        }
        }
        return g;
    }

    // Per-node precomputed geometry.
    Mat g(std::size_t node) const { return unpack_sym(&g_[node * ncomp_], dim_); }
    Mat g_inv(std::size_t node) const { return unpack_sym(&g_inv_[node * ncomp_], dim_); }
    double sqrt_det_g(std::size_t node) const { return sqrt_det_g_[node]; }
    /// Gamma^k_ij at a node.
    double christoffel(std::size_t node, int k, int i, int j) const
    {
        return christoffel_[node * dim3_ + static_cast<std::size_t>((k * dim_ + i) * dim_ + j)];
    }
    Mat ricci(std::size_t node) const { return unpack_sym(&ricci_[node * ncomp_], dim_); }
    /// sqrt(det g) * cell volume: the quadrature weight of a node.
    double volume_weight(std::size_t node) const { return sqrt_det_g_[node] * cell_volume_; }
    double total_volume() const { return total_volume_; }

    /// Metric data on the face between `node` and its +1 neighbor along `axis`.
    /// Faces that touch a pole carry zero area and are reported as invalid.
    bool face_valid(std::size_t node, int axis) const { return face_valid_[static_cast<std::size_t>(axis)][node] != 0; }
    double face_sqrt_det_g(std::size_t node, int axis) const { return face_sqrt_det_g_[static_cast<std::size_t>(axis)][node]; }
    Mat face_g_inv(std::size_t node, int axis) const
    {
        return unpack_sym(&face_g_inv_[static_cast<std::size_t>(axis)][node * ncomp_], dim_);
    }

    /// Smallest eigenvalue of Ric relative to g at a node (sign of Ricci curvature).
    double ricci_min_eigenvalue(std::size_t node) const
    {
        if (dim_ == 1) return 0.0;
        Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(ricci(node), g(node), Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff();
    }

    double conformal_factor(const Vec& x) const
    {
        const double a = spec_.params[0];
        const double k = spec_.params.size() > 1 ? spec_.params[1] : 1.0;
        const double l = spec_.params.size() > 2 ? spec_.params[2] : 1.0;
        constexpr double two_pi = 2.0 * std::numbers::pi;
        return a * std::sin(two_pi * k * x(0) / length(0)) * std::sin(two_pi * l * x(1) / length(1));
    }

private:
    explicit MetricGrid(const GridSpec& spec) : spec_(spec)
    {
        validate();
        dim_ = static_cast<int>(spec_.shape.size());
        ncomp_ = static_cast<std::size_t>(sym_size(dim_));
        dim3_ = static_cast<std::size_t>(dim_ * dim_ * dim_);
        size_ = 1;
        cell_volume_ = 1;
        for (int a = 0; a < dim_; ++a) {
            size_ *= static_cast<std::size_t>(extent(a));
            h_.push_back(length(a) / extent(a));
            cell_volume_ *= h_.back();
        }
        std::ostringstream key;
        key.precision(17);
        key << to_string(spec_.kind);
        for (double p : spec_.params) key << ' ' << p;
        for (int n : spec_.shape) key << ' ' << n;
        for (double l : spec_.lengths) key << ' ' << l;
        hash_ = fnv1a(key.str());
        curvature_by_differences_ = spec_.kind == MetricKind::conformal_torus;
        fill_nodes();
        fill_faces();
    }

    void validate() const
    {
        const auto dim = spec_.shape.size();
        QLM_THROW_IF(dim < 1 || dim > 3, ConfigError, "grid: shape must have 1, 2 or 3 entries");
        QLM_THROW_IF(spec_.lengths.size() != dim, ConfigError, "grid: lengths must have one entry per axis");
        for (int n : spec_.shape)
            QLM_THROW_IF(n < 8, ConfigError, "grid: every shape entry must be >= 8");
        for (double l : spec_.lengths)
            QLM_THROW_IF(!(l > 0) || !std::isfinite(l), ConfigError, "grid: lengths must be positive");
        switch (spec_.kind) {
        case MetricKind::flat_torus:
            QLM_THROW_IF(!spec_.params.empty(), ConfigError, "grid: flat-torus takes no params");
            break;
        case MetricKind::conformal_torus: {
            QLM_THROW_IF(dim < 2, ConfigError, "grid: conformal-torus needs dim >= 2");
            QLM_THROW_IF(spec_.params.empty() || spec_.params.size() > 3, ConfigError,
                         "grid: conformal-torus params are [a] or [a, k, l]");
            QLM_THROW_IF(!(std::abs(spec_.params[0]) <= 5.0), ConfigError, "grid: conformal amplitude |a| must be <= 5");
            for (std::size_t i = 1; i < spec_.params.size(); ++i)
                QLM_THROW_IF(spec_.params[i] < 1 || spec_.params[i] != std::floor(spec_.params[i]), ConfigError,
                             "grid: conformal wave numbers must be positive integers");
            break;
        }
        case MetricKind::sphere_latlong:
            QLM_THROW_IF(dim != 2, ConfigError, "grid: sphere-latlong is two-dimensional");
            QLM_THROW_IF(spec_.params.size() != 1 || !(spec_.params[0] > 0), ConfigError,
                         "grid: sphere-latlong params are [r] with r > 0");
            QLM_THROW_IF(spec_.shape[1] % 2 != 0, ConfigError, "grid: sphere needs an even number of phi nodes");
            QLM_THROW_IF(std::abs(spec_.lengths[0] - std::numbers::pi) > 1e-12 ||
                             std::abs(spec_.lengths[1] - 2 * std::numbers::pi) > 1e-12,
                         ConfigError, "grid: sphere-latlong lengths must be [pi, 2 pi]");
            break;
        }
    }

    std::string describe_node(std::size_t node) const
    {
        std::ostringstream os;
        const auto c = coords(node);
        os << "node " << node << " (";
        for (int a = 0; a < dim_; ++a)
            os << (a ? "," : "") << c[static_cast<std::size_t>(a)];
        os << ")";
        return os.str();
    }

    void fill_nodes()
    {
        g_.assign(size_ * ncomp_, 0.0);
        g_inv_.assign(size_ * ncomp_, 0.0);
        sqrt_det_g_.assign(size_, 0.0);
        christoffel_.assign(size_ * dim3_, 0.0);
        ricci_.assign(size_ * ncomp_, 0.0);
        const double delta = 1e-3 * *std::min_element(spec_.lengths.begin(), spec_.lengths.end());
        const auto metric = [this](const Vec& y) { return metric_at(y); };
        total_volume_ = 0;
        for (std::size_t n = 0; n < size_; ++n) {
            const Vec x = point(n);
            const Mat g = metric_at(x);
            Eigen::LLT<Mat> llt(g);
            if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0))
                throw ConstructionError("metric is not positive definite at " + describe_node(n));
            const Mat ginv = g.inverse();
            if (((g * ginv) - Mat::Identity(dim_, dim_)).cwiseAbs().maxCoeff() > 1e-12)
                throw ConstructionError("metric inverse inaccurate at " + describe_node(n));
            pack_sym(g, &g_[n * ncomp_]);
            pack_sym(ginv, &g_inv_[n * ncomp_]);
            sqrt_det_g_[n] = std::sqrt(g.determinant());
            total_volume_ += sqrt_det_g_[n] * cell_volume_;

            double* gamma = &christoffel_[n * dim3_];
            Mat ric = Mat::Zero(dim_, dim_);
            switch (spec_.kind) {
            case MetricKind::flat_torus: break;
            case MetricKind::sphere_latlong: {
                const double s = std::sin(x(0)), c = std::cos(x(0));
                gamma[(0 * 2 + 1) * 2 + 1] = -s * c;          // Gamma^theta_{phi phi}
                gamma[(1 * 2 + 0) * 2 + 1] = c / s;           // Gamma^phi_{theta phi}
                gamma[(1 * 2 + 1) * 2 + 0] = c / s;
                ric(0, 0) = 1.0;
                ric(1, 1) = s * s;
                break;
            }
            case MetricKind::conformal_torus: {
                const auto gam = christoffel_by_differences(metric, x, delta);
                std::copy(gam.begin(), gam.end(), gamma);
                ric = ricci_by_differences(metric, x, delta);
                break;
            }
            }
            pack_sym(ric, &ricci_[n * ncomp_]);
        }
    }

    void fill_faces()
    {
        for (int a = 0; a < dim_; ++a) {
            auto& valid = face_valid_[static_cast<std::size_t>(a)];
            auto& sq = face_sqrt_det_g_[static_cast<std::size_t>(a)];
            auto& gi = face_g_inv_[static_cast<std::size_t>(a)];
            valid.assign(size_, 1);
            sq.assign(size_, 0.0);
            gi.assign(size_ * ncomp_, 0.0);
            for (std::size_t n = 0; n < size_; ++n) {
                if (neighbor(n, a, 1).reflected) {
                    valid[n] = 0;
                    continue;
                }
                Vec x = point(n);
                x(a) += 0.5 * spacing(a);
                const Mat g = metric_at(x);
                sq[n] = std::sqrt(g.determinant());
                pack_sym(g.inverse(), &gi[n * ncomp_]);
            }
        }
    }

    GridSpec spec_;
    int dim_ = 0;
    std::size_t ncomp_ = 0;
    std::size_t dim3_ = 0;
    std::size_t size_ = 0;
    std::vector<double> h_;
    double cell_volume_ = 1;
    double total_volume_ = 0;
    bool curvature_by_differences_ = false;
    std::uint64_t hash_ = 0;

    std::vector<double> g_, g_inv_, sqrt_det_g_, christoffel_, ricci_;
    std::array<std::vector<char>, kMaxDim> face_valid_;
    std::array<std::vector<double>, kMaxDim> face_sqrt_det_g_;
    std::array<std::vector<double>, kMaxDim> face_g_inv_;
};

using GridPtr = std::shared_ptr<const MetricGrid>;

inline GridPtr build_grid(MetricKind kind, std::vector<double> params, std::vector<int> shape,
                          std::vector<double> lengths)
{
    return MetricGrid::build(GridSpec{kind, std::move(params), std::move(shape), std::move(lengths)});
}

} // namespace qlm
