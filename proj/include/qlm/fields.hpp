#pragma once

#include "qlm/error.hpp"
#include "qlm/grid.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace qlm {

enum class Variance { covariant, contravariant };

namespace detail {

inline void require_finite(std::span<const double> v, const char* what)
{
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i]))
            throw ConstructionError(std::string(what) + ": non-finite value at storage slot " + std::to_string(i));
}

} // namespace detail

/// One real value per grid node.
class ScalarField {
public:
    ScalarField() = default;
    explicit ScalarField(GridPtr grid, double fill = 0.0) : grid_(std::move(grid)), values_(grid_->size(), fill) {}
    ScalarField(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values))
    {
        QLM_THROW_IF(values_.size() != grid_->size(), ConstructionError, "scalar field: value count must equal node count");
    }

    /// Samples f at every node's coordinates.
    static ScalarField sample(const GridPtr& grid, const std::function<double(const Vec&)>& f)
    {
        ScalarField out(grid);
        for (std::size_t n = 0; n < grid->size(); ++n)
            out[n] = f(grid->point(n));
        return out;
    }

    const GridPtr& grid() const { return grid_; }
    std::size_t size() const { return values_.size(); }
    double& operator[](std::size_t n) { return values_[n]; }
    double operator[](std::size_t n) const { return values_[n]; }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::vector<double>& storage() { return values_; }
    void check_finite() const { detail::require_finite(values_, "scalar field"); }

    double max() const { return *std::max_element(values_.begin(), values_.end()); }
    double min() const { return *std::min_element(values_.begin(), values_.end()); }
    double max_abs() const
    {
        double m = 0;
        for (double v : values_)
            m = std::max(m, std::abs(v));
        return m;
    }

private:
    GridPtr grid_;
    std::vector<double> values_;
};

/// dim components per node, tagged co- or contravariant.
class VectorField {
public:
    VectorField() = default;
    VectorField(GridPtr grid, Variance variance)
        : grid_(std::move(grid)), variance_(variance), values_(grid_->size() * static_cast<std::size_t>(grid_->dim()), 0.0)
    {
    }

    const GridPtr& grid() const { return grid_; }
    Variance variance() const { return variance_; }
    int dim() const { return grid_->dim(); }
    double& operator()(std::size_t node, int i) { return values_[node * static_cast<std::size_t>(dim()) + static_cast<std::size_t>(i)]; }
    double operator()(std::size_t node, int i) const { return values_[node * static_cast<std::size_t>(dim()) + static_cast<std::size_t>(i)]; }
    Vec at(std::size_t node) const
    {
        Vec v(dim());
        for (int i = 0; i < dim(); ++i)
            v(i) = (*this)(node, i);
        return v;
    }
    void set(std::size_t node, const Vec& v)
    {
        for (int i = 0; i < dim(); ++i)
            (*this)(node, i) = v(i);
    }
    std::span<const double> values() const { return values_; }
    void check_finite() const { detail::require_finite(values_, "vector field"); }

private:
    GridPtr grid_;
    Variance variance_ = Variance::covariant;
    std::vector<double> values_;
};

/// Symmetric rank-2 tensor per node, packed upper-triangular storage.
class SymTensorField {
public:
    SymTensorField() = default;
    SymTensorField(GridPtr grid, Variance variance)
        : grid_(std::move(grid)), variance_(variance),
          ncomp_(static_cast<std::size_t>(sym_size(grid_->dim()))), values_(grid_->size() * ncomp_, 0.0)
    {
    }

    const GridPtr& grid() const { return grid_; }
    Variance variance() const { return variance_; }
    int dim() const { return grid_->dim(); }
    double operator()(std::size_t node, int i, int j) const
    {
        return values_[node * ncomp_ + static_cast<std::size_t>(sym_index(i, j, dim()))];
    }
    Mat at(std::size_t node) const { return unpack_sym(&values_[node * ncomp_], dim()); }
    void set(std::size_t node, const Mat& m) { pack_sym(m, &values_[node * ncomp_]); }
    std::span<const double> values() const { return values_; }
    void check_finite() const { detail::require_finite(values_, "tensor field"); }

private:
    GridPtr grid_;
    Variance variance_ = Variance::covariant;
    std::size_t ncomp_ = 0;
    std::vector<double> values_;
};

} // namespace qlm
