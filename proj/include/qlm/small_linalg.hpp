#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace qlm {

/// Maximum manifold dimension supported by the grids.
inline constexpr int kMaxDim = 3;

// Stack-allocated dynamic-size vectors/matrices (dim <= 3).
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

/// Number of independent components of a symmetric dim x dim tensor.
constexpr int sym_size(int dim) { return dim * (dim + 1) / 2; }

/// Packed upper-triangular index of (i, j): dim 2 -> 00,01,11; dim 3 -> 00,01,02,11,12,22.
constexpr int sym_index(int i, int j, int dim)
{
    if (i > j) {
        const int t = i;
        i = j;
        j = t;
    }
    return i * dim - i * (i - 1) / 2 + (j - i);
}

inline Mat unpack_sym(const double* packed, int dim)
{
    Mat m(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = i; j < dim; ++j)
            m(i, j) = m(j, i) = packed[sym_index(i, j, dim)];
    return m;
}

inline void pack_sym(const Mat& m, double* packed)
{
    const auto dim = static_cast<int>(m.rows());
    for (int i = 0; i < dim; ++i)
        for (int j = i; j < dim; ++j)
            packed[sym_index(i, j, dim)] = 0.5 * (m(i, j) + m(j, i));
}

} // namespace qlm
