#pragma once

#include <cmath>
#include <numbers>
#include <vector>

namespace qlm::testing {

inline constexpr double pi = std::numbers::pi;

// Observed orders between consecutive dyadic levels.
inline std::vector<double> dyadic_orders(const std::vector<double>& errors)
{
    std::vector<double> out;
    for (std::size_t i = 1; i < errors.size(); ++i)
        out.push_back(std::log2(errors[i - 1] / errors[i]));
    return out;
}

} // namespace qlm::testing
