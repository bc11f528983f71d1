#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "fathom/vec.hpp"

namespace test {

inline double rel_err(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Relative agreement, with an absolute floor far below the central
/// difference's rounding noise (~1e-10 at h = 1e-6) for tiny entries.
inline bool fd_agrees(double analytic, double fd, double rel_tol, double abs_floor = 1e-9) {
    return std::abs(analytic - fd) <= std::max(rel_tol * std::max(std::abs(analytic), std::abs(fd)), abs_floor);
}

template <typename F>
double central_difference(F&& f, fathom::ParamVector x, std::size_t j, double h) {
    const double x0 = x[j];
    x[j] = x0 + h;
    const double plus = f(x);
    x[j] = x0 - h;
    const double minus = f(x);
    return (plus - minus) / (2.0 * h);
}

} // namespace test
