#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace fathom {

/// Flat model parameter vector. Length is fixed for the duration of a run.
using ParamVector = std::vector<double>;

namespace vec {

// Every reduction below runs in ascending index order so results are
// reproducible bit-for-bit.

inline void require_same_length(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("vector length mismatch");
    }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    require_same_length(a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    require_same_length(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] += alpha * x[i];
    }
}

inline void scale(double alpha, std::span<double> x) {
    for (double& v : x) {
        v *= alpha;
    }
}

inline bool all_finite(std::span<const double> a) {
    for (double v : a) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

/// Norms below this are treated as zero by the normalized signals.
inline constexpr double kZeroNorm = 1e-12;

/// Cosine of the angle between a and b, or 0 when either is (numerically) zero.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na < kZeroNorm || nb < kZeroNorm) {
        return 0.0;
    }
    return dot(a, b) / (na * nb);
}

} // namespace vec
} // namespace fathom
