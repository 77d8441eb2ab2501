#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rntk/errors.hpp"

namespace rntk {

/// Covariance of a zero-mean bivariate Gaussian (z1, z2).
struct Cov2 {
    double k1 = 0.0;  ///< Var(z1)
    double k2 = 0.0;  ///< Var(z2)
    double k3 = 0.0;  ///< Cov(z1, z2)
};

/// Both ReLU dual-activation values of one covariance.
struct DualValues {
    double value = 0.0;       ///< E[relu(z1) relu(z2)]
    double derivative = 0.0;  ///< E[relu'(z1) relu'(z2)]
};

namespace detail {

// Unchecked core shared by the scalar reference and the tiled Gram loops.
// Zero variance on either side yields (0, 1/4): relu(0) = 0 kills the
// expectation and the derivative takes its c = 0 limit.
inline DualValues relu_dual(double k1, double k2, double k3) {
    constexpr double inv_two_pi = 0.5 * std::numbers::inv_pi;
    const double scale = std::sqrt(k1 * k2);
    if (!(scale > 0.0)) return {0.0, 0.25};
    const double c = std::clamp(k3 / scale, -1.0, 1.0);
    const double angle = std::numbers::pi - std::acos(c);
    return {inv_two_pi * (c * angle + std::sqrt(1.0 - c * c)) * scale, inv_two_pi * angle};
}

inline void check_cov(const Cov2& cov) {
    if (!std::isfinite(cov.k1) || !std::isfinite(cov.k2) || !std::isfinite(cov.k3)) {
        throw InvalidInput("covariance entries must be finite");
    }
    if (cov.k1 < 0.0 || cov.k2 < 0.0) {
        throw InvalidInput("variances must be nonnegative");
    }
}

}  // namespace detail

/// E[relu(z1) relu(z2)] for (z1, z2) ~ N(0, cov), arc-cosine closed form.
inline double vphi(const Cov2& cov) {
    detail::check_cov(cov);
    return detail::relu_dual(cov.k1, cov.k2, cov.k3).value;
}

/// E[relu'(z1) relu'(z2)] = (pi - arccos c) / (2 pi).
inline double vphi_prime(const Cov2& cov) {
    detail::check_cov(cov);
    return detail::relu_dual(cov.k1, cov.k2, cov.k3).derivative;
}

}  // namespace rntk
