#pragma once

// Test-only oracles. Nothing here calls into the reverse-mode engine.

#include "instab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace instab::testing {

/// Central finite difference of f w.r.t. entry i of x.
inline double central_difference(const std::function<double(const Tensor&)>& f, Tensor x, std::size_t i,
                                 double h = 1e-6)
{
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Largest relative error between an analytic gradient and central differences.
inline double gradient_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                             const Tensor& analytic, double h = 1e-6)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        worst = std::max(worst, relative_error(analytic[i], central_difference(f, x, i, h)));
    }
    return worst;
}

} // namespace instab::testing
