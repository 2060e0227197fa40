#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>

namespace testutil {

inline Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Eigen::MatrixXd m(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = n(rng);
    return m;
}

/// Relative error with a small floor so that two near-zero numbers compare equal.
inline double rel_err(double a, double b, double floor = 1e-7) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f at x along coordinate k.
inline double central_diff(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x, Eigen::Index k,
                           double h = 1e-5) {
    const double x0 = x(k);
    x(k) = x0 + h;
    const double up = f(x);
    x(k) = x0 - h;
    const double down = f(x);
    return (up - down) / (2.0 * h);
}

/// Largest relative error between an analytic gradient and central differences.
inline double max_fd_error(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& grad, double h = 1e-5) {
    double worst = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) worst = std::max(worst, rel_err(grad(k), central_diff(f, x, k, h)));
    return worst;
}

} // namespace testutil
