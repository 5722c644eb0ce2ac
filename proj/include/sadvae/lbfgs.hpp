#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace sadvae {

/// Objective callback: returns f(x) and writes the gradient into grad.
using SmoothObjective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct LbfgsOptions {
    std::size_t memory = 10;
    std::size_t max_iterations = 2000;
    double gradient_tolerance = 1e-6; // on the infinity norm
};

struct LbfgsResult {
    std::vector<double> x;
    double value = 0;
    double gradient_norm = 0;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Limited-memory BFGS with a strong-Wolfe line search.
LbfgsResult minimize_lbfgs(const SmoothObjective& objective, std::vector<double> x0, const LbfgsOptions& options = {});

} // namespace sadvae
