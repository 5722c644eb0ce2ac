#include "sadvae/lbfgs.hpp"

#include "sadvae/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace sadvae {

namespace {

double dot(std::span<const double> a, std::span<const double> b)
{
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double inf_norm(std::span<const double> v)
{
    double m = 0;
    for (const double x : v) {
        m = std::max(m, std::abs(x));
    }
    return m;
}

struct Probe {
    double step;
    double value;
    double slope;
    std::vector<double> x;
    std::vector<double> grad;
};

class LineSearch {
public:
    LineSearch(const SmoothObjective& f, std::span<const double> x, std::span<const double> direction)
        : f_(f), x_(x), d_(direction)
    {
    }

    Probe evaluate(double step) const
    {
        Probe p;
        p.step = step;
        p.x.resize(x_.size());
        p.grad.resize(x_.size());
        for (std::size_t i = 0; i < x_.size(); ++i) {
            p.x[i] = x_[i] + step * d_[i];
        }
        p.value = f_(p.x, p.grad);
        p.slope = dot(p.grad, d_);
        return p;
    }

    // Nocedal & Wright, algorithms 3.5 and 3.6, with safeguarded cubic
    // interpolation in the zoom phase.
    bool run(double f0, double g0, double initial_step, Probe& out) const
    {
        constexpr double c1 = 1e-4;
        constexpr double c2 = 0.9;
        constexpr int max_expand = 40;

        Probe prev{0.0, f0, g0, {}, {}};
        double step = initial_step;
        for (int i = 0; i < max_expand; ++i) {
            Probe cur = evaluate(step);
            if (!std::isfinite(cur.value) || cur.value > f0 + c1 * step * g0 || (i > 0 && cur.value >= prev.value)) {
                return zoom(f0, g0, prev, cur, out);
            }
            if (std::abs(cur.slope) <= -c2 * g0) {
                out = std::move(cur);
                return true;
            }
            if (cur.slope >= 0) {
                return zoom(f0, g0, cur, prev, out);
            }
            prev = std::move(cur);
            step *= 2.0;
        }
        return false;
    }

private:
    bool zoom(double f0, double g0, Probe lo, Probe hi, Probe& out) const
    {
        constexpr double c1 = 1e-4;
        constexpr double c2 = 0.9;
        for (int i = 0; i < 60; ++i) {
            const double a = std::min(lo.step, hi.step);
            const double b = std::max(lo.step, hi.step);
            double trial = cubic_minimizer(lo, hi);
            const double margin = 0.1 * (b - a);
            if (!std::isfinite(trial) || trial < a + margin || trial > b - margin) {
                trial = 0.5 * (lo.step + hi.step);
            }
            if (b - a < 1e-16 * std::max(1.0, b)) {
                break;
            }
            Probe cur = evaluate(trial);
            if (!std::isfinite(cur.value) || cur.value > f0 + c1 * trial * g0 || cur.value >= lo.value) {
                hi = std::move(cur);
                continue;
            }
            if (std::abs(cur.slope) <= -c2 * g0) {
                out = std::move(cur);
                return true;
            }
            if (cur.slope * (hi.step - lo.step) >= 0) {
                hi = std::move(lo);
            }
            lo = std::move(cur);
        }
        // Accept the best sufficient-decrease point found, if any.
        if (lo.step > 0 && !lo.x.empty() && lo.value < f0) {
            out = std::move(lo);
            return true;
        }
        return false;
    }

    static double cubic_minimizer(const Probe& p, const Probe& q)
    {
        if (!std::isfinite(q.value) || !std::isfinite(p.value)) {
            return 0.5 * (p.step + q.step);
        }
        const double d1 = p.slope + q.slope - 3 * (p.value - q.value) / (p.step - q.step);
        const double disc = d1 * d1 - p.slope * q.slope;
        if (disc < 0) {
            return 0.5 * (p.step + q.step);
        }
        const double d2 = std::copysign(std::sqrt(disc), q.step - p.step);
        return q.step - (q.step - p.step) * (q.slope + d2 - d1) / (q.slope - p.slope + 2 * d2);
    }

    const SmoothObjective& f_;
    std::span<const double> x_;
    std::span<const double> d_;
};

} // namespace

LbfgsResult minimize_lbfgs(const SmoothObjective& objective, std::vector<double> x0, const LbfgsOptions& options)
{
    if (options.memory == 0) {
        throw ArgumentError("lbfgs memory must be >= 1");
    }
    const std::size_t n = x0.size();
    LbfgsResult result;
    result.x = std::move(x0);
    std::vector<double> grad(n);
    result.value = objective(result.x, grad);
    if (!std::isfinite(result.value)) {
        throw DataError("lbfgs: objective is not finite at the starting point");
    }

    std::deque<std::vector<double>> s_hist;
    std::deque<std::vector<double>> y_hist;
    std::deque<double> rho_hist;
    std::vector<double> direction(n);
    std::vector<double> alpha(options.memory);

    for (result.iterations = 0; result.iterations < options.max_iterations; ++result.iterations) {
        result.gradient_norm = inf_norm(grad);
        if (result.gradient_norm <= options.gradient_tolerance) {
            result.converged = true;
            return result;
        }

        // Two-loop recursion: direction = -H grad.
        for (std::size_t i = 0; i < n; ++i) {
            direction[i] = -grad[i];
        }
        const std::size_t m = s_hist.size();
        for (std::size_t j = m; j-- > 0;) {
            alpha[j] = rho_hist[j] * dot(s_hist[j], direction);
            for (std::size_t i = 0; i < n; ++i) {
                direction[i] -= alpha[j] * y_hist[j][i];
            }
        }
        if (m > 0) {
            const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
            for (auto& d : direction) {
                d *= gamma;
            }
        }
        for (std::size_t j = 0; j < m; ++j) {
            const double beta = rho_hist[j] * dot(y_hist[j], direction);
            for (std::size_t i = 0; i < n; ++i) {
                direction[i] += (alpha[j] - beta) * s_hist[j][i];
            }
        }

        double slope = dot(grad, direction);
        if (!(slope < 0)) {
            // Curvature history went bad; restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for (std::size_t i = 0; i < n; ++i) {
                direction[i] = -grad[i];
            }
            slope = dot(grad, direction);
        }
        const double initial = m == 0 ? std::min(1.0, 1.0 / std::max(inf_norm(direction), 1e-300)) : 1.0;
        LineSearch search(objective, result.x, direction);
        Probe accepted;
        if (!search.run(result.value, slope, initial, accepted)) {
            return result;
        }

        std::vector<double> s(n);
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = accepted.x[i] - result.x[i];
            y[i] = accepted.grad[i] - grad[i];
        }
        const double sy = dot(s, y);
        if (sy > 1e-300) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (s_hist.size() > options.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        result.x = std::move(accepted.x);
        grad = std::move(accepted.grad);
        result.value = accepted.value;
    }
    result.gradient_norm = inf_norm(grad);
    result.converged = result.gradient_norm <= options.gradient_tolerance;
    return result;
}

} // namespace sadvae
