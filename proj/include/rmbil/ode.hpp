#pragma once

#include <functional>

#include "rmbil/tensor.hpp"

namespace rmbil {

// Piecewise-constant continuous-time extension of a sampled control sequence.
// Sample i covers the left-closed interval [times[i], times[i] + dt).
struct ZohInput {
    Vec times;                 // strictly increasing, uniform spacing dt
    std::vector<Vec> samples;  // one m-dim control per time
    double dt = 0.0;

    static ZohInput make(Vec times, std::vector<Vec> samples) {
        if (times.size() != samples.size() || times.empty())
            throw ShapeError("zoh: times/samples count mismatch");
        ZohInput z;
        z.dt = times.size() > 1 ? times[1] - times[0] : 0.0;
        if (times.size() > 1) {
            if (z.dt <= 0.0) throw SolverError("zoh: times must be strictly increasing");
            for (std::size_t i = 1; i < times.size(); ++i) {
                const double step = times[i] - times[i - 1];
                if (std::abs(step - z.dt) > 1e-9 * std::max(1.0, std::abs(z.dt)))
                    throw SolverError("zoh: times must be uniformly spaced");
            }
        }
        z.times = std::move(times);
        z.samples = std::move(samples);
        return z;
    }
};

inline const Vec& zoh_lookup(const ZohInput& z, double t) {
    if (z.times.size() == 1) {
        if (t < z.times[0] || (z.dt > 0.0 && t >= z.times[0] + z.dt))
            throw DomainError("zoh_lookup: time out of range");
        return z.samples[0];
    }
    if (t < z.times.front() || t >= z.times.back() + z.dt)
        throw DomainError("zoh_lookup: time out of range");
    // Initial guess from uniform spacing, then exact left-closed adjustment
    // against the stored times so boundary queries resolve bit-exactly.
    double fidx = std::floor((t - z.times.front()) / z.dt);
    std::size_t i = static_cast<std::size_t>(std::max(0.0, fidx));
    if (i >= z.times.size()) i = z.times.size() - 1;
    while (i + 1 < z.times.size() && t >= z.times[i + 1]) ++i;
    while (i > 0 && t < z.times[i]) --i;
    return z.samples[i];
}

struct SolverConfig {
    enum class Method { Rk4, Rk45 };
    Method method = Method::Rk4;
    double h = 0.05;          // fixed-step size (Rk4); must divide each segment
    double atol = 1e-4;       // adaptive per-step tolerances
    double rtol = 1e-4;
    std::size_t max_steps = 100000;  // adaptive per-segment step guard
    std::size_t tau = 16;     // output samples per training window

    void validate() const {
        if (h <= 0.0 || atol <= 0.0 || rtol <= 0.0)
            throw SolverError("solver config: step and tolerances must be positive");
        if (tau < 2) throw SolverError("solver config: tau must be at least 2");
    }
};

// Derivative callable. seg is the index of the current inter-sample segment
// [t_grid[seg], t_grid[seg+1]); integration restarts at every segment
// boundary, so callables may hold per-segment data (ZOH controls, references)
// without any risk of the solver stepping across a discontinuity.
using OdeFunc = std::function<Vec(std::size_t seg, double t, const Vec& x)>;

namespace detail {

inline Vec rk4_step(const OdeFunc& f, std::size_t seg, double t, double h, const Vec& x) {
    const Vec k1 = f(seg, t, x);
    const Vec k2 = f(seg, t + 0.5 * h, vec_add_scaled(x, k1, 0.5 * h));
    const Vec k3 = f(seg, t + 0.5 * h, vec_add_scaled(x, k2, 0.5 * h));
    const Vec k4 = f(seg, t + h, vec_add_scaled(x, k3, h));
    // Same combination order as the taped variant so both paths agree bitwise.
    Vec y = vec_add_scaled(x, k1, h / 6.0);
    y = vec_add_scaled(y, k2, h / 3.0);
    y = vec_add_scaled(y, k3, h / 3.0);
    y = vec_add_scaled(y, k4, h / 6.0);
    return y;
}

inline std::size_t substep_count(double span, double h) {
    const double ratio = span / h;
    const double rounded = std::round(ratio);
    if (rounded < 0.5 || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, rounded))
        throw SolverError("rk4: segment length must be an integer multiple of the step size");
    return static_cast<std::size_t>(rounded);
}

inline Vec advance_rk4(const OdeFunc& f, std::size_t seg, double t_a, double t_b, Vec x,
                       const SolverConfig& cfg) {
    const std::size_t steps = substep_count(t_b - t_a, cfg.h);
    const double h = (t_b - t_a) / static_cast<double>(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        x = rk4_step(f, seg, t_a + static_cast<double>(k) * h, h, x);
        vec_check_finite(x, "rk4 state");
    }
    return x;
}

// Dormand-Prince 5(4) embedded pair.
inline Vec advance_rk45(const OdeFunc& f, std::size_t seg, double t_a, double t_b, Vec x,
                        const SolverConfig& cfg) {
    static const double A[7][6] = {
        {0, 0, 0, 0, 0, 0},
        {1.0 / 5, 0, 0, 0, 0, 0},
        {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
        {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
        {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
        {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
        {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
    };
    static const double C[7] = {0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
    static const double B5[7] = {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192,
                                 -2187.0 / 6784, 11.0 / 84, 0};
    static const double B4[7] = {5179.0 / 57600, 0,         7571.0 / 16695, 393.0 / 640,
                                 -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};

    const std::size_t n = x.size();
    double t = t_a;
    double h = t_b - t_a;  // try the whole segment first; the error test cuts it
    std::size_t steps = 0;
    while (t < t_b) {
        if (++steps > cfg.max_steps) throw SolverError("rk45: step limit exceeded");
        if (h < 1e-14 * (t_b - t_a)) throw SolverError("rk45: step size underflow");
        h = std::min(h, t_b - t);

        Vec k[7];
        k[0] = f(seg, t, x);
        for (std::size_t s = 1; s < 7; ++s) {
            Vec xs = x;
            for (std::size_t j = 0; j < s; ++j)
                if (A[s][j] != 0.0) vec_axpy(xs, h * A[s][j], k[j]);
            k[s] = f(seg, t + C[s] * h, xs);
        }
        Vec x5 = x;
        for (std::size_t s = 0; s < 7; ++s)
            if (B5[s] != 0.0) vec_axpy(x5, h * B5[s], k[s]);
        vec_check_finite(x5, "rk45 state");

        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double e = 0.0;
            for (std::size_t s = 0; s < 7; ++s) e += (B5[s] - B4[s]) * k[s][i];
            e *= h;
            const double tol = cfg.atol + cfg.rtol * std::max(std::abs(x[i]), std::abs(x5[i]));
            err += (e / tol) * (e / tol);
        }
        err = std::sqrt(err / static_cast<double>(n));

        if (err <= 1.0) {
            t += h;
            x = std::move(x5);
        }
        const double factor = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
        h *= std::min(5.0, std::max(0.2, factor));
    }
    return x;
}

}  // namespace detail

// Solves the initial-value problem segment by segment, emitting the state at
// every t_grid point. The first output is x0 exactly.
inline std::vector<Vec> integrate(const OdeFunc& f, const Vec& x0, const Vec& t_grid,
                                  const SolverConfig& cfg) {
    cfg.validate();
    if (t_grid.empty()) throw SolverError("integrate: empty time grid");
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        if (t_grid[i] <= t_grid[i - 1])
            throw SolverError("integrate: time grid must be strictly increasing");

    std::vector<Vec> out;
    out.reserve(t_grid.size());
    out.push_back(x0);
    Vec x = x0;
    for (std::size_t seg = 0; seg + 1 < t_grid.size(); ++seg) {
        x = cfg.method == SolverConfig::Method::Rk4
                ? detail::advance_rk4(f, seg, t_grid[seg], t_grid[seg + 1], std::move(x), cfg)
                : detail::advance_rk45(f, seg, t_grid[seg], t_grid[seg + 1], std::move(x), cfg);
        out.push_back(x);
    }
    return out;
}

}  // namespace rmbil
