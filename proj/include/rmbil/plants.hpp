#pragma once

#include <string>

#include "rmbil/ode.hpp"

namespace rmbil {

// Analytic input-affine reference systems ẋ = a(x) + G(x)u with closed-form
// drift and input matrix, so inversion-based control laws have exact ground
// truth. All three are smooth on their bounded state domains.
enum class PlantFamily {
    Scalar,     // ẋ = -x³ + (2 + cos x)·u
    Pendulum,   // (θ, ω); ω̇ = -(g/l)·sin θ - c·ω + u/(m l²)
    PointMass,  // (px, py, vx, vy); v̇ = u/m - c·v
};

struct PlantSpec {
    PlantFamily family = PlantFamily::Scalar;
    std::string name;
    std::size_t n = 1, m = 1;
    double dt = 0.05;
    double mass = 1.0, length = 1.0, damping = 0.1, gravity = 9.81;
    Vec state_lo, state_hi;
};

inline PlantSpec make_plant(const std::string& name) {
    PlantSpec p;
    if (name == "scalar" || name == "p1") {
        p.family = PlantFamily::Scalar;
        p.name = "scalar";
        p.n = p.m = 1;
        p.dt = 0.05;
        p.state_lo = {-3.0};
        p.state_hi = {3.0};
    } else if (name == "pendulum" || name == "p2") {
        p.family = PlantFamily::Pendulum;
        p.name = "pendulum";
        p.n = 2;
        p.m = 1;
        p.dt = 0.05;
        p.state_lo = {-2.5, -8.0};
        p.state_hi = {2.5, 8.0};
    } else if (name == "pointmass" || name == "p3") {
        p.family = PlantFamily::PointMass;
        p.name = "pointmass";
        p.n = 4;
        p.m = 2;
        p.dt = 0.02;
        p.state_lo = {-4.0, -4.0, -6.0, -6.0};
        p.state_hi = {4.0, 4.0, 6.0, 6.0};
    } else {
        throw Error("unknown plant: " + name);
    }
    return p;
}

inline Vec plant_drift(const PlantSpec& p, const Vec& x) {
    switch (p.family) {
        case PlantFamily::Scalar:
            return {-x[0] * x[0] * x[0]};
        case PlantFamily::Pendulum:
            return {x[1], -(p.gravity / p.length) * std::sin(x[0]) - p.damping * x[1]};
        case PlantFamily::PointMass:
            return {x[2], x[3], -p.damping * x[2], -p.damping * x[3]};
    }
    throw Error("unreachable");
}

// n×m input matrix, row-major.
inline Vec plant_input_matrix(const PlantSpec& p, const Vec& x) {
    switch (p.family) {
        case PlantFamily::Scalar:
            return {2.0 + std::cos(x[0])};
        case PlantFamily::Pendulum:
            return {0.0, 1.0 / (p.mass * p.length * p.length)};
        case PlantFamily::PointMass:
            return {0.0, 0.0, 0.0, 0.0, 1.0 / p.mass, 0.0, 0.0, 1.0 / p.mass};
    }
    throw Error("unreachable");
}

inline bool in_domain(const PlantSpec& p, const Vec& x) {
    if (x.size() != p.n) throw ShapeError("state dimension mismatch");
    for (std::size_t i = 0; i < p.n; ++i)
        if (!(x[i] >= p.state_lo[i] && x[i] <= p.state_hi[i])) return false;
    return true;
}

// Environment perturbations ported to the analytic plants. Slope and uneven
// act through the control channel (a constant or terrain-indexed bias force);
// param-shift rescales the physical constants.
struct DisturbanceCfg {
    enum class Kind { None, Slope, Uneven, ParamShift };
    Kind kind = Kind::None;
    Vec slope_bias;            // m-dim control-channel bias
    double uneven_span = 0.5;  // terrain segment length along x[0]
    double uneven_amp = 0.0;   // per-segment bias drawn from U(-amp, amp)
    double param_scale = 0.0;  // relative change of mass/length/damping
    std::uint64_t seed = 0;
};

// Per-segment bias is a pure function of (seed, segment index), so the same
// position always sees the same terrain.
inline Vec uneven_bias(const DisturbanceCfg& d, std::size_t m, double position) {
    const double fidx = std::floor(position / d.uneven_span);
    const auto cell = static_cast<std::uint64_t>(static_cast<std::int64_t>(fidx) + (1 << 20));
    Rng rng = Rng(d.seed).fork(cell);
    Vec b(m);
    for (double& v : b) v = rng.uniform(-d.uneven_amp, d.uneven_amp);
    return b;
}

inline PlantSpec shifted_plant(const PlantSpec& p, double rel) {
    PlantSpec q = p;
    q.mass *= 1.0 + rel;
    q.length *= 1.0 + rel;
    q.damping *= 1.0 + rel;
    return q;
}

inline Vec plant_deriv(const PlantSpec& p, const DisturbanceCfg& d, const Vec& x, const Vec& u) {
    if (u.size() != p.m) throw ShapeError("control dimension mismatch");
    if (!in_domain(p, x)) throw DomainError(p.name + ": state outside domain bounds");
    vec_check_finite(u, "plant control");

    const PlantSpec& eff =
        d.kind == DisturbanceCfg::Kind::ParamShift ? shifted_plant(p, d.param_scale) : p;
    Vec u_eff = u;
    if (d.kind == DisturbanceCfg::Kind::Slope) {
        if (d.slope_bias.size() != p.m) throw ShapeError("slope bias dimension mismatch");
        u_eff = vec_add(u_eff, d.slope_bias);
    } else if (d.kind == DisturbanceCfg::Kind::Uneven) {
        u_eff = vec_add(u_eff, uneven_bias(d, p.m, x[0]));
    }
    const Vec G = plant_input_matrix(eff, x);
    return vec_add(plant_drift(eff, x), mat_vec(G, p.n, p.m, u_eff));
}

// Virtual input from diagonal proportional feedback: ν = K ⊙ (x_des - x).
inline Vec linear_feedback(const Vec& gain_diag, const Vec& x_des, const Vec& x) {
    same_size(gain_diag, x, "linear_feedback");
    return vec_mul(gain_diag, vec_sub(x_des, x));
}

inline Vec uniform_gain(std::size_t n, double k) { return Vec(n, k); }

// Least-squares control from any affine pair: u = G⁺ (ν - a) via the normal
// equations; exact inverse when G is square.
inline Vec ndi_from_affine(const Vec& a, const Vec& G, std::size_t n, std::size_t m,
                           const Vec& nu) {
    if (a.size() != n || nu.size() != n || G.size() != n * m)
        throw ShapeError("ndi_from_affine: dimension mismatch");
    const Vec r = vec_sub(nu, a);
    // gram = GᵀG (m×m), rhs = Gᵀ r
    Vec gram(m * m, 0.0), rhs(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            rhs[j] += G[i * m + j] * r[i];
            for (std::size_t k = j; k < m; ++k) gram[j * m + k] += G[i * m + j] * G[i * m + k];
        }
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < j; ++k) gram[j * m + k] = gram[k * m + j];

    // Gaussian elimination with partial pivoting on the tiny gram system.
    Vec u(m, 0.0);
    std::vector<std::size_t> piv(m);
    for (std::size_t i = 0; i < m; ++i) piv[i] = i;
    for (std::size_t col = 0; col < m; ++col) {
        std::size_t best = col;
        for (std::size_t rrow = col + 1; rrow < m; ++rrow)
            if (std::abs(gram[piv[rrow] * m + col]) > std::abs(gram[piv[best] * m + col]))
                best = rrow;
        std::swap(piv[col], piv[best]);
        const double pivot = gram[piv[col] * m + col];
        if (std::abs(pivot) < 1e-12) throw NumericError("ndi: input matrix is rank-deficient");
        for (std::size_t rrow = col + 1; rrow < m; ++rrow) {
            const double f = gram[piv[rrow] * m + col] / pivot;
            for (std::size_t k = col; k < m; ++k) gram[piv[rrow] * m + k] -= f * gram[piv[col] * m + k];
            rhs[piv[rrow]] -= f * rhs[piv[col]];
        }
    }
    for (std::size_t col = m; col-- > 0;) {
        double s = rhs[piv[col]];
        for (std::size_t k = col + 1; k < m; ++k) s -= gram[piv[col] * m + k] * u[k];
        u[col] = s / gram[piv[col] * m + col];
    }
    return u;
}

inline Vec ndi_oracle(const PlantSpec& p, const Vec& x, const Vec& nu) {
    return ndi_from_affine(plant_drift(p, x), plant_input_matrix(p, x), p.n, p.m, nu);
}

// Switching function and its diagonal gain. σ = x_des - x vanishes exactly on
// the desired trajectory.
struct SwitchingState {
    Vec sigma;
    Vec ks;  // diagonal, entries > 0

    void validate() const {
        same_size(sigma, ks, "switching state");
        for (double k : ks)
            if (!(k > 0.0)) throw Error("switching gain entries must be positive");
    }
};

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Robust control: the inversion term plus a switching term. smooth_eps > 0
// replaces sgn with tanh(σ/ε) for closed-loop simulation; the exact form is
// kept for algebraic identities.
inline Vec smc_control(const PlantSpec& p, const Vec& x, const Vec& nu, const SwitchingState& sw,
                       double smooth_eps = 0.0) {
    sw.validate();
    if (sw.sigma.size() != p.n) throw ShapeError("switching state dimension mismatch");
    Vec sw_term(p.n);
    for (std::size_t i = 0; i < p.n; ++i) {
        const double s = smooth_eps > 0.0 ? std::tanh(sw.sigma[i] / smooth_eps) : sgn(sw.sigma[i]);
        sw_term[i] = sw.ks[i] * s;
    }
    const Vec a = plant_drift(p, x);
    const Vec G = plant_input_matrix(p, x);
    const Vec u_ndi = ndi_from_affine(a, G, p.n, p.m, nu);
    const Vec u_sw = ndi_from_affine(Vec(p.n, 0.0), G, p.n, p.m, sw_term);
    return vec_add(u_ndi, u_sw);
}

inline Vec smc_oracle(const PlantSpec& p, const Vec& x, const Vec& nu, const SwitchingState& sw) {
    return smc_control(p, x, nu, sw, 0.0);
}

// One ZOH sample period of the true plant under constant control; shared by
// demo generation and evaluation rollouts so replays are bit-consistent.
inline Vec plant_step(const PlantSpec& p, const DisturbanceCfg& d, const Vec& x, const Vec& u,
                      double dt, std::size_t substeps = 4) {
    const OdeFunc f = [&](std::size_t, double, const Vec& s) { return plant_deriv(p, d, s, u); };
    SolverConfig cfg;
    cfg.h = dt / static_cast<double>(substeps);
    return detail::advance_rk4(f, 0, 0.0, dt, x, cfg);
}

// Smooth randomized reference: per position coordinate a short sum of
// sinusoids; velocity-level coordinates are the analytic derivatives, so the
// full-state reference is always kinematically consistent.
struct SinSum {
    Vec amp, omega, phase;

    double pos(double t) const {
        double s = 0.0;
        for (std::size_t k = 0; k < amp.size(); ++k) s += amp[k] * std::sin(omega[k] * t + phase[k]);
        return s;
    }
    double vel(double t) const {
        double s = 0.0;
        for (std::size_t k = 0; k < amp.size(); ++k)
            s += amp[k] * omega[k] * std::cos(omega[k] * t + phase[k]);
        return s;
    }
    double acc(double t) const {
        double s = 0.0;
        for (std::size_t k = 0; k < amp.size(); ++k)
            s -= amp[k] * omega[k] * omega[k] * std::sin(omega[k] * t + phase[k]);
        return s;
    }
};

struct ReferenceTraj {
    PlantFamily family = PlantFamily::Scalar;
    std::vector<SinSum> comp;  // one per position coordinate

    Vec state(double t) const {
        switch (family) {
            case PlantFamily::Scalar:
                return {comp[0].pos(t)};
            case PlantFamily::Pendulum:
                return {comp[0].pos(t), comp[0].vel(t)};
            case PlantFamily::PointMass:
                return {comp[0].pos(t), comp[1].pos(t), comp[0].vel(t), comp[1].vel(t)};
        }
        throw Error("unreachable");
    }

    Vec rate(double t) const {
        switch (family) {
            case PlantFamily::Scalar:
                return {comp[0].vel(t)};
            case PlantFamily::Pendulum:
                return {comp[0].vel(t), comp[0].acc(t)};
            case PlantFamily::PointMass:
                return {comp[0].vel(t), comp[1].vel(t), comp[0].acc(t), comp[1].acc(t)};
        }
        throw Error("unreachable");
    }
};

// Demonstrator configuration: inversion expert with rate feedforward plus
// proportional feedback, tracking seeded sum-of-sinusoid references.
struct ExpertConfig {
    double gain = 5.0;
    std::size_t harmonics = 3;
    double freq_lo = 0.3, freq_hi = 1.2;   // rad/s
    double amp_lo = 0.4, amp_hi = 1.0;     // total amplitude band
};

inline ReferenceTraj sample_reference(const PlantSpec& p, const ExpertConfig& e, Rng& rng) {
    ReferenceTraj ref;
    ref.family = p.family;
    const std::size_t coords = p.family == PlantFamily::PointMass ? 2 : 1;
    for (std::size_t c = 0; c < coords; ++c) {
        SinSum s;
        double raw_total = 0.0;
        for (std::size_t k = 0; k < e.harmonics; ++k) {
            s.amp.push_back(rng.uniform(0.5, 1.0));
            s.omega.push_back(rng.uniform(e.freq_lo, e.freq_hi));
            s.phase.push_back(rng.uniform(0.0, 2.0 * 3.14159265358979323846));
            raw_total += s.amp.back();
        }
        const double total = rng.uniform(e.amp_lo, e.amp_hi);
        for (double& a : s.amp) a *= total / raw_total;
        ref.comp.push_back(std::move(s));
    }
    return ref;
}

// Expert virtual input: reference rate feedforward plus proportional feedback.
// Pure proportional feedback lags a moving reference by ~|ẋ_r|/K, which would
// dominate the tracking budget; the feedforward removes that floor.
inline Vec expert_virtual_input(const ReferenceTraj& ref, double t, double gain, const Vec& x) {
    return vec_add(ref.rate(t), linear_feedback(uniform_gain(x.size(), gain), ref.state(t), x));
}

struct Trajectory {
    Vec s;  // initial state (episode context)
    std::vector<Vec> states;   // T × n
    std::vector<Vec> actions;  // T × m
};

// Per-dimension standardization statistics of a dataset.
struct NormStats {
    Vec state_mean, state_std, action_mean, action_std;

    Vec std_state(const Vec& x) const {
        Vec r(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) r[i] = (x[i] - state_mean[i]) / state_std[i];
        return r;
    }
    Vec unstd_state(const Vec& x) const {
        Vec r(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) r[i] = state_mean[i] + state_std[i] * x[i];
        return r;
    }
    Vec std_action(const Vec& u) const {
        Vec r(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) r[i] = (u[i] - action_mean[i]) / action_std[i];
        return r;
    }
    Vec unstd_action(const Vec& u) const {
        Vec r(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) r[i] = action_mean[i] + action_std[i] * u[i];
        return r;
    }
};

struct Dataset {
    std::string plant;
    double dt = 0.0;
    std::size_t n = 0, m = 0, N = 0, T = 0;
    std::uint64_t seed = 0;
    ExpertConfig expert;
    NormStats norm;
    double expert_rms = 0.0;  // aggregate tracking RMS of the demonstrator
    std::size_t regenerated = 0;  // diverged attempts replaced by fresh seeds
    std::vector<Trajectory> trajs;
};

inline NormStats compute_norm_stats(const std::vector<Trajectory>& trajs, std::size_t n,
                                    std::size_t m) {
    NormStats st;
    st.state_mean.assign(n, 0.0);
    st.state_std.assign(n, 0.0);
    st.action_mean.assign(m, 0.0);
    st.action_std.assign(m, 0.0);
    std::size_t count = 0;
    for (const auto& tr : trajs) {
        for (const Vec& x : tr.states)
            for (std::size_t i = 0; i < n; ++i) st.state_mean[i] += x[i];
        for (const Vec& u : tr.actions)
            for (std::size_t i = 0; i < m; ++i) st.action_mean[i] += u[i];
        count += tr.states.size();
    }
    if (count == 0) throw Error("compute_norm_stats: empty dataset");
    for (double& v : st.state_mean) v /= static_cast<double>(count);
    for (double& v : st.action_mean) v /= static_cast<double>(count);
    for (const auto& tr : trajs) {
        for (const Vec& x : tr.states)
            for (std::size_t i = 0; i < n; ++i) {
                const double dd = x[i] - st.state_mean[i];
                st.state_std[i] += dd * dd;
            }
        for (const Vec& u : tr.actions)
            for (std::size_t i = 0; i < m; ++i) {
                const double dd = u[i] - st.action_mean[i];
                st.action_std[i] += dd * dd;
            }
    }
    for (double& v : st.state_std) v = std::max(1e-8, std::sqrt(v / static_cast<double>(count)));
    for (double& v : st.action_std) v = std::max(1e-8, std::sqrt(v / static_cast<double>(count)));
    return st;
}

// One expert episode: inversion control with ZOH application on the true
// plant. Throws DomainError if the state leaves its bounds.
inline Trajectory expert_episode(const PlantSpec& p, const ExpertConfig& e,
                                 const ReferenceTraj& ref, std::size_t T, double* sq_err_sum) {
    Trajectory tr;
    Vec x = ref.state(0.0);
    tr.s = x;
    for (std::size_t i = 0; i < T; ++i) {
        const double t = static_cast<double>(i) * p.dt;
        const Vec nu = expert_virtual_input(ref, t, e.gain, x);
        const Vec u = ndi_oracle(p, x, nu);
        tr.states.push_back(x);
        tr.actions.push_back(u);
        if (sq_err_sum) *sq_err_sum += vec_sqnorm(vec_sub(x, ref.state(t)));
        if (i + 1 < T) x = plant_step(p, DisturbanceCfg{}, x, u, p.dt);
    }
    return tr;
}

inline Dataset gen_demos(const PlantSpec& p, const ExpertConfig& e, std::size_t N, std::size_t T,
                         std::uint64_t seed) {
    if (N < 1 || T < 2) throw Error("gen_demos: need N >= 1 and T >= 2");
    Dataset ds;
    ds.plant = p.name;
    ds.dt = p.dt;
    ds.n = p.n;
    ds.m = p.m;
    ds.N = N;
    ds.T = T;
    ds.seed = seed;
    ds.expert = e;

    const Rng root(seed);
    double sq_err_sum = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
        bool done = false;
        for (std::size_t attempt = 0; attempt < 20 && !done; ++attempt) {
            Rng rng = root.fork(k * 1024 + attempt);
            ReferenceTraj ref = sample_reference(p, e, rng);
            try {
                double ep_err = 0.0;
                Trajectory tr = expert_episode(p, e, ref, T, &ep_err);
                sq_err_sum += ep_err;
                ds.trajs.push_back(std::move(tr));
                done = true;
            } catch (const DomainError&) {
                ds.regenerated += 1;
            }
        }
        if (!done) throw Error("gen_demos: demonstrator kept diverging; check plant bounds");
    }
    ds.norm = compute_norm_stats(ds.trajs, p.n, p.m);
    ds.expert_rms = std::sqrt(sq_err_sum / static_cast<double>(N * T));
    return ds;
}

}  // namespace rmbil
