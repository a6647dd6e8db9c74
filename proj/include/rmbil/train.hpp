#pragma once

#include <memory>

#include "rmbil/adjoint.hpp"
#include "rmbil/datastore.hpp"
#include "rmbil/optim.hpp"

namespace rmbil {

// Three sequential phases over one demo dataset: fit the dynamics from ZOH
// expert controls, train the tracking controller through the frozen learned
// dynamics in closed loop, then refine it with state noise injected at sample
// boundaries. A CVAE over consecutive states learns the reference generator.

struct TrainConfig {
    SolverConfig solver;  // method and window length tau; h is derived from dt
    AdamConfig adam;
    std::size_t hidden = 32;
    DynKind dyn_kind = DynKind::Affine;
    std::size_t substeps = 1;     // integrator steps per sample period
    std::size_t batch = 2048;     // windows per optimizer update
    std::size_t max_epochs = 500;  // cap per phase
    std::size_t windows_cap = 0;  // >0: random subset of windows per epoch
    double eps = 0.01;            // dynamics / tracking stop threshold
    double eps_r = 0.02;          // noised-loss stop threshold
    double noise_std = 0.25;      // boundary noise, standardized units
    double gain = 0.1;            // tracking feedback gain
    double holdout_frac = 0.2;
    std::size_t holdout_cap = 512;
    GradPath grad_path = GradPath::Adjoint;
    std::uint64_t seed = 0;
    // reference generator: converged once every epoch-to-epoch move of both
    // loss terms stays below plateau_rel of the objective for plateau_epochs
    // in a row (the objective scale keeps a collapsed divergence term from
    // flapping on noise around zero)
    std::size_t dz = 2, cvae_hidden = 32, cvae_batch = 256, cvae_max_epochs = 500;
    double plateau_rel = 0.01;
    std::size_t plateau_epochs = 20;

    void validate() const {
        solver.validate();
        require(eps > 0.0 && eps_r > 0.0, "stop thresholds must be positive");
        require(noise_std >= 0.0, "noise std must be nonnegative");
        require(batch >= 1 && cvae_batch >= 1, "batch must be at least 1");
        require(substeps >= 1, "substeps must be at least 1");
        require(holdout_frac >= 0.0 && holdout_frac < 1.0, "holdout fraction in [0, 1)");
        require(gain > 0.0, "tracking gain must be positive");
    }
};

// A window is addressed inside the dataset; its states/controls are read in
// place. Valid windows keep start + tau within one trajectory.
struct Window {
    std::size_t traj = 0, start = 0;
};

struct TrainResult {
    std::vector<LossRow> history;
    double final_loss = std::numeric_limits<double>::infinity();
    double holdout_loss = std::numeric_limits<double>::infinity();
    std::size_t epochs = 0;
    bool converged = false;
};

inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_trajs(std::size_t N,
                                                                                 double frac) {
    std::vector<std::size_t> train, hold;
    std::size_t n_hold = frac > 0.0 && N >= 2
                             ? std::clamp<std::size_t>(
                                   static_cast<std::size_t>(std::llround(frac * double(N))), 1,
                                   N - 1)
                             : 0;
    for (std::size_t k = 0; k < N - n_hold; ++k) train.push_back(k);
    for (std::size_t k = N - n_hold; k < N; ++k) hold.push_back(k);
    return {train, hold};
}

inline std::vector<Window> enumerate_windows(const Dataset& ds, std::size_t tau,
                                             const std::vector<std::size_t>& trajs) {
    require(ds.T > tau, "trajectories shorter than one window");
    std::vector<Window> w;
    for (std::size_t k : trajs)
        for (std::size_t s = 0; s + tau < ds.T; ++s) w.push_back({k, s});
    return w;
}

namespace detail {

// Affine forms of the standardization maps, precomputed once so the plain and
// taped paths share identical constants (and therefore identical values).
struct StdMaps {
    Vec xs_off, xs_sc;    // x -> (x - mu) / sigma as off + sc*x
    Vec out_zero, out_sc;  // rate destandardization: sigma * f_std
    Vec inv_var;           // 1 / sigma^2, for loss gradients
};

inline StdMaps make_std_maps(const NormStats& st) {
    StdMaps sm;
    const std::size_t n = st.state_mean.size();
    sm.xs_off.resize(n);
    sm.xs_sc.resize(n);
    sm.inv_var.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        sm.xs_sc[i] = 1.0 / st.state_std[i];
        sm.xs_off[i] = -st.state_mean[i] * sm.xs_sc[i];
        sm.inv_var[i] = sm.xs_sc[i] * sm.xs_sc[i];
    }
    sm.out_zero.assign(n, 0.0);
    sm.out_sc = st.state_std;
    return sm;
}

// Open-loop system for the dynamics phase: ZOH expert control per segment.
struct Phase1Ctx {
    DynModel* dm;
    StdMaps sm;
    std::vector<Vec> us_std;  // one standardized expert control per segment
};

inline TapedSystem phase1_system(std::shared_ptr<Phase1Ctx> ctx) {
    TapedSystem sys;
    sys.params = ctx->dm->params();
    sys.eval = [ctx](std::size_t seg, double, const Vec& x) {
        const Vec xs = vec_affine(x, ctx->sm.xs_off, ctx->sm.xs_sc);
        const Vec f = dyn_forward_std(*ctx->dm, xs, ctx->us_std[seg]);
        return vec_affine(f, ctx->sm.out_zero, ctx->sm.out_sc);
    };
    sys.build = [ctx](Tape& t, const std::vector<int>& leaves, std::size_t seg, double, int x) {
        const DynLeaves dl = dyn_leaves_at(*ctx->dm, leaves);
        const int xs = t.affine(x, ctx->sm.xs_off, ctx->sm.xs_sc);
        const int f = dyn_forward_std(t, dl, *ctx->dm, xs, t.leaf(ctx->us_std[seg]));
        return t.affine(f, ctx->sm.out_zero, ctx->sm.out_sc);
    };
    return sys;
}

// Closed-loop system for the tracking phases: per-segment reference constants
// folded into one affine op, nu = delta + K(ref - x), controller in the loop,
// frozen dynamics bound as constants.
struct TrackCtx {
    const DynModel* dm;
    CtrlModel* cm;
    StdMaps sm;
    std::vector<Vec> nu_off;  // per segment: delta + K*ref
    Vec neg_gain;             // all entries -K
    Vec nus_off, nus_sc;      // virtual-input standardization
};

inline TapedSystem tracking_system(std::shared_ptr<TrackCtx> ctx) {
    TapedSystem sys;
    sys.params = ctx->cm->params();
    sys.eval = [ctx](std::size_t seg, double, const Vec& x) {
        const Vec nu = vec_affine(x, ctx->nu_off[seg], ctx->neg_gain);
        const Vec nus = vec_affine(nu, ctx->nus_off, ctx->nus_sc);
        const Vec xs = vec_affine(x, ctx->sm.xs_off, ctx->sm.xs_sc);
        Vec in = nus;
        in.insert(in.end(), xs.begin(), xs.end());
        const Vec us = mlp_forward(ctx->cm->net, in);
        const Vec f = dyn_forward_std(*ctx->dm, xs, us);
        return vec_affine(f, ctx->sm.out_zero, ctx->sm.out_sc);
    };
    sys.build = [ctx](Tape& t, const std::vector<int>& leaves, std::size_t seg, double, int x) {
        const MlpLeaves cl = mlp_leaves_at(leaves, 0);
        const DynLeaves dl = DynLeaves::bind(t, *ctx->dm);  // frozen: constants on the tape
        const int nu = t.affine(x, ctx->nu_off[seg], ctx->neg_gain);
        const int nus = t.affine(nu, ctx->nus_off, ctx->nus_sc);
        const int xs = t.affine(x, ctx->sm.xs_off, ctx->sm.xs_sc);
        const int us = ctrl_forward_std(t, cl, *ctx->cm, nus, xs);
        const int f = dyn_forward_std(t, dl, *ctx->dm, xs, us);
        return t.affine(f, ctx->sm.out_zero, ctx->sm.out_sc);
    };
    return sys;
}

struct WindowOut {
    double loss = 0.0;
    std::vector<Vec> grads;  // per parameter tensor; empty when not requested
};

// Squared standardized state error summed over the tau predicted samples
// (the full window, not a per-sample mean), with optional gradients through
// the solve.
inline WindowOut run_window(const TapedSystem& sys, const Dataset& ds, const Window& w,
                            const StdMaps& sm, const Vec& t_grid, const SolverConfig& scfg,
                            GradPath path, const std::vector<Vec>& offsets, bool want_grad) {
    const Trajectory& tr = ds.trajs[w.traj];
    const Vec& x0 = tr.states[w.start];

    WindowOut out;
    const auto lg = [&](std::size_t i, const Vec& arrival) -> Vec {
        if (i == 0) return {};
        const Vec& xe = tr.states[w.start + i];
        Vec g(arrival.size());
        for (std::size_t d = 0; d < arrival.size(); ++d) {
            const double e = arrival[d] - xe[d];
            out.loss += e * e * sm.inv_var[d];
            g[d] = 2.0 * e * sm.inv_var[d];
        }
        return g;
    };

    if (want_grad) {
        GradResult r = integrate_with_grad(sys, x0, t_grid, scfg, LossGradFn(lg), path, offsets);
        out.grads = std::move(r.param_grads);
    } else {
        const auto arrivals = integrate_arrivals(sys.eval, x0, t_grid, scfg, offsets);
        for (std::size_t i = 1; i < arrivals.size(); ++i) (void)lg(i, arrivals[i]);
    }
    return out;
}

inline Vec window_grid(std::size_t tau, double dt) {
    Vec g(tau + 1);
    for (std::size_t i = 0; i <= tau; ++i) g[i] = static_cast<double>(i) * dt;
    return g;
}

inline void shuffle_windows(std::vector<Window>& w, Rng& rng) {
    for (std::size_t i = w.size(); i > 1; --i) std::swap(w[i - 1], w[rng.below(i)]);
}

// Deterministic ordered reduction over a batch of independent windows; the
// parallel loop only fills slots.
template <typename MakeSys>
inline std::pair<double, std::vector<Vec>> batch_grads(
    const std::vector<Window>& order, std::size_t lo, std::size_t hi, const Dataset& ds,
    const StdMaps& sm, const Vec& t_grid, const SolverConfig& scfg, GradPath path,
    const std::vector<Tensor*>& params, const MakeSys& make_sys) {
    std::vector<WindowOut> slot(hi - lo);
    parallel_for(hi - lo, [&](std::size_t i) {
        auto [sys, offsets] = make_sys(order[lo + i], lo + i);
        slot[i] = run_window(sys, ds, order[lo + i], sm, t_grid, scfg, path, offsets, true);
    });
    double loss = 0.0;
    std::vector<Vec> acc;
    for (const Tensor* t : params) acc.emplace_back(t->numel(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(hi - lo);
    for (const WindowOut& s : slot) {
        loss += s.loss;
        for (std::size_t k = 0; k < acc.size(); ++k)
            for (std::size_t j = 0; j < acc[k].size(); ++j) acc[k][j] += inv_b * s.grads[k][j];
    }
    return {loss, std::move(acc)};
}

template <typename MakeSys>
inline double eval_windows_loss(const std::vector<Window>& windows, const Dataset& ds,
                                const StdMaps& sm, const Vec& t_grid, const SolverConfig& scfg,
                                const MakeSys& make_sys) {
    if (windows.empty()) return std::numeric_limits<double>::infinity();
    std::vector<double> slot(windows.size(), 0.0);
    parallel_for(windows.size(), [&](std::size_t i) {
        auto [sys, offsets] = make_sys(windows[i], i);
        slot[i] = run_window(sys, ds, windows[i], sm, t_grid, scfg, GradPath::Direct,
                             offsets, false)
                      .loss;
    });
    double total = 0.0;
    for (double v : slot) total += v;
    return total / static_cast<double>(windows.size());
}

inline std::vector<Window> cap_evenly(std::vector<Window> w, std::size_t cap) {
    if (cap == 0 || w.size() <= cap) return w;
    std::vector<Window> out;
    out.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) out.push_back(w[i * w.size() / cap]);
    return out;
}

}  // namespace detail

// Phase 1: fit the derivative model so that integrating it under the expert's
// ZOH controls reproduces expert state windows. Stops when the held-out
// window loss drops below eps.
inline TrainResult train_dynamics(DynModel& dm, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    require(!ds.trajs.empty(), "train_dynamics: empty dataset");
    require(dm.n == ds.n && dm.m == ds.m, "train_dynamics: model/dataset dimension mismatch");

    const std::size_t tau = cfg.solver.tau;
    const detail::StdMaps sm = detail::make_std_maps(dm.norm);
    auto [train_set, hold_set] = split_trajs(ds.N, cfg.holdout_frac);
    std::vector<Window> train_windows = enumerate_windows(ds, tau, train_set);
    const std::vector<Window> hold_windows = detail::cap_evenly(
        enumerate_windows(ds, tau, hold_set.empty() ? train_set : hold_set), cfg.holdout_cap);

    const Vec t_grid = detail::window_grid(tau, ds.dt);
    SolverConfig scfg = cfg.solver;
    scfg.h = ds.dt / static_cast<double>(cfg.substeps);

    // standardized ZOH controls of every window segment are views into this
    std::vector<std::vector<Vec>> us_std(ds.N);
    for (std::size_t k = 0; k < ds.N; ++k) {
        us_std[k].reserve(ds.T);
        for (const Vec& u : ds.trajs[k].actions) us_std[k].push_back(ds.norm.std_action(u));
    }

    const auto make_sys = [&](const Window& w, std::size_t) {
        auto ctx = std::make_shared<detail::Phase1Ctx>();
        ctx->dm = &dm;
        ctx->sm = sm;
        ctx->us_std.assign(us_std[w.traj].begin() + static_cast<std::ptrdiff_t>(w.start),
                           us_std[w.traj].begin() + static_cast<std::ptrdiff_t>(w.start + tau));
        return std::make_pair(detail::phase1_system(std::move(ctx)), std::vector<Vec>{});
    };

    const std::vector<Tensor*> params = dm.params();
    AdamState ast = AdamState::from(params);
    Rng shuffle_rng = Rng(cfg.seed).fork(101);

    TrainResult res;
    try {
        for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
            detail::shuffle_windows(train_windows, shuffle_rng);
            const std::size_t visit =
                cfg.windows_cap ? std::min(cfg.windows_cap, train_windows.size())
                                : train_windows.size();
            double loss_sum = 0.0;
            for (std::size_t lo = 0; lo < visit; lo += cfg.batch) {
                const std::size_t hi = std::min(lo + cfg.batch, visit);
                auto [bl, grads] = detail::batch_grads(train_windows, lo, hi, ds, sm, t_grid,
                                                       scfg, cfg.grad_path, params, make_sys);
                loss_sum += bl;
                adam_step(params, grads, ast, cfg.adam, epoch);
            }
            res.final_loss = loss_sum / static_cast<double>(visit);
            check_finite(res.final_loss, "dynamics epoch loss");
            res.holdout_loss =
                detail::eval_windows_loss(hold_windows, ds, sm, t_grid, scfg, make_sys);
            res.history.push_back(
                {epoch, "dynamics", res.final_loss, effective_lr(cfg.adam, epoch)});
            res.epochs = epoch + 1;
            if (res.holdout_loss < cfg.eps) {
                res.converged = true;
                break;
            }
        }
        if (cfg.max_epochs == 0)
            res.holdout_loss =
                detail::eval_windows_loss(hold_windows, ds, sm, t_grid, scfg, make_sys);
    } catch (const NumericError& e) {
        throw TrainingDiverged(std::string("dynamics training diverged: ") + e.what());
    }

    dm.trained = true;
    dm.holdout_loss = res.holdout_loss;
    return res;
}

namespace detail {

// Shared core of the two controller phases; noise_std = 0 reproduces the
// tracking phase bit-for-bit (no draws are consumed, no offsets applied).
inline TrainResult closed_loop_train(const DynModel& dm, CtrlModel& cm, const Dataset& ds,
                                     const TrainConfig& cfg, double noise_std,
                                     const std::string& phase_name, double stop_eps,
                                     bool stop_on_train) {
    cfg.validate();
    require(!ds.trajs.empty(), "closed-loop training: empty dataset");
    require(dm.n == ds.n && dm.m == ds.m && cm.n == ds.n && cm.m == ds.m,
            "closed-loop training: dimension mismatch");

    const std::size_t tau = cfg.solver.tau;
    const StdMaps sm = make_std_maps(dm.norm);
    auto [train_set, hold_set] = split_trajs(ds.N, cfg.holdout_frac);
    std::vector<Window> train_windows = enumerate_windows(ds, tau, train_set);
    const std::vector<Window> hold_windows = cap_evenly(
        enumerate_windows(ds, tau, hold_set.empty() ? train_set : hold_set), cfg.holdout_cap);

    const Vec t_grid = window_grid(tau, ds.dt);
    SolverConfig scfg = cfg.solver;
    scfg.h = ds.dt / static_cast<double>(cfg.substeps);

    // nu standardization as one affine map
    Vec nus_off(cm.n), nus_sc(cm.n);
    for (std::size_t i = 0; i < cm.n; ++i) {
        nus_sc[i] = 1.0 / cm.nu_std[i];
        nus_off[i] = -cm.nu_mean[i] * nus_sc[i];
    }

    const Rng noise_root = Rng(cfg.seed).fork(707);
    std::size_t epoch_now = 0;

    const auto make_sys = [&](const Window& w, std::size_t pos) {
        auto ctx = std::make_shared<TrackCtx>();
        ctx->dm = &dm;
        ctx->cm = &cm;
        ctx->sm = sm;
        ctx->neg_gain.assign(ds.n, -cfg.gain);
        ctx->nus_off = nus_off;
        ctx->nus_sc = nus_sc;
        const auto& xe = ds.trajs[w.traj].states;
        ctx->nu_off.resize(tau);
        for (std::size_t s = 0; s < tau; ++s) {
            Vec off(ds.n);
            for (std::size_t d = 0; d < ds.n; ++d) {
                const double ref = xe[w.start + s + 1][d];
                const double delta = (ref - xe[w.start + s][d]) / ds.dt;
                off[d] = delta + cfg.gain * ref;
            }
            ctx->nu_off[s] = std::move(off);
        }
        std::vector<Vec> offsets;
        if (noise_std > 0.0) {
            Rng nr = noise_root.fork(epoch_now * 1000003 + pos);
            offsets.resize(tau);
            for (std::size_t s = 0; s < tau; ++s) {
                Vec eta(ds.n);
                for (std::size_t d = 0; d < ds.n; ++d)
                    eta[d] = noise_std * dm.norm.state_std[d] * nr.normal();
                offsets[s] = std::move(eta);
            }
        }
        return std::make_pair(tracking_system(std::move(ctx)), std::move(offsets));
    };
    // held-out tracking loss is always measured noise-free
    const auto make_sys_clean = [&](const Window& w, std::size_t) {
        auto ctx = std::make_shared<TrackCtx>();
        ctx->dm = &dm;
        ctx->cm = &cm;
        ctx->sm = sm;
        ctx->neg_gain.assign(ds.n, -cfg.gain);
        ctx->nus_off = nus_off;
        ctx->nus_sc = nus_sc;
        const auto& xe = ds.trajs[w.traj].states;
        ctx->nu_off.resize(tau);
        for (std::size_t s = 0; s < tau; ++s) {
            Vec off(ds.n);
            for (std::size_t d = 0; d < ds.n; ++d) {
                const double ref = xe[w.start + s + 1][d];
                const double delta = (ref - xe[w.start + s][d]) / ds.dt;
                off[d] = delta + cfg.gain * ref;
            }
            ctx->nu_off[s] = std::move(off);
        }
        return std::make_pair(tracking_system(std::move(ctx)), std::vector<Vec>{});
    };

    const std::vector<Tensor*> params = cm.params();
    AdamState ast = AdamState::from(params);
    Rng shuffle_rng = Rng(cfg.seed).fork(211);

    TrainResult res;
    try {
        for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
            epoch_now = epoch;
            shuffle_windows(train_windows, shuffle_rng);
            const std::size_t visit =
                cfg.windows_cap ? std::min(cfg.windows_cap, train_windows.size())
                                : train_windows.size();
            double loss_sum = 0.0;
            for (std::size_t lo = 0; lo < visit; lo += cfg.batch) {
                const std::size_t hi = std::min(lo + cfg.batch, visit);
                auto [bl, grads] = batch_grads(train_windows, lo, hi, ds, sm, t_grid, scfg,
                                               cfg.grad_path, params, make_sys);
                loss_sum += bl;
                adam_step(params, grads, ast, cfg.adam, epoch);
            }
            res.final_loss = loss_sum / static_cast<double>(visit);
            check_finite(res.final_loss, "closed-loop epoch loss");
            res.holdout_loss =
                eval_windows_loss(hold_windows, ds, sm, t_grid, scfg, make_sys_clean);
            res.history.push_back(
                {epoch, phase_name, res.final_loss, effective_lr(cfg.adam, epoch)});
            res.epochs = epoch + 1;
            const double stop_metric = stop_on_train ? res.final_loss : res.holdout_loss;
            if (stop_metric < stop_eps) {
                res.converged = true;
                break;
            }
        }
        if (cfg.max_epochs == 0)
            res.holdout_loss =
                eval_windows_loss(hold_windows, ds, sm, t_grid, scfg, make_sys_clean);
    } catch (const NumericError& e) {
        throw TrainingDiverged(phase_name + " training diverged: " + e.what());
    }
    return res;
}

}  // namespace detail

// Phase 2: train the controller through the frozen learned dynamics in
// closed loop against expert windows. Stops when the held-out tracking loss
// drops below eps.
inline TrainResult train_controller(const DynModel& dm, CtrlModel& cm, const Dataset& ds,
                                    const TrainConfig& cfg) {
    if (!dm.trained)
        throw PhaseOrderError("train_controller: dynamics model is untrained; run the dynamics "
                              "phase first");
    TrainResult res = detail::closed_loop_train(dm, cm, ds, cfg, 0.0, "controller", cfg.eps,
                                                /*stop_on_train=*/false);
    cm.phase = std::max(cm.phase, 2);
    return res;
}

// Phase 3: identical loop with boundary noise; the stop test uses the noised
// training loss (the noise-free holdout would already sit below eps).
inline TrainResult refine_robust(const DynModel& dm, CtrlModel& cm, const Dataset& ds,
                                 const TrainConfig& cfg) {
    if (!dm.trained)
        throw PhaseOrderError("refine_robust: dynamics model is untrained; run the dynamics "
                              "phase first");
    if (cm.phase < 2)
        throw PhaseOrderError("refine_robust: controller is untrained; run the tracking phase "
                              "first");
    TrainResult res = detail::closed_loop_train(dm, cm, ds, cfg, cfg.noise_std, "refine",
                                                cfg.eps_r, /*stop_on_train=*/true);
    cm.phase = 3;
    return res;
}

// Closed-loop window loss for an arbitrary physical-unit control law over the
// learned dynamics; used for oracle fixed-point checks and baselines.
using CtrlFn = std::function<Vec(const Vec& nu, const Vec& x)>;

inline double closed_loop_loss(const DynModel& dm, const CtrlFn& pi, const Dataset& ds,
                               const TrainConfig& cfg, const std::vector<Window>& windows) {
    cfg.validate();
    require(!windows.empty(), "closed_loop_loss: no windows");
    const std::size_t tau = cfg.solver.tau;
    const detail::StdMaps sm = detail::make_std_maps(dm.norm);
    const Vec t_grid = detail::window_grid(tau, ds.dt);
    SolverConfig scfg = cfg.solver;
    scfg.h = ds.dt / static_cast<double>(cfg.substeps);

    std::vector<double> slot(windows.size(), 0.0);
    parallel_for(windows.size(), [&](std::size_t i) {
        const Window& w = windows[i];
        const auto& xe = ds.trajs[w.traj].states;
        const OdeFunc f = [&](std::size_t seg, double, const Vec& x) {
            Vec nu(ds.n);
            for (std::size_t d = 0; d < ds.n; ++d) {
                const double ref = xe[w.start + seg + 1][d];
                const double delta = (ref - xe[w.start + seg][d]) / ds.dt;
                nu[d] = delta + cfg.gain * (ref - x[d]);
            }
            return dyn_forward(dm, x, pi(nu, x));
        };
        const auto arrivals = integrate_arrivals(f, xe[w.start], t_grid, scfg);
        double loss = 0.0;
        for (std::size_t s = 1; s <= tau; ++s)
            for (std::size_t d = 0; d < ds.n; ++d) {
                const double e = arrivals[s][d] - xe[w.start + s][d];
                loss += e * e * sm.inv_var[d];
            }
        slot[i] = loss;
    });
    double total = 0.0;
    for (double v : slot) total += v;
    return total / static_cast<double>(windows.size());
}

// Virtual-input statistics over the demo distribution, for the controller's
// input standardization: nu = delta + K(ref - x) sampled at every demo step.
inline std::pair<Vec, Vec> nu_stats(const Dataset& ds, double gain) {
    Vec mean(ds.n, 0.0), var(ds.n, 0.0);
    std::size_t count = 0;
    for (const auto& tr : ds.trajs)
        for (std::size_t i = 0; i + 1 < tr.states.size(); ++i) {
            for (std::size_t d = 0; d < ds.n; ++d) {
                const double delta = (tr.states[i + 1][d] - tr.states[i][d]) / ds.dt;
                const double nu = delta + gain * (tr.states[i + 1][d] - tr.states[i][d]);
                mean[d] += nu;
                var[d] += nu * nu;
            }
            ++count;
        }
    require(count > 0, "nu_stats: empty dataset");
    for (std::size_t d = 0; d < ds.n; ++d) {
        mean[d] /= static_cast<double>(count);
        var[d] = std::max(1e-8, var[d] / static_cast<double>(count) - mean[d] * mean[d]);
        var[d] = std::sqrt(var[d]);
    }
    return {mean, var};
}

// Generator training over consecutive state pairs; stops once reconstruction
// and divergence have both settled (every epoch-to-epoch move below
// plateau_rel of the objective for plateau_epochs in a row) or at the cap.
inline TrainResult train_cvae(CvaeModel& cv, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    require(!ds.trajs.empty() && ds.T >= 2, "train_cvae: need consecutive state pairs");
    require(cv.n == ds.n, "train_cvae: dimension mismatch");

    struct Pair {
        std::size_t traj, idx;  // (x_{idx-1}, x_idx)
    };
    std::vector<Pair> pairs;
    for (std::size_t k = 0; k < ds.N; ++k)
        for (std::size_t i = 1; i < ds.T; ++i) pairs.push_back({k, i});

    const std::vector<Tensor*> params = cv.params();
    AdamState ast = AdamState::from(params);
    Rng shuffle_rng = Rng(cfg.seed).fork(307);
    const Rng eps_root = Rng(cfg.seed).fork(401);

    std::vector<Vec> xs_std(ds.N * ds.T);
    for (std::size_t k = 0; k < ds.N; ++k)
        for (std::size_t i = 0; i < ds.T; ++i)
            xs_std[k * ds.T + i] = cv.norm.std_state(ds.trajs[k].states[i]);

    TrainResult res;
    std::vector<double> recon_hist, kl_hist;
    for (std::size_t epoch = 0; epoch < cfg.cvae_max_epochs; ++epoch) {
        for (std::size_t i = pairs.size(); i > 1; --i)
            std::swap(pairs[i - 1], pairs[shuffle_rng.below(i)]);

        double recon_sum = 0.0, kl_sum = 0.0;
        for (std::size_t lo = 0; lo < pairs.size(); lo += cfg.cvae_batch) {
            const std::size_t hi = std::min(lo + cfg.cvae_batch, pairs.size());
            struct Slot {
                double recon = 0.0, kl = 0.0;
                std::vector<Vec> grads;
            };
            std::vector<Slot> slot(hi - lo);
            parallel_for(hi - lo, [&](std::size_t i) {
                const Pair& pr = pairs[lo + i];
                Rng er = eps_root.fork(epoch * 1000003 + lo + i);
                Vec eps(cv.dz);
                for (double& e : eps) e = er.normal();
                Tape tape;
                const CvaeLeaves l = CvaeLeaves::bind(tape, cv);
                const CvaeLossNodes nodes =
                    cvae_loss_nodes(tape, l, cv, xs_std[pr.traj * ds.T + pr.idx - 1],
                                    xs_std[pr.traj * ds.T + pr.idx], eps);
                slot[i].recon = tape.val(nodes.recon)[0];
                slot[i].kl = tape.val(nodes.kl)[0];
                const auto grads = tape.backward({{nodes.recon, {1.0}}, {nodes.kl, {1.0}}});
                const auto ids = l.ids();
                slot[i].grads.resize(ids.size());
                for (std::size_t k = 0; k < ids.size(); ++k) {
                    const Vec& g = grads[static_cast<std::size_t>(ids[k])];
                    slot[i].grads[k] = g.empty() ? Vec(params[k]->numel(), 0.0) : g;
                }
            });
            std::vector<Vec> acc;
            for (const Tensor* t : params) acc.emplace_back(t->numel(), 0.0);
            const double inv_b = 1.0 / static_cast<double>(hi - lo);
            for (const Slot& s : slot) {
                recon_sum += s.recon;
                kl_sum += s.kl;
                for (std::size_t k = 0; k < acc.size(); ++k)
                    for (std::size_t j = 0; j < acc[k].size(); ++j)
                        acc[k][j] += inv_b * s.grads[k][j];
            }
            adam_step(params, acc, ast, cfg.adam, epoch);
        }
        const double recon = recon_sum / static_cast<double>(pairs.size());
        const double kl = kl_sum / static_cast<double>(pairs.size());
        check_finite(recon, "generator reconstruction loss");
        check_finite(kl, "generator divergence loss");
        const double lr = effective_lr(cfg.adam, epoch);
        res.history.push_back({epoch, "cvae-recon", recon, lr});
        res.history.push_back({epoch, "cvae-kl", kl, lr});
        recon_hist.push_back(recon);
        kl_hist.push_back(kl);
        res.final_loss = recon + kl;
        res.epochs = epoch + 1;

        if (recon_hist.size() > cfg.plateau_epochs) {
            const auto settled = [&](const std::vector<double>& h) {
                for (std::size_t i = h.size() - cfg.plateau_epochs; i < h.size(); ++i) {
                    const double scale = std::max(recon_hist[i - 1] + kl_hist[i - 1], 1e-12);
                    if (std::abs(h[i] - h[i - 1]) >= cfg.plateau_rel * scale) return false;
                }
                return true;
            };
            if (settled(recon_hist) && settled(kl_hist)) {
                res.converged = true;
                break;
            }
        }
    }
    res.holdout_loss = res.final_loss;
    return res;
}

}  // namespace rmbil
