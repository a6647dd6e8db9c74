#pragma once

#include <algorithm>
#include <string>

#include "rmbil/datastore.hpp"
#include "rmbil/train.hpp"

namespace rmbil {

// Inference-time closed loop over the true plant, metric computation, and the
// controller-consistency and robustness checks built on top of it. Episodes
// are independent; every aggregate is an ordered reduction, so reports are
// reproducible regardless of thread count.

enum class RefSource { Replay, Generated };

struct RolloutCfg {
    RefSource source = RefSource::Replay;
    double gain = 0.1;           // feedback gain on the reference error
    std::size_t steps = 0;       // 0: dataset horizon
    DisturbanceCfg disturbance;  // applied to the true plant only
    std::uint64_t seed = 0;
    std::size_t episodes = 50;
    std::size_t substeps = 4;    // plant integration substeps per sample period
    double expert_gain = 5.0;    // demonstrator feedback gain, anchor policy

    void validate() const {
        require(episodes >= 1, "rollout needs at least one episode");
        require(gain > 0.0, "rollout gain must be positive");
        require(substeps >= 1, "rollout substeps must be at least 1");
        require(expert_gain > 0.0, "expert gain must be positive");
    }
};

// Everything a control law may look at in one step. nu already folds the
// reference-rate feedforward and the gain: nu = delta + gain * (ref_next - x).
struct StepCtx {
    const Vec& x;
    const Vec& ref_next;
    const Vec& delta;
    const Vec& nu;
    std::size_t i = 0;
};

using Policy = std::function<Vec(const StepCtx&)>;

struct EpisodeResult {
    double reward = 0.0;  // sum of 1 - min(1, ||x - r||^2), nonnegative per step
    double rms = 0.0;     // tracking RMS; missing steps scored at the clip radius
    std::size_t steps_done = 0;
    bool terminated = false;  // left the plant domain before the horizon
};

struct Trace {
    Vec t;
    std::vector<Vec> x, r, u;
    Vec reward;
};

struct EvalReport {
    std::size_t episodes = 0;
    std::vector<double> rewards, scores, rms;
    std::vector<std::uint8_t> terminated;
    double mean_score = 0.0, std_score = 0.0, min_score = 0.0, max_score = 0.0;
    double median_rms = 0.0;
    double expert_reward_mean = 0.0, random_reward_mean = 0.0;
};

inline double median_of(std::vector<double> v) {
    require(!v.empty(), "median of empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// One closed-loop episode. refs has steps+1 entries; the plant starts at
// refs[0]. A domain exit ends the episode early with the termination flag set.
inline EpisodeResult run_episode(const PlantSpec& p, const DisturbanceCfg& dist,
                                 const std::vector<Vec>& refs, double gain, const Policy& pi,
                                 std::size_t substeps, Trace* trace = nullptr) {
    require(refs.size() >= 2, "episode needs at least one reference step");
    const std::size_t steps = refs.size() - 1;
    Vec x = refs[0];
    EpisodeResult out;
    double sq_sum = 0.0;
    if (trace) {
        trace->t.clear();
        trace->x.clear();
        trace->r.clear();
        trace->u.clear();
        trace->reward.clear();
    }

    for (std::size_t i = 0; i < steps; ++i) {
        Vec delta(p.n), nu(p.n);
        for (std::size_t d = 0; d < p.n; ++d) {
            delta[d] = (refs[i + 1][d] - refs[i][d]) / p.dt;
            nu[d] = delta[d] + gain * (refs[i + 1][d] - x[d]);
        }
        const Vec u = pi(StepCtx{x, refs[i + 1], delta, nu, i});
        bool ok = true;
        try {
            x = plant_step(p, dist, x, u, p.dt, substeps);
        } catch (const DomainError&) {
            ok = false;
        }
        if (!ok) {
            out.terminated = true;
            break;
        }
        double sq = 0.0;
        for (std::size_t d = 0; d < p.n; ++d) {
            const double e = x[d] - refs[i + 1][d];
            sq += e * e;
        }
        const double r = 1.0 - std::min(1.0, sq);
        out.reward += r;
        sq_sum += sq;
        ++out.steps_done;
        if (trace) {
            trace->t.push_back(static_cast<double>(i + 1) * p.dt);
            trace->x.push_back(x);
            trace->r.push_back(refs[i + 1]);
            trace->u.push_back(u);
            trace->reward.push_back(r);
        }
    }
    // missing steps count at the reward clip radius, so bailing out early can
    // never look better than surviving
    sq_sum += static_cast<double>(steps - out.steps_done) * 1.0;
    out.rms = std::sqrt(sq_sum / static_cast<double>(steps));
    return out;
}

// Reference sequences. Replay hands back demo states; the generated source
// rolls the trained generator forward from a demo initial state.
inline std::vector<Vec> replay_refs(const Dataset& ds, std::size_t episode, std::size_t steps) {
    const Trajectory& tr = ds.trajs[episode % ds.N];
    const std::size_t s = std::min(steps, ds.T - 1);
    return {tr.states.begin(), tr.states.begin() + static_cast<std::ptrdiff_t>(s + 1)};
}

inline std::vector<Vec> generated_refs(const Dataset& ds, const CvaeModel& cv, std::size_t episode,
                                       std::size_t steps, Rng& zr) {
    std::vector<Vec> refs;
    refs.reserve(steps + 1);
    refs.push_back(ds.trajs[episode % ds.N].states.front());
    for (std::size_t i = 0; i < steps; ++i) {
        Vec z(cv.dz);
        for (double& v : z) v = zr.normal();
        refs.push_back(cvae_generate(cv, refs.back(), z));
    }
    return refs;
}

// Ready-made control laws for the harness. All are pure functions of the
// step context and safe to share across parallel episodes.
inline Policy policy_ctrl(const CtrlModel& cm) {
    return [&cm](const StepCtx& c) { return ctrl_forward(cm, c.nu, c.x); };
}

inline Policy policy_ndi_true(const PlantSpec& p) {
    return [&p](const StepCtx& c) { return ndi_oracle(p, c.x, c.nu); };
}

inline Policy policy_ndi_learned(const DynModel& dm) {
    return [&dm](const StepCtx& c) {
        const AffinePair ap = extract_affine(dm, c.x);
        return ndi_from_affine(ap.a, ap.G, dm.n, dm.m, c.nu);
    };
}

// The demonstrator: exact inversion of the nominal plant driven at its own
// (stiffer) feedback gain. Used as the score = 1 anchor.
inline Policy policy_expert(const PlantSpec& p, double expert_gain) {
    return [&p, expert_gain](const StepCtx& c) {
        Vec nu(p.n);
        for (std::size_t d = 0; d < p.n; ++d)
            nu[d] = c.delta[d] + expert_gain * (c.ref_next[d] - c.x[d]);
        return ndi_oracle(p, c.x, nu);
    };
}

// Evaluate one control law. Per episode the same reference sequence drives
// the candidate, the expert anchor, and a seed-fixed N(0, I) random policy;
// scores are rewards rescaled so the expert batch mean maps to 1 and the
// random batch mean to 0.
inline EvalReport evaluate_policy(const PlantSpec& p, const Policy& cand, const Dataset& ds,
                                  const CvaeModel* cv, const RolloutCfg& cfg) {
    cfg.validate();
    require(ds.N >= 1, "evaluation needs a dataset for references");
    require(cfg.source == RefSource::Replay || cv != nullptr,
            "generated references need a generator model");
    const std::size_t steps =
        cfg.source == RefSource::Replay
            ? std::min(cfg.steps == 0 ? ds.T - 1 : cfg.steps, ds.T - 1)
            : (cfg.steps == 0 ? ds.T - 1 : cfg.steps);

    const Policy expert = policy_expert(p, cfg.expert_gain);
    const Rng root(cfg.seed);

    struct Slot {
        EpisodeResult cand, exp, rnd;
    };
    std::vector<Slot> slot(cfg.episodes);
    parallel_for(cfg.episodes, [&](std::size_t e) {
        Rng zr = root.fork(3 * e + 1);
        const std::vector<Vec> refs = cfg.source == RefSource::Replay
                                          ? replay_refs(ds, e, steps)
                                          : generated_refs(ds, *cv, e, steps, zr);
        slot[e].cand = run_episode(p, cfg.disturbance, refs, cfg.gain, cand, cfg.substeps);
        slot[e].exp = run_episode(p, cfg.disturbance, refs, cfg.gain, expert, cfg.substeps);
        Rng ur = root.fork(3 * e + 2);
        const Policy random = [&ur, &p](const StepCtx&) {
            Vec u(p.m);
            for (double& v : u) v = ur.normal();
            return u;
        };
        slot[e].rnd = run_episode(p, cfg.disturbance, refs, cfg.gain, random, cfg.substeps);
    });

    EvalReport rep;
    rep.episodes = cfg.episodes;
    double exp_sum = 0.0, rnd_sum = 0.0;
    for (const Slot& s : slot) {
        exp_sum += s.exp.reward;
        rnd_sum += s.rnd.reward;
    }
    rep.expert_reward_mean = exp_sum / static_cast<double>(cfg.episodes);
    rep.random_reward_mean = rnd_sum / static_cast<double>(cfg.episodes);
    const double denom = std::max(rep.expert_reward_mean - rep.random_reward_mean, 1e-9);

    double sum = 0.0, sum2 = 0.0;
    rep.min_score = std::numeric_limits<double>::infinity();
    rep.max_score = -std::numeric_limits<double>::infinity();
    for (const Slot& s : slot) {
        const double score = (s.cand.reward - rep.random_reward_mean) / denom;
        rep.rewards.push_back(s.cand.reward);
        rep.scores.push_back(score);
        rep.rms.push_back(s.cand.rms);
        rep.terminated.push_back(s.cand.terminated ? 1 : 0);
        sum += score;
        sum2 += score * score;
        rep.min_score = std::min(rep.min_score, score);
        rep.max_score = std::max(rep.max_score, score);
    }
    const double n = static_cast<double>(cfg.episodes);
    rep.mean_score = sum / n;
    rep.std_score = std::sqrt(std::max(0.0, sum2 / n - rep.mean_score * rep.mean_score));
    rep.median_rms = median_of(rep.rms);
    return rep;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    return {{"episodes", r.episodes},
            {"mean_score", r.mean_score},
            {"std_score", r.std_score},
            {"min_score", r.min_score},
            {"max_score", r.max_score},
            {"median_rms", r.median_rms},
            {"expert_reward_mean", r.expert_reward_mean},
            {"random_reward_mean", r.random_reward_mean},
            {"rewards", r.rewards},
            {"scores", r.scores},
            {"rms", r.rms},
            {"terminated", r.terminated}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.episodes = j.at("episodes").get<std::size_t>();
    r.mean_score = j.at("mean_score").get<double>();
    r.std_score = j.at("std_score").get<double>();
    r.min_score = j.at("min_score").get<double>();
    r.max_score = j.at("max_score").get<double>();
    r.median_rms = j.at("median_rms").get<double>();
    r.expert_reward_mean = j.at("expert_reward_mean").get<double>();
    r.random_reward_mean = j.at("random_reward_mean").get<double>();
    r.rewards = j.at("rewards").get<std::vector<double>>();
    r.scores = j.at("scores").get<std::vector<double>>();
    r.rms = j.at("rms").get<std::vector<double>>();
    r.terminated = j.at("terminated").get<std::vector<std::uint8_t>>();
    return r;
}

inline void write_trace_csv(const std::string& path, const Trace& tr, std::size_t n,
                            std::size_t m) {
    std::vector<std::string> cols{"t"};
    for (std::size_t d = 0; d < n; ++d) cols.push_back("x" + std::to_string(d));
    for (std::size_t d = 0; d < n; ++d) cols.push_back("r" + std::to_string(d));
    for (std::size_t d = 0; d < m; ++d) cols.push_back("u" + std::to_string(d));
    cols.push_back("reward");
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < tr.t.size(); ++i) {
        std::vector<double> row{tr.t[i]};
        row.insert(row.end(), tr.x[i].begin(), tr.x[i].end());
        row.insert(row.end(), tr.r[i].begin(), tr.r[i].end());
        row.insert(row.end(), tr.u[i].begin(), tr.u[i].end());
        row.push_back(tr.reward[i]);
        rows.push_back(std::move(row));
    }
    write_csv(path, cols, rows);
}

// Controller-consistency check: the trained controller queried at
// demo-distribution (x, nu) pairs against the closed-form inversions, both
// through the learned dynamics and through the true plant. The relative
// error denominator is floored at 1% of the dataset control scale so
// zero-crossing controls cannot blow up single samples.
struct ConsistencyStats {
    std::vector<double> rel_true, rel_learned;
    double median_rel_true = 0.0, median_rel_learned = 0.0;
};

inline ConsistencyStats ndi_consistency_check(const PlantSpec& p, const DynModel& dm,
                                              const CtrlModel& cm, const Dataset& ds,
                                              std::size_t samples, double jitter, double gain,
                                              std::uint64_t seed) {
    require(samples >= 1, "consistency check needs samples");
    require(ds.T >= 2, "consistency check needs demo transitions");
    double u_sq = 0.0;
    std::size_t u_cnt = 0;
    for (const auto& tr : ds.trajs)
        for (const Vec& u : tr.actions) {
            for (double v : u) u_sq += v * v;
            ++u_cnt;
        }
    const double u_scale = std::sqrt(std::max(u_sq / static_cast<double>(u_cnt), 1e-12));
    const double floor = 0.01 * u_scale;

    const Rng root(seed);
    ConsistencyStats st;
    st.rel_true.resize(samples);
    st.rel_learned.resize(samples);
    parallel_for(samples, [&](std::size_t s) {
        Rng rng = root.fork(s);
        Vec x, nu(ds.n);
        for (std::size_t attempt = 0;; ++attempt) {
            const std::size_t k = rng.below(ds.N);
            const std::size_t i = rng.below(ds.T - 1);
            const auto& xe = ds.trajs[k].states;
            x = xe[i];
            for (std::size_t d = 0; d < ds.n; ++d)
                x[d] += jitter * ds.norm.state_std[d] * rng.normal();
            if (in_domain(p, x)) {
                for (std::size_t d = 0; d < ds.n; ++d) {
                    const double delta = (xe[i + 1][d] - xe[i][d]) / ds.dt;
                    nu[d] = delta + gain * (xe[i + 1][d] - x[d]);
                }
                break;
            }
            require(attempt < 64, "consistency check: cannot sample inside the plant domain");
        }
        const Vec u_hat = ctrl_forward(cm, nu, x);
        const Vec u_true = ndi_oracle(p, x, nu);
        const AffinePair ap = extract_affine(dm, x);
        const Vec u_learn = ndi_from_affine(ap.a, ap.G, dm.n, dm.m, nu);
        const auto rel = [&](const Vec& ref) {
            double d2 = 0.0, r2 = 0.0;
            for (std::size_t j = 0; j < ds.m; ++j) {
                d2 += (u_hat[j] - ref[j]) * (u_hat[j] - ref[j]);
                r2 += ref[j] * ref[j];
            }
            return std::sqrt(d2) / std::max(std::sqrt(r2), floor);
        };
        st.rel_true[s] = rel(u_true);
        st.rel_learned[s] = rel(u_learn);
    });
    st.median_rel_true = median_of(st.rel_true);
    st.median_rel_learned = median_of(st.rel_learned);
    return st;
}

// Full cross product of controllers x disturbances x gains; every cell is
// present in the output in deterministic order.
struct NamedPolicy {
    std::string name;
    Policy fn;
};

struct NamedDisturbance {
    std::string name;
    DisturbanceCfg cfg;
};

struct SweepRow {
    std::string controller, disturbance;
    double gain = 0.0;
    EvalReport report;
};

inline std::vector<SweepRow> robustness_sweep(const PlantSpec& p, const Dataset& ds,
                                              const CvaeModel* cv, const RolloutCfg& base,
                                              const std::vector<NamedPolicy>& controllers,
                                              const std::vector<NamedDisturbance>& disturbances,
                                              const std::vector<double>& gains) {
    require(!controllers.empty() && !disturbances.empty() && !gains.empty(),
            "sweep axes must be nonempty");
    std::vector<SweepRow> rows;
    for (const NamedPolicy& ctl : controllers)
        for (const NamedDisturbance& dist : disturbances)
            for (double g : gains) {
                RolloutCfg cfg = base;
                cfg.disturbance = dist.cfg;
                cfg.gain = g;
                rows.push_back({ctl.name, dist.name, g, evaluate_policy(p, ctl.fn, ds, cv, cfg)});
            }
    return rows;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::string out = "controller,disturbance,gain,mean_score,std_score,min_score,max_score,"
                      "median_rms\n";
    for (const SweepRow& r : rows) {
        out += r.controller + "," + r.disturbance + "," + csv_double(r.gain) + "," +
               csv_double(r.report.mean_score) + "," + csv_double(r.report.std_score) + "," +
               csv_double(r.report.min_score) + "," + csv_double(r.report.max_score) + "," +
               csv_double(r.report.median_rms) + "\n";
    }
    atomic_write(path, out);
}

// Behavior-cloning baseline: a plain state-to-action regressor trained on the
// demo pairs, evaluated by the same harness (it ignores the reference).
struct BcModel {
    std::size_t n = 0, m = 0;
    MlpParams net;
    NormStats norm;
};

struct BcConfig {
    std::size_t hidden = 32, batch = 256, max_epochs = 200;
    double eps = 1e-4;  // stop when the mean squared standardized error dips below
    AdamConfig adam;
    std::uint64_t seed = 0;
};

inline Vec bc_forward(const BcModel& b, const Vec& x) {
    return b.norm.unstd_action(mlp_forward(b.net, b.norm.std_state(x)));
}

inline Policy policy_bc(const BcModel& b) {
    return [&b](const StepCtx& c) { return bc_forward(b, c.x); };
}

inline BcModel bc_train(const Dataset& ds, const BcConfig& cfg, std::vector<LossRow>* history) {
    require(ds.N >= 1 && ds.T >= 1, "bc_train: empty dataset");
    BcModel b;
    b.n = ds.n;
    b.m = ds.m;
    b.norm = ds.norm;
    Rng init(cfg.seed);
    b.net = MlpParams::init(ds.n, cfg.hidden, ds.m, init, 0.1);

    struct Pair {
        std::size_t traj, idx;
    };
    std::vector<Pair> pairs;
    for (std::size_t k = 0; k < ds.N; ++k)
        for (std::size_t i = 0; i < ds.T; ++i) pairs.push_back({k, i});
    std::vector<Vec> xs(pairs.size()), us(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        xs[i] = ds.norm.std_state(ds.trajs[pairs[i].traj].states[pairs[i].idx]);
        us[i] = ds.norm.std_action(ds.trajs[pairs[i].traj].actions[pairs[i].idx]);
    }

    const std::vector<Tensor*> params = b.net.tensors();
    AdamState ast = AdamState::from(params);
    Rng shuffle_rng = Rng(cfg.seed).fork(509);
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        double loss_sum = 0.0;
        for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch) {
            const std::size_t hi = std::min(lo + cfg.batch, order.size());
            struct Slot {
                double loss = 0.0;
                std::vector<Vec> grads;
            };
            std::vector<Slot> slot(hi - lo);
            parallel_for(hi - lo, [&](std::size_t i) {
                const std::size_t s = order[lo + i];
                Tape tape;
                const MlpLeaves l = MlpLeaves::bind(tape, b.net);
                const int out = mlp_forward(tape, l, b.net, tape.leaf(xs[s]));
                const int err = tape.sub(out, tape.leaf(us[s]));
                const int loss = tape.sum_squares(err);
                slot[i].loss = tape.val(loss)[0];
                const auto grads = tape.backward({{loss, {1.0}}});
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
                loss_sum += s.loss;
                for (std::size_t k = 0; k < acc.size(); ++k)
                    for (std::size_t j = 0; j < acc[k].size(); ++j)
                        acc[k][j] += inv_b * s.grads[k][j];
            }
            adam_step(params, acc, ast, cfg.adam, epoch);
        }
        const double loss = loss_sum / static_cast<double>(order.size());
        check_finite(loss, "bc epoch loss");
        if (history)
            history->push_back({epoch, "bc", loss, effective_lr(cfg.adam, epoch)});
        if (loss < cfg.eps) break;
    }
    return b;
}

}  // namespace rmbil
