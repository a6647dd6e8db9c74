#pragma once

#include <limits>

#include "rmbil/mlp.hpp"
#include "rmbil/plants.hpp"
#include "rmbil/tape.hpp"

namespace rmbil {

// All networks operate in standardized coordinates; the structs carry the
// dataset statistics so physical-unit entry points can wrap them. Plain and
// taped forward passes share the vec_* kernels, so their values are
// bit-identical.

enum class DynKind { Affine, Generic };

inline std::string dyn_kind_name(DynKind k) {
    return k == DynKind::Affine ? "affine" : "generic";
}

inline DynKind dyn_kind_from(const std::string& s) {
    if (s == "affine") return DynKind::Affine;
    if (s == "generic") return DynKind::Generic;
    throw Error("unknown dynamics kind: " + s);
}

// Learned state derivative. Affine kind keeps the control-affine structure
// f(x, u) = a(x) + G(x) u in standardized space; generic is an unstructured
// net over [x; u] kept for comparison runs.
struct DynModel {
    DynKind kind = DynKind::Affine;
    std::size_t n = 0, m = 0;
    MlpParams a_net;  // x_std -> d(x_std)/dt          (affine)
    MlpParams g_net;  // x_std -> n*m matrix, row-major (affine)
    MlpParams f_net;  // [x_std; u_std] -> d(x_std)/dt  (generic)
    NormStats norm;
    bool trained = false;  // set by the dynamics phase; later phases require it
    double holdout_loss = std::numeric_limits<double>::infinity();

    std::vector<Tensor*> params() {
        if (kind == DynKind::Affine) {
            auto t = a_net.tensors();
            for (Tensor* g : g_net.tensors()) t.push_back(g);
            return t;
        }
        return f_net.tensors();
    }
};

inline DynModel dyn_init(DynKind kind, std::size_t n, std::size_t m, std::size_t hidden,
                         const NormStats& norm, Rng& rng) {
    DynModel d;
    d.kind = kind;
    d.n = n;
    d.m = m;
    d.norm = norm;
    if (kind == DynKind::Affine) {
        d.a_net = MlpParams::init(n, hidden, n, rng, 0.1);
        d.g_net = MlpParams::init(n, hidden, n * m, rng, 0.1);
    } else {
        d.f_net = MlpParams::init(n + m, hidden, n, rng, 0.1);
    }
    return d;
}

// Standardized-space forward pass: xs, us standardized; returns d(x_std)/dt.
inline Vec dyn_forward_std(const DynModel& d, const Vec& xs, const Vec& us) {
    if (xs.size() != d.n || us.size() != d.m) throw ShapeError("dyn_forward_std: bad input");
    if (d.kind == DynKind::Affine) {
        const Vec a = mlp_forward(d.a_net, xs);
        const Vec g = mlp_forward(d.g_net, xs);
        return vec_add(a, mat_vec(g, d.n, d.m, us));
    }
    Vec in = xs;
    in.insert(in.end(), us.begin(), us.end());
    return mlp_forward(d.f_net, in);
}

struct DynLeaves {
    DynKind kind = DynKind::Affine;
    MlpLeaves a, g, f;

    static DynLeaves bind(Tape& tape, const DynModel& d) {
        DynLeaves l;
        l.kind = d.kind;
        if (d.kind == DynKind::Affine) {
            l.a = MlpLeaves::bind(tape, d.a_net);
            l.g = MlpLeaves::bind(tape, d.g_net);
        } else {
            l.f = MlpLeaves::bind(tape, d.f_net);
        }
        return l;
    }

    std::vector<int> ids() const {
        if (kind == DynKind::Affine) {
            auto v = a.ids();
            for (int i : g.ids()) v.push_back(i);
            return v;
        }
        return f.ids();
    }
};

// Reassemble leaf bundles from a flat id list laid out in params() order, for
// callers that bound the tensors themselves.
inline MlpLeaves mlp_leaves_at(const std::vector<int>& ids, std::size_t base) {
    if (base + 6 > ids.size()) throw ShapeError("mlp_leaves_at: id list too short");
    MlpLeaves l;
    l.w1 = ids[base + 0];
    l.b1 = ids[base + 1];
    l.w2 = ids[base + 2];
    l.b2 = ids[base + 3];
    l.w3 = ids[base + 4];
    l.b3 = ids[base + 5];
    return l;
}

inline DynLeaves dyn_leaves_at(const DynModel& d, const std::vector<int>& ids) {
    DynLeaves l;
    l.kind = d.kind;
    if (d.kind == DynKind::Affine) {
        l.a = mlp_leaves_at(ids, 0);
        l.g = mlp_leaves_at(ids, 6);
    } else {
        l.f = mlp_leaves_at(ids, 0);
    }
    return l;
}

inline int dyn_forward_std(Tape& tape, const DynLeaves& l, const DynModel& d, int xs, int us) {
    if (d.kind == DynKind::Affine) {
        const int a = mlp_forward(tape, l.a, d.a_net, xs);
        const int g = mlp_forward(tape, l.g, d.g_net, xs);
        return tape.add(a, tape.matvec(g, us, d.n, d.m));
    }
    return mlp_forward(tape, l.f, d.f_net, tape.concat(xs, us));
}

// Physical-unit forward pass: ẋ = σ_x ⊙ f_std(std(x), std(u)).
inline Vec dyn_forward(const DynModel& d, const Vec& x, const Vec& u) {
    const Vec out = dyn_forward_std(d, d.norm.std_state(x), d.norm.std_action(u));
    return vec_mul(d.norm.state_std, out);
}

// Physical-unit affine pair at a state: ẋ ≈ a + G u. Exact (up to rounding)
// for the affine kind; finite differences around u = 0 for the generic kind.
struct AffinePair {
    Vec a;  // n
    Vec G;  // n×m row-major
};

inline AffinePair extract_affine(const DynModel& d, const Vec& x) {
    AffinePair ap;
    const Vec xs = d.norm.std_state(x);
    if (d.kind == DynKind::Affine) {
        const Vec a_std = mlp_forward(d.a_net, xs);
        const Vec g_std = mlp_forward(d.g_net, xs);
        // ẋ = σ_x ⊙ (a_std + G_std (u - μ_u) ⊘ σ_u) regrouped into a + G u.
        ap.G.assign(d.n * d.m, 0.0);
        for (std::size_t i = 0; i < d.n; ++i)
            for (std::size_t j = 0; j < d.m; ++j)
                ap.G[i * d.m + j] =
                    d.norm.state_std[i] * g_std[i * d.m + j] / d.norm.action_std[j];
        ap.a.assign(d.n, 0.0);
        for (std::size_t i = 0; i < d.n; ++i) {
            double off = 0.0;
            for (std::size_t j = 0; j < d.m; ++j) off += ap.G[i * d.m + j] * d.norm.action_mean[j];
            ap.a[i] = d.norm.state_std[i] * a_std[i] - off;
        }
        return ap;
    }
    const double h = 1e-3;
    ap.a = dyn_forward(d, x, Vec(d.m, 0.0));
    ap.G.assign(d.n * d.m, 0.0);
    for (std::size_t j = 0; j < d.m; ++j) {
        Vec up(d.m, 0.0), dn(d.m, 0.0);
        up[j] = h;
        dn[j] = -h;
        const Vec fp = dyn_forward(d, x, up), fm = dyn_forward(d, x, dn);
        for (std::size_t i = 0; i < d.n; ++i) ap.G[i * d.m + j] = (fp[i] - fm[i]) / (2.0 * h);
    }
    return ap;
}

// Tracking controller: maps (virtual input, state) to a control. The virtual
// input gets its own standardization, measured from the demo distribution.
struct CtrlModel {
    std::size_t n = 0, m = 0;
    MlpParams net;  // [ν_std; x_std] -> u_std
    NormStats norm;
    Vec nu_mean, nu_std;
    double clamp = 50.0;  // output bound in std units, applied at inference
    int phase = 0;        // 0 fresh, 2 tracking-trained, 3 noise-refined

    std::vector<Tensor*> params() { return net.tensors(); }

    Vec std_nu(const Vec& nu) const {
        Vec r(nu.size());
        for (std::size_t i = 0; i < nu.size(); ++i) r[i] = (nu[i] - nu_mean[i]) / nu_std[i];
        return r;
    }
};

inline CtrlModel ctrl_init(std::size_t n, std::size_t m, std::size_t hidden,
                           const NormStats& norm, const Vec& nu_mean, const Vec& nu_std,
                           Rng& rng) {
    CtrlModel c;
    c.n = n;
    c.m = m;
    c.norm = norm;
    c.nu_mean = nu_mean;
    c.nu_std = nu_std;
    c.net = MlpParams::init(2 * n, hidden, m, rng, 0.1);
    return c;
}

// Physical-unit inference with output clamping; clipped counts the clamp hits
// when a counter is supplied.
inline Vec ctrl_forward(const CtrlModel& c, const Vec& nu, const Vec& x,
                        std::size_t* clipped = nullptr) {
    if (nu.size() != c.n || x.size() != c.n) throw ShapeError("ctrl_forward: bad input");
    Vec in = c.std_nu(nu);
    const Vec xs = c.norm.std_state(x);
    in.insert(in.end(), xs.begin(), xs.end());
    Vec us = mlp_forward(c.net, in);
    for (double& v : us) {
        if (std::abs(v) > c.clamp) {
            v = std::clamp(v, -c.clamp, c.clamp);
            if (clipped) ++*clipped;
        }
    }
    return c.norm.unstd_action(us);
}

// Taped twin without the clamp; training drives outputs well inside the bound.
// nus, xs: standardized tape nodes. Returns u_std node.
inline int ctrl_forward_std(Tape& tape, const MlpLeaves& l, const CtrlModel& c, int nus, int xs) {
    return mlp_forward(tape, l, c.net, tape.concat(nus, xs));
}

// Conditional generator of the next reference state given the previous one.
// Both encoder and decoder operate on standardized states.
struct CvaeModel {
    std::size_t n = 0, dz = 0;
    MlpParams enc;  // [x_prev_std; x_next_std] -> [mu; logvar]
    MlpParams dec;  // [z; x_prev_std] -> x_next_std
    NormStats norm;

    std::vector<Tensor*> params() {
        auto t = enc.tensors();
        for (Tensor* g : dec.tensors()) t.push_back(g);
        return t;
    }
};

inline CvaeModel cvae_init(std::size_t n, std::size_t dz, std::size_t hidden,
                           const NormStats& norm, Rng& rng) {
    CvaeModel c;
    c.n = n;
    c.dz = dz;
    c.norm = norm;
    c.enc = MlpParams::init(2 * n, hidden, 2 * dz, rng, 0.1);
    c.dec = MlpParams::init(dz + n, hidden, n, rng, 0.1);
    return c;
}

struct CvaeLeaves {
    MlpLeaves enc, dec;

    static CvaeLeaves bind(Tape& tape, const CvaeModel& c) {
        return {MlpLeaves::bind(tape, c.enc), MlpLeaves::bind(tape, c.dec)};
    }

    std::vector<int> ids() const {
        auto v = enc.ids();
        for (int i : dec.ids()) v.push_back(i);
        return v;
    }
};

// Evidence terms for one (previous, next) standardized pair with a fixed
// reparameterization draw eps ~ N(0, I). Returns scalar node ids.
struct CvaeLossNodes {
    int recon = -1;  // ½ ‖x̂ - x_next‖²
    int kl = -1;     // ½ Σ (μ² + e^ℓ - 1 - ℓ)
};

inline CvaeLossNodes cvae_loss_nodes(Tape& tape, const CvaeLeaves& l, const CvaeModel& c,
                                     const Vec& xs_prev, const Vec& xs_next, const Vec& eps) {
    if (xs_prev.size() != c.n || xs_next.size() != c.n || eps.size() != c.dz)
        throw ShapeError("cvae_loss: bad input");
    Vec enc_in = xs_prev;
    enc_in.insert(enc_in.end(), xs_next.begin(), xs_next.end());
    const int h = mlp_forward(tape, l.enc, c.enc, tape.leaf(enc_in));
    const int mu = tape.slice(h, 0, c.dz);
    const int logvar = tape.slice(h, c.dz, c.dz);

    // z = μ + exp(½ℓ) ⊙ ε
    const int z = tape.add(mu, tape.mul_const(tape.exp_node(tape.scale(logvar, 0.5)), eps));
    const int xhat = mlp_forward(tape, l.dec, c.dec, tape.concat(z, tape.leaf(xs_prev)));

    CvaeLossNodes out;
    out.recon = tape.scale(tape.sum_squares(tape.sub(xhat, tape.leaf(xs_next))), 0.5);
    const int mu_sq = tape.sum_squares(mu);
    const int exp_sum = tape.sum(tape.exp_node(logvar));
    const int lv_sum = tape.sum(logvar);
    // ½ (Σμ² + Σeˡ - d - Σℓ)
    int k = tape.add(mu_sq, exp_sum);
    k = tape.sub(k, lv_sum);
    k = tape.affine(k, {-static_cast<double>(c.dz)}, {1.0});
    out.kl = tape.scale(k, 0.5);
    return out;
}

// Plain-value twin for held-out evaluation.
inline std::pair<double, double> cvae_loss(const CvaeModel& c, const Vec& x_prev,
                                           const Vec& x_next, const Vec& eps) {
    Tape tape;
    const CvaeLeaves l = CvaeLeaves::bind(tape, c);
    const CvaeLossNodes nodes =
        cvae_loss_nodes(tape, l, c, c.norm.std_state(x_prev), c.norm.std_state(x_next), eps);
    return {tape.val(nodes.recon)[0], tape.val(nodes.kl)[0]};
}

// Draw the next reference state in physical units from a latent sample.
inline Vec cvae_generate(const CvaeModel& c, const Vec& x_prev, const Vec& z) {
    if (x_prev.size() != c.n || z.size() != c.dz) throw ShapeError("cvae_generate: bad input");
    Vec in = z;
    const Vec xs = c.norm.std_state(x_prev);
    in.insert(in.end(), xs.begin(), xs.end());
    return c.norm.unstd_state(mlp_forward(c.dec, in));
}

}  // namespace rmbil
