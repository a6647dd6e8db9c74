#pragma once

#include "rmbil/tape.hpp"

namespace rmbil {

// Two hidden layers, ELU activations, linear output head.
struct MlpParams {
    std::size_t in = 0, hidden = 0, out = 0;
    Tensor w1, b1, w2, b2, w3, b3;  // w1: hidden×in, w2: hidden×hidden, w3: out×hidden

    // Glorot-uniform weights, zero biases. out_scale shrinks the output layer
    // so a fresh network starts near the zero map (controllers and decoders
    // must not kick the closed loop into divergence at epoch 0).
    static MlpParams init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng,
                          double out_scale = 1.0) {
        MlpParams p;
        p.in = in;
        p.hidden = hidden;
        p.out = out;
        p.w1 = glorot(hidden, in, rng, 1.0);
        p.b1 = Tensor::zeros({hidden});
        p.w2 = glorot(hidden, hidden, rng, 1.0);
        p.b2 = Tensor::zeros({hidden});
        p.w3 = glorot(out, hidden, rng, out_scale);
        p.b3 = Tensor::zeros({out});
        return p;
    }

    std::vector<Tensor*> tensors() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
    std::vector<const Tensor*> tensors() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

    std::size_t param_count() const {
        return w1.numel() + b1.numel() + w2.numel() + b2.numel() + w3.numel() + b3.numel();
    }

private:
    static Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
        const double limit = scale * std::sqrt(6.0 / static_cast<double>(rows + cols));
        Tensor t = Tensor::zeros({rows, cols});
        for (double& v : t.data) v = rng.uniform(-limit, limit);
        return t;
    }
};

// Tape-free evaluation.
inline Vec mlp_forward(const MlpParams& p, const Vec& x) {
    if (x.size() != p.in) throw ShapeError("mlp_forward: input width mismatch");
    Vec h1 = vec_elu(vec_add(mat_vec(p.w1.data, p.hidden, p.in, x), p.b1.data));
    Vec h2 = vec_elu(vec_add(mat_vec(p.w2.data, p.hidden, p.hidden, h1), p.b2.data));
    Vec y = vec_add(mat_vec(p.w3.data, p.out, p.hidden, h2), p.b3.data);
    vec_check_finite(y, "mlp_forward output");
    return y;
}

// Parameter leaves recorded once per tape, shared by every evaluation on it.
struct MlpLeaves {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1, w3 = -1, b3 = -1;

    static MlpLeaves bind(Tape& t, const MlpParams& p) {
        MlpLeaves l;
        l.w1 = t.leaf(p.w1.data);
        l.b1 = t.leaf(p.b1.data);
        l.w2 = t.leaf(p.w2.data);
        l.b2 = t.leaf(p.b2.data);
        l.w3 = t.leaf(p.w3.data);
        l.b3 = t.leaf(p.b3.data);
        return l;
    }

    std::vector<int> ids() const { return {w1, b1, w2, b2, w3, b3}; }
};

// Taped evaluation; same primitive sequence as the tape-free path, so both
// produce bit-identical forward values.
inline int mlp_forward(Tape& t, const MlpLeaves& l, const MlpParams& p, int x) {
    if (t.val(x).size() != p.in) throw ShapeError("mlp_forward: input width mismatch");
    int h1 = t.elu_node(t.add(t.matvec(l.w1, x, p.hidden, p.in), l.b1));
    int h2 = t.elu_node(t.add(t.matvec(l.w2, h1, p.hidden, p.hidden), l.b2));
    int y = t.add(t.matvec(l.w3, h2, p.out, p.hidden), l.b3);
    vec_check_finite(t.val(y), "mlp_forward output");
    return y;
}

}  // namespace rmbil
