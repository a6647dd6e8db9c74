#pragma once

#include <utility>

#include "rmbil/tensor.hpp"

namespace rmbil {

// Reverse-mode autodiff over an append-only list of primitive records.
// Node ids are indices into the list, so topological order is construction
// order by definition; the reverse pass visits each node exactly once.
enum class OpKind {
    Leaf,        // independent variable (parameter or input)
    MatVec,      // value(a) viewed rows×cols times value(b)
    Add,         // a + b
    Sub,         // a - b
    Mul,         // a ⊙ b
    MulConst,    // a ⊙ cv
    AddScaled,   // a + c·b
    Scale,       // c·a
    Affine,      // cv + cv2 ⊙ a
    Elu,         // elementwise ELU, α = 1
    Exp,         // elementwise exp
    Sum,         // scalar Σ a_i
    SumSquares,  // scalar Σ a_i²
    Slice,       // a[i0 .. i0+i1)
    Concat,      // (a, b)
};

struct TapeNode {
    OpKind op = OpKind::Leaf;
    int a = -1, b = -1;
    double c = 0.0;
    std::size_t i0 = 0, i1 = 0;
    Vec cv{}, cv2{};
    Vec value{};
};

class Tape {
public:
    int leaf(Vec v) {
        TapeNode n{OpKind::Leaf};
        n.value = std::move(v);
        return push(std::move(n));
    }

    int matvec(int w, int x, std::size_t rows, std::size_t cols) {
        TapeNode n{OpKind::MatVec};
        n.a = w;
        n.b = x;
        n.i0 = rows;
        n.i1 = cols;
        n.value = mat_vec(val(w), rows, cols, val(x));
        return push(std::move(n));
    }

    int add(int a, int b) {
        TapeNode n{OpKind::Add};
        n.a = a;
        n.b = b;
        n.value = vec_add(val(a), val(b));
        return push(std::move(n));
    }

    int sub(int a, int b) {
        TapeNode n{OpKind::Sub};
        n.a = a;
        n.b = b;
        n.value = vec_sub(val(a), val(b));
        return push(std::move(n));
    }

    int mul(int a, int b) {
        TapeNode n{OpKind::Mul};
        n.a = a;
        n.b = b;
        n.value = vec_mul(val(a), val(b));
        return push(std::move(n));
    }

    int mul_const(int a, Vec cvec) {
        TapeNode n{OpKind::MulConst};
        n.a = a;
        n.value = vec_mul(val(a), cvec);
        n.cv = std::move(cvec);
        return push(std::move(n));
    }

    int add_scaled(int a, int b, double c) {
        TapeNode n{OpKind::AddScaled};
        n.a = a;
        n.b = b;
        n.c = c;
        n.value = vec_add_scaled(val(a), val(b), c);
        return push(std::move(n));
    }

    int scale(int a, double c) {
        TapeNode n{OpKind::Scale};
        n.a = a;
        n.c = c;
        n.value = vec_scale(val(a), c);
        return push(std::move(n));
    }

    int affine(int a, Vec offset, Vec sc) {
        TapeNode n{OpKind::Affine};
        n.a = a;
        n.value = vec_affine(val(a), offset, sc);
        n.cv = std::move(offset);
        n.cv2 = std::move(sc);
        return push(std::move(n));
    }

    int elu_node(int a) {
        TapeNode n{OpKind::Elu};
        n.a = a;
        n.value = vec_elu(val(a));
        return push(std::move(n));
    }

    int exp_node(int a) {
        TapeNode n{OpKind::Exp};
        n.a = a;
        n.value = vec_exp(val(a));
        return push(std::move(n));
    }

    int sum(int a) {
        TapeNode n{OpKind::Sum};
        n.a = a;
        n.value = Vec{vec_sum(val(a))};
        return push(std::move(n));
    }

    int sum_squares(int a) {
        TapeNode n{OpKind::SumSquares};
        n.a = a;
        n.value = Vec{vec_sqnorm(val(a))};
        return push(std::move(n));
    }

    int slice(int a, std::size_t lo, std::size_t len) {
        const Vec& v = val(a);
        if (lo + len > v.size()) throw ShapeError("slice out of range");
        TapeNode n{OpKind::Slice};
        n.a = a;
        n.i0 = lo;
        n.i1 = len;
        n.value = Vec(v.begin() + lo, v.begin() + lo + len);
        return push(std::move(n));
    }

    int concat(int a, int b) {
        TapeNode n{OpKind::Concat};
        n.a = a;
        n.b = b;
        n.value = val(a);
        n.value.insert(n.value.end(), val(b).begin(), val(b).end());
        return push(std::move(n));
    }

    const Vec& val(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }

    std::size_t size() const { return nodes_.size(); }

    // Reverse pass seeded at one or more nodes. Returns one gradient per node
    // (empty vector = never touched = zero); callers read off leaf ids.
    std::vector<Vec> backward(const std::vector<std::pair<int, Vec>>& seeds) const {
        std::vector<Vec> grads(nodes_.size());
        for (const auto& [id, seed] : seeds) {
            const Vec& v = val(id);
            if (seed.size() != v.size()) throw ShapeError("backward seed shape mismatch");
            accumulate(grads, id, seed);
        }
        for (std::size_t idx = nodes_.size(); idx-- > 0;) {
            const TapeNode& n = nodes_[idx];
            const Vec& g = grads[idx];
            if (g.empty()) continue;
            switch (n.op) {
                case OpKind::Leaf:
                    break;
                case OpKind::MatVec: {
                    const Vec& w = val(n.a);
                    const Vec& x = val(n.b);
                    Vec gw(w.size(), 0.0), gx(x.size(), 0.0);
                    for (std::size_t i = 0; i < n.i0; ++i) {
                        const double gi = g[i];
                        for (std::size_t j = 0; j < n.i1; ++j) {
                            gw[i * n.i1 + j] = gi * x[j];
                            gx[j] += w[i * n.i1 + j] * gi;
                        }
                    }
                    accumulate(grads, n.a, gw);
                    accumulate(grads, n.b, gx);
                    break;
                }
                case OpKind::Add:
                    accumulate(grads, n.a, g);
                    accumulate(grads, n.b, g);
                    break;
                case OpKind::Sub: {
                    accumulate(grads, n.a, g);
                    accumulate(grads, n.b, vec_scale(g, -1.0));
                    break;
                }
                case OpKind::Mul:
                    accumulate(grads, n.a, vec_mul(g, val(n.b)));
                    accumulate(grads, n.b, vec_mul(g, val(n.a)));
                    break;
                case OpKind::MulConst:
                    accumulate(grads, n.a, vec_mul(g, n.cv));
                    break;
                case OpKind::AddScaled:
                    accumulate(grads, n.a, g);
                    accumulate(grads, n.b, vec_scale(g, n.c));
                    break;
                case OpKind::Scale:
                    accumulate(grads, n.a, vec_scale(g, n.c));
                    break;
                case OpKind::Affine:
                    accumulate(grads, n.a, vec_mul(g, n.cv2));
                    break;
                case OpKind::Elu: {
                    // d/dv elu(v) = 1 for v>0 else exp(v) = elu(v)+1; the
                    // saved output gives it without re-evaluating exp.
                    Vec ga(g.size());
                    for (std::size_t i = 0; i < g.size(); ++i)
                        ga[i] = g[i] * (n.value[i] > 0.0 ? 1.0 : n.value[i] + 1.0);
                    accumulate(grads, n.a, ga);
                    break;
                }
                case OpKind::Exp:
                    accumulate(grads, n.a, vec_mul(g, n.value));
                    break;
                case OpKind::Sum: {
                    Vec ga(val(n.a).size(), g[0]);
                    accumulate(grads, n.a, ga);
                    break;
                }
                case OpKind::SumSquares:
                    accumulate(grads, n.a, vec_scale(val(n.a), 2.0 * g[0]));
                    break;
                case OpKind::Slice: {
                    Vec ga(val(n.a).size(), 0.0);
                    for (std::size_t k = 0; k < n.i1; ++k) ga[n.i0 + k] = g[k];
                    accumulate(grads, n.a, ga);
                    break;
                }
                case OpKind::Concat: {
                    const std::size_t na = val(n.a).size();
                    Vec ga(g.begin(), g.begin() + na);
                    Vec gb(g.begin() + na, g.end());
                    accumulate(grads, n.a, ga);
                    accumulate(grads, n.b, gb);
                    break;
                }
            }
        }
        return grads;
    }

private:
    static void accumulate(std::vector<Vec>& grads, int id, const Vec& g) {
        Vec& slot = grads[static_cast<std::size_t>(id)];
        if (slot.empty())
            slot = g;
        else
            for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
    }

    int push(TapeNode n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size() - 1);
    }

    std::vector<TapeNode> nodes_;
};

}  // namespace rmbil
