#pragma once

// Minimal reverse-mode autodiff over Eigen matrices. Rows are batch
// elements, columns are features. Graphs are built per step and freed
// when the last Var goes out of scope.

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "dmic/common.hpp"

namespace dmic::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    MatrixXf val;
    MatrixXf grad;  // same shape as val once backward touches it
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;  // scatter this->grad into parents

    explicit Node(MatrixXf v) : val(std::move(v)) {}

    void ensure_grad() {
        if (grad.size() == 0) grad = MatrixXf::Zero(val.rows(), val.cols());
    }
};

inline Var constant(MatrixXf v) { return std::make_shared<Node>(std::move(v)); }

inline Var param(MatrixXf v) {
    auto n = std::make_shared<Node>(std::move(v));
    n->requires_grad = true;
    return n;
}

inline Var make_op(MatrixXf v, std::vector<Var> parents,
                   std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>(std::move(v));
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bw);
    }
    return n;
}

// Topological order by DFS, then reverse sweep. Root must be scalar (1x1).
inline void backward(const Var& root) {
    if (root->val.size() != 1)
        throw RuntimeError("backward: root must be a scalar");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->ensure_grad();
    root->grad(0, 0) = 1.f;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols())
        throw ShapeError(std::string(op) + ": shape mismatch");
}

inline Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    return make_op(a->val + b->val, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
        if (b->requires_grad) { b->ensure_grad(); b->grad += n.grad; }
    });
}

inline Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    return make_op(a->val - b->val, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
        if (b->requires_grad) { b->ensure_grad(); b->grad -= n.grad; }
    });
}

inline Var mul(const Var& a, const Var& b) {  // elementwise
    check_same_shape(a, b, "mul");
    return make_op(a->val.cwiseProduct(b->val), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad.cwiseProduct(b->val); }
        if (b->requires_grad) { b->ensure_grad(); b->grad += n.grad.cwiseProduct(a->val); }
    });
}

inline Var scale(const Var& a, float s) {
    return make_op(a->val * s, {a}, [a, s](Node& n) {
        a->ensure_grad();
        a->grad += n.grad * s;
    });
}

inline Var matmul(const Var& a, const Var& b) {
    if (a->val.cols() != b->val.rows()) throw ShapeError("matmul: inner dims");
    return make_op(a->val * b->val, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad.noalias() += n.grad * b->val.transpose(); }
        if (b->requires_grad) { b->ensure_grad(); b->grad.noalias() += a->val.transpose() * n.grad; }
    });
}

// x: (B, D), bias: (1, D) broadcast over rows.
inline Var add_rowvec(const Var& x, const Var& bias) {
    if (bias->val.rows() != 1 || bias->val.cols() != x->val.cols())
        throw ShapeError("add_rowvec: bias shape");
    MatrixXf out = x->val.rowwise() + bias->val.row(0);
    return make_op(std::move(out), {x, bias}, [x, bias](Node& n) {
        if (x->requires_grad) { x->ensure_grad(); x->grad += n.grad; }
        if (bias->requires_grad) {
            bias->ensure_grad();
            bias->grad.row(0) += n.grad.colwise().sum();
        }
    });
}

// Rowwise broadcast multiply: x (B, D) * r (1, D).
inline Var mul_rowvec(const Var& x, const Var& r) {
    if (r->val.rows() != 1 || r->val.cols() != x->val.cols())
        throw ShapeError("mul_rowvec: shape");
    MatrixXf out = x->val.array().rowwise() * r->val.row(0).array();
    return make_op(std::move(out), {x, r}, [x, r](Node& n) {
        if (x->requires_grad) {
            x->ensure_grad();
            x->grad.array() += n.grad.array().rowwise() * r->val.row(0).array();
        }
        if (r->requires_grad) {
            r->ensure_grad();
            r->grad.row(0) += n.grad.cwiseProduct(x->val).colwise().sum();
        }
    });
}

inline Var softplus(const Var& a) {
    // log(1+e^x), overflow-safe form x + log1p(e^-|x|) for x>0
    MatrixXf out = a->val.unaryExpr([](float x) {
        return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    });
    return make_op(std::move(out), {a}, [a](Node& n) {
        a->ensure_grad();
        a->grad.array() +=
            n.grad.array() * (1.f / (1.f + (-a->val.array()).exp()));
    });
}

inline Var tanh_op(const Var& a) {
    MatrixXf out = a->val.array().tanh();
    Var res = make_op(std::move(out), {a}, nullptr);
    if (res->requires_grad) {
        MatrixXf t = res->val;
        res->backward_fn = [a, t](Node& n) {
            a->ensure_grad();
            a->grad.array() += n.grad.array() * (1.f - t.array().square());
        };
    }
    return res;
}

inline Var sigmoid_op(const Var& a) {
    MatrixXf out = 1.f / (1.f + (-a->val.array()).exp());
    Var res = make_op(std::move(out), {a}, nullptr);
    if (res->requires_grad) {
        MatrixXf s = res->val;
        res->backward_fn = [a, s](Node& n) {
            a->ensure_grad();
            a->grad.array() += n.grad.array() * s.array() * (1.f - s.array());
        };
    }
    return res;
}

inline Var relu(const Var& a) {
    MatrixXf out = a->val.cwiseMax(0.f);
    return make_op(std::move(out), {a}, [a](Node& n) {
        a->ensure_grad();
        a->grad.array() +=
            n.grad.array() * (a->val.array() > 0.f).cast<float>();
    });
}

inline Var square(const Var& a) {
    MatrixXf out = a->val.array().square();
    return make_op(std::move(out), {a}, [a](Node& n) {
        a->ensure_grad();
        a->grad.array() += 2.f * n.grad.array() * a->val.array();
    });
}

// Sum of all entries, scaled: s * sum(x). Returns 1x1.
inline Var sum_all(const Var& a, float s = 1.f) {
    MatrixXf out(1, 1);
    out(0, 0) = a->val.sum() * s;
    return make_op(std::move(out), {a}, [a, s](Node& n) {
        a->ensure_grad();
        a->grad.array() += n.grad(0, 0) * s;
    });
}

inline Var add_scalar(const Var& a, const Var& b) {  // both 1x1
    MatrixXf out(1, 1);
    out(0, 0) = a->val(0, 0) + b->val(0, 0);
    return make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad(0, 0) += n.grad(0, 0); }
        if (b->requires_grad) { b->ensure_grad(); b->grad(0, 0) += n.grad(0, 0); }
    });
}

// Horizontal concatenation of equal-row blocks.
inline Var concat_cols(const std::vector<Var>& xs) {
    Eigen::Index rows = xs.at(0)->val.rows(), cols = 0;
    for (auto& x : xs) {
        if (x->val.rows() != rows) throw ShapeError("concat_cols: rows");
        cols += x->val.cols();
    }
    MatrixXf out(rows, cols);
    Eigen::Index off = 0;
    for (auto& x : xs) {
        out.middleCols(off, x->val.cols()) = x->val;
        off += x->val.cols();
    }
    std::vector<Var> parents = xs;
    return make_op(std::move(out), parents, [parents](Node& n) {
        Eigen::Index off = 0;
        for (auto& x : parents) {
            if (x->requires_grad) {
                x->ensure_grad();
                x->grad += n.grad.middleCols(off, x->val.cols());
            }
            off += x->val.cols();
        }
    });
}

// Mean softmax cross-entropy over the batch. logits (B, K).
inline Var softmax_ce(const Var& logits, const std::vector<int>& labels) {
    const MatrixXf& z = logits->val;
    const int B = static_cast<int>(z.rows()), K = static_cast<int>(z.cols());
    if (static_cast<int>(labels.size()) != B)
        throw ShapeError("softmax_ce: label count");
    MatrixXf probs(B, K);
    double loss = 0;
    for (int i = 0; i < B; ++i) {
        if (labels[i] < 0 || labels[i] >= K)
            throw ShapeError("softmax_ce: label out of range");
        float mx = z.row(i).maxCoeff();
        Eigen::RowVectorXf e = (z.row(i).array() - mx).exp();
        float s = e.sum();
        probs.row(i) = e / s;
        loss -= std::log(std::max(probs(i, labels[i]), 1e-30f));
    }
    MatrixXf out(1, 1);
    out(0, 0) = static_cast<float>(loss / B);
    return make_op(std::move(out), {logits},
                   [logits, probs, labels, B](Node& n) {
                       logits->ensure_grad();
                       MatrixXf g = probs;
                       for (int i = 0; i < B; ++i) g(i, labels[i]) -= 1.f;
                       logits->grad += (n.grad(0, 0) / B) * g;
                   });
}

// Softmax along each row.
inline Var softmax_rows(const Var& logits) {
    const MatrixXf& z = logits->val;
    MatrixXf out(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        float mx = z.row(i).maxCoeff();
        Eigen::RowVectorXf e = (z.row(i).array() - mx).exp();
        out.row(i) = e / e.sum();
    }
    Var res = make_op(out, {logits}, nullptr);
    if (res->requires_grad) {
        MatrixXf p = out;
        res->backward_fn = [logits, p](Node& n) {
            logits->ensure_grad();
            for (Eigen::Index i = 0; i < p.rows(); ++i) {
                float dot = n.grad.row(i).dot(p.row(i));
                logits->grad.row(i).array() +=
                    p.row(i).array() * (n.grad.row(i).array() - dot);
            }
        };
    }
    return res;
}

// Softmax within consecutive groups of `group` rows of a (B*group, 1) column.
inline Var group_softmax(const Var& scores, int group) {
    const MatrixXf& s = scores->val;
    if (s.cols() != 1 || s.rows() % group != 0)
        throw ShapeError("group_softmax: shape");
    const Eigen::Index G = s.rows() / group;
    MatrixXf out(s.rows(), 1);
    for (Eigen::Index g = 0; g < G; ++g) {
        auto blk = s.block(g * group, 0, group, 1);
        float mx = blk.maxCoeff();
        Eigen::VectorXf e = (blk.array() - mx).exp();
        out.block(g * group, 0, group, 1) = e / e.sum();
    }
    Var res = make_op(out, {scores}, nullptr);
    if (res->requires_grad) {
        MatrixXf a = out;
        res->backward_fn = [scores, a, group, G](Node& n) {
            scores->ensure_grad();
            for (Eigen::Index g = 0; g < G; ++g) {
                auto ab = a.block(g * group, 0, group, 1);
                auto gb = n.grad.block(g * group, 0, group, 1);
                float dot = (ab.array() * gb.array()).sum();
                scores->grad.block(g * group, 0, group, 1).array() +=
                    ab.array() * (gb.array() - dot);
            }
        };
    }
    return res;
}

// Weighted sum within groups: weights (B*group, 1), feats (B*group, D)
// -> (B, D) with row b = sum_k w[b*group+k] * feats.row(b*group+k).
inline Var group_weighted_sum(const Var& weights, const Var& feats, int group) {
    const Eigen::Index rows = feats->val.rows();
    if (weights->val.rows() != rows || weights->val.cols() != 1 ||
        rows % group != 0)
        throw ShapeError("group_weighted_sum: shape");
    const Eigen::Index G = rows / group;
    MatrixXf out = MatrixXf::Zero(G, feats->val.cols());
    for (Eigen::Index g = 0; g < G; ++g)
        for (int k = 0; k < group; ++k)
            out.row(g) += weights->val(g * group + k, 0) *
                          feats->val.row(g * group + k);
    return make_op(std::move(out), {weights, feats},
                   [weights, feats, group, G](Node& n) {
                       for (Eigen::Index g = 0; g < G; ++g)
                           for (int k = 0; k < group; ++k) {
                               Eigen::Index r = g * group + k;
                               if (weights->requires_grad) {
                                   weights->ensure_grad();
                                   weights->grad(r, 0) +=
                                       n.grad.row(g).dot(feats->val.row(r));
                               }
                               if (feats->requires_grad) {
                                   feats->ensure_grad();
                                   feats->grad.row(r) +=
                                       weights->val(r, 0) * n.grad.row(g);
                               }
                           }
                   });
}

// Row-wise scale by a constant per-sample factor: out.row(i) = s[i]*x.row(i).
inline Var scale_rows(const Var& x, const VectorXf& s) {
    if (s.size() != x->val.rows()) throw ShapeError("scale_rows: length");
    MatrixXf out = x->val.array().colwise() * s.array();
    return make_op(std::move(out), {x}, [x, s](Node& n) {
        x->ensure_grad();
        x->grad.array() += n.grad.array().colwise() * s.array();
    });
}

// Per-channel spatial mean: x (B, C*HW) -> (B, C).
inline Var channel_mean(const Var& x, int channels, int hw) {
    if (x->val.cols() != static_cast<Eigen::Index>(channels) * hw)
        throw ShapeError("channel_mean: shape");
    MatrixXf out(x->val.rows(), channels);
    for (int c = 0; c < channels; ++c)
        out.col(c) = x->val.middleCols(static_cast<Eigen::Index>(c) * hw, hw)
                         .rowwise()
                         .mean();
    return make_op(std::move(out), {x}, [x, channels, hw](Node& n) {
        x->ensure_grad();
        for (int c = 0; c < channels; ++c)
            x->grad.middleCols(static_cast<Eigen::Index>(c) * hw, hw)
                .colwise() += n.grad.col(c) / static_cast<float>(hw);
    });
}

}  // namespace dmic::ag
