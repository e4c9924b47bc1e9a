#pragma once

// Layer objects own their parameters as autograd Vars. Images travel as
// row-per-sample matrices with channel-major (c, h, w) flattening.

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmic/autograd.hpp"

namespace dmic::nn {

using ag::Var;

struct NamedParam {
    std::string name;
    Var var;
};

struct Linear {
    Var W;  // (in, out)
    Var b;  // (1, out)

    Linear() = default;
    Linear(int in, int out, Rng& rng) {
        float s = std::sqrt(2.f / in);
        W = ag::param(randn_mat(rng, in, out) * s);
        b = ag::param(MatrixXf::Zero(1, out));
    }
    Var forward(const Var& x) const {
        return ag::add_rowvec(ag::matmul(x, W), b);
    }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        out.push_back({prefix + ".W", W});
        out.push_back({prefix + ".b", b});
    }
};

struct BatchNorm1d {
    Var gamma, beta;
    Eigen::RowVectorXf running_mean, running_var;
    float momentum = 0.1f;
    float eps = 1e-5f;

    BatchNorm1d() = default;
    explicit BatchNorm1d(int dim) {
        gamma = ag::param(MatrixXf::Ones(1, dim));
        beta = ag::param(MatrixXf::Zero(1, dim));
        running_mean = Eigen::RowVectorXf::Zero(dim);
        running_var = Eigen::RowVectorXf::Ones(dim);
    }

    Var forward(const Var& x, bool training) {
        const MatrixXf& v = x->val;
        const auto B = static_cast<float>(v.rows());
        Eigen::RowVectorXf mean, var;
        if (training && v.rows() > 1) {
            mean = v.colwise().mean();
            var = (v.rowwise() - mean).array().square().colwise().mean();
            running_mean = (1 - momentum) * running_mean + momentum * mean;
            // unbiased running variance, batch variance in the normalizer
            running_var = (1 - momentum) * running_var +
                          momentum * var * (B / std::max(B - 1, 1.f));
        } else {
            mean = running_mean;
            var = running_var;
        }
        Eigen::RowVectorXf istd = (var.array() + eps).rsqrt();
        MatrixXf xhat = (v.rowwise() - mean).array().rowwise() * istd.array();
        MatrixXf out = (xhat.array().rowwise() * gamma->val.row(0).array())
                           .rowwise() +
                       beta->val.row(0).array();
        Var g = gamma, bt = beta;
        bool use_batch_stats = training && v.rows() > 1;
        return ag::make_op(
            std::move(out), {x, gamma, beta},
            [x, g, bt, xhat, istd, use_batch_stats](ag::Node& n) {
                const auto B = static_cast<float>(x->val.rows());
                if (g->requires_grad) {
                    g->ensure_grad();
                    g->grad.row(0) +=
                        n.grad.cwiseProduct(xhat).colwise().sum();
                }
                if (bt->requires_grad) {
                    bt->ensure_grad();
                    bt->grad.row(0) += n.grad.colwise().sum();
                }
                if (!x->requires_grad) return;
                x->ensure_grad();
                MatrixXf dxhat =
                    n.grad.array().rowwise() * g->val.row(0).array();
                if (!use_batch_stats) {
                    x->grad.array() +=
                        dxhat.array().rowwise() * istd.array();
                    return;
                }
                Eigen::RowVectorXf sum_dxhat = dxhat.colwise().sum();
                Eigen::RowVectorXf sum_dxhat_xhat =
                    dxhat.cwiseProduct(xhat).colwise().sum();
                MatrixXf dx =
                    (dxhat * B).rowwise() - sum_dxhat;
                dx.array() -= xhat.array().rowwise() * sum_dxhat_xhat.array();
                dx.array().rowwise() *= (istd / B).array();
                x->grad += dx;
            });
    }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// 3x3 (configurable) convolution over channel-major flattened images.
struct Conv2d {
    int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
    Var W;  // (out_c, in_c*k*k)
    Var b;  // (1, out_c)

    Conv2d() = default;
    Conv2d(int in_c_, int out_c_, int k_, int stride_, int pad_, Rng& rng)
        : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_) {
        float s = std::sqrt(2.f / (in_c * k * k));
        W = ag::param(randn_mat(rng, out_c, in_c * k * k) * s);
        b = ag::param(MatrixXf::Zero(1, out_c));
    }

    int out_dim(int d) const { return (d + 2 * pad - k) / stride + 1; }

    Var forward(const Var& x, int H, int Wd) const {
        const MatrixXf& v = x->val;
        if (v.cols() != static_cast<Eigen::Index>(in_c) * H * Wd)
            throw ShapeError("Conv2d: input shape");
        const int B = static_cast<int>(v.rows());
        const int Ho = out_dim(H), Wo = out_dim(Wd);
        const int patch = in_c * k * k;
        auto cols = std::make_shared<MatrixXf>(patch, static_cast<Eigen::Index>(B) * Ho * Wo);
        cols->setZero();
        for (int n = 0; n < B; ++n) {
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    Eigen::Index col_idx =
                        static_cast<Eigen::Index>(n) * Ho * Wo + oy * Wo + ox;
                    float* dst = cols->col(col_idx).data();
                    for (int c = 0; c < in_c; ++c)
                        for (int ky = 0; ky < k; ++ky) {
                            int iy = oy * stride + ky - pad;
                            for (int kx = 0; kx < k; ++kx) {
                                int ix = ox * stride + kx - pad;
                                float val = 0.f;
                                if (iy >= 0 && iy < H && ix >= 0 && ix < Wd)
                                    val = v(n, static_cast<Eigen::Index>(c) * H * Wd + iy * Wd + ix);
                                dst[(c * k + ky) * k + kx] = val;
                            }
                        }
                }
        }
        MatrixXf prod = W->val * (*cols);  // (out_c, B*Ho*Wo)
        prod.colwise() += b->val.row(0).transpose();
        MatrixXf out(B, static_cast<Eigen::Index>(out_c) * Ho * Wo);
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < out_c; ++c)
                for (int i = 0; i < Ho * Wo; ++i)
                    out(n, static_cast<Eigen::Index>(c) * Ho * Wo + i) =
                        prod(c, static_cast<Eigen::Index>(n) * Ho * Wo + i);
        Var Wv = W, bv = b;
        int in_c_ = in_c, k_ = k, stride_ = stride, pad_ = pad, out_c_ = out_c;
        return ag::make_op(
            std::move(out), {x, W, b},
            [x, Wv, bv, cols, B, H, Wd, Ho, Wo, in_c_, out_c_, k_, stride_,
             pad_](ag::Node& n) {
                MatrixXf dprod(out_c_, static_cast<Eigen::Index>(B) * Ho * Wo);
                for (int s = 0; s < B; ++s)
                    for (int c = 0; c < out_c_; ++c)
                        for (int i = 0; i < Ho * Wo; ++i)
                            dprod(c, static_cast<Eigen::Index>(s) * Ho * Wo + i) =
                                n.grad(s, static_cast<Eigen::Index>(c) * Ho * Wo + i);
                if (Wv->requires_grad) {
                    Wv->ensure_grad();
                    Wv->grad.noalias() += dprod * cols->transpose();
                }
                if (bv->requires_grad) {
                    bv->ensure_grad();
                    bv->grad.row(0) += dprod.rowwise().sum().transpose();
                }
                if (!x->requires_grad) return;
                x->ensure_grad();
                MatrixXf dcols = Wv->val.transpose() * dprod;
                for (int s = 0; s < B; ++s)
                    for (int oy = 0; oy < Ho; ++oy)
                        for (int ox = 0; ox < Wo; ++ox) {
                            Eigen::Index ci =
                                static_cast<Eigen::Index>(s) * Ho * Wo + oy * Wo + ox;
                            const float* src = dcols.col(ci).data();
                            for (int c = 0; c < in_c_; ++c)
                                for (int ky = 0; ky < k_; ++ky) {
                                    int iy = oy * stride_ + ky - pad_;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int kx = 0; kx < k_; ++kx) {
                                        int ix = ox * stride_ + kx - pad_;
                                        if (ix < 0 || ix >= Wd) continue;
                                        x->grad(s, static_cast<Eigen::Index>(c) * H * Wd + iy * Wd + ix) +=
                                            src[(c * k_ + ky) * k_ + kx];
                                    }
                                }
                        }
            });
    }
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
        out.push_back({prefix + ".W", W});
        out.push_back({prefix + ".b", b});
    }
};

struct Adam {
    float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
    struct State {
        MatrixXf m, v;
    };
    std::unordered_map<ag::Node*, State> state;
    long step_count = 0;

    // One group update; call once per group per optimization step, then tick().
    void update(const std::vector<Var>& params, float lr) {
        const long t = step_count + 1;
        const float bc1 = 1.f - std::pow(beta1, static_cast<float>(t));
        const float bc2 = 1.f - std::pow(beta2, static_cast<float>(t));
        for (auto& p : params) {
            if (p->grad.size() == 0) continue;
            auto& st = state[p.get()];
            if (st.m.size() == 0) {
                st.m = MatrixXf::Zero(p->val.rows(), p->val.cols());
                st.v = MatrixXf::Zero(p->val.rows(), p->val.cols());
            }
            st.m = beta1 * st.m + (1 - beta1) * p->grad;
            st.v = beta2 * st.v.array() + (1 - beta2) * p->grad.array().square();
            MatrixXf mhat = st.m / bc1;
            MatrixXf vhat = st.v / bc2;
            p->val.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
        }
    }
    void tick() { ++step_count; }
};

inline void zero_grads(const std::vector<Var>& params) {
    for (auto& p : params) p->grad.resize(0, 0);
}

inline std::vector<Var> vars_of(const std::vector<NamedParam>& named) {
    std::vector<Var> out;
    out.reserve(named.size());
    for (auto& np : named) out.push_back(np.var);
    return out;
}

}  // namespace dmic::nn
