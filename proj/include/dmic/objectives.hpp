#pragma once

// Training losses: noise-estimation MSE, RBF-mixture MMD regularization,
// DCG cross-entropy, and the lambda-weighted total.

#include <vector>

#include "dmic/autograd.hpp"
#include "dmic/schedule.hpp"

namespace dmic {

struct MMDConfig {
    std::vector<double> bandwidth_sq{0.25, 0.5, 1.0, 2.0, 4.0};
    bool unbiased = false;  // U-statistic variant behind a flag

    void validate() const {
        if (bandwidth_sq.empty())
            throw ConfigError("mmd: bandwidth list must be non-empty");
        for (double b : bandwidth_sq)
            if (b <= 0) throw ConfigError("mmd: bandwidths must be positive");
    }
};

// Mean over the batch of the squared L2 noise-estimation error.
inline ag::Var noise_loss(const ag::Var& eps, const ag::Var& eps_hat) {
    ag::check_same_shape(eps, eps_hat, "noise_loss");
    const float inv_b = 1.f / static_cast<float>(eps->val.rows());
    return ag::sum_all(ag::square(ag::sub(eps_hat, eps)), inv_b);
}

namespace detail {

inline double kernel_mix(const Eigen::RowVectorXf& a,
                         const Eigen::RowVectorXf& b,
                         const std::vector<double>& bw_sq) {
    const double d2 = static_cast<double>((a - b).squaredNorm());
    double k = 0;
    for (double s2 : bw_sq) k += std::exp(-d2 / (2.0 * s2));
    return k / static_cast<double>(bw_sq.size());
}

}  // namespace detail

// Biased V-statistic MMD^2 between batches n and m with an RBF bandwidth
// mixture; analytic gradient scattered to both inputs.
inline ag::Var mmd_loss(const ag::Var& n, const ag::Var& m,
                        const MMDConfig& cfg = {}) {
    cfg.validate();
    ag::check_same_shape(n, m, "mmd_loss");
    const int B = static_cast<int>(n->val.rows());
    if (B < 2) throw ShapeError("mmd_loss: batch size must be >= 2");
    const MatrixXf N = n->val, M = m->val;
    const auto& bw = cfg.bandwidth_sq;
    const double nbw = static_cast<double>(bw.size());
    const bool unbiased = cfg.unbiased;

    double knn = 0, kmn = 0, kmm = 0;
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j) {
            kmn += detail::kernel_mix(M.row(i), N.row(j), bw);
            if (unbiased && i == j) continue;
            knn += detail::kernel_mix(N.row(i), N.row(j), bw);
            kmm += detail::kernel_mix(M.row(i), M.row(j), bw);
        }
    const double diag_norm =
        unbiased ? static_cast<double>(B) * (B - 1) : static_cast<double>(B) * B;
    const double cross_norm = static_cast<double>(B) * B;
    MatrixXf out(1, 1);
    out(0, 0) =
        static_cast<float>(knn / diag_norm - 2.0 * kmn / cross_norm + kmm / diag_norm);

    return ag::make_op(
        std::move(out), {n, m},
        [n, m, N, M, bw, nbw, B, diag_norm, cross_norm, unbiased](ag::Node& nd) {
            const float g = nd.grad(0, 0);
            auto pair_grad = [&](const Eigen::RowVectorXf& a,
                                 const Eigen::RowVectorXf& b) {
                // d/da of the bandwidth-averaged kernel
                Eigen::RowVectorXf diff = a - b;
                const double d2 = static_cast<double>(diff.squaredNorm());
                double w = 0;
                for (double s2 : bw) w += std::exp(-d2 / (2.0 * s2)) / s2;
                return Eigen::RowVectorXf(-diff * static_cast<float>(w / nbw));
            };
            if (n->requires_grad) {
                n->ensure_grad();
                for (int i = 0; i < B; ++i)
                    for (int j = 0; j < B; ++j) {
                        if (!(unbiased && i == j)) {
                            // knn term: both arguments are rows of N
                            n->grad.row(i) +=
                                g * 2.f / static_cast<float>(diag_norm) *
                                pair_grad(N.row(i), N.row(j));
                        }
                        n->grad.row(j) -= g * 2.f / static_cast<float>(cross_norm) *
                                          pair_grad(N.row(j), M.row(i));
                    }
            }
            if (m->requires_grad) {
                m->ensure_grad();
                for (int i = 0; i < B; ++i)
                    for (int j = 0; j < B; ++j) {
                        if (!(unbiased && i == j)) {
                            m->grad.row(i) +=
                                g * 2.f / static_cast<float>(diag_norm) *
                                pair_grad(M.row(i), M.row(j));
                        }
                        m->grad.row(i) -= g * 2.f / static_cast<float>(cross_norm) *
                                          pair_grad(M.row(i), N.row(j));
                    }
            }
        });
}

// Single-prior forward noising used inside each MMD branch.
inline VectorXf branch_noisy_sample(const VectorXf& y0, const VectorXf& prior,
                                    int t, const VectorXf& eps,
                                    const NoiseSchedule& sched) {
    return forward_sample(y0, prior, t, eps, sched);
}

// Differentiable batched forward sample; per-sample timesteps. y0 and eps
// are constants, mu carries gradient back into the conditioning model.
inline ag::Var forward_sample_node(const MatrixXf& y0, const ag::Var& mu,
                                   const std::vector<int>& ts,
                                   const MatrixXf& eps,
                                   const NoiseSchedule& sched) {
    const int B = static_cast<int>(y0.rows());
    if (mu->val.rows() != B || static_cast<int>(ts.size()) != B)
        throw ShapeError("forward_sample_node: batch mismatch");
    VectorXf sa(B), sn(B), one_m_sa(B);
    for (int i = 0; i < B; ++i) {
        sched.check_t(ts[i]);
        sa[i] = static_cast<float>(std::sqrt(sched.alpha_bar(ts[i])));
        sn[i] = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar(ts[i])));
        one_m_sa[i] = 1.f - sa[i];
    }
    MatrixXf base = (y0.array().colwise() * sa.array()) +
                    (eps.array().colwise() * sn.array());
    return ag::add(ag::constant(base), ag::scale_rows(mu, one_m_sa));
}

inline ag::Var total_loss(const ag::Var& loss_eps, const ag::Var& loss_mmd_g,
                          const ag::Var& loss_mmd_l, float lambda) {
    if (lambda < 0) throw ConfigError("total_loss: lambda must be >= 0");
    return ag::add_scalar(loss_eps,
                          ag::scale(ag::add_scalar(loss_mmd_g, loss_mmd_l), lambda));
}

inline ag::Var dcg_ce_loss(const ag::Var& y_g_logits, const ag::Var& y_l_logits,
                           const std::vector<int>& labels) {
    return ag::add_scalar(ag::softmax_ce(y_g_logits, labels),
                          ag::softmax_ce(y_l_logits, labels));
}

}  // namespace dmic
