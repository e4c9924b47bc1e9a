#pragma once

// Reverse-diffusion inference: prior-shifted initialization, posterior
// steps over an evenly strided timestep subsequence, argmax decision.

#include <optional>
#include <vector>

#include "dmic/dcg.hpp"
#include "dmic/denoiser.hpp"
#include "dmic/objectives.hpp"
#include "dmic/sampler_fwd.hpp"
#include "dmic/schedule.hpp"

namespace dmic {

inline VectorXf init_yT(const VectorXf& y_g, const VectorXf& y_l, Rng& rng,
                        PriorCombine mode = PriorCombine::Mean) {
    VectorXf mu = combined_prior(y_g, y_l, mode);
    return mu + randn_vec(rng, static_cast<int>(mu.size()));
}

// Single reverse step t -> t-1 (t >= 2), or the terminal step at t = 1.
inline VectorXf reverse_step(const VectorXf& y_t, const VectorXf& eps_hat,
                             const VectorXf& mu, int t, Rng& rng,
                             const NoiseSchedule& sched) {
    sched.check_t(t);
    VectorXf y0_hat = reconstruct_y0(y_t, eps_hat, mu, t, sched);
    if (t == 1) return y0_hat;  // no noise at the terminal step
    PosteriorCoeffs c = posterior_coefficients(t, sched);
    VectorXf mean = static_cast<float>(c.gamma0) * y0_hat +
                    static_cast<float>(c.gamma1) * y_t +
                    static_cast<float>(c.gamma2) * mu;
    return mean + static_cast<float>(std::sqrt(c.sigma_sq)) *
                      randn_vec(rng, static_cast<int>(mu.size()));
}

// Posterior coefficients between two (possibly non-adjacent) schedule
// steps; t_prev = 0 denotes the terminal transition.
inline PosteriorCoeffs strided_coefficients(int t, int t_prev,
                                            const NoiseSchedule& s) {
    const double abar_t = s.alpha_bar(t);
    const double abar_p = s.alpha_bar(t_prev);
    const double a_eff = abar_t / abar_p;  // effective alpha over the gap
    const double b_eff = 1.0 - a_eff;
    const double one_m = 1.0 - abar_t;
    PosteriorCoeffs c{};
    c.gamma0 = b_eff * std::sqrt(abar_p) / one_m;
    c.gamma1 = (1.0 - abar_p) * std::sqrt(a_eff) / one_m;
    c.gamma2 = 1.0 + (std::sqrt(abar_t) - 1.0) *
                         (std::sqrt(a_eff) + std::sqrt(abar_p)) / one_m;
    c.sigma_sq = b_eff * (1.0 - abar_p) / one_m;
    return c;
}

// Evenly strided inference subsequence, descending, covering T and 1.
inline std::vector<int> inference_timesteps(int T_train, int T_infer) {
    if (T_infer < 1 || T_infer > T_train)
        throw ConfigError("inference steps must satisfy 1 <= T_infer <= T_train");
    std::vector<int> ts;
    if (T_infer == 1) {
        ts.push_back(T_train);
        return ts;
    }
    for (int i = T_infer - 1; i >= 0; --i) {
        int t = 1 + static_cast<int>(std::llround(
                        static_cast<double>(T_train - 1) * i / (T_infer - 1)));
        if (ts.empty() || t < ts.back()) ts.push_back(t);
    }
    return ts;
}

struct TrajectoryPoint {
    int t;
    MatrixXf y_t;      // (B, K) state entering the step
    MatrixXf y0_hat;   // (B, K) intermediate reconstruction
};

struct ClassifyResult {
    std::vector<int> classes;
    MatrixXf y0_hat;  // (B, K)
    std::vector<TrajectoryPoint> trajectory;
};

// Batched reverse chain over a trained bundle. record_steps: timesteps at
// which to store the intermediate reconstruction (empty = none).
inline ClassifyResult classify_batch(ModelBundle& bundle, const MatrixXf& images,
                                     int T_infer, Rng& rng,
                                     const std::vector<int>& record_steps = {},
                                     int votes = 1) {
    const int B = static_cast<int>(images.rows());
    const int K = bundle.den_cfg.K;
    ClassifyResult res;
    res.classes.assign(B, 0);

    if (bundle.variant == Variant::Basic) {
        ag::Var rho = bundle.denoiser.embed_image(ag::constant(images));
        MatrixXf logits = bundle.basic_head.forward(rho)->val;
        res.y0_hat = logits;
        for (int i = 0; i < B; ++i)
            logits.row(i).maxCoeff(&res.classes[i]);
        return res;
    }

    bundle.denoiser.training_mode = false;
    MatrixXf y_g, y_l;
    const float s = bundle.y_scale;
    if (bundle.variant == Variant::C1) {
        y_g = MatrixXf::Constant(B, K, s / K);
        y_l = y_g;
    } else {
        PriorPair pp = bundle.dcg.priors(images);
        y_g = s * pp.y_g;
        y_l = s * pp.y_l;
    }
    MatrixXf mu = bundle.prior_combine == PriorCombine::Sum
                      ? MatrixXf(y_g + y_l)
                      : MatrixXf(0.5f * (y_g + y_l));
    ag::Var rho = bundle.denoiser.embed_image(ag::constant(images));
    ag::Var y_g_node = ag::constant(y_g), y_l_node = ag::constant(y_l);
    std::vector<int> ts = inference_timesteps(bundle.sched.T, T_infer);

    MatrixXf tally = MatrixXf::Zero(B, K);
    MatrixXf last_y0;
    for (int v = 0; v < votes; ++v) {
        MatrixXf y = mu + randn_mat(rng, B, K);
        for (size_t si = 0; si < ts.size(); ++si) {
            const int t = ts[si];
            const int t_prev = (si + 1 < ts.size()) ? ts[si + 1] : 0;
            std::vector<int> tvec(B, t);
            MatrixXf eps_hat =
                bundle.denoiser
                    .predict_noise(rho, ag::constant(y), y_g_node, y_l_node, tvec)
                    ->val;
            const float sa = static_cast<float>(std::sqrt(bundle.sched.alpha_bar(t)));
            const float sn =
                static_cast<float>(std::sqrt(1.0 - bundle.sched.alpha_bar(t)));
            MatrixXf y0_hat = (y - (1.f - sa) * mu - sn * eps_hat) / sa;
            if (v == 0 &&
                std::find(record_steps.begin(), record_steps.end(), t) !=
                    record_steps.end())
                res.trajectory.push_back({t, y, y0_hat});
            if (t_prev == 0) {
                y = y0_hat;
                break;
            }
            PosteriorCoeffs c = strided_coefficients(t, t_prev, bundle.sched);
            y = static_cast<float>(c.gamma0) * y0_hat +
                static_cast<float>(c.gamma1) * y +
                static_cast<float>(c.gamma2) * mu +
                static_cast<float>(std::sqrt(c.sigma_sq)) * randn_mat(rng, B, K);
        }
        last_y0 = y;
        for (int i = 0; i < B; ++i) {
            int cls;
            y.row(i).maxCoeff(&cls);
            tally(i, cls) += 1.f;
        }
    }
    res.y0_hat = last_y0;
    for (int i = 0; i < B; ++i) tally.row(i).maxCoeff(&res.classes[i]);
    return res;
}

inline ClassifyResult classify(ModelBundle& bundle,
                               const Eigen::RowVectorXf& image, int T_infer,
                               Rng& rng, const std::vector<int>& record_steps = {},
                               int votes = 1) {
    MatrixXf m(1, image.size());
    m.row(0) = image;
    return classify_batch(bundle, m, T_infer, rng, record_steps, votes);
}

}  // namespace dmic
