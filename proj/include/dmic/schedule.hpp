#pragma once

// Noise schedule and closed-form diffusion arithmetic. Schedule arrays
// are computed in double precision; label-space math runs in float.

#include <cmath>

#include "dmic/common.hpp"

namespace dmic {

struct NoiseSchedule {
    int T = 0;
    VectorXd betas;       // 1-indexed via operator()(t-1)
    VectorXd alphas;      // 1 - beta
    VectorXd alpha_bars;  // cumulative product

    double beta(int t) const { return betas[t - 1]; }
    double alpha(int t) const { return alphas[t - 1]; }
    double alpha_bar(int t) const { return alpha_bars[t - 1]; }
    void check_t(int t) const {
        if (t < 1 || t > T) throw RuntimeError("timestep out of range");
    }
};

inline NoiseSchedule make_linear_schedule(int T, double beta_start,
                                          double beta_end) {
    if (T < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
        throw ConfigError("schedule: require 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        double frac = (T == 1) ? 0.0 : static_cast<double>(t) / (T - 1);
        s.betas[t] = beta_start + (beta_end - beta_start) * frac;
        s.alphas[t] = 1.0 - s.betas[t];
        prod *= s.alphas[t];
        s.alpha_bars[t] = prod;
    }
    return s;
}

enum class PriorCombine { Mean, Sum };

// Dual-prior combination; the mean keeps the terminal forward
// distribution consistent with the reverse initialization.
inline VectorXf combined_prior(const VectorXf& y_g, const VectorXf& y_l,
                               PriorCombine mode = PriorCombine::Mean) {
    if (y_g.size() != y_l.size())
        throw ShapeError("combined_prior: length mismatch");
    if (mode == PriorCombine::Sum) return y_g + y_l;
    return 0.5f * (y_g + y_l);
}

// y_t = sqrt(abar_t) y0 + sqrt(1-abar_t) eps + (1-sqrt(abar_t)) mu
inline VectorXf forward_sample(const VectorXf& y0, const VectorXf& mu, int t,
                               const VectorXf& eps, const NoiseSchedule& s) {
    s.check_t(t);
    if (y0.size() != mu.size() || y0.size() != eps.size())
        throw ShapeError("forward_sample: length mismatch");
    const float sa = static_cast<float>(std::sqrt(s.alpha_bar(t)));
    const float sn = static_cast<float>(std::sqrt(1.0 - s.alpha_bar(t)));
    return sa * y0 + sn * eps + (1.f - sa) * mu;
}

inline VectorXf reconstruct_y0(const VectorXf& y_t, const VectorXf& eps_hat,
                               const VectorXf& mu, int t,
                               const NoiseSchedule& s) {
    s.check_t(t);
    if (y_t.size() != mu.size() || y_t.size() != eps_hat.size())
        throw ShapeError("reconstruct_y0: length mismatch");
    const float sa = static_cast<float>(std::sqrt(s.alpha_bar(t)));
    const float sn = static_cast<float>(std::sqrt(1.0 - s.alpha_bar(t)));
    return (y_t - (1.f - sa) * mu - sn * eps_hat) / sa;
}

struct PosteriorCoeffs {
    double gamma0;    // weight on reconstructed y0
    double gamma1;    // weight on y_t
    double gamma2;    // weight on the prior mu
    double sigma_sq;  // reverse-step variance
};

// Prior-shifted Gaussian posterior for the step t -> t-1; reduces to the
// standard DDPM posterior when mu = 0.
inline PosteriorCoeffs posterior_coefficients(int t, const NoiseSchedule& s) {
    if (t < 2 || t > s.T)
        throw RuntimeError("posterior_coefficients: need 2 <= t <= T");
    const double abar_t = s.alpha_bar(t);
    const double abar_p = s.alpha_bar(t - 1);
    const double a_t = s.alpha(t);
    const double b_t = s.beta(t);
    const double one_m = 1.0 - abar_t;
    PosteriorCoeffs c{};
    c.gamma0 = b_t * std::sqrt(abar_p) / one_m;
    c.gamma1 = (1.0 - abar_p) * std::sqrt(a_t) / one_m;
    c.gamma2 =
        1.0 + (std::sqrt(abar_t) - 1.0) * (std::sqrt(a_t) + std::sqrt(abar_p)) / one_m;
    c.sigma_sq = b_t * (1.0 - abar_p) / one_m;
    return c;
}

}  // namespace dmic
