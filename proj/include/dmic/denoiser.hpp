#pragma once

// Conditional noise predictor: a fully-connected stack conditioned by
// Hadamard products with timestep embeddings and the image embedding.

#include <vector>

#include "dmic/encoders.hpp"

namespace dmic {

struct DenoiserConfig {
    int K = 4;
    int d_lat = 256;       // 6144 reproduces the full-scale preset
    int n_mid_layers = 2;  // hidden blocks after the image-embedding product
    int image_c = 1, image_h = 64, image_w = 64;
    std::vector<int> encoder_channels{8, 16, 32, 64};

    void validate() const {
        if (K < 2) throw ConfigError("denoiser: K >= 2 required");
        if (d_lat < 1) throw ConfigError("denoiser: d_lat >= 1 required");
    }
};

// Fixed sinusoidal encoding, geometric frequency ladder base 10000.
inline Eigen::RowVectorXf sinusoid_embedding(int t, int dim) {
    Eigen::RowVectorXf e(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / dim);
        e[2 * i] = static_cast<float>(std::sin(t * freq));
        e[2 * i + 1] = static_cast<float>(std::cos(t * freq));
    }
    if (dim % 2 == 1) e[dim - 1] = static_cast<float>(std::sin(t));
    return e;
}

struct Denoiser {
    DenoiserConfig cfg;
    ConvEncoder encoder;      // rho(x) backbone
    nn::Linear proj;          // encoder feature -> d_lat
    nn::Linear input_layer;   // 3K -> d_lat
    std::vector<nn::Linear> time_embeds;  // one per conditioning site
    std::vector<nn::Linear> mid_layers;
    std::vector<nn::BatchNorm1d> mid_norms;
    nn::Linear output_layer;  // d_lat -> K, bare
    bool training_mode = false;

    Denoiser() = default;
    Denoiser(const DenoiserConfig& c, Rng& rng) : cfg(c) {
        cfg.validate();
        encoder = ConvEncoder(c.image_c, c.image_h, c.image_w,
                              c.encoder_channels, rng);
        proj = nn::Linear(encoder.out_c, c.d_lat, rng);
        proj.b->val.setOnes();  // Hadamard gates start near identity
        input_layer = nn::Linear(3 * c.K, c.d_lat, rng);
        for (int i = 0; i < 1 + c.n_mid_layers; ++i) {
            time_embeds.emplace_back(c.d_lat, c.d_lat, rng);
            time_embeds.back().b->val.setOnes();
        }
        for (int i = 0; i < c.n_mid_layers; ++i) {
            mid_layers.emplace_back(c.d_lat, c.d_lat, rng);
            mid_norms.emplace_back(c.d_lat);
        }
        output_layer = nn::Linear(c.d_lat, c.K, rng);
    }

    ag::Var embed_image(const ag::Var& images) const {
        return proj.forward(encoder.forward_pooled(images));
    }

    // Learned embedding for conditioning site `site`; per-sample timesteps.
    ag::Var embed_timestep(const std::vector<int>& ts, int site) const {
        MatrixXf sin(ts.size(), cfg.d_lat);
        for (size_t i = 0; i < ts.size(); ++i) {
            if (ts[i] < 1) throw RuntimeError("embed_timestep: t must be >= 1");
            sin.row(i) = sinusoid_embedding(ts[i], cfg.d_lat);
        }
        return time_embeds.at(site).forward(ag::constant(std::move(sin)));
    }

    // rho: (B, d_lat); y_t, y_g, y_l: (B, K); ts: per-sample timesteps.
    ag::Var predict_noise(const ag::Var& rho, const ag::Var& y_t,
                          const ag::Var& y_g, const ag::Var& y_l,
                          const std::vector<int>& ts) {
        if (y_t->val.cols() != cfg.K || y_g->val.cols() != cfg.K ||
            y_l->val.cols() != cfg.K)
            throw ShapeError("predict_noise: label-space width");
        ag::Var u = input_layer.forward(ag::concat_cols({y_t, y_g, y_l}));
        u = ag::mul(u, embed_timestep(ts, 0));
        u = ag::mul(u, rho);
        for (int i = 0; i < cfg.n_mid_layers; ++i) {
            u = mid_layers[i].forward(u);
            u = mid_norms[i].forward(u, training_mode);
            u = ag::softplus(u);
            u = ag::mul(u, embed_timestep(ts, 1 + i));
        }
        return output_layer.forward(u);
    }

    void collect(std::vector<nn::NamedParam>& out) const {
        encoder.collect("den.enc", out);
        proj.collect("den.proj", out);
        input_layer.collect("den.in", out);
        for (size_t i = 0; i < time_embeds.size(); ++i)
            time_embeds[i].collect("den.temb" + std::to_string(i), out);
        for (size_t i = 0; i < mid_layers.size(); ++i) {
            mid_layers[i].collect("den.mid" + std::to_string(i), out);
            mid_norms[i].collect("den.bn" + std::to_string(i), out);
        }
        output_layer.collect("den.out", out);
    }
    std::vector<nn::NamedParam> named_params() const {
        std::vector<nn::NamedParam> out;
        collect(out);
        return out;
    }

    // Closed-form learnable-parameter count for a given config.
    static long param_count(const DenoiserConfig& c) {
        long n = 0;
        int hh = c.image_h, ww = c.image_w, cc = c.image_c;
        for (int oc : c.encoder_channels) {
            n += static_cast<long>(oc) * cc * 9 + oc;
            hh = (hh - 1) / 2 + 1;
            ww = (ww - 1) / 2 + 1;
            cc = oc;
        }
        n += static_cast<long>(cc) * c.d_lat + c.d_lat;           // proj
        n += static_cast<long>(3 * c.K) * c.d_lat + c.d_lat;      // input
        n += static_cast<long>(1 + c.n_mid_layers) *
             (static_cast<long>(c.d_lat) * c.d_lat + c.d_lat);    // time embeds
        n += static_cast<long>(c.n_mid_layers) *
             (static_cast<long>(c.d_lat) * c.d_lat + c.d_lat +    // mid linear
              2L * c.d_lat);                                      // bn gamma/beta
        n += static_cast<long>(c.d_lat) * c.K + c.K;              // output
        return n;
    }
};

}  // namespace dmic
