#pragma once

// Full experiment description, serialized to and from a TOML file.

#include <string>
#include <vector>

#include "dmic/objectives.hpp"
#include "dmic/sampler_fwd.hpp"
#include "dmic/toml.hpp"

namespace dmic {

struct RunConfig {
    // dataset
    std::string data_source = "synthetic";  // synthetic | image_folder | csv_index
    std::string data_root;                  // folder root or csv path
    int K = 4;
    int image_size = 64;
    int channels = 1;
    int synth_n = 2000;
    double synth_noise = 0.15;
    double synth_blur = 1.0;
    std::vector<double> synth_imbalance;  // empty = balanced
    double split_ratio = 0.8;

    // schedule
    int T = 100;
    double beta_start = 1e-4;
    double beta_end = 0.2;  // linear 1e-4..0.02 over 1000 steps, rescaled to T=100
    double y_scale = 2.0;   // label-space embedding scale against unit noise
    std::string prior_combine = "mean";  // mean | sum

    // denoiser
    int d_lat = 256;
    std::vector<int> encoder_channels{8, 16, 32, 64};

    // dcg
    int roi_count = 6;
    int roi_size = 32;
    int att_dim = 128;
    std::vector<int> dcg_global_channels{8, 16, 32, 64};
    std::vector<int> dcg_local_channels{16, 32};
    std::string roi_collapse = "max";  // max | sum

    // optimizer / training
    bool freeze_encoder = false;  // keep the warmed image encoder fixed during diffusion training
    double lr_denoiser = 1e-3;
    double lr_dcg = 2e-4;
    int batch_size = 32;
    int warmup_epochs = 10;
    int routing_warmup_epochs = 30;
    int epochs = 100;
    double lambda = 0.5;
    double ce_weight = 1.0;  // CE weight during the joint phase
    std::vector<double> mmd_bandwidth_sq{0.25, 0.5, 1.0, 2.0, 4.0};
    bool mmd_unbiased = false;
    int eval_every = 10;
    int T_infer = 25;
    uint64_t seed = 1;
    std::string variant = "full";

    void validate() const {
        if (lr_denoiser <= 0 || lr_dcg <= 0)
            throw ConfigError("learning rates must be > 0");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
        if (lambda < 0) throw ConfigError("lambda must be >= 0");
        parse_variant(variant);
        if (prior_combine != "mean" && prior_combine != "sum")
            throw ConfigError("prior_combine must be mean or sum");
        if (roi_collapse != "max" && roi_collapse != "sum")
            throw ConfigError("roi_collapse must be max or sum");
        if (data_source != "synthetic" && data_source != "image_folder" &&
            data_source != "csv_index")
            throw ConfigError("unknown data source: " + data_source);
        if (T_infer < 1 || T_infer > T)
            throw ConfigError("T_infer must be in [1, T]");
        if (y_scale <= 0) throw ConfigError("y_scale must be > 0");
        MMDConfig m{mmd_bandwidth_sq, mmd_unbiased};
        m.validate();
    }

    PriorCombine prior_combine_mode() const {
        return prior_combine == "sum" ? PriorCombine::Sum : PriorCombine::Mean;
    }

    DenoiserConfig denoiser_config() const {
        DenoiserConfig c;
        c.K = K;
        c.d_lat = d_lat;
        c.image_c = channels;
        c.image_h = c.image_w = image_size;
        c.encoder_channels = encoder_channels;
        return c;
    }
    DCGConfig dcg_config() const {
        DCGConfig c;
        c.K = K;
        c.image_c = channels;
        c.image_h = c.image_w = image_size;
        c.roi_count = roi_count;
        c.roi_size = roi_size;
        c.att_dim = att_dim;
        c.global_channels = dcg_global_channels;
        c.local_channels = dcg_local_channels;
        c.collapse = roi_collapse == "sum" ? ChannelCollapse::Sum
                                           : ChannelCollapse::Max;
        return c;
    }
    MMDConfig mmd_config() const { return MMDConfig{mmd_bandwidth_sq, mmd_unbiased}; }

    toml::Table to_table() const {
        toml::Table t;
        t.set("data.source", data_source);
        t.set("data.root", data_root);
        t.set<long long>("data.classes", K);
        t.set<long long>("data.image_size", image_size);
        t.set<long long>("data.channels", channels);
        t.set<long long>("data.synth_n", synth_n);
        t.set("data.synth_noise", synth_noise);
        t.set("data.synth_blur", synth_blur);
        t.set("data.synth_imbalance", synth_imbalance);
        t.set("data.split_ratio", split_ratio);
        t.set<long long>("schedule.T", T);
        t.set("schedule.beta_start", beta_start);
        t.set("schedule.beta_end", beta_end);
        t.set("schedule.y_scale", y_scale);
        t.set("schedule.prior_combine", prior_combine);
        t.set<long long>("denoiser.d_lat", d_lat);
        std::vector<double> enc(encoder_channels.begin(), encoder_channels.end());
        t.set("denoiser.encoder_channels", enc);
        t.set<long long>("dcg.roi_count", roi_count);
        t.set<long long>("dcg.roi_size", roi_size);
        t.set<long long>("dcg.att_dim", att_dim);
        std::vector<double> gch(dcg_global_channels.begin(), dcg_global_channels.end());
        std::vector<double> lch(dcg_local_channels.begin(), dcg_local_channels.end());
        t.set("dcg.global_channels", gch);
        t.set("dcg.local_channels", lch);
        t.set("dcg.roi_collapse", roi_collapse);
        t.set("train.freeze_encoder", freeze_encoder);
        t.set("train.lr_denoiser", lr_denoiser);
        t.set("train.lr_dcg", lr_dcg);
        t.set<long long>("train.batch_size", batch_size);
        t.set<long long>("train.warmup_epochs", warmup_epochs);
        t.set<long long>("train.routing_warmup_epochs", routing_warmup_epochs);
        t.set<long long>("train.epochs", epochs);
        t.set("train.lambda", lambda);
        t.set("train.ce_weight", ce_weight);
        t.set("train.mmd_bandwidth_sq", mmd_bandwidth_sq);
        t.set("train.mmd_unbiased", mmd_unbiased);
        t.set<long long>("train.eval_every", eval_every);
        t.set<long long>("train.t_infer", T_infer);
        t.set<long long>("train.seed", static_cast<long long>(seed));
        t.set("train.variant", variant);
        return t;
    }

    static RunConfig from_table(const toml::Table& t) {
        RunConfig c;
        c.data_source = t.get<std::string>("data.source", c.data_source);
        c.data_root = t.get<std::string>("data.root", c.data_root);
        c.K = t.get<int>("data.classes", c.K);
        c.image_size = t.get<int>("data.image_size", c.image_size);
        c.channels = t.get<int>("data.channels", c.channels);
        c.synth_n = t.get<int>("data.synth_n", c.synth_n);
        c.synth_noise = t.get<double>("data.synth_noise", c.synth_noise);
        c.synth_blur = t.get<double>("data.synth_blur", c.synth_blur);
        c.synth_imbalance =
            t.get<std::vector<double>>("data.synth_imbalance", c.synth_imbalance);
        c.split_ratio = t.get<double>("data.split_ratio", c.split_ratio);
        c.T = t.get<int>("schedule.T", c.T);
        c.beta_start = t.get<double>("schedule.beta_start", c.beta_start);
        c.beta_end = t.get<double>("schedule.beta_end", c.beta_end);
        c.y_scale = t.get<double>("schedule.y_scale", c.y_scale);
        c.prior_combine = t.get<std::string>("schedule.prior_combine", c.prior_combine);
        c.d_lat = t.get<int>("denoiser.d_lat", c.d_lat);
        auto get_ints = [&](const std::string& key, std::vector<int> def) {
            std::vector<double> d(def.begin(), def.end());
            d = t.get<std::vector<double>>(key, d);
            return std::vector<int>(d.begin(), d.end());
        };
        c.encoder_channels = get_ints("denoiser.encoder_channels", c.encoder_channels);
        c.roi_count = t.get<int>("dcg.roi_count", c.roi_count);
        c.roi_size = t.get<int>("dcg.roi_size", c.roi_size);
        c.att_dim = t.get<int>("dcg.att_dim", c.att_dim);
        c.dcg_global_channels = get_ints("dcg.global_channels", c.dcg_global_channels);
        c.dcg_local_channels = get_ints("dcg.local_channels", c.dcg_local_channels);
        c.roi_collapse = t.get<std::string>("dcg.roi_collapse", c.roi_collapse);
        c.freeze_encoder = t.get<bool>("train.freeze_encoder", c.freeze_encoder);
        c.lr_denoiser = t.get<double>("train.lr_denoiser", c.lr_denoiser);
        c.lr_dcg = t.get<double>("train.lr_dcg", c.lr_dcg);
        c.batch_size = t.get<int>("train.batch_size", c.batch_size);
        c.warmup_epochs = t.get<int>("train.warmup_epochs", c.warmup_epochs);
        c.routing_warmup_epochs = t.get<int>("train.routing_warmup_epochs", c.routing_warmup_epochs);
        c.epochs = t.get<int>("train.epochs", c.epochs);
        c.lambda = t.get<double>("train.lambda", c.lambda);
        c.ce_weight = t.get<double>("train.ce_weight", c.ce_weight);
        c.mmd_bandwidth_sq =
            t.get<std::vector<double>>("train.mmd_bandwidth_sq", c.mmd_bandwidth_sq);
        c.mmd_unbiased = t.get<bool>("train.mmd_unbiased", c.mmd_unbiased);
        c.eval_every = t.get<int>("train.eval_every", c.eval_every);
        c.T_infer = t.get<int>("train.t_infer", c.T_infer);
        c.seed = static_cast<uint64_t>(t.get<long long>("train.seed", 1));
        c.variant = t.get<std::string>("train.variant", c.variant);
        c.validate();
        return c;
    }

    static RunConfig load(const std::string& path) {
        return from_table(toml::parse_file(path));
    }
    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write config: " + path);
        toml::emit(to_table(), out);
    }
};

}  // namespace dmic
