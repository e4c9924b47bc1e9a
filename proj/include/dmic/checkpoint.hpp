#pragma once

// Self-describing checkpoint container: magic "DMIC1", a JSON metadata
// block (config snapshot, epoch, metric history), and a tensor table of
// named little-endian float32 blocks.

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "dmic/config.hpp"
#include "dmic/sampler_fwd.hpp"

namespace dmic {

using json = nlohmann::json;

namespace ckpt_detail {

inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
}
inline uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace ckpt_detail

struct NamedTensor {
    std::string name;
    MatrixXf data;
};

struct Checkpoint {
    json metadata;
    std::vector<NamedTensor> tensors;

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint: " + path);
        out.write("DMIC1", 5);
        std::string meta = metadata.dump();
        ckpt_detail::write_u32(out, static_cast<uint32_t>(meta.size()));
        out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
        ckpt_detail::write_u32(out, static_cast<uint32_t>(tensors.size()));
        for (auto& t : tensors) {
            ckpt_detail::write_u32(out, static_cast<uint32_t>(t.name.size()));
            out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
            ckpt_detail::write_u32(out, static_cast<uint32_t>(t.data.rows()));
            ckpt_detail::write_u32(out, static_cast<uint32_t>(t.data.cols()));
            for (Eigen::Index r = 0; r < t.data.rows(); ++r)
                for (Eigen::Index c = 0; c < t.data.cols(); ++c) {
                    float v = t.data(r, c);
                    out.write(reinterpret_cast<char*>(&v), 4);
                }
        }
        if (!out) throw DataError("write failure: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open checkpoint: " + path);
        char magic[5];
        in.read(magic, 5);
        if (!in || std::string(magic, 5) != "DMIC1")
            throw DataError("not a DMIC1 checkpoint: " + path);
        Checkpoint ck;
        uint32_t meta_len = ckpt_detail::read_u32(in);
        std::string meta(meta_len, '\0');
        in.read(meta.data(), meta_len);
        ck.metadata = json::parse(meta);
        uint32_t count = ckpt_detail::read_u32(in);
        ck.tensors.resize(count);
        for (auto& t : ck.tensors) {
            uint32_t nl = ckpt_detail::read_u32(in);
            t.name.resize(nl);
            in.read(t.name.data(), nl);
            uint32_t rows = ckpt_detail::read_u32(in);
            uint32_t cols = ckpt_detail::read_u32(in);
            t.data.resize(rows, cols);
            for (uint32_t r = 0; r < rows; ++r)
                for (uint32_t c = 0; c < cols; ++c) {
                    float v;
                    in.read(reinterpret_cast<char*>(&v), 4);
                    t.data(r, c) = v;
                }
        }
        if (!in) throw DataError("truncated checkpoint: " + path);
        return ck;
    }
};

// Batch-norm running statistics live beside the learned parameters.
inline std::vector<std::pair<std::string, Eigen::RowVectorXf*>> bundle_state(
    ModelBundle& b) {
    std::vector<std::pair<std::string, Eigen::RowVectorXf*>> out;
    for (size_t i = 0; i < b.denoiser.mid_norms.size(); ++i) {
        out.emplace_back("den.bn" + std::to_string(i) + ".running_mean",
                         &b.denoiser.mid_norms[i].running_mean);
        out.emplace_back("den.bn" + std::to_string(i) + ".running_var",
                         &b.denoiser.mid_norms[i].running_var);
    }
    return out;
}

inline std::vector<nn::NamedParam> bundle_params(ModelBundle& b) {
    std::vector<nn::NamedParam> out;
    b.denoiser.collect(out);
    if (b.variant == Variant::Basic) b.basic_head.collect("basic.head", out);
    if (b.uses_dcg()) b.dcg.collect(out);
    return out;
}

inline Checkpoint make_checkpoint(ModelBundle& b, const RunConfig& cfg,
                                  int epoch, const json& history) {
    Checkpoint ck;
    ck.metadata["config_toml"] = toml::emit_string(cfg.to_table());
    ck.metadata["epoch"] = epoch;
    ck.metadata["history"] = history;
    for (auto& np : bundle_params(b))
        ck.tensors.push_back({np.name, np.var->val});
    for (auto& [name, vec] : bundle_state(b))
        ck.tensors.push_back({name, MatrixXf(*vec)});
    return ck;
}

// Construct a bundle from a config with freshly initialized parameters.
inline ModelBundle make_bundle(const RunConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelBundle b;
    b.sched = make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    b.den_cfg = cfg.denoiser_config();
    b.dcg_cfg = cfg.dcg_config();
    b.variant = parse_variant(cfg.variant);
    b.prior_combine = cfg.prior_combine_mode();
    b.y_scale = static_cast<float>(cfg.y_scale);
    b.freeze_encoder = cfg.freeze_encoder;
    b.denoiser = Denoiser(b.den_cfg, rng);
    if (b.uses_dcg()) b.dcg = DCGModel(b.dcg_cfg, rng);
    if (b.variant == Variant::Basic)
        b.basic_head = nn::Linear(cfg.d_lat, cfg.K, rng);
    return b;
}

inline std::pair<ModelBundle, RunConfig> load_bundle(const Checkpoint& ck) {
    if (!ck.metadata.contains("config_toml"))
        throw DataError("checkpoint missing config snapshot");
    std::istringstream is(ck.metadata["config_toml"].get<std::string>());
    RunConfig cfg = RunConfig::from_table(toml::parse(is));
    Rng rng(cfg.seed);
    ModelBundle b = make_bundle(cfg, rng);
    std::map<std::string, const MatrixXf*> by_name;
    for (auto& t : ck.tensors) by_name[t.name] = &t.data;
    for (auto& np : bundle_params(b)) {
        auto it = by_name.find(np.name);
        if (it == by_name.end())
            throw DataError("checkpoint missing tensor: " + np.name);
        if (it->second->rows() != np.var->val.rows() ||
            it->second->cols() != np.var->val.cols())
            throw DataError("checkpoint tensor shape mismatch: " + np.name);
        np.var->val = *it->second;
    }
    for (auto& [name, vec] : bundle_state(b)) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw DataError("checkpoint missing tensor: " + name);
        *vec = it->second->row(0);
    }
    return {std::move(b), cfg};
}

}  // namespace dmic
