#pragma once

// Dual-granularity conditional guidance model: a global stream emitting a
// per-class saliency map and global prior, and a local stream that crops
// high-response ROI patches and fuses them through gated attention.

#include <algorithm>
#include <numeric>
#include <vector>

#include "dmic/encoders.hpp"

namespace dmic {

enum class ChannelCollapse { Max, Sum };

struct DCGConfig {
    int K = 4;
    int image_c = 1, image_h = 64, image_w = 64;
    int roi_count = 6;
    int roi_size = 32;
    int att_dim = 128;
    std::vector<int> global_channels{8, 16, 32, 64};
    std::vector<int> local_channels{16, 32};
    ChannelCollapse collapse = ChannelCollapse::Max;
};

struct ROISet {
    MatrixXf patches;                       // (N, C*S*S)
    std::vector<std::pair<int, int>> centers;  // input-space (row, col)
    std::vector<float> scores;              // non-increasing
};

struct PriorPair {
    MatrixXf y_g, y_l;               // (B, K) probabilities
    MatrixXf y_g_logits, y_l_logits; // retained for the CE loss
};

// Deterministic uniform grid of n crop centers, row-major.
inline std::vector<std::pair<int, int>> roi_grid(int n, int h, int w) {
    int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    int rows = (n + cols - 1) / cols;
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < rows && static_cast<int>(out.size()) < n; ++r)
        for (int c = 0; c < cols && static_cast<int>(out.size()) < n; ++c)
            out.emplace_back(static_cast<int>((r + 0.5) * h / rows),
                             static_cast<int>((c + 0.5) * w / cols));
    return out;
}

// Greedy ROI selection on one image. saliency: (K, H'*W') flattened;
// image: (C, H*W) flattened row.
inline ROISet select_rois(const MatrixXf& saliency, int sal_h, int sal_w,
                          const Eigen::RowVectorXf& image, int img_c, int img_h,
                          int img_w, int n, int size,
                          ChannelCollapse collapse = ChannelCollapse::Max) {
    if (n < 1) throw ConfigError("select_rois: n >= 1 required");
    if (size > std::min(img_h, img_w))
        throw ConfigError("select_rois: crop larger than image");
    // collapse channels, then nearest-neighbor upsample to input resolution
    Eigen::VectorXf resp(sal_h * sal_w);
    for (int i = 0; i < sal_h * sal_w; ++i) {
        if (collapse == ChannelCollapse::Max)
            resp[i] = saliency.col(i).maxCoeff();
        else
            resp[i] = saliency.col(i).sum();
    }
    std::vector<float> up(static_cast<size_t>(img_h) * img_w);
    for (int y = 0; y < img_h; ++y)
        for (int x = 0; x < img_w; ++x) {
            int sy = std::min(y * sal_h / img_h, sal_h - 1);
            int sx = std::min(x * sal_w / img_w, sal_w - 1);
            up[static_cast<size_t>(y) * img_w + x] = resp[sy * sal_w + sx];
        }

    ROISet out;
    const int radius = size / 2;
    auto add_center = [&](int cy, int cx, float score) {
        out.centers.emplace_back(cy, cx);
        out.scores.push_back(score);
    };

    float mn = *std::min_element(up.begin(), up.end());
    float mx = *std::max_element(up.begin(), up.end());
    if (mx > mn) {
        std::vector<int> idx(up.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](int a, int b) { return up[a] > up[b]; });
        std::vector<std::pair<int, int>> picked;
        for (int i : idx) {
            if (static_cast<int>(out.centers.size()) >= n) break;
            int cy = i / img_w, cx = i % img_w;
            bool suppressed = false;
            for (auto& [py, px] : picked)
                if (std::max(std::abs(cy - py), std::abs(cx - px)) < radius) {
                    suppressed = true;
                    break;
                }
            if (suppressed) continue;
            picked.emplace_back(cy, cx);
            add_center(cy, cx, up[i]);
        }
    }
    // grid fallback: constant saliency, or suppression exhausted candidates
    if (static_cast<int>(out.centers.size()) < n) {
        for (auto& [gy, gx] : roi_grid(n, img_h, img_w)) {
            if (static_cast<int>(out.centers.size()) >= n) break;
            float sc = up[static_cast<size_t>(gy) * img_w + gx];
            if (!out.scores.empty()) sc = std::min(sc, out.scores.back());
            add_center(gy, gx, sc);
        }
    }

    out.patches.resize(n, static_cast<Eigen::Index>(img_c) * size * size);
    for (int r = 0; r < n; ++r) {
        auto [cy, cx] = out.centers[r];
        int y0 = std::clamp(cy - size / 2, 0, img_h - size);
        int x0 = std::clamp(cx - size / 2, 0, img_w - size);
        for (int c = 0; c < img_c; ++c)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    out.patches(r, (static_cast<Eigen::Index>(c) * size + y) * size + x) =
                        image[static_cast<Eigen::Index>(c) * img_h * img_w +
                              (y0 + y) * img_w + (x0 + x)];
    }
    return out;
}

struct DCGModel {
    DCGConfig cfg;
    ConvEncoder global_enc;
    nn::Conv2d sal_conv;  // 1x1, K channels
    ConvEncoder local_enc;
    ag::Var att_V, att_U, att_w;  // gated attention parameters
    nn::Linear local_head;

    DCGModel() = default;
    DCGModel(const DCGConfig& c, Rng& rng) : cfg(c) {
        global_enc = ConvEncoder(c.image_c, c.image_h, c.image_w,
                                 c.global_channels, rng);
        sal_conv = nn::Conv2d(global_enc.out_c, c.K, 1, 1, 0, rng);
        local_enc = ConvEncoder(c.image_c, c.roi_size, c.roi_size,
                                c.local_channels, rng);
        const int df = local_enc.out_c;
        float s = std::sqrt(1.f / df);
        att_V = ag::param(randn_mat(rng, df, c.att_dim) * s);
        att_U = ag::param(randn_mat(rng, df, c.att_dim) * s);
        att_w = ag::param(randn_mat(rng, c.att_dim, 1) *
                          std::sqrt(1.f / c.att_dim));
        local_head = nn::Linear(df, c.K, rng);
    }

    // saliency (B, K*H'*W') and global logits (B, K): spatial mean per class.
    std::pair<ag::Var, ag::Var> global_forward(const ag::Var& images) const {
        ag::Var feat = global_enc.forward(images);
        ag::Var sal =
            sal_conv.forward(feat, global_enc.out_h, global_enc.out_w);
        ag::Var logits =
            ag::channel_mean(sal, cfg.K, global_enc.out_h * global_enc.out_w);
        return {sal, logits};
    }

    struct LocalOut {
        ag::Var logits;     // (B, K)
        ag::Var attention;  // (B*N, 1) simplex weights per group
    };

    // patches: (B*N, C*S*S) with N = cfg.roi_count patches per image.
    LocalOut local_forward(const ag::Var& patches) const {
        if (patches->val.rows() == 0) throw ShapeError("local_forward: empty");
        if (patches->val.rows() % cfg.roi_count != 0)
            throw ShapeError("local_forward: rows not divisible by roi_count");
        ag::Var h = local_enc.forward_pooled(patches);  // (B*N, D_feat)
        ag::Var gate = ag::mul(ag::tanh_op(ag::matmul(h, att_V)),
                               ag::sigmoid_op(ag::matmul(h, att_U)));
        ag::Var scores = ag::matmul(gate, att_w);  // (B*N, 1)
        ag::Var a = ag::group_softmax(scores, cfg.roi_count);
        ag::Var fused = ag::group_weighted_sum(a, h, cfg.roi_count);
        return {local_head.forward(fused), a};
    }

    // Full DCG pass; node outputs keep gradients alive for joint training.
    struct PriorNodes {
        ag::Var y_g, y_l;               // probabilities
        ag::Var y_g_logits, y_l_logits;
        std::vector<ROISet> rois;
    };

    PriorNodes priors_node(const ag::Var& images) const {
        auto [sal, g_logits] = global_forward(images);
        const int B = static_cast<int>(images->val.rows());
        const int N = cfg.roi_count, S = cfg.roi_size;
        MatrixXf patches(static_cast<Eigen::Index>(B) * N,
                         static_cast<Eigen::Index>(cfg.image_c) * S * S);
        std::vector<ROISet> rois;
        rois.reserve(B);
        for (int i = 0; i < B; ++i) {
            MatrixXf sal_i(cfg.K, global_enc.out_h * global_enc.out_w);
            for (int k = 0; k < cfg.K; ++k)
                sal_i.row(k) = sal->val.row(i).segment(
                    static_cast<Eigen::Index>(k) * global_enc.out_h * global_enc.out_w,
                    global_enc.out_h * global_enc.out_w);
            ROISet r = select_rois(sal_i, global_enc.out_h, global_enc.out_w,
                                   images->val.row(i), cfg.image_c, cfg.image_h,
                                   cfg.image_w, N, S, cfg.collapse);
            patches.middleRows(static_cast<Eigen::Index>(i) * N, N) = r.patches;
            rois.push_back(std::move(r));
        }
        auto loc = local_forward(ag::constant(patches));
        PriorNodes out;
        out.y_g_logits = g_logits;
        out.y_l_logits = loc.logits;
        out.y_g = ag::softmax_rows(g_logits);
        out.y_l = ag::softmax_rows(loc.logits);
        out.rois = std::move(rois);
        return out;
    }

    PriorPair priors(const MatrixXf& images) const {
        auto nodes = priors_node(ag::constant(images));
        return PriorPair{nodes.y_g->val, nodes.y_l->val, nodes.y_g_logits->val,
                         nodes.y_l_logits->val};
    }

    void collect(std::vector<nn::NamedParam>& out) const {
        global_enc.collect("dcg.global", out);
        sal_conv.collect("dcg.sal", out);
        local_enc.collect("dcg.local", out);
        out.push_back({"dcg.att.V", att_V});
        out.push_back({"dcg.att.U", att_U});
        out.push_back({"dcg.att.w", att_w});
        local_head.collect("dcg.head", out);
    }
    std::vector<nn::NamedParam> named_params() const {
        std::vector<nn::NamedParam> out;
        collect(out);
        return out;
    }
};

}  // namespace dmic
