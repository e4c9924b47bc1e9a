#pragma once

// Small strided CNN encoders used for the desk-scale presets.

#include <vector>

#include "dmic/nn.hpp"

namespace dmic {

// Stack of 3x3 stride-2 conv + ReLU blocks. Output keeps the spatial
// layout (B, C_last*H'*W') so callers can pool or convolve further.
struct ConvEncoder {
    std::vector<nn::Conv2d> blocks;
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, out_h = 0, out_w = 0;

    ConvEncoder() = default;
    ConvEncoder(int c, int h, int w, const std::vector<int>& channels, Rng& rng)
        : in_c(c), in_h(h), in_w(w) {
        int cc = c, hh = h, ww = w;
        for (int oc : channels) {
            blocks.emplace_back(cc, oc, 3, 2, 1, rng);
            hh = blocks.back().out_dim(hh);
            ww = blocks.back().out_dim(ww);
            cc = oc;
        }
        out_c = cc;
        out_h = hh;
        out_w = ww;
    }

    ag::Var forward(const ag::Var& x) const {
        if (x->val.cols() != static_cast<Eigen::Index>(in_c) * in_h * in_w)
            throw ShapeError("ConvEncoder: input shape");
        ag::Var h = x;
        int hh = in_h, ww = in_w;
        for (const auto& b : blocks) {
            h = ag::relu(b.forward(h, hh, ww));
            hh = b.out_dim(hh);
            ww = b.out_dim(ww);
        }
        return h;
    }

    // Spatially pooled feature vector (B, out_c).
    ag::Var forward_pooled(const ag::Var& x) const {
        return ag::channel_mean(forward(x), out_c, out_h * out_w);
    }

    void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const {
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(prefix + ".conv" + std::to_string(i), out);
    }
};

}  // namespace dmic
