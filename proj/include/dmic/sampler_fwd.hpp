#pragma once

// Ablation variants and the trained-model bundle shared by sampler,
// training, and the CLI.

#include <string>

#include "dmic/dcg.hpp"
#include "dmic/denoiser.hpp"
#include "dmic/schedule.hpp"

namespace dmic {

enum class Variant { Basic, C1, C2, Full };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Basic: return "basic";
        case Variant::C1: return "C1";
        case Variant::C2: return "C2";
        case Variant::Full: return "full";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "basic") return Variant::Basic;
    if (s == "C1" || s == "c1") return Variant::C1;
    if (s == "C2" || s == "c2") return Variant::C2;
    if (s == "full") return Variant::Full;
    throw ConfigError("unknown ablation variant: " + s);
}

struct ModelBundle {
    NoiseSchedule sched;
    DenoiserConfig den_cfg;
    DCGConfig dcg_cfg;
    Variant variant = Variant::Full;
    PriorCombine prior_combine = PriorCombine::Mean;
    float y_scale = 1.f;  // label-space embedding scale (y0 and priors)
    bool freeze_encoder = false;
    Denoiser denoiser;
    DCGModel dcg;
    nn::Linear basic_head;  // linear softmax head on rho(x), basic variant

    bool uses_dcg() const {
        return variant == Variant::C2 || variant == Variant::Full;
    }
    bool uses_diffusion() const { return variant != Variant::Basic; }
};

}  // namespace dmic
