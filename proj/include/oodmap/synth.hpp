#pragma once

#include "oodmap/dataset.hpp"
#include "oodmap/mahalanobis.hpp"
#include "oodmap/scoring.hpp"
#include "oodmap/tensor.hpp"

namespace oodmap {

/// Configuration of the synthetic separability source. ID pixels draw their
/// true-class logit from Normal(delta, 1) and everything else from
/// Normal(0, 1); OOD pixels draw all logits from Normal(0, 1). delta = 0 makes
/// scores independent of the truth, larger delta separates the populations.
struct SynthConfig {
    std::uint32_t height = 128;
    std::uint32_t width = 128;
    std::uint32_t classes = 8;
    std::uint32_t feature_depth = 4;
    double delta = 1.0;
    std::uint64_t seed = 0;
};

struct SynthSample {
    LabelMap truth;       // class ids, with a kOodId block
    LogitMap logits;      // [H,W,K]
    FeatureMap features;  // [H,W,D], class-mean Gaussians with the same delta
};

/// Deterministic synthetic model output. The bottom-right quadrant is labelled
/// OOD (one quarter of the pixels for even dimensions).
inline SynthSample synthesize(const SynthConfig& cfg) {
    if (cfg.delta < 0.0) throw ContractError("separability must be nonnegative");
    if (cfg.classes < 2) throw ContractError("needs at least 2 classes");
    if (cfg.height < 2 || cfg.width < 2) throw ContractError("image must be at least 2x2");
    SynthSample out{LabelMap(cfg.height, cfg.width),
                    LogitMap(cfg.height, cfg.width, cfg.classes),
                    FeatureMap(cfg.height, cfg.width, cfg.feature_depth)};
    Rng rng(cfg.seed);
    for (std::uint32_t y = 0; y < cfg.height; ++y) {
        for (std::uint32_t x = 0; x < cfg.width; ++x) {
            const std::size_t i = std::size_t(y) * cfg.width + x;
            const bool ood = y >= cfg.height / 2 && x >= cfg.width / 2;
            const auto cls = static_cast<std::uint16_t>(rng.bounded(cfg.classes));
            out.truth.labels[i] = ood ? kOodId : cls;
            auto logits = out.logits.pixel(i);
            for (std::uint32_t k = 0; k < cfg.classes; ++k)
                logits[k] = static_cast<float>(rng.normal());
            if (!ood) logits[cls] += static_cast<float>(cfg.delta);
            auto feats = out.features.at(i);
            for (std::uint32_t d = 0; d < cfg.feature_depth; ++d)
                feats[d] = static_cast<float>(rng.normal());
            if (!ood) feats[cls % cfg.feature_depth] += static_cast<float>(cfg.delta);
        }
    }
    return out;
}

} // namespace oodmap
