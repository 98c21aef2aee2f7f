#pragma once

#include "dagr/saliency.hpp"
#include "dagr/tensor.hpp"

namespace dagr {

struct SaliencyLossConfig {
    double gamma = 0.01;  // KL weight
    double eps = 1e-8;    // log stability inside normalization

    void validate() const {
        if (gamma < 0.0) throw Error("saliency loss: gamma must be >= 0");
        if (eps <= 0.0) throw Error("saliency loss: eps must be > 0");
    }
};

/// Binary per-frame map of fixation points; every frame holds at least one.
struct FixationMap {
    Tensor points;  // [1, T, H, W], entries in {0,1}
};

FixationMap make_fixation_map(Tensor points);

/// Per-frame distribution: values = (v + eps) / sum(v + eps). Differentiable.
SaliencyMap normalize_map(const SaliencyMap& map, double eps = 1e-8);

/// (1/N) sum S log(S/S_hat), averaged over frames. Both maps must be
/// normalized; gradient flows into S_hat.
Tensor kl_loss(const SaliencyMap& s, const SaliencyMap& s_hat);

/// Negative Pearson correlation over pixels, averaged over frames.
Tensor cc_loss(const SaliencyMap& s, const SaliencyMap& s_hat);

/// gamma * KL(normalized maps) + CC(raw maps).
Tensor saliency_loss(const SaliencyMap& s, const SaliencyMap& s_hat, const SaliencyLossConfig& cfg);

// Evaluation metrics (plain doubles, per-frame values averaged uniformly).
double nss(const SaliencyMap& s_hat, const FixationMap& fix);
double cc_metric(const SaliencyMap& s, const SaliencyMap& s_hat);
double auc_judd(const SaliencyMap& s_hat, const FixationMap& fix);

}  // namespace dagr
