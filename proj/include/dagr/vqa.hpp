#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dagr/saliency.hpp"
#include "dagr/tensor.hpp"

namespace dagr {

struct FusionConfig {
    double alpha = 0.5;
    void validate() const {
        if (alpha < 0.0 || alpha > 1.0) throw Error("fusion: alpha must lie in [0,1]");
    }
};

/// (1-alpha)*I + alpha*(I .* S); alpha == 0 returns the frame untouched.
Tensor fuse_frame(const Tensor& frame, const Tensor& saliency, double alpha);

struct SpatialEncoderConfig {
    std::size_t in_channels = 3;
    std::vector<std::size_t> stage_channels = {8, 16, 24, 32};
    std::size_t feature_dim = 32;  // equals stage_channels.back()
    void validate() const;
};

/// Residual CNN: initial conv, one residual block per stage with 2x pooling
/// between stages, global average pooling to a feature vector.
class SpatialEncoder {
public:
    SpatialEncoder(SpatialEncoderConfig cfg, RngState& rng);
    const SpatialEncoderConfig& config() const { return cfg_; }
    Tensor forward(const Tensor& frame) const;  // [C,H,W] -> [feature_dim]
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

private:
    struct Conv {
        Tensor w, b;
    };
    struct Stage {
        Conv c1, c2;
        Conv proj;  // 1x1 shortcut when channel count changes
        bool has_proj = false;
    };
    Conv make_conv(std::size_t out_c, std::size_t in_c, std::size_t k, RngState& rng);

    SpatialEncoderConfig cfg_;
    Conv initial_;
    std::vector<Stage> stages_;
};

/// Sine-cosine encoding: P[2i] = sin(t / 10000^(2i/d)), P[2i+1] = cos(same).
Tensor positional_encoding(std::size_t t, std::size_t d);
Tensor positional_encoding_matrix(std::size_t frames, std::size_t d);

struct TemporalEncoderConfig {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t d_f = 32;
    std::size_t ffn_dim = 64;
    double eps = 1e-5;
    void validate() const;
};

/// Per layer: Z = MHSA(X) + X (no normalization), then Y = LN(FFN(Z) + Z).
class TemporalEncoder {
public:
    TemporalEncoder(TemporalEncoderConfig cfg, RngState& rng);
    const TemporalEncoderConfig& config() const { return cfg_; }
    Tensor forward(const Tensor& x) const;  // [T, d_f] -> [T, d_f]
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

private:
    struct Layer {
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };
    TemporalEncoderConfig cfg_;
    std::vector<Layer> layers_;
};

class QualityRegressor {
public:
    QualityRegressor() = default;
    QualityRegressor(std::size_t in_dim, RngState& rng);
    Tensor forward(const Tensor& features) const;  // [in_dim] -> scalar
    std::size_t in_dim() const { return w.extent(0); }
    Tensor w, b;
};

/// y_s = time-mean of F, y_t = time-mean of Y, prediction = f([y_s; y_t]).
Tensor predict_quality(const Tensor& spatial_feats, const Tensor& temporal_feats,
                       const QualityRegressor& regressor);

struct VQALossConfig {
    double beta = 0.1;
    double rank_temperature = 0.5;
    void validate() const {
        if (beta < 0.0) throw Error("vqa loss: beta must be >= 0");
        if (rank_temperature <= 0.0) throw Error("vqa loss: temperature must be > 0");
    }
};

/// r_i = sum_j sigmoid((x_i - x_j) / temperature); exact ranks as temperature -> 0.
Tensor soft_rank(const Tensor& x, double temperature);

/// mean|pred - truth| + beta * (1 - pearson(soft ranks)). The correlation term
/// needs a batch of at least 2; otherwise it is skipped and *corr_skipped set.
Tensor vqa_loss(const Tensor& pred, const Tensor& truth, const VQALossConfig& cfg,
                bool* corr_skipped = nullptr);

enum class VQAComponents { full, spatial_only, temporal_only, spatial_saliency };

std::string to_string(VQAComponents c);
VQAComponents vqa_components_from_string(const std::string& s);

struct VQAModelConfig {
    SpatialEncoderConfig spatial;
    TemporalEncoderConfig temporal;
    FusionConfig fusion;
    VQAComponents components = VQAComponents::full;
    void validate() const;
};

class VQAModel {
public:
    VQAModel(VQAModelConfig cfg, RngState& rng);
    const VQAModelConfig& config() const { return cfg_; }

    /// frames [3,T,H,W]; saliency_maps [1,T,H,W] (detached) or nullptr when
    /// fusion is disabled or alpha == 0.
    Tensor predict(const Tensor& frames, const Tensor* saliency_maps) const;

    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;  // "vqa." prefix
    void load_parameters(const std::vector<std::pair<std::string, Tensor>>& named);

    bool uses_saliency() const;
    bool uses_temporal() const;
    bool uses_spatial_stream() const;

private:
    VQAModelConfig cfg_;
    SpatialEncoder spatial_;
    TemporalEncoder temporal_;
    QualityRegressor regressor_;
};

/// Frozen saliency inference for the VQA stage: one detached map per sampled
/// frame, each computed from its own single-frame volume.
std::vector<SaliencyMap> infer_saliency_for_vqa(const Tensor& frames,
                                                const SaliencyPipeline& pipeline);
/// The per-frame maps stacked back into one [1,T,H,W] tensor.
Tensor saliency_maps_for_clip(const Tensor& frames, const SaliencyPipeline& pipeline);

}  // namespace dagr
