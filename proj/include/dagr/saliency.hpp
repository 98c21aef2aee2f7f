#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dagr/registers.hpp"
#include "dagr/tensor.hpp"

namespace dagr {

struct SaliencyNetConfig {
    std::size_t in_channels = 3;
    std::vector<std::size_t> stage_channels = {16, 32};
    std::size_t bottleneck_channels = 64;
    std::array<std::size_t, 3> attention_kernel = {1, 1, 1};
    bool skip_connections = true;

    void validate() const;
    std::size_t depth() const { return stage_channels.size(); }
    std::size_t spatial_factor() const { return std::size_t{1} << stage_channels.size(); }
};

/// Per-frame saliency volume, values in [0,1]; when `normalized`, every frame
/// sums to one.
struct SaliencyMap {
    Tensor values;  // [1, T, H, W]
    bool normalized = false;

    std::size_t frames() const { return values.extent(1); }
    std::size_t frame_pixels() const { return values.extent(2) * values.extent(3); }
};

SaliencyMap make_saliency_map(Tensor values, bool normalized = false);

/// UNet3D-style encoder-decoder. Stages conv(3x3x3)+relu then 2x spatial
/// pooling; the bottleneck block is gated by a sigmoid attention mask; the
/// decoder mirrors the encoder with trilinear upsampling and skip concats.
class SaliencyNet {
public:
    SaliencyNet(SaliencyNetConfig cfg, RngState& rng);

    const SaliencyNetConfig& config() const { return cfg_; }

    std::pair<Tensor, std::vector<Tensor>> encode(const Tensor& aug_input) const;
    std::pair<Tensor, Tensor> bottleneck_attention(const Tensor& z) const;  // (z', mask)
    Tensor decode(const Tensor& zp, const std::vector<Tensor>& skips) const;
    Tensor forward(const Tensor& aug_input) const;  // [B,Cin,T,H,W] -> [B,1,T,H,W]

    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;  // "sal." prefix
    void load_parameters(const std::vector<std::pair<std::string, Tensor>>& named);
    void freeze();

private:
    struct Conv {
        Tensor w, b;
    };
    Conv make_conv(std::size_t out_c, std::size_t in_c, std::array<std::size_t, 3> kernel,
                   RngState& rng);

    SaliencyNetConfig cfg_;
    std::vector<Conv> encoder_;
    Conv bottleneck_;
    Conv attention_;
    std::vector<Conv> decoder_;  // deepest stage first
    Conv head_;
};

/// Register tokens + saliency net behind one forward; `n_tokens == 0` disables
/// the tokens entirely and leaves the rng stream untouched, so the result is
/// the token-free baseline.
class SaliencyPipeline {
public:
    SaliencyPipeline(std::size_t video_channels, std::size_t n_tokens, std::size_t token_dim,
                     SaliencyNetConfig net_cfg, RngState& rng);

    Tensor forward(const Tensor& video) const;  // [C,T,H,W] -> [1,T,H,W]
    SaliencyMap forward_clip(const Tensor& video) const;

    const std::optional<RegisterTokens>& tokens() const { return tokens_; }
    const SaliencyNet& net() const { return net_; }
    std::size_t video_channels() const { return video_channels_; }

    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    void load_parameters(const std::vector<std::pair<std::string, Tensor>>& named);
    void freeze();

private:
    std::size_t video_channels_;
    std::optional<RegisterTokens> tokens_;
    SaliencyNet net_;
};

SaliencyMap forward_saliency(const Tensor& video, const SaliencyPipeline& pipeline);

}  // namespace dagr
