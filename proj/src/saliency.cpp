#include "dagr/saliency.hpp"

#include <cmath>
#include <map>

#include "dagr/ops.hpp"

namespace dagr {

void SaliencyNetConfig::validate() const {
    if (in_channels < 1) throw Error("saliency config: in_channels must be >= 1");
    if (stage_channels.size() < 2) throw Error("saliency config: depth must be >= 2");
    for (std::size_t i = 1; i < stage_channels.size(); ++i)
        if (stage_channels[i] <= stage_channels[i - 1])
            throw Error("saliency config: stage_channels must be strictly increasing");
    if (bottleneck_channels < 1) throw Error("saliency config: bottleneck_channels must be >= 1");
    for (std::size_t k : attention_kernel)
        if (k == 0 || k % 2 == 0)
            throw Error("saliency config: attention kernel extents must be odd");
}

SaliencyMap make_saliency_map(Tensor values, bool normalized) {
    if (!values.defined() || values.rank() != 4 || values.extent(0) != 1)
        throw Error("saliency map: values must be [1,T,H,W]");
    for (double v : values.data())
        if (v < 0.0 || v > 1.0) throw Error("saliency map: values must lie in [0,1]");
    if (normalized) {
        const std::size_t T = values.extent(1);
        const std::size_t px = values.extent(2) * values.extent(3);
        const auto& data = values.data();
        for (std::size_t t = 0; t < T; ++t) {
            double s = 0.0;
            for (std::size_t i = 0; i < px; ++i) s += data[t * px + i];
            if (std::abs(s - 1.0) > 1e-9)
                throw Error("saliency map: normalized frame does not sum to 1");
        }
    }
    SaliencyMap map;
    map.values = std::move(values);
    map.normalized = normalized;
    return map;
}

SaliencyNet::Conv SaliencyNet::make_conv(std::size_t out_c, std::size_t in_c,
                                         std::array<std::size_t, 3> kernel, RngState& rng) {
    Conv conv;
    conv.w = Tensor::randn({out_c, in_c, kernel[0], kernel[1], kernel[2]}, rng, true);
    const double fan_in = static_cast<double>(in_c * kernel[0] * kernel[1] * kernel[2]);
    std::vector<double> scaled = conv.w.data();
    const double s = std::sqrt(2.0 / fan_in);
    for (double& v : scaled) v *= s;
    conv.w.assign(scaled);
    // Small nonzero bias keeps relu pre-activations off the kink even where
    // pooled zero regions blank out whole input windows.
    conv.b = Tensor::randn({out_c}, rng, true);
    std::vector<double> bias = conv.b.data();
    for (double& v : bias) v *= 0.1;
    conv.b.assign(bias);
    return conv;
}

SaliencyNet::SaliencyNet(SaliencyNetConfig cfg, RngState& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::size_t in_c = cfg_.in_channels;
    for (std::size_t out_c : cfg_.stage_channels) {
        encoder_.push_back(make_conv(out_c, in_c, {3, 3, 3}, rng));
        in_c = out_c;
    }
    bottleneck_ = make_conv(cfg_.bottleneck_channels, cfg_.stage_channels.back(), {3, 3, 3}, rng);
    attention_ = make_conv(cfg_.bottleneck_channels, cfg_.stage_channels.back(),
                           cfg_.attention_kernel, rng);
    std::size_t prev = cfg_.bottleneck_channels;
    for (std::size_t s = cfg_.stage_channels.size(); s-- > 0;) {
        const std::size_t skip_c = cfg_.skip_connections ? cfg_.stage_channels[s] : 0;
        decoder_.push_back(make_conv(cfg_.stage_channels[s], prev + skip_c, {3, 3, 3}, rng));
        prev = cfg_.stage_channels[s];
    }
    head_ = make_conv(1, cfg_.stage_channels.front(), {1, 1, 1}, rng);
}

std::pair<Tensor, std::vector<Tensor>> SaliencyNet::encode(const Tensor& aug_input) const {
    if (!aug_input.defined() || aug_input.rank() != 5)
        throw Error("encode: input must be [B,C,T,H,W]");
    if (aug_input.extent(1) != cfg_.in_channels)
        throw Error("encode: expected " + std::to_string(cfg_.in_channels) + " channels, got " +
                    std::to_string(aug_input.extent(1)));
    // Every stage halves H and W; the decoder upsamples back to the recorded
    // skip extents, so odd sizes round trip exactly. Inputs only need enough
    // room for each pooling window.
    const std::size_t factor = cfg_.spatial_factor();
    if (aug_input.extent(3) < factor || aug_input.extent(4) < factor)
        throw Error("encode: spatial extents " + shape_str(aug_input.shape()) +
                    " too small for cumulative pooling factor " + std::to_string(factor));
    Tensor x = aug_input;
    std::vector<Tensor> skips;
    for (const Conv& conv : encoder_) {
        Tensor a = relu(conv3d(x, conv.w, conv.b, {1, 1, 1}, {1, 1, 1}));
        skips.push_back(a);
        x = max_pool(a, {1, 2, 2}, {1, 2, 2});
    }
    return {x, skips};
}

std::pair<Tensor, Tensor> SaliencyNet::bottleneck_attention(const Tensor& z) const {
    const std::array<std::size_t, 3>& k = cfg_.attention_kernel;
    Tensor mask = sigmoid(conv3d(z, attention_.w, attention_.b, {1, 1, 1},
                                 {k[0] / 2, k[1] / 2, k[2] / 2}));
    Tensor features = relu(conv3d(z, bottleneck_.w, bottleneck_.b, {1, 1, 1}, {1, 1, 1}));
    return {mul(features, mask), mask};
}

Tensor SaliencyNet::decode(const Tensor& zp, const std::vector<Tensor>& skips) const {
    if (skips.size() != decoder_.size())
        throw Error("decode: got " + std::to_string(skips.size()) + " skips for " +
                    std::to_string(decoder_.size()) + " stages");
    Tensor x = zp;
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const Tensor& skip = skips[skips.size() - 1 - i];
        x = upsample_trilinear(x, skip.extent(2), skip.extent(3), skip.extent(4));
        if (cfg_.skip_connections) {
            if (skip.extent(0) != x.extent(0))
                throw Error("decode: skip batch extent mismatch");
            x = concat({x, skip}, 1);
        }
        x = relu(conv3d(x, decoder_[i].w, decoder_[i].b, {1, 1, 1}, {1, 1, 1}));
    }
    return sigmoid(conv3d(x, head_.w, head_.b));
}

Tensor SaliencyNet::forward(const Tensor& aug_input) const {
    auto [z, skips] = encode(aug_input);
    auto [zp, mask] = bottleneck_attention(z);
    (void)mask;
    return decode(zp, skips);
}

std::vector<Tensor> SaliencyNet::parameters() const {
    std::vector<Tensor> params;
    for (const auto& [name, t] : named_parameters()) params.push_back(t);
    return params;
}

std::vector<std::pair<std::string, Tensor>> SaliencyNet::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        out.emplace_back("sal.enc" + std::to_string(i) + ".w", encoder_[i].w);
        out.emplace_back("sal.enc" + std::to_string(i) + ".b", encoder_[i].b);
    }
    out.emplace_back("sal.bottleneck.w", bottleneck_.w);
    out.emplace_back("sal.bottleneck.b", bottleneck_.b);
    out.emplace_back("sal.attention.w", attention_.w);
    out.emplace_back("sal.attention.b", attention_.b);
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        out.emplace_back("sal.dec" + std::to_string(i) + ".w", decoder_[i].w);
        out.emplace_back("sal.dec" + std::to_string(i) + ".b", decoder_[i].b);
    }
    out.emplace_back("sal.head.w", head_.w);
    out.emplace_back("sal.head.b", head_.b);
    return out;
}

void SaliencyNet::load_parameters(const std::vector<std::pair<std::string, Tensor>>& named) {
    std::map<std::string, Tensor> lookup(named.begin(), named.end());
    for (auto& [name, tensor] : named_parameters()) {
        auto it = lookup.find(name);
        if (it == lookup.end()) throw Error("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape() != tensor.shape())
            throw Error("checkpoint: shape mismatch for '" + name + "'");
        tensor.assign(it->second.data());
    }
}

void SaliencyNet::freeze() {
    for (Tensor& p : parameters()) p.set_requires_grad(false);
}

SaliencyPipeline::SaliencyPipeline(std::size_t video_channels, std::size_t n_tokens,
                                   std::size_t token_dim, SaliencyNetConfig net_cfg, RngState& rng)
    : video_channels_(video_channels),
      tokens_(n_tokens > 0 ? std::optional<RegisterTokens>(init_tokens(n_tokens, token_dim, rng))
                           : std::nullopt),
      net_([&] {
          net_cfg.in_channels = video_channels + n_tokens;
          return SaliencyNet(net_cfg, rng);
      }()) {}

Tensor SaliencyPipeline::forward(const Tensor& video) const {
    if (!video.defined() || video.rank() != 4) throw Error("saliency forward: video must be [C,T,H,W]");
    if (video.extent(0) != video_channels_)
        throw Error("saliency forward: expected " + std::to_string(video_channels_) + " channels");
    Tensor aug = video;
    if (tokens_) {
        Tensor projected = project_tokens(*tokens_, video.extent(1), video.extent(2), video.extent(3));
        aug = augment_input(video, projected);
    }
    Tensor batched = reshape(aug, {1, aug.extent(0), aug.extent(1), aug.extent(2), aug.extent(3)});
    Tensor out = net_.forward(batched);  // [1,1,T,H,W]
    return reshape(out, {1, out.extent(2), out.extent(3), out.extent(4)});
}

SaliencyMap SaliencyPipeline::forward_clip(const Tensor& video) const {
    SaliencyMap map;
    map.values = forward(video);
    map.normalized = false;
    return map;
}

std::vector<Tensor> SaliencyPipeline::parameters() const {
    std::vector<Tensor> params;
    if (tokens_)
        for (const Tensor& t : tokens_->parameters()) params.push_back(t);
    for (const Tensor& t : net_.parameters()) params.push_back(t);
    return params;
}

std::vector<std::pair<std::string, Tensor>> SaliencyPipeline::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    if (tokens_)
        for (auto& p : tokens_->named_parameters()) out.push_back(p);
    for (auto& p : net_.named_parameters()) out.push_back(p);
    return out;
}

void SaliencyPipeline::load_parameters(const std::vector<std::pair<std::string, Tensor>>& named) {
    std::map<std::string, Tensor> lookup(named.begin(), named.end());
    for (auto& [name, tensor] : named_parameters()) {
        auto it = lookup.find(name);
        if (it == lookup.end()) throw Error("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape() != tensor.shape())
            throw Error("checkpoint: shape mismatch for '" + name + "'");
        tensor.assign(it->second.data());
    }
}

void SaliencyPipeline::freeze() {
    for (Tensor& p : parameters()) p.set_requires_grad(false);
}

SaliencyMap forward_saliency(const Tensor& video, const SaliencyPipeline& pipeline) {
    return pipeline.forward_clip(video);
}

}  // namespace dagr
