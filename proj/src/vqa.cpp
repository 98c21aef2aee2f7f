#include "dagr/vqa.hpp"

#include <cmath>
#include <map>

#include "dagr/ops.hpp"

namespace dagr {

namespace {

Tensor row_mean(const Tensor& m) {
    return scale(sum_axis(m, 0), 1.0 / static_cast<double>(m.extent(0)));
}

Tensor pearson_vec(const Tensor& x, const Tensor& y) {
    Tensor dx = sub(x, mean(x));
    Tensor dy = sub(y, mean(y));
    Tensor cov = sum(mul(dx, dy));
    return div(cov, mul(sqrt(sum(mul(dx, dx))), sqrt(sum(mul(dy, dy)))));
}

Tensor scaled_randn(Shape shape, double s, RngState& rng) {
    Tensor t = Tensor::randn(std::move(shape), rng, true);
    std::vector<double> v = t.data();
    for (double& e : v) e *= s;
    t.assign(v);
    return t;
}

}  // namespace

Tensor fuse_frame(const Tensor& frame, const Tensor& saliency, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw Error("fuse_frame: alpha must lie in [0,1]");
    if (!frame.defined() || frame.rank() != 3) throw Error("fuse_frame: frame must be [C,H,W]");
    if (alpha == 0.0) return frame;
    if (!saliency.defined() || saliency.rank() != 3 || saliency.extent(0) != 1)
        throw Error("fuse_frame: saliency must be [1,H,W]");
    if (saliency.extent(1) != frame.extent(1) || saliency.extent(2) != frame.extent(2))
        throw Error("fuse_frame: extent mismatch, frame " + shape_str(frame.shape()) +
                    " saliency " + shape_str(saliency.shape()));
    Tensor weighted = mul(frame, saliency);
    if (alpha == 1.0) return weighted;
    return add(scale(frame, 1.0 - alpha), scale(weighted, alpha));
}

void SpatialEncoderConfig::validate() const {
    if (in_channels < 1) throw Error("spatial config: in_channels must be >= 1");
    if (stage_channels.size() < 2) throw Error("spatial config: depth must be >= 2");
    if (feature_dim < 8) throw Error("spatial config: feature_dim must be >= 8");
    if (feature_dim != stage_channels.back())
        throw Error("spatial config: feature_dim must equal the last stage width");
}

SpatialEncoder::Conv SpatialEncoder::make_conv(std::size_t out_c, std::size_t in_c, std::size_t k,
                                               RngState& rng) {
    const double s = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
    Conv conv;
    conv.w = scaled_randn({out_c, in_c, k, k}, s, rng);
    conv.b = scaled_randn({out_c}, 0.1, rng);  // off the relu kink
    return conv;
}

SpatialEncoder::SpatialEncoder(SpatialEncoderConfig cfg, RngState& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    initial_ = make_conv(cfg_.stage_channels[0], cfg_.in_channels, 3, rng);
    std::size_t in_c = cfg_.stage_channels[0];
    for (std::size_t out_c : cfg_.stage_channels) {
        Stage stage;
        stage.c1 = make_conv(out_c, in_c, 3, rng);
        stage.c2 = make_conv(out_c, out_c, 3, rng);
        stage.has_proj = in_c != out_c;
        if (stage.has_proj) stage.proj = make_conv(out_c, in_c, 1, rng);
        stages_.push_back(std::move(stage));
        in_c = out_c;
    }
}

Tensor SpatialEncoder::forward(const Tensor& frame) const {
    if (!frame.defined() || frame.rank() != 3)
        throw Error("spatial encoder: frame must be [C,H,W]");
    if (frame.extent(0) != cfg_.in_channels)
        throw Error("spatial encoder: expected " + std::to_string(cfg_.in_channels) + " channels");
    Tensor x = reshape(frame, {1, frame.extent(0), frame.extent(1), frame.extent(2)});
    x = relu(conv2d(x, initial_.w, initial_.b, {1, 1}, {1, 1}));
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        if (i > 0) x = max_pool(x, {2, 2}, {2, 2});
        const Stage& stage = stages_[i];
        Tensor shortcut = stage.has_proj ? conv2d(x, stage.proj.w, stage.proj.b) : x;
        Tensor y = relu(conv2d(x, stage.c1.w, stage.c1.b, {1, 1}, {1, 1}));
        y = conv2d(y, stage.c2.w, stage.c2.b, {1, 1}, {1, 1});
        x = relu(add(y, shortcut));
    }
    Tensor pooled = global_avg_pool(x, 2);  // [1, d_f, 1, 1]
    return reshape(pooled, {cfg_.feature_dim});
}

std::vector<std::pair<std::string, Tensor>> SpatialEncoder::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("spatial.init.w", initial_.w);
    out.emplace_back("spatial.init.b", initial_.b);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        const std::string p = "spatial.s" + std::to_string(i) + ".";
        out.emplace_back(p + "c1.w", stages_[i].c1.w);
        out.emplace_back(p + "c1.b", stages_[i].c1.b);
        out.emplace_back(p + "c2.w", stages_[i].c2.w);
        out.emplace_back(p + "c2.b", stages_[i].c2.b);
        if (stages_[i].has_proj) {
            out.emplace_back(p + "proj.w", stages_[i].proj.w);
            out.emplace_back(p + "proj.b", stages_[i].proj.b);
        }
    }
    return out;
}

Tensor positional_encoding(std::size_t t, std::size_t d) {
    if (d == 0) throw Error("positional_encoding: dimension must be >= 1");
    std::vector<double> values(d);
    for (std::size_t i = 0; 2 * i < d; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(d));
        const double angle = static_cast<double>(t) * freq;
        values[2 * i] = std::sin(angle);
        if (2 * i + 1 < d) values[2 * i + 1] = std::cos(angle);
    }
    return Tensor::from_data({d}, std::move(values));
}

Tensor positional_encoding_matrix(std::size_t frames, std::size_t d) {
    std::vector<Tensor> rows;
    rows.reserve(frames);
    for (std::size_t t = 0; t < frames; ++t) rows.push_back(positional_encoding(t, d));
    return stack_rows(rows);
}

void TemporalEncoderConfig::validate() const {
    if (layers < 1) throw Error("temporal config: layers must be >= 1");
    if (heads < 1) throw Error("temporal config: heads must be >= 1");
    if (d_f % heads != 0) throw Error("temporal config: d_f must be divisible by heads");
    if (ffn_dim < 1) throw Error("temporal config: ffn_dim must be >= 1");
    if (eps < 0.0) throw Error("temporal config: eps must be >= 0");
}

TemporalEncoder::TemporalEncoder(TemporalEncoderConfig cfg, RngState& rng) : cfg_(cfg) {
    cfg_.validate();
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.d_f));
    const double sf = 1.0 / std::sqrt(static_cast<double>(cfg_.ffn_dim));
    for (std::size_t i = 0; i < cfg_.layers; ++i) {
        Layer layer;
        layer.wq = scaled_randn({cfg_.d_f, cfg_.d_f}, s, rng);
        layer.bq = Tensor::zeros({cfg_.d_f}, true);
        layer.wk = scaled_randn({cfg_.d_f, cfg_.d_f}, s, rng);
        layer.bk = Tensor::zeros({cfg_.d_f}, true);
        layer.wv = scaled_randn({cfg_.d_f, cfg_.d_f}, s, rng);
        layer.bv = Tensor::zeros({cfg_.d_f}, true);
        layer.wo = scaled_randn({cfg_.d_f, cfg_.d_f}, s, rng);
        layer.bo = Tensor::zeros({cfg_.d_f}, true);
        layer.ffn_w1 = scaled_randn({cfg_.d_f, cfg_.ffn_dim}, s, rng);
        layer.ffn_b1 = Tensor::zeros({cfg_.ffn_dim}, true);
        layer.ffn_w2 = scaled_randn({cfg_.ffn_dim, cfg_.d_f}, sf, rng);
        layer.ffn_b2 = Tensor::zeros({cfg_.d_f}, true);
        layers_.push_back(std::move(layer));
    }
}

Tensor TemporalEncoder::forward(const Tensor& x) const {
    if (!x.defined() || x.rank() != 2 || x.extent(1) != cfg_.d_f)
        throw Error("temporal encoder: input must be [T," + std::to_string(cfg_.d_f) + "]");
    const std::size_t dh = cfg_.d_f / cfg_.heads;
    Tensor h = x;
    for (const Layer& layer : layers_) {
        Tensor q = linear(h, layer.wq, layer.bq);
        Tensor k = linear(h, layer.wk, layer.bk);
        Tensor v = linear(h, layer.wv, layer.bv);
        std::vector<Tensor> heads;
        heads.reserve(cfg_.heads);
        for (std::size_t hd = 0; hd < cfg_.heads; ++hd) {
            Tensor qh = slice(q, 1, hd * dh, (hd + 1) * dh);
            Tensor kh = slice(k, 1, hd * dh, (hd + 1) * dh);
            Tensor vh = slice(v, 1, hd * dh, (hd + 1) * dh);
            Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
            heads.push_back(matmul(softmax(scores, 1), vh));
        }
        Tensor attended = linear(concat(heads, 1), layer.wo, layer.bo);
        Tensor z = add(attended, h);
        Tensor f = linear(relu(linear(z, layer.ffn_w1, layer.ffn_b1)), layer.ffn_w2, layer.ffn_b2);
        h = layernorm(add(f, z), 1, cfg_.eps);
    }
    return h;
}

std::vector<std::pair<std::string, Tensor>> TemporalEncoder::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string p = "temporal.l" + std::to_string(i) + ".";
        const Layer& l = layers_[i];
        out.emplace_back(p + "wq", l.wq);
        out.emplace_back(p + "bq", l.bq);
        out.emplace_back(p + "wk", l.wk);
        out.emplace_back(p + "bk", l.bk);
        out.emplace_back(p + "wv", l.wv);
        out.emplace_back(p + "bv", l.bv);
        out.emplace_back(p + "wo", l.wo);
        out.emplace_back(p + "bo", l.bo);
        out.emplace_back(p + "ffn_w1", l.ffn_w1);
        out.emplace_back(p + "ffn_b1", l.ffn_b1);
        out.emplace_back(p + "ffn_w2", l.ffn_w2);
        out.emplace_back(p + "ffn_b2", l.ffn_b2);
    }
    return out;
}

QualityRegressor::QualityRegressor(std::size_t in_dim, RngState& rng) {
    if (in_dim < 1) throw Error("regressor: input dimension must be >= 1");
    w = scaled_randn({in_dim, 1}, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
    b = Tensor::zeros({1}, true);
}

Tensor QualityRegressor::forward(const Tensor& features) const {
    if (!features.defined() || features.rank() != 1 || features.extent(0) != w.extent(0))
        throw Error("regressor: expected [" + std::to_string(w.extent(0)) + "] features");
    return reshape(linear(features, w, b), {});
}

Tensor predict_quality(const Tensor& spatial_feats, const Tensor& temporal_feats,
                       const QualityRegressor& regressor) {
    if (!spatial_feats.defined() || !temporal_feats.defined() || spatial_feats.rank() != 2 ||
        temporal_feats.rank() != 2 || spatial_feats.shape() != temporal_feats.shape())
        throw Error("predict_quality: feature matrices must both be [T,d]");
    if (spatial_feats.extent(0) == 0) throw Error("predict_quality: empty sequence");
    Tensor y_s = row_mean(spatial_feats);
    Tensor y_t = row_mean(temporal_feats);
    return regressor.forward(concat({y_s, y_t}, 0));
}

Tensor soft_rank(const Tensor& x, double temperature) {
    if (temperature <= 0.0) throw Error("soft_rank: temperature must be > 0");
    if (!x.defined() || x.rank() != 1) throw Error("soft_rank: input must be 1-D");
    const std::size_t n = x.extent(0);
    Tensor diff = sub(reshape(x, {n, 1}), reshape(x, {1, n}));
    return sum_axis(sigmoid(scale(diff, 1.0 / temperature)), 1);
}

Tensor vqa_loss(const Tensor& pred, const Tensor& truth, const VQALossConfig& cfg,
                bool* corr_skipped) {
    cfg.validate();
    if (!pred.defined() || pred.rank() != 1) throw Error("vqa_loss: predictions must be 1-D");
    if (!truth.defined() || truth.shape() != pred.shape())
        throw Error("vqa_loss: prediction/label shape mismatch");
    if (pred.extent(0) == 0) throw Error("vqa_loss: empty batch");
    if (corr_skipped) *corr_skipped = false;
    Tensor l1 = mean(abs(sub(pred, truth)));
    if (cfg.beta == 0.0) return l1;
    if (pred.extent(0) < 2) {
        if (corr_skipped) *corr_skipped = true;
        return l1;
    }
    // Identical vectors sit at the correlation term's stationary maximum;
    // contribute an exact zero there instead of 1 - rho's rounding residue.
    if (pred.data() == truth.data()) return l1;
    Tensor rho = pearson_vec(soft_rank(pred, cfg.rank_temperature),
                             soft_rank(truth, cfg.rank_temperature));
    return add(l1, scale(sub(Tensor::scalar(1.0), rho), cfg.beta));
}

std::string to_string(VQAComponents c) {
    switch (c) {
        case VQAComponents::full: return "full";
        case VQAComponents::spatial_only: return "spatial_only";
        case VQAComponents::temporal_only: return "temporal_only";
        case VQAComponents::spatial_saliency: return "spatial_saliency";
    }
    throw Error("vqa components: bad enum value");
}

VQAComponents vqa_components_from_string(const std::string& s) {
    if (s == "full") return VQAComponents::full;
    if (s == "spatial_only") return VQAComponents::spatial_only;
    if (s == "temporal_only") return VQAComponents::temporal_only;
    if (s == "spatial_saliency") return VQAComponents::spatial_saliency;
    throw Error("vqa components: unknown configuration '" + s + "'");
}

void VQAModelConfig::validate() const {
    spatial.validate();
    temporal.validate();
    fusion.validate();
    if (temporal.d_f != spatial.feature_dim)
        throw Error("vqa config: temporal d_f must equal spatial feature_dim");
}

VQAModel::VQAModel(VQAModelConfig cfg, RngState& rng)
    : cfg_([&] {
          cfg.validate();
          return cfg;
      }()),
      spatial_(cfg_.spatial, rng),
      temporal_(cfg_.temporal, rng),
      regressor_(cfg_.components == VQAComponents::full ? 2 * cfg_.spatial.feature_dim
                                                        : cfg_.spatial.feature_dim,
                 rng) {}

bool VQAModel::uses_saliency() const {
    return (cfg_.components == VQAComponents::full ||
            cfg_.components == VQAComponents::spatial_saliency) &&
           cfg_.fusion.alpha > 0.0;
}

bool VQAModel::uses_temporal() const {
    return cfg_.components == VQAComponents::full ||
           cfg_.components == VQAComponents::temporal_only;
}

bool VQAModel::uses_spatial_stream() const {
    return cfg_.components != VQAComponents::temporal_only;
}

Tensor VQAModel::predict(const Tensor& frames, const Tensor* saliency_maps) const {
    if (!frames.defined() || frames.rank() != 4)
        throw Error("vqa predict: frames must be [C,T,H,W]");
    const std::size_t T = frames.extent(1);
    if (T == 0) throw Error("vqa predict: empty clip");
    const bool fuse = uses_saliency();
    if (fuse && saliency_maps == nullptr)
        throw Error("vqa predict: saliency maps required for this configuration");
    if (fuse && (saliency_maps->rank() != 4 || saliency_maps->extent(1) != T))
        throw Error("vqa predict: saliency map extents do not match clip");

    std::vector<Tensor> feats;
    feats.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor frame = reshape(slice(frames, 1, t, t + 1),
                               {frames.extent(0), frames.extent(2), frames.extent(3)});
        if (fuse) {
            Tensor sal = reshape(slice(*saliency_maps, 1, t, t + 1),
                                 {1, saliency_maps->extent(2), saliency_maps->extent(3)});
            frame = fuse_frame(frame, sal, cfg_.fusion.alpha);
        }
        feats.push_back(spatial_.forward(frame));
    }
    Tensor features = stack_rows(feats);  // [T, d_f]

    switch (cfg_.components) {
        case VQAComponents::spatial_only:
        case VQAComponents::spatial_saliency:
            return regressor_.forward(row_mean(features));
        case VQAComponents::temporal_only: {
            Tensor encoded = temporal_.forward(
                add(features, positional_encoding_matrix(T, cfg_.temporal.d_f)));
            return regressor_.forward(row_mean(encoded));
        }
        case VQAComponents::full: {
            Tensor encoded = temporal_.forward(
                add(features, positional_encoding_matrix(T, cfg_.temporal.d_f)));
            return predict_quality(features, encoded, regressor_);
        }
    }
    throw Error("vqa predict: bad components enum");
}

std::vector<Tensor> VQAModel::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor>> VQAModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : spatial_.named_parameters()) out.emplace_back("vqa." + name, t);
    if (uses_temporal())
        for (const auto& [name, t] : temporal_.named_parameters()) out.emplace_back("vqa." + name, t);
    out.emplace_back("vqa.regressor.w", regressor_.w);
    out.emplace_back("vqa.regressor.b", regressor_.b);
    return out;
}

void VQAModel::load_parameters(const std::vector<std::pair<std::string, Tensor>>& named) {
    std::map<std::string, Tensor> lookup(named.begin(), named.end());
    for (auto& [name, tensor] : named_parameters()) {
        auto it = lookup.find(name);
        if (it == lookup.end()) throw Error("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape() != tensor.shape())
            throw Error("checkpoint: shape mismatch for '" + name + "'");
        tensor.assign(it->second.data());
    }
}

std::vector<SaliencyMap> infer_saliency_for_vqa(const Tensor& frames,
                                                const SaliencyPipeline& pipeline) {
    if (!frames.defined() || frames.rank() != 4)
        throw Error("infer_saliency_for_vqa: frames must be [C,T,H,W]");
    // Sampled frames are equidistant, not adjacent, so each one runs through
    // the network as its own single-frame volume.
    const std::size_t T = frames.extent(1);
    std::vector<SaliencyMap> out;
    out.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor frame = slice(frames, 1, t, t + 1);  // [C,1,H,W]
        SaliencyMap map;
        map.values = pipeline.forward(frame).detached();
        map.normalized = false;
        out.push_back(std::move(map));
    }
    return out;
}

Tensor saliency_maps_for_clip(const Tensor& frames, const SaliencyPipeline& pipeline) {
    std::vector<Tensor> maps;
    for (const SaliencyMap& map : infer_saliency_for_vqa(frames, pipeline))
        maps.push_back(map.values);
    return concat(maps, 1);
}

}  // namespace dagr
