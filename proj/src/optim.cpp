#include "dagr/optim.hpp"

#include <cmath>

#include "dagr/ops.hpp"

namespace dagr {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw Error("adam: learning rate must be > 0");
    for (const Tensor& p : params_) {
        if (!p.requires_grad()) throw Error("adam: parameter does not require grad");
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        const auto& g = p.grad();
        std::vector<double> values = p.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            m_[pi][i] = cfg_.beta1 * m_[pi][i] + (1.0 - cfg_.beta1) * g[i];
            v_[pi][i] = cfg_.beta2 * v_[pi][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m_[pi][i] / bc1;
            const double vhat = v_[pi][i] / bc2;
            values[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        p.assign(values);
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

double cosine_annealed_lr(double base_lr, std::size_t step, std::size_t total_steps,
                          double min_lr) {
    if (total_steps == 0) return base_lr;
    const double f = static_cast<double>(std::min(step, total_steps)) /
                     static_cast<double>(total_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(3.14159265358979323846 * f));
}

SaliencyTrainResult train_saliency(const std::vector<SaliencySample>& data,
                                   const SaliencyTrainConfig& cfg) {
    if (data.empty()) throw Error("train_saliency: empty dataset");
    if (cfg.batch_size < 1) throw Error("train_saliency: batch size must be >= 1");
    for (const SaliencySample& s : data) validate_clip(s.clip);

    RngState rng(cfg.seed);
    SaliencyNetConfig net_cfg = cfg.net;
    SaliencyTrainResult result{
        SaliencyPipeline(data.front().clip.frames.extent(0), cfg.n_tokens, cfg.token_dim,
                         net_cfg, rng),
        {}};
    SaliencyPipeline& pipeline = result.pipeline;

    Adam opt(pipeline.parameters(), {cfg.lr, 0.9, 0.999, 1e-8});
    SaliencyLossConfig loss_cfg{cfg.gamma, 1e-8};

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochLoss ep;
        std::size_t clip_count = 0;
        for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(start + cfg.batch_size, data.size());
            opt.zero_grad();
            Tensor batch_loss = Tensor::scalar(0.0);
            for (std::size_t i = start; i < stop; ++i) {
                SaliencyMap truth = make_saliency_map(data[i].saliency);
                SaliencyMap pred = pipeline.forward_clip(data[i].clip.frames);
                Tensor loss;
                try {
                    loss = saliency_loss(truth, pred, loss_cfg);
                } catch (const Error& e) {
                    throw Error("train_saliency: epoch " + std::to_string(epoch) + ", clip '" +
                                data[i].clip.source_id + "': " + e.what() +
                                " (prediction degenerated; a lower learning rate usually fixes this)");
                }
                batch_loss = add(batch_loss, loss);
                const double total = loss.value();
                const double cc = cc_loss(truth, pred).value();
                ep.cc += cc;
                ep.kl += cfg.gamma > 0.0 ? (total - cc) / cfg.gamma : 0.0;
                ep.total += total;
                ++clip_count;
            }
            backward(scale(batch_loss, 1.0 / static_cast<double>(stop - start)));
            opt.step();
        }
        ep.kl /= static_cast<double>(clip_count);
        ep.cc /= static_cast<double>(clip_count);
        ep.total /= static_cast<double>(clip_count);
        result.curve.push_back(ep);
    }
    return result;
}

namespace {

std::vector<Tensor> precompute_saliency(const std::vector<VideoClip>& clips,
                                        const SaliencyPipeline* saliency, bool needed) {
    std::vector<Tensor> maps;
    if (!needed) return maps;
    if (!saliency) throw Error("train_vqa: configuration fuses saliency but no model was given");
    maps.reserve(clips.size());
    for (const VideoClip& clip : clips)
        maps.push_back(saliency_maps_for_clip(clip.frames, *saliency));
    return maps;
}

}  // namespace

VQATrainResult train_vqa(const std::vector<VideoClip>& clips, const SaliencyPipeline* saliency,
                         const VQATrainConfig& cfg) {
    if (clips.empty()) throw Error("train_vqa: empty dataset");
    if (cfg.batch_size < 1) throw Error("train_vqa: batch size must be >= 1");
    std::vector<double> mos;
    for (const VideoClip& clip : clips) {
        validate_clip(clip);
        if (!clip.mos) throw Error("train_vqa: clip '" + clip.source_id + "' has no MOS label");
        mos.push_back(*clip.mos);
    }

    RngState rng(cfg.seed);
    VQATrainResult result{VQAModel(cfg.model, rng), {}, {}};
    VQAModel& model = result.model;

    const bool fuse = model.uses_saliency();
    const std::vector<Tensor> maps = precompute_saliency(clips, saliency, fuse);

    Adam opt(model.parameters(), {cfg.lr, 0.9, 0.999, 1e-8});
    VQALossConfig loss_cfg{cfg.beta, cfg.rank_temperature};

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.cosine_schedule) opt.set_lr(cosine_annealed_lr(cfg.lr, epoch, cfg.epochs));
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < clips.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(start + cfg.batch_size, clips.size());
            opt.zero_grad();
            std::vector<Tensor> preds;
            std::vector<double> truth;
            for (std::size_t i = start; i < stop; ++i) {
                preds.push_back(model.predict(clips[i].frames, fuse ? &maps[i] : nullptr));
                truth.push_back(mos[i]);
            }
            Tensor pred_vec = stack_scalars(preds);
            Tensor truth_vec = Tensor::from_data({truth.size()}, truth);
            Tensor loss;
            try {
                loss = vqa_loss(pred_vec, truth_vec, loss_cfg);
            } catch (const Error& e) {
                throw Error("train_vqa: epoch " + std::to_string(epoch) + ": " + e.what() +
                            " (predictions degenerated; a lower learning rate usually fixes this)");
            }
            backward(loss);
            opt.step();
            epoch_loss += loss.value();
            ++batches;
        }
        result.loss_curve.push_back(epoch_loss / static_cast<double>(batches));
    }

    const std::vector<double> final_preds = predict_mos(model, saliency, clips);
    for (std::size_t i = 0; i < clips.size(); ++i)
        result.predictions.emplace_back(clips[i].source_id, final_preds[i]);
    return result;
}

std::vector<double> predict_mos(const VQAModel& model, const SaliencyPipeline* saliency,
                                const std::vector<VideoClip>& clips) {
    const bool fuse = model.uses_saliency();
    if (fuse && !saliency) throw Error("predict_mos: saliency model required");
    std::vector<double> out;
    out.reserve(clips.size());
    for (const VideoClip& clip : clips) {
        Tensor map;
        if (fuse) map = saliency_maps_for_clip(clip.frames, *saliency);
        out.push_back(model.predict(clip.frames, fuse ? &map : nullptr).value());
    }
    return out;
}

}  // namespace dagr
