#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dagr/data.hpp"
#include "dagr/objectives.hpp"
#include "dagr/saliency.hpp"
#include "dagr/vqa.hpp"

namespace dagr {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    void step();
    void zero_grad();

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    std::size_t t_ = 0;
};

/// Cosine annealing from base_lr to min_lr over total_steps.
double cosine_annealed_lr(double base_lr, std::size_t step, std::size_t total_steps,
                          double min_lr = 0.0);

struct SaliencyTrainConfig {
    std::uint64_t seed = 0;
    std::size_t epochs = 500;
    std::size_t batch_size = 4;
    double lr = 5e-3;
    double gamma = 0.01;
    std::size_t n_tokens = 4;
    std::size_t token_dim = 8;
    SaliencyNetConfig net{3, {16, 32}, 64, {1, 1, 1}, true};
};

struct EpochLoss {
    double kl = 0.0;
    double cc = 0.0;
    double total = 0.0;
};

struct SaliencyTrainResult {
    SaliencyPipeline pipeline;
    std::vector<EpochLoss> curve;
};

SaliencyTrainResult train_saliency(const std::vector<SaliencySample>& data,
                                   const SaliencyTrainConfig& cfg);

struct VQATrainConfig {
    std::uint64_t seed = 0;
    std::size_t epochs = 300;
    std::size_t batch_size = 5;
    double lr = 1e-5;
    double beta = 0.1;
    double rank_temperature = 0.5;
    bool cosine_schedule = true;
    VQAModelConfig model;
};

struct VQATrainResult {
    VQAModel model;
    std::vector<double> loss_curve;                           // per epoch
    std::vector<std::pair<std::string, double>> predictions;  // training-set id -> prediction
};

/// Trains the quality head on labeled clips against a frozen saliency model
/// (may be null when the configuration does not fuse saliency).
VQATrainResult train_vqa(const std::vector<VideoClip>& clips, const SaliencyPipeline* saliency,
                         const VQATrainConfig& cfg);

/// Frozen-model predictions in clip order.
std::vector<double> predict_mos(const VQAModel& model, const SaliencyPipeline* saliency,
                                const std::vector<VideoClip>& clips);

}  // namespace dagr
