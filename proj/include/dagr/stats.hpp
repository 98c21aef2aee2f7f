#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dagr/data.hpp"
#include "dagr/saliency.hpp"

namespace dagr {

struct PairedSamples {
    std::vector<double> a, b;
    void validate() const {
        if (a.size() != b.size()) throw Error("paired samples: length mismatch");
        if (a.size() < 2) throw Error("paired samples: need at least 2 pairs");
    }
};

/// Midranks (ties averaged), 1-based.
std::vector<double> midranks(const std::vector<double>& values);

double pearson(const std::vector<double>& x, const std::vector<double>& y);
/// Spearman rank correlation with midrank ties.
double srcc(const std::vector<double>& pred, const std::vector<double>& truth);
/// Raw Pearson linear correlation (no nonlinear fitting).
double plcc(const std::vector<double>& pred, const std::vector<double>& truth);

/// Two-sided p-value, t distribution with n-1 degrees of freedom.
double paired_t_test(const PairedSamples& samples);

/// Two-sided p-value; exact sign-pattern enumeration for n <= 15 after
/// dropping zero differences, normal approximation with continuity correction
/// otherwise. exposed split paths back the cross-check tests.
double wilcoxon_signed_rank(const PairedSamples& samples);
double wilcoxon_exact_p(const std::vector<double>& diffs);
double wilcoxon_normal_p(const std::vector<double>& diffs);

double student_t_two_sided_p(double t, double dof);

// ---- analytic cost models -------------------------------------------------
//
// Counting convention: one multiply-add = 2 FLOPs; convolutions cost
// 2*k*C_in*C_out per output element; attention costs 2*(QK + AV) matmuls.
// Each surrogate folds its reference widths/depths into fixed coefficients
// calibrated at the published operating points; the feature dimension d
// enters every term linearly.

enum class CostModel { dagr, vivit, fastvqa, fastvqa_m };

std::string to_string(CostModel model);
CostModel cost_model_from_string(const std::string& name);

struct CostModelConfig {
    std::size_t frames = 8;             // T
    std::size_t tokens_per_frame = 0;   // N (pixels or patch grid, per model)
    std::size_t feature_dim = 0;        // d
    std::size_t fragments = 7;          // G_f (grid-sampling models)

    void validate() const;
};

CostModelConfig default_cost_config(CostModel model);
double flops_estimate_gflops(CostModel model, const CostModelConfig& cfg);
std::vector<std::pair<std::string, double>> flops_table();

// ---- experiment harness ----------------------------------------------------

struct Fold {
    std::vector<std::string> train, test;
};

std::vector<Fold> kfold_split(const std::vector<std::string>& ids, std::size_t k,
                              std::uint64_t seed);
/// Cross-dataset protocol: every fold trains on a different (k-1)/k subsample
/// of dataset A and tests on all of dataset B.
std::vector<Fold> cross_dataset_folds(const std::vector<std::string>& train_ids,
                                      const std::vector<std::string>& test_ids, std::size_t k,
                                      std::uint64_t seed);

enum class AblationAxis { token_count, alpha, components };

struct AblationRow {
    std::string config;
    double srcc = 0.0;
    double plcc = 0.0;
};

/// Runner maps a config key ("n_tok=4", "alpha=0.25", "full", ...) to
/// (SRCC, PLCC); failures propagate with the config attached.
std::vector<AblationRow> sweep_ablation(
    AblationAxis axis, const std::vector<double>& alpha_grid,
    const std::function<std::pair<double, double>(const std::string&)>& runner);

/// Per-token readout rows (N x d): token embedding plus the clip's mean
/// first-stage activation scaled by that token's projected field value.
std::vector<std::vector<double>> register_token_rows(const SaliencyPipeline& pipeline,
                                                     const VideoClip& clip);
/// Mean over the token rows: one d-dimensional embedding per video.
std::vector<double> export_register_embedding(const SaliencyPipeline& pipeline,
                                              const VideoClip& clip);

}  // namespace dagr
