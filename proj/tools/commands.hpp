#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dagr/optim.hpp"
#include "dagr/saliency.hpp"
#include "dagr/stats.hpp"
#include "dagr/vqa.hpp"

namespace dagr::cli {

inline constexpr const char* kVersion = "dagr-0.1.0";

// Exit codes: 0 success, 1 usage, 2 runtime, 3 verification failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitVerification = 3;

/// Resolved run configuration: defaults < config file < flags, echoed to
/// <out>/config.json before the command runs.
struct RunConfig {
    std::string subcommand;
    std::string out_dir;
    nlohmann::json values;

    std::uint64_t seed() const { return values.at("seed").get<std::uint64_t>(); }
    double number(const std::string& key) const { return values.at(key).get<double>(); }
    std::size_t count(const std::string& key) const { return values.at(key).get<std::size_t>(); }
    std::string text(const std::string& key) const { return values.at(key).get<std::string>(); }
};

nlohmann::json default_config(const std::string& subcommand);
RunConfig resolve_config(const std::string& subcommand, const std::string& config_file,
                         const nlohmann::json& flag_overrides, const std::string& out_dir);

int cmd_train_saliency(const RunConfig& cfg);
int cmd_train_vqa(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_flops(const RunConfig& cfg);
int cmd_gradcheck(const RunConfig& cfg);
int cmd_synth(const RunConfig& cfg);
int cmd_sweep(const RunConfig& cfg);
int cmd_export_embeddings(const RunConfig& cfg);

int run_command(const RunConfig& cfg);

/// Minimal JSON-schema check (type/required/properties/items) for report files.
void validate_against_schema(const nlohmann::json& doc, const nlohmann::json& schema,
                             const std::string& where = "$");

// Checkpoint loading helpers shared by commands and tests.
SaliencyPipeline load_saliency_pipeline(const std::string& checkpoint_dir, bool freeze = true);
VQAModel load_vqa_model(const std::string& checkpoint_dir);
void save_saliency_checkpoint(const std::string& dir, const SaliencyPipeline& pipeline,
                              std::size_t n_tokens, std::size_t token_dim);
void save_vqa_checkpoint(const std::string& dir, const VQAModel& model);

struct GradCheckEntry {
    std::string name;
    double error = 0.0;
    double limit = 1e-4;
    bool ok() const { return error < limit; }
};

/// Finite-difference sweep over every differentiable op plus the three
/// composed micro-pipelines (saliency loss, quality loss, register tokens).
std::vector<GradCheckEntry> run_gradcheck_suite();

}  // namespace dagr::cli
