#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "commands.hpp"
#include "dagr/serialize.hpp"

namespace {

using dagr::cli::RunConfig;
using nlohmann::json;

struct FlagSpec {
    CLI::App* app = nullptr;
    std::string config_file;
    std::string out_dir;

    // typed staging for every known override; only flags the user passed are
    // copied into the override set, so precedence stays flags > file > defaults
    std::map<std::string, std::string> strings;
    std::map<std::string, std::uint64_t> counts;
    std::map<std::string, double> numbers;
    std::map<std::string, bool> bools;
    std::map<std::string, std::vector<std::size_t>> size_lists;
    std::map<std::string, std::vector<double>> num_lists;
};

void add_common(FlagSpec& spec) {
    spec.app->add_option("--config", spec.config_file, "JSON config file (flags override it)");
    spec.app->add_option("--out", spec.out_dir, "output run directory (default runs/<timestamp>-<seed>)");
    spec.app->add_option("--seed", spec.counts["seed"], "run seed (mandatory for reproducibility)")
        ->required();
}

void add_string(FlagSpec& spec, const std::string& flag, const std::string& key,
                const std::string& help) {
    spec.app->add_option(flag, spec.strings[key], help);
}
void add_count(FlagSpec& spec, const std::string& flag, const std::string& key,
               const std::string& help) {
    spec.app->add_option(flag, spec.counts[key], help);
}
void add_number(FlagSpec& spec, const std::string& flag, const std::string& key,
                const std::string& help) {
    spec.app->add_option(flag, spec.numbers[key], help);
}
void add_bool(FlagSpec& spec, const std::string& flag, const std::string& key,
              const std::string& help) {
    spec.app->add_option(flag, spec.bools[key], help);
}
void add_size_list(FlagSpec& spec, const std::string& flag, const std::string& key,
                   const std::string& help) {
    spec.app->add_option(flag, spec.size_lists[key], help)->delimiter(',');
}
void add_num_list(FlagSpec& spec, const std::string& flag, const std::string& key,
                  const std::string& help) {
    spec.app->add_option(flag, spec.num_lists[key], help)->delimiter(',');
}

json collect_overrides(const FlagSpec& spec) {
    // Option names map 1:1 onto config keys with '-' standing in for '_'.
    json overrides;
    auto harvest = [&](const auto& staged) {
        for (const auto& [key, value] : staged) {
            std::string flag = key;
            for (char& c : flag)
                if (c == '_') c = '-';
            if (spec.app->count("--" + flag)) overrides[key] = value;
        }
    };
    harvest(spec.strings);
    harvest(spec.counts);
    harvest(spec.numbers);
    harvest(spec.bools);
    harvest(spec.size_lists);
    harvest(spec.num_lists);
    return overrides;
}

void configure_subcommand(FlagSpec& spec, const std::string& name) {
    add_common(spec);
    if (name == "train-saliency") {
        add_string(spec, "--dataset", "dataset", "dataset directory");
        add_count(spec, "--epochs", "epochs", "training epochs");
        add_count(spec, "--batch", "batch", "batch size");
        add_number(spec, "--lr", "lr", "learning rate");
        add_number(spec, "--gamma", "gamma", "KL loss weight");
        add_count(spec, "--n-tokens", "n_tokens", "register token count");
        add_count(spec, "--token-dim", "token_dim", "register token dimension");
        add_size_list(spec, "--stages", "stages", "encoder stage channels");
        add_count(spec, "--bottleneck", "bottleneck", "bottleneck channels");
    } else if (name == "train-vqa") {
        add_string(spec, "--dataset", "dataset", "dataset directory");
        add_string(spec, "--saliency-checkpoint", "saliency_checkpoint", "frozen saliency model");
        add_count(spec, "--epochs", "epochs", "training epochs");
        add_count(spec, "--batch", "batch", "batch size");
        add_number(spec, "--lr", "lr", "learning rate");
        add_number(spec, "--alpha", "alpha", "saliency fusion weight");
        add_number(spec, "--beta", "beta", "rank loss weight");
        add_number(spec, "--temperature", "temperature", "soft rank temperature");
        add_bool(spec, "--cosine", "cosine", "cosine annealing schedule");
        add_string(spec, "--components", "components", "full/spatial_only/temporal_only/spatial_saliency");
        add_string(spec, "--split", "split", "training split (train/val/test/all)");
        add_size_list(spec, "--spatial-stages", "spatial_stages", "spatial stage channels");
        add_count(spec, "--layers", "layers", "temporal encoder layers");
        add_count(spec, "--heads", "heads", "attention heads");
        add_count(spec, "--ffn-dim", "ffn_dim", "feed-forward width");
    } else if (name == "eval") {
        add_string(spec, "--dataset", "dataset", "dataset directory");
        add_string(spec, "--saliency-checkpoint", "saliency_checkpoint", "saliency checkpoint");
        add_string(spec, "--vqa-checkpoint", "vqa_checkpoint", "VQA checkpoint");
        add_string(spec, "--split", "split", "evaluation split");
        add_number(spec, "--alpha", "alpha", "fusion weight override");
        add_string(spec, "--compare", "compare", "predictions CSV for paired tests");
    } else if (name == "synth") {
        add_count(spec, "--num-videos", "num_videos", "videos per subset");
        add_count(spec, "--frames", "frames", "frames per saliency clip");
        add_count(spec, "--vqa-frames", "vqa_frames", "frames per labeled clip");
        add_count(spec, "--height", "height", "frame height");
        add_count(spec, "--width", "width", "frame width");
        add_count(spec, "--source-length", "source_length", "source timeline length");
        add_number(spec, "--sigma-frac", "sigma_frac", "blob stddev fraction");
        add_number(spec, "--noise-min", "noise_min", "lowest noise grade");
        add_number(spec, "--noise-max", "noise_max", "highest noise grade");
    } else if (name == "sweep") {
        add_string(spec, "--axis", "axis", "n-tokens / alpha / components");
        add_num_list(spec, "--alpha-grid", "alpha_grid", "alpha sweep grid");
        add_count(spec, "--num-videos", "num_videos", "videos per subset");
        add_count(spec, "--frames", "frames", "frames per saliency clip");
        add_count(spec, "--vqa-frames", "vqa_frames", "frames per labeled clip");
        add_count(spec, "--height", "height", "frame height");
        add_count(spec, "--width", "width", "frame width");
        add_count(spec, "--saliency-epochs", "saliency_epochs", "saliency training epochs");
        add_count(spec, "--vqa-epochs", "vqa_epochs", "VQA training epochs");
        add_number(spec, "--lr", "lr", "VQA learning rate");
        add_number(spec, "--alpha", "alpha", "fusion weight for non-alpha axes");
        add_count(spec, "--n-tokens", "n_tokens", "token count for non-token axes");
    } else if (name == "export-embeddings") {
        add_string(spec, "--dataset", "dataset", "dataset directory");
        add_string(spec, "--saliency-checkpoint", "saliency_checkpoint", "saliency checkpoint");
    }
    // flops and gradcheck take only the common flags
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"register-token saliency + spatio-temporal video quality toolkit"};
    app.require_subcommand(1);

    const std::vector<std::pair<std::string, std::string>> names = {
        {"train-saliency", "train the register-token saliency network"},
        {"train-vqa", "train the quality head against a frozen saliency model"},
        {"eval", "score checkpoints on a split and emit a report"},
        {"flops", "print the analytic cost-model table"},
        {"gradcheck", "run the finite-difference verification suite"},
        {"synth", "materialize a seeded synthetic dataset"},
        {"sweep", "ablation sweeps over token count, alpha, or components"},
        {"export-embeddings", "per-video register-token embeddings as CSV"}};
    std::map<std::string, FlagSpec> specs;
    for (const auto& [name, description] : names) {
        FlagSpec& spec = specs[name];
        spec.app = app.add_subcommand(name, description);
        configure_subcommand(spec, name);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? dagr::cli::kExitOk : dagr::cli::kExitUsage;
    }

    const std::string chosen = app.get_subcommands().front()->get_name();
    FlagSpec& spec = specs[chosen];
    try {
        const json overrides = collect_overrides(spec);
        const RunConfig cfg =
            dagr::cli::resolve_config(chosen, spec.config_file, overrides, spec.out_dir);
        return dagr::cli::run_command(cfg);
    } catch (const std::exception& e) {
        json err;
        err["error"] = e.what();
        err["subcommand"] = chosen;
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        if (!spec.out_dir.empty()) {
            try {
                std::filesystem::create_directories(spec.out_dir);
                dagr::write_text_file(
                    (std::filesystem::path(spec.out_dir) / "error.json").string(),
                    err.dump(2) + "\n");
            } catch (...) {
            }
        }
        return dagr::cli::kExitRuntime;
    }
}
