#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <sstream>

#include "dagr/objectives.hpp"
#include "dagr/ops.hpp"
#include "dagr/registers.hpp"
#include "dagr/serialize.hpp"

namespace dagr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream out;
    out << header << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ",";
            out << row[i];
        }
        out << "\n";
    }
    write_text_file(path, out.str());
}

void echo_config(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    const fs::path echo_path = fs::path(cfg.out_dir) / "config.json";
    // run directories are append-only: a second run must pick a fresh one
    if (fs::exists(echo_path))
        throw Error("output directory '" + cfg.out_dir + "' already holds a run");
    json echo;
    echo["subcommand"] = cfg.subcommand;
    echo["config"] = cfg.values;
    write_text_file(echo_path.string(), echo.dump(2) + "\n");
}

std::vector<std::size_t> size_list(const json& j) {
    return j.get<std::vector<std::size_t>>();
}

SaliencyNetConfig net_config_from(const json& cfg) {
    SaliencyNetConfig net;
    net.stage_channels = size_list(cfg.at("stages"));
    net.bottleneck_channels = cfg.at("bottleneck").get<std::size_t>();
    return net;
}

VQAModelConfig vqa_config_from(const json& cfg) {
    VQAModelConfig model;
    model.spatial.stage_channels = size_list(cfg.at("spatial_stages"));
    model.spatial.feature_dim = model.spatial.stage_channels.back();
    model.temporal.layers = cfg.at("layers").get<std::size_t>();
    model.temporal.heads = cfg.at("heads").get<std::size_t>();
    model.temporal.d_f = model.spatial.feature_dim;
    model.temporal.ffn_dim = cfg.at("ffn_dim").get<std::size_t>();
    model.fusion.alpha = cfg.at("alpha").get<double>();
    model.components = vqa_components_from_string(cfg.at("components").get<std::string>());
    return model;
}

SyntheticSpec spec_from(const json& cfg) {
    SyntheticSpec spec;
    spec.seed = cfg.at("seed").get<std::uint64_t>();
    spec.num_videos = cfg.at("num_videos").get<std::size_t>();
    spec.frames_per_video = cfg.at("frames").get<std::size_t>();
    spec.vqa_frames_per_video = cfg.at("vqa_frames").get<std::size_t>();
    spec.height = cfg.at("height").get<std::size_t>();
    spec.width = cfg.at("width").get<std::size_t>();
    spec.source_length = cfg.at("source_length").get<std::size_t>();
    spec.blob.sigma_frac = cfg.at("sigma_frac").get<double>();
    spec.noise.sigma_min = cfg.at("noise_min").get<double>();
    spec.noise.sigma_max = cfg.at("noise_max").get<double>();
    return spec;
}

std::vector<VideoClip> clips_for_split(const SyntheticDataset& data, const std::string& dir,
                                       const std::string& split) {
    if (split == "all") return data.labeled;
    const SplitIds splits = read_split_files(dir);
    const std::vector<std::string>* ids = nullptr;
    if (split == "train")
        ids = &splits.train;
    else if (split == "val")
        ids = &splits.val;
    else if (split == "test")
        ids = &splits.test;
    else
        throw Error("split must be one of train/val/test/all, got '" + split + "'");
    std::vector<VideoClip> out;
    for (const VideoClip& clip : data.labeled)
        if (std::find(ids->begin(), ids->end(), clip.source_id) != ids->end())
            out.push_back(clip);
    return out;
}

void write_predictions_csv(const std::string& path, const std::vector<VideoClip>& clips,
                           const std::vector<double>& preds) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < clips.size(); ++i)
        rows.push_back({clips[i].source_id, fmt_double(clips[i].mos.value_or(0.0)),
                        fmt_double(preds[i])});
    write_csv(path, "video_id,mos_true,mos_pred", rows);
}

std::pair<double, double> correlation_metrics(const std::vector<VideoClip>& clips,
                                              const std::vector<double>& preds) {
    std::vector<double> truth;
    for (const VideoClip& c : clips) truth.push_back(c.mos.value_or(0.0));
    return {srcc(preds, truth), plcc(preds, truth)};
}

}  // namespace

json default_config(const std::string& subcommand) {
    json d;
    d["seed"] = 0;
    if (subcommand == "train-saliency") {
        d["dataset"] = "";
        d["epochs"] = 180;
        d["batch"] = 4;
        d["lr"] = 5e-3;
        d["gamma"] = 0.01;
        d["n_tokens"] = 4;
        d["token_dim"] = 8;
        d["stages"] = {16, 32};
        d["bottleneck"] = 64;
    } else if (subcommand == "train-vqa") {
        d["dataset"] = "";
        d["saliency_checkpoint"] = "";
        d["epochs"] = 300;
        d["batch"] = 5;
        d["lr"] = 1e-5;
        d["alpha"] = 0.5;
        d["beta"] = 0.1;
        d["temperature"] = 0.5;
        d["cosine"] = true;
        d["components"] = "full";
        d["split"] = "train";
        d["spatial_stages"] = {8, 16, 24, 32};
        d["layers"] = 2;
        d["heads"] = 2;
        d["ffn_dim"] = 64;
    } else if (subcommand == "eval") {
        d["dataset"] = "";
        d["saliency_checkpoint"] = "";
        d["vqa_checkpoint"] = "";
        d["split"] = "test";
        d["alpha"] = 0.5;
        d["compare"] = "";
    } else if (subcommand == "flops") {
        // table uses per-model defaults
    } else if (subcommand == "gradcheck") {
        // fixed micro-suite
    } else if (subcommand == "synth") {
        d["num_videos"] = 4;
        d["frames"] = 60;
        d["vqa_frames"] = 8;
        d["height"] = 32;
        d["width"] = 32;
        d["source_length"] = 240;
        d["sigma_frac"] = 0.18;
        d["noise_min"] = 0.0;
        d["noise_max"] = 0.25;
    } else if (subcommand == "sweep") {
        d["axis"] = "n-tokens";
        d["alpha_grid"] = {0.0, 0.25, 0.5, 0.75, 1.0};
        d["num_videos"] = 6;
        d["frames"] = 4;
        d["vqa_frames"] = 4;
        d["height"] = 16;
        d["width"] = 16;
        d["source_length"] = 60;
        d["sigma_frac"] = 0.18;
        d["noise_min"] = 0.0;
        d["noise_max"] = 0.25;
        d["saliency_epochs"] = 30;
        d["vqa_epochs"] = 400;
        d["lr"] = 1e-3;
        d["alpha"] = 0.5;
        d["beta"] = 0.1;
        d["temperature"] = 0.5;
        d["n_tokens"] = 4;
        d["token_dim"] = 8;
        d["stages"] = {4, 8};
        d["bottleneck"] = 8;
        d["spatial_stages"] = {8, 8};
        d["layers"] = 1;
        d["heads"] = 2;
        d["ffn_dim"] = 16;
        d["components"] = "full";
    } else if (subcommand == "export-embeddings") {
        d["dataset"] = "";
        d["saliency_checkpoint"] = "";
    } else {
        throw Error("unknown subcommand '" + subcommand + "'");
    }
    return d;
}

RunConfig resolve_config(const std::string& subcommand, const std::string& config_file,
                         const json& flag_overrides, const std::string& out_dir) {
    json resolved = default_config(subcommand);
    if (!config_file.empty()) {
        const json from_file = json::parse(read_text_file(config_file));
        for (auto it = from_file.begin(); it != from_file.end(); ++it) {
            if (!resolved.contains(it.key()))
                throw Error("config file: unknown key '" + it.key() + "' for " + subcommand);
            resolved[it.key()] = it.value();
        }
    }
    for (auto it = flag_overrides.begin(); it != flag_overrides.end(); ++it) {
        if (!resolved.contains(it.key()))
            throw Error("flag: unknown key '" + it.key() + "' for " + subcommand);
        resolved[it.key()] = it.value();
    }
    RunConfig cfg;
    cfg.subcommand = subcommand;
    cfg.values = std::move(resolved);
    cfg.out_dir = out_dir;
    if (cfg.out_dir.empty()) {
        // default run directory: runs/<utc timestamp>-<seed>
        const std::time_t now = std::time(nullptr);
        std::tm utc{};
        gmtime_r(&now, &utc);
        char stamp[32];
        std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &utc);
        cfg.out_dir = (fs::path("runs") /
                       (std::string(stamp) + "-" + std::to_string(cfg.seed())))
                          .string();
    }
    return cfg;
}

int cmd_train_saliency(const RunConfig& cfg) {
    echo_config(cfg);
    const SyntheticDataset data = load_dataset(cfg.text("dataset"));
    if (data.saliency.empty()) throw Error("train-saliency: dataset has no saliency ground truth");

    SaliencyTrainConfig train_cfg;
    train_cfg.seed = cfg.seed();
    train_cfg.epochs = cfg.count("epochs");
    train_cfg.batch_size = cfg.count("batch");
    train_cfg.lr = cfg.number("lr");
    train_cfg.gamma = cfg.number("gamma");
    train_cfg.n_tokens = cfg.count("n_tokens");
    train_cfg.token_dim = cfg.count("token_dim");
    train_cfg.net = net_config_from(cfg.values);

    SaliencyTrainResult result = train_saliency(data.saliency, train_cfg);

    std::vector<std::vector<std::string>> rows;
    for (std::size_t e = 0; e < result.curve.size(); ++e)
        rows.push_back({std::to_string(e), fmt_double(result.curve[e].kl),
                        fmt_double(result.curve[e].cc), fmt_double(result.curve[e].total)});
    write_csv((fs::path(cfg.out_dir) / "loss_curve.csv").string(), "epoch,kl,cc,total", rows);
    save_saliency_checkpoint((fs::path(cfg.out_dir) / "checkpoint").string(), result.pipeline,
                             train_cfg.n_tokens, train_cfg.token_dim);
    return kExitOk;
}

int cmd_train_vqa(const RunConfig& cfg) {
    echo_config(cfg);
    const std::string dataset_dir = cfg.text("dataset");
    const SyntheticDataset data = load_dataset(dataset_dir);
    const std::vector<VideoClip> train_clips =
        clips_for_split(data, dataset_dir, cfg.text("split"));
    if (train_clips.empty()) throw Error("train-vqa: empty training split");

    VQATrainConfig train_cfg;
    train_cfg.seed = cfg.seed();
    train_cfg.epochs = cfg.count("epochs");
    train_cfg.batch_size = cfg.count("batch");
    train_cfg.lr = cfg.number("lr");
    train_cfg.beta = cfg.number("beta");
    train_cfg.rank_temperature = cfg.number("temperature");
    train_cfg.cosine_schedule = cfg.values.at("cosine").get<bool>();
    train_cfg.model = vqa_config_from(cfg.values);

    std::unique_ptr<SaliencyPipeline> saliency;
    const std::string sal_ckpt = cfg.text("saliency_checkpoint");
    const bool needs_saliency =
        (train_cfg.model.components == VQAComponents::full ||
         train_cfg.model.components == VQAComponents::spatial_saliency) &&
        train_cfg.model.fusion.alpha > 0.0;
    if (needs_saliency) {
        if (sal_ckpt.empty()) throw Error("train-vqa: missing saliency checkpoint");
        saliency = std::make_unique<SaliencyPipeline>(load_saliency_pipeline(sal_ckpt));
    }

    VQATrainResult result = train_vqa(train_clips, saliency.get(), train_cfg);

    std::vector<std::vector<std::string>> loss_rows;
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e)
        loss_rows.push_back({std::to_string(e), fmt_double(result.loss_curve[e])});
    write_csv((fs::path(cfg.out_dir) / "loss_curve.csv").string(), "epoch,loss", loss_rows);

    const std::vector<double> train_preds = predict_mos(result.model, saliency.get(), train_clips);
    const auto [train_srcc, train_plcc] = correlation_metrics(train_clips, train_preds);
    json metrics;
    metrics["train_srcc"] = train_srcc;
    metrics["train_plcc"] = train_plcc;

    std::vector<VideoClip> val_clips = clips_for_split(data, dataset_dir, "val");
    if (val_clips.empty()) val_clips = train_clips;
    const std::vector<double> val_preds = predict_mos(result.model, saliency.get(), val_clips);
    write_predictions_csv((fs::path(cfg.out_dir) / "predictions.csv").string(), val_clips,
                          val_preds);
    if (val_clips.size() >= 2) {
        const auto [val_srcc, val_plcc] = correlation_metrics(val_clips, val_preds);
        metrics["val_srcc"] = val_srcc;
        metrics["val_plcc"] = val_plcc;
    }
    write_text_file((fs::path(cfg.out_dir) / "metrics.json").string(), metrics.dump(2) + "\n");
    save_vqa_checkpoint((fs::path(cfg.out_dir) / "checkpoint").string(), result.model);
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
    echo_config(cfg);
    const std::string dataset_dir = cfg.text("dataset");
    const SyntheticDataset data = load_dataset(dataset_dir);
    const std::vector<VideoClip> clips = clips_for_split(data, dataset_dir, cfg.text("split"));
    if (clips.size() < 2) throw Error("eval: split needs at least 2 labeled clips");

    VQAModel model = load_vqa_model(cfg.text("vqa_checkpoint"));
    std::unique_ptr<SaliencyPipeline> saliency;
    if (!cfg.text("saliency_checkpoint").empty())
        saliency =
            std::make_unique<SaliencyPipeline>(load_saliency_pipeline(cfg.text("saliency_checkpoint")));
    if (model.uses_saliency() && !saliency) throw Error("eval: missing saliency checkpoint");

    const std::vector<double> preds = predict_mos(model, saliency.get(), clips);
    write_predictions_csv((fs::path(cfg.out_dir) / "predictions.csv").string(), clips, preds);
    const auto [s, p] = correlation_metrics(clips, preds);

    json metrics;
    metrics["srcc"] = s;
    metrics["plcc"] = p;

    if (saliency && !data.saliency.empty()) {
        double sum_nss = 0.0, sum_cc = 0.0, sum_auc = 0.0;
        std::vector<std::vector<std::string>> rows;
        for (const SaliencySample& sample : data.saliency) {
            const SaliencyMap pred_map = saliency->forward_clip(sample.clip.frames);
            const SaliencyMap truth = make_saliency_map(sample.saliency);
            const FixationMap fix = make_fixation_map(sample.fixations);
            const double v_nss = nss(pred_map, fix);
            const double v_cc = cc_metric(truth, pred_map);
            const double v_auc = auc_judd(pred_map, fix);
            sum_nss += v_nss;
            sum_cc += v_cc;
            sum_auc += v_auc;
            const std::string range = "0-" + std::to_string(sample.clip.frames.extent(1) - 1);
            rows.push_back({sample.clip.source_id, range, "nss", fmt_double(v_nss)});
            rows.push_back({sample.clip.source_id, range, "cc", fmt_double(v_cc)});
            rows.push_back({sample.clip.source_id, range, "auc_judd", fmt_double(v_auc)});
        }
        const double n = static_cast<double>(data.saliency.size());
        metrics["nss"] = sum_nss / n;
        metrics["cc"] = sum_cc / n;
        metrics["auc_judd"] = sum_auc / n;
        write_csv((fs::path(cfg.out_dir) / "saliency_metrics.csv").string(),
                  "video_id,frame_range,metric,value", rows);
    }

    const std::string compare = cfg.text("compare");
    if (!compare.empty()) {
        // Paired per-video absolute errors of the two models.
        std::map<std::string, std::pair<double, double>> other;  // id -> (mos, pred)
        std::istringstream in(read_text_file(compare));
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            std::string id, mos_s, pred_s;
            std::getline(row, id, ',');
            std::getline(row, mos_s, ',');
            std::getline(row, pred_s, ',');
            other[id] = {std::stod(mos_s), std::stod(pred_s)};
        }
        PairedSamples samples;
        for (std::size_t i = 0; i < clips.size(); ++i) {
            auto it = other.find(clips[i].source_id);
            if (it == other.end()) continue;
            const double mos = clips[i].mos.value_or(0.0);
            samples.a.push_back(std::abs(preds[i] - mos));
            samples.b.push_back(std::abs(it->second.second - mos));
        }
        if (samples.a.size() < 2) throw Error("eval: fewer than 2 common videos for comparison");
        bool all_zero = true;
        for (std::size_t i = 0; i < samples.a.size(); ++i)
            all_zero = all_zero && samples.a[i] == samples.b[i];
        if (all_zero) {
            metrics["p_t_test"] = 1.0;
            metrics["p_wilcoxon"] = 1.0;  // identical models are trivially indistinct
        } else {
            metrics["p_t_test"] = paired_t_test(samples);
            metrics["p_wilcoxon"] = wilcoxon_signed_rank(samples);
        }
    }

    json report;
    report["experiment"] = "eval";
    report["config"] = cfg.values;
    report["metrics"] = metrics;
    report["seeds"] = json::array({cfg.seed()});
    report["version"] = kVersion;
    write_text_file((fs::path(cfg.out_dir) / "report.json").string(), report.dump(2) + "\n");
    return kExitOk;
}

int cmd_flops(const RunConfig& cfg) {
    echo_config(cfg);
    std::vector<std::vector<std::string>> rows;
    for (const auto& [name, gflops] : flops_table()) {
        rows.push_back({name, fmt_double(gflops)});
        std::printf("%-10s %8.2f GFLOPs\n", name.c_str(), gflops);
    }
    write_csv((fs::path(cfg.out_dir) / "flops.csv").string(), "model,gflops", rows);
    return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg) {
    echo_config(cfg);
    bool all_ok = true;
    std::vector<std::vector<std::string>> rows;
    for (const GradCheckEntry& entry : run_gradcheck_suite()) {
        all_ok = all_ok && entry.ok();
        rows.push_back({entry.name, fmt_double(entry.error), fmt_double(entry.limit),
                        entry.ok() ? "pass" : "fail"});
        std::printf("%s %-28s err=%.3e limit=%.0e\n", entry.ok() ? "ok  " : "FAIL",
                    entry.name.c_str(), entry.error, entry.limit);
    }
    write_csv((fs::path(cfg.out_dir) / "gradcheck.csv").string(), "check,error,limit,status", rows);
    return all_ok ? kExitOk : kExitVerification;
}

int cmd_synth(const RunConfig& cfg) {
    echo_config(cfg);
    json values = cfg.values;
    const SyntheticSpec spec = spec_from(values);
    const SyntheticDataset data = generate_synthetic(spec);
    save_dataset(cfg.out_dir, data, spec);
    return kExitOk;
}

namespace {

struct SweepContext {
    const RunConfig& cfg;
    SyntheticDataset data;
};

std::pair<double, double> run_sweep_point(const SweepContext& ctx, std::size_t n_tokens,
                                          double alpha, const std::string& components) {
    const RunConfig& cfg = ctx.cfg;

    SaliencyTrainConfig sal_cfg;
    sal_cfg.seed = cfg.seed();
    sal_cfg.epochs = cfg.count("saliency_epochs");
    sal_cfg.batch_size = ctx.data.saliency.size();
    sal_cfg.lr = 5e-3;
    sal_cfg.gamma = 0.01;
    sal_cfg.n_tokens = n_tokens;
    sal_cfg.token_dim = cfg.count("token_dim");
    sal_cfg.net = net_config_from(cfg.values);

    VQATrainConfig vqa_cfg;
    vqa_cfg.seed = cfg.seed();
    vqa_cfg.epochs = cfg.count("vqa_epochs");
    vqa_cfg.batch_size = ctx.data.labeled.size();
    vqa_cfg.lr = cfg.number("lr");
    vqa_cfg.beta = cfg.number("beta");
    vqa_cfg.rank_temperature = cfg.number("temperature");
    vqa_cfg.model = vqa_config_from(cfg.values);
    vqa_cfg.model.fusion.alpha = alpha;
    vqa_cfg.model.components = vqa_components_from_string(components);

    const bool needs_saliency = (vqa_cfg.model.components == VQAComponents::full ||
                                 vqa_cfg.model.components == VQAComponents::spatial_saliency) &&
                                alpha > 0.0;
    std::unique_ptr<SaliencyPipeline> saliency;
    if (needs_saliency) {
        SaliencyTrainResult sal = train_saliency(ctx.data.saliency, sal_cfg);
        sal.pipeline.freeze();
        saliency = std::make_unique<SaliencyPipeline>(std::move(sal.pipeline));
    }
    VQATrainResult result = train_vqa(ctx.data.labeled, saliency.get(), vqa_cfg);
    const std::vector<double> preds = predict_mos(result.model, saliency.get(), ctx.data.labeled);
    return correlation_metrics(ctx.data.labeled, preds);
}

}  // namespace

int cmd_sweep(const RunConfig& cfg) {
    echo_config(cfg);
    json values = cfg.values;
    SweepContext ctx{cfg, generate_synthetic(spec_from(values))};

    const std::string axis_name = cfg.text("axis");
    AblationAxis axis;
    if (axis_name == "n-tokens")
        axis = AblationAxis::token_count;
    else if (axis_name == "alpha")
        axis = AblationAxis::alpha;
    else if (axis_name == "components")
        axis = AblationAxis::components;
    else
        throw Error("sweep: axis must be n-tokens/alpha/components, got '" + axis_name + "'");

    const std::vector<double> grid = cfg.values.at("alpha_grid").get<std::vector<double>>();
    auto runner = [&](const std::string& key) -> std::pair<double, double> {
        if (key.rfind("n_tok=", 0) == 0)
            return run_sweep_point(ctx, std::stoul(key.substr(6)), cfg.number("alpha"), "full");
        if (key.rfind("alpha=", 0) == 0)
            return run_sweep_point(ctx, cfg.count("n_tokens"), std::stod(key.substr(6)), "full");
        return run_sweep_point(ctx, cfg.count("n_tokens"), cfg.number("alpha"), key);
    };

    const std::vector<AblationRow> rows = sweep_ablation(axis, grid, runner);
    std::vector<std::vector<std::string>> csv_rows;
    for (const AblationRow& row : rows) {
        csv_rows.push_back({row.config, fmt_double(row.srcc), fmt_double(row.plcc)});
        std::printf("%-16s srcc=%+.4f plcc=%+.4f\n", row.config.c_str(), row.srcc, row.plcc);
    }
    write_csv((fs::path(cfg.out_dir) / "sweep.csv").string(), "config,srcc,plcc", csv_rows);
    return kExitOk;
}

int cmd_export_embeddings(const RunConfig& cfg) {
    echo_config(cfg);
    const SyntheticDataset data = load_dataset(cfg.text("dataset"));
    if (data.saliency.empty()) throw Error("export-embeddings: dataset has no saliency clips");
    const SaliencyPipeline pipeline = load_saliency_pipeline(cfg.text("saliency_checkpoint"));
    if (!pipeline.tokens()) throw Error("export-embeddings: checkpoint has no register tokens");
    const std::size_t dim = pipeline.tokens()->dim();

    std::string header = "video_id";
    for (std::size_t j = 0; j < dim; ++j) header += ",e" + std::to_string(j);
    std::vector<std::vector<std::string>> rows;
    for (const SaliencySample& sample : data.saliency) {
        const std::vector<double> embedding = export_register_embedding(pipeline, sample.clip);
        std::vector<std::string> row{sample.clip.source_id};
        for (double v : embedding) row.push_back(fmt_double(v));
        rows.push_back(std::move(row));
    }
    write_csv((fs::path(cfg.out_dir) / "embeddings.csv").string(), header, rows);
    return kExitOk;
}

int run_command(const RunConfig& cfg) {
    if (cfg.subcommand == "train-saliency") return cmd_train_saliency(cfg);
    if (cfg.subcommand == "train-vqa") return cmd_train_vqa(cfg);
    if (cfg.subcommand == "eval") return cmd_eval(cfg);
    if (cfg.subcommand == "flops") return cmd_flops(cfg);
    if (cfg.subcommand == "gradcheck") return cmd_gradcheck(cfg);
    if (cfg.subcommand == "synth") return cmd_synth(cfg);
    if (cfg.subcommand == "sweep") return cmd_sweep(cfg);
    if (cfg.subcommand == "export-embeddings") return cmd_export_embeddings(cfg);
    throw Error("unknown subcommand '" + cfg.subcommand + "'");
}

void validate_against_schema(const json& doc, const json& schema, const std::string& where) {
    const std::string type = schema.value("type", "");
    auto fail = [&](const std::string& msg) { throw Error("schema: " + where + ": " + msg); };
    if (type == "object") {
        if (!doc.is_object()) fail("expected object");
        for (const auto& req : schema.value("required", json::array()))
            if (!doc.contains(req.get<std::string>()))
                fail("missing required key '" + req.get<std::string>() + "'");
        if (schema.contains("properties"))
            for (auto it = schema["properties"].begin(); it != schema["properties"].end(); ++it)
                if (doc.contains(it.key()))
                    validate_against_schema(doc[it.key()], it.value(), where + "." + it.key());
    } else if (type == "array") {
        if (!doc.is_array()) fail("expected array");
        if (schema.contains("items"))
            for (std::size_t i = 0; i < doc.size(); ++i)
                validate_against_schema(doc[i], schema["items"],
                                        where + "[" + std::to_string(i) + "]");
    } else if (type == "string") {
        if (!doc.is_string()) fail("expected string");
    } else if (type == "number") {
        if (!doc.is_number()) fail("expected number");
    } else if (type == "integer") {
        if (!doc.is_number_integer() && !doc.is_number_unsigned()) fail("expected integer");
    } else if (type == "boolean") {
        if (!doc.is_boolean()) fail("expected boolean");
    } else if (!type.empty()) {
        fail("unsupported schema type '" + type + "'");
    }
}

SaliencyPipeline load_saliency_pipeline(const std::string& checkpoint_dir, bool freeze) {
    const json meta = json::parse(
        read_text_file((fs::path(checkpoint_dir) / "config.json").string()));
    SaliencyNetConfig net;
    net.stage_channels = meta.at("net").at("stage_channels").get<std::vector<std::size_t>>();
    net.bottleneck_channels = meta.at("net").at("bottleneck_channels").get<std::size_t>();
    const auto kernel = meta.at("net").at("attention_kernel").get<std::vector<std::size_t>>();
    if (kernel.size() != 3) throw Error("checkpoint: attention kernel must have 3 extents");
    std::copy(kernel.begin(), kernel.end(), net.attention_kernel.begin());
    net.skip_connections = meta.at("net").at("skip_connections").get<bool>();
    RngState rng(0);
    SaliencyPipeline pipeline(meta.at("video_channels").get<std::size_t>(),
                              meta.at("n_tokens").get<std::size_t>(),
                              meta.at("token_dim").get<std::size_t>(), net, rng);
    const auto tensors = load_checkpoint(checkpoint_dir);
    pipeline.load_parameters({tensors.begin(), tensors.end()});
    if (freeze) pipeline.freeze();
    return pipeline;
}

void save_saliency_checkpoint(const std::string& dir, const SaliencyPipeline& pipeline,
                              std::size_t n_tokens, std::size_t token_dim) {
    save_checkpoint(dir, pipeline.named_parameters());
    json meta;
    meta["video_channels"] = pipeline.video_channels();
    meta["n_tokens"] = n_tokens;
    meta["token_dim"] = token_dim;
    const SaliencyNetConfig& net = pipeline.net().config();
    meta["net"] = {{"stage_channels", net.stage_channels},
                   {"bottleneck_channels", net.bottleneck_channels},
                   {"attention_kernel", std::vector<std::size_t>(net.attention_kernel.begin(),
                                                                 net.attention_kernel.end())},
                   {"skip_connections", net.skip_connections}};
    write_text_file((fs::path(dir) / "config.json").string(), meta.dump(2) + "\n");
}

void save_vqa_checkpoint(const std::string& dir, const VQAModel& model) {
    save_checkpoint(dir, model.named_parameters());
    const VQAModelConfig& cfg = model.config();
    json meta;
    meta["spatial_stages"] = cfg.spatial.stage_channels;
    meta["layers"] = cfg.temporal.layers;
    meta["heads"] = cfg.temporal.heads;
    meta["ffn_dim"] = cfg.temporal.ffn_dim;
    meta["alpha"] = cfg.fusion.alpha;
    meta["components"] = to_string(cfg.components);
    write_text_file((fs::path(dir) / "config.json").string(), meta.dump(2) + "\n");
}

VQAModel load_vqa_model(const std::string& checkpoint_dir) {
    const json meta = json::parse(
        read_text_file((fs::path(checkpoint_dir) / "config.json").string()));
    VQAModelConfig cfg = vqa_config_from(meta);
    RngState rng(0);
    VQAModel model(cfg, rng);
    const auto tensors = load_checkpoint(checkpoint_dir);
    model.load_parameters({tensors.begin(), tensors.end()});
    return model;
}

// ---- gradcheck suite --------------------------------------------------------

namespace {

GradCheckEntry check(const std::string& name,
                     const std::function<Tensor(const std::vector<Tensor>&)>& f,
                     std::vector<Tensor> params, double limit = 1e-4, double eps = 1e-5) {
    GradCheckEntry entry;
    entry.name = name;
    entry.limit = limit;
    entry.error = grad_check(f, params, eps);
    return entry;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite() {
    std::vector<GradCheckEntry> out;
    RngState rng(20240915);
    auto randn = [&](Shape s) { return Tensor::randn(std::move(s), rng, true); };

    out.push_back(check("arith_broadcast",
                        [](const std::vector<Tensor>& p) {
                            return sum(div(add(mul(p[0], p[1]), sub(p[0], p[1])),
                                           add_scalar(mul(p[1], p[1]), 2.0)));
                        },
                        {randn({3, 1, 4}), randn({2, 4})}));
    out.push_back(check("sigmoid_relu_chain",
                        [](const std::vector<Tensor>& p) {
                            return sum(relu(add_scalar(sigmoid(p[0]), -0.3)));
                        },
                        {randn({4, 5})}));
    out.push_back(check("exp_log_sqrt_abs",
                        [](const std::vector<Tensor>& p) {
                            Tensor safe = add_scalar(sigmoid(p[0]), 0.5);  // (0.5, 1.5)
                            return sum(add(exp(scale(safe, 0.3)),
                                           add(log(safe), add(sqrt(safe), abs(safe)))));
                        },
                        {randn({6})}));
    out.push_back(check("softmax_layernorm",
                        [](const std::vector<Tensor>& p) {
                            return mean(mul(softmax(p[0], 1), layernorm(p[0], 1, 1e-5)));
                        },
                        {randn({3, 6})}));
    out.push_back(check("matmul_linear",
                        [](const std::vector<Tensor>& p) {
                            return sum(sigmoid(linear(matmul(p[0], transpose(p[1])), p[1], p[2])));
                        },
                        {randn({2, 3}), randn({4, 3}), randn({3})}));
    out.push_back(check("conv3d",
                        [](const std::vector<Tensor>& p) {
                            return sum(sigmoid(conv3d(p[0], p[1], p[2], {1, 1, 1}, {1, 1, 1})));
                        },
                        {randn({1, 2, 2, 3, 3}), randn({2, 2, 2, 2, 2}), randn({2})}));
    out.push_back(check("conv2d",
                        [](const std::vector<Tensor>& p) {
                            return sum(sigmoid(conv2d(p[0], p[1], p[2], {1, 1}, {1, 1})));
                        },
                        {randn({1, 2, 4, 4}), randn({3, 2, 3, 3}), randn({3})}));
    out.push_back(check("pooling",
                        [](const std::vector<Tensor>& p) {
                            Tensor mx = max_pool(p[0], {1, 2, 2}, {1, 2, 2});
                            Tensor av = avg_pool(p[0], {2, 2, 2}, {1, 1, 1});
                            Tensor ga = global_avg_pool(p[0], 2);
                            Tensor ad = adaptive_avg_pool(p[0], {3, 2});
                            return add(add(sum(mul(mx, mx)), sum(av)), add(sum(ga), sum(ad)));
                        },
                        {randn({1, 2, 4, 4})}));
    out.push_back(check("interp",
                        [](const std::vector<Tensor>& p) {
                            Tensor bi = resize_bilinear(p[0], 5, 3);
                            Tensor tri = upsample_trilinear(p[1], 3, 4, 4);
                            return add(sum(mul(bi, bi)), sum(mul(tri, tri)));
                        },
                        {randn({2, 3, 4}), randn({1, 2, 2, 2})}));
    out.push_back(check("concat_slice_stack",
                        [](const std::vector<Tensor>& p) {
                            Tensor joined = concat({p[0], p[1]}, 0);
                            Tensor part = slice(joined, 0, 1, 3);
                            return sum(mul(part, part));
                        },
                        {randn({2, 3}), randn({2, 3})}));

    // Composed micro-pipeline: register tokens -> saliency net -> loss.
    {
        RngState seed_rng(77);
        SaliencyNetConfig net_cfg;
        net_cfg.stage_channels = {1, 2};
        net_cfg.bottleneck_channels = 2;
        SaliencyPipeline pipeline(2, 2, 2, net_cfg, seed_rng);
        RngState data_rng(78);
        std::vector<double> clip_vals(2 * 2 * 8 * 8);
        for (double& v : clip_vals) v = data_rng.next_uniform();
        Tensor clip = Tensor::from_data({2, 2, 8, 8}, clip_vals);
        std::vector<double> gt_vals(1 * 2 * 8 * 8);
        for (double& v : gt_vals) v = 0.05 + 0.9 * data_rng.next_uniform();
        SaliencyMap gt;
        gt.values = Tensor::from_data({1, 2, 8, 8}, gt_vals);
        SaliencyLossConfig loss_cfg{0.01, 1e-8};
        std::vector<Tensor> params = pipeline.parameters();
        auto f = [&pipeline, &clip, &gt, &loss_cfg](const std::vector<Tensor>&) {
            return saliency_loss(gt, pipeline.forward_clip(clip), loss_cfg);
        };
        out.push_back(check("pipeline_saliency_loss", f, params));

        std::vector<Tensor> token_params = pipeline.tokens()->parameters();
        auto f_tokens = [&pipeline, &clip](const std::vector<Tensor>&) {
            return sum(pipeline.forward(clip));
        };
        out.push_back(check("pipeline_register_tokens", f_tokens, token_params));
    }

    // Composed micro-pipeline: fusion -> spatial -> PE -> temporal -> loss.
    {
        RngState seed_rng(79);
        VQAModelConfig cfg;
        cfg.spatial.stage_channels = {8, 8};
        cfg.spatial.feature_dim = 8;
        cfg.temporal.layers = 1;
        cfg.temporal.heads = 2;
        cfg.temporal.d_f = 8;
        cfg.temporal.ffn_dim = 8;
        cfg.fusion.alpha = 0.5;
        VQAModel model(cfg, seed_rng);
        RngState data_rng(80);
        std::vector<Tensor> clips, maps;
        std::vector<double> truth;
        for (int i = 0; i < 3; ++i) {
            std::vector<double> fv(3 * 2 * 8 * 8);
            for (double& v : fv) v = data_rng.next_uniform();
            clips.push_back(Tensor::from_data({3, 2, 8, 8}, fv));
            std::vector<double> mv(1 * 2 * 8 * 8);
            for (double& v : mv) v = 0.1 + 0.8 * data_rng.next_uniform();
            maps.push_back(Tensor::from_data({1, 2, 8, 8}, mv));
            truth.push_back(1.0 + 1.5 * i);
        }
        Tensor truth_vec = Tensor::from_data({3}, truth);
        VQALossConfig loss_cfg{0.1, 0.5};
        std::vector<Tensor> params = model.parameters();
        auto f = [&](const std::vector<Tensor>&) {
            std::vector<Tensor> preds;
            for (std::size_t i = 0; i < clips.size(); ++i)
                preds.push_back(model.predict(clips[i], &maps[i]));
            return vqa_loss(stack_scalars(preds), truth_vec, loss_cfg);
        };
        out.push_back(check("pipeline_vqa_loss", f, params));
    }
    return out;
}

}  // namespace dagr::cli
