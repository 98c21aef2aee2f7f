#include "dagr/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dagr/ops.hpp"
#include "dagr/serialize.hpp"

namespace dagr {

namespace fs = std::filesystem;
using nlohmann::json;

void validate_clip(const VideoClip& clip) {
    if (!clip.frames.defined() || clip.frames.rank() != 4)
        throw Error("video clip: frames must be [C,T,H,W]");
    if (clip.frames.extent(1) != clip.frame_indices.size())
        throw Error("video clip: frame index count must match T");
    for (double v : clip.frames.data())
        if (v < 0.0 || v > 1.0) throw Error("video clip: values must lie in [0,1]");
}

std::vector<std::size_t> sample_frames(std::size_t source_length, std::size_t n_frames) {
    if (source_length < 1) throw Error("sample_frames: source length must be >= 1");
    if (n_frames < 1) throw Error("sample_frames: frame count must be >= 1");
    std::vector<std::size_t> indices;
    indices.reserve(n_frames);
    const double l = static_cast<double>(source_length);
    const double n = static_cast<double>(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i) {
        const double center = (static_cast<double>(i) + 0.5) * l / n - 0.5;
        long long idx = std::llround(center);
        idx = std::max(0ll, std::min(idx, static_cast<long long>(source_length) - 1));
        indices.push_back(static_cast<std::size_t>(idx));
    }
    return indices;
}

Tensor resize_frame(const Tensor& frame, std::size_t height, std::size_t width) {
    if (!frame.defined() || frame.rank() != 3) throw Error("resize_frame: frame must be [C,h,w]");
    return resize_bilinear(frame, height, width);
}

void SyntheticSpec::validate() const {
    if (num_videos < 1) throw Error("synthetic spec: num_videos must be >= 1");
    if (frames_per_video < 1 || vqa_frames_per_video < 1)
        throw Error("synthetic spec: frame counts must be >= 1");
    if (height < 4 || width < 4) throw Error("synthetic spec: extents must be >= 4");
    if (source_length < 1) throw Error("synthetic spec: source length must be >= 1");
    if (blob.sigma_frac <= 0.0) throw Error("synthetic spec: blob sigma must be > 0");
    if (blob.margin_frac < 0.0 || blob.margin_frac >= 0.5)
        throw Error("synthetic spec: margin must lie in [0, 0.5)");
    if (noise.sigma_min < 0.0 || noise.sigma_max < noise.sigma_min)
        throw Error("synthetic spec: bad noise range");
}

double mos_for_sigma(double sigma, const NoiseParams& noise) {
    if (noise.sigma_max <= noise.sigma_min) return 5.0;
    const double f = (sigma - noise.sigma_min) / (noise.sigma_max - noise.sigma_min);
    return 5.0 - 4.0 * f;  // sigma_min -> 5 (best), sigma_max -> 1 (worst)
}

namespace {

struct Trajectory {
    double y0, x0, y1, x1;
    // Center at source-timeline position l in [0, L-1].
    std::pair<double, double> at(double l, double source_length) const {
        const double f = source_length > 1.0 ? l / (source_length - 1.0) : 0.0;
        return {y0 + (y1 - y0) * f, x0 + (x1 - x0) * f};
    }
};

Trajectory draw_trajectory(const SyntheticSpec& spec, RngState& rng) {
    const double my = spec.blob.margin_frac * static_cast<double>(spec.height);
    const double mx = spec.blob.margin_frac * static_cast<double>(spec.width);
    auto draw = [&](double lo, double hi) { return lo + (hi - lo) * rng.next_uniform(); };
    Trajectory t;
    t.y0 = draw(my, static_cast<double>(spec.height) - 1.0 - my);
    t.x0 = draw(mx, static_cast<double>(spec.width) - 1.0 - mx);
    t.y1 = draw(my, static_cast<double>(spec.height) - 1.0 - my);
    t.x1 = draw(mx, static_cast<double>(spec.width) - 1.0 - mx);
    return t;
}

struct RenderedClip {
    std::vector<double> frames;     // [3,T,H,W]
    std::vector<double> saliency;   // [1,T,H,W]
    std::vector<double> fixations;  // [1,T,H,W]
};

RenderedClip render_clip(const SyntheticSpec& spec, const Trajectory& traj,
                         const std::vector<std::size_t>& frame_indices, RngState& rng) {
    const std::size_t T = frame_indices.size();
    const std::size_t H = spec.height, W = spec.width;
    const double sigma = spec.blob.sigma_frac * static_cast<double>(std::min(H, W));
    RenderedClip out;
    out.frames.assign(3 * T * H * W, 0.0);
    out.saliency.assign(T * H * W, 0.0);
    out.fixations.assign(T * H * W, 0.0);
    // Per-clip appearance: background gradient phase and blob channel weights.
    const double phase = rng.next_uniform();
    const double cr = 0.5 + 0.5 * rng.next_uniform();
    const double cg = 0.5 + 0.5 * rng.next_uniform();
    const double cb = 0.5 + 0.5 * rng.next_uniform();
    for (std::size_t t = 0; t < T; ++t) {
        const auto [cy, cx] = traj.at(static_cast<double>(frame_indices[t]),
                                      static_cast<double>(spec.source_length));
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                const double dy = static_cast<double>(i) - cy;
                const double dx = static_cast<double>(j) - cx;
                const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                out.saliency[(t * H + i) * W + j] = g;
                const double bg =
                    0.15 + 0.2 * std::sin(phase * 6.28318530717958647692 +
                                          static_cast<double>(i + j) /
                                              static_cast<double>(H + W) * 3.14159265358979323846);
                auto px = [&](std::size_t c) -> double& {
                    return out.frames[((c * T + t) * H + i) * W + j];
                };
                px(0) = std::clamp(bg + cr * g, 0.0, 1.0);
                px(1) = std::clamp(bg + cg * g, 0.0, 1.0);
                px(2) = std::clamp(bg + cb * g, 0.0, 1.0);
            }
        const std::size_t fy = static_cast<std::size_t>(
            std::max(0ll, std::min(std::llround(cy), static_cast<long long>(H) - 1)));
        const std::size_t fx = static_cast<std::size_t>(
            std::max(0ll, std::min(std::llround(cx), static_cast<long long>(W) - 1)));
        out.fixations[(t * H + fy) * W + fx] = 1.0;
    }
    return out;
}

std::string video_id(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, i);
    return buf;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    RngState rng(spec.seed);
    SyntheticDataset out;

    for (std::size_t v = 0; v < spec.num_videos; ++v) {
        const Trajectory traj = draw_trajectory(spec, rng);
        const auto indices = sample_frames(spec.source_length, spec.frames_per_video);
        RenderedClip rendered = render_clip(spec, traj, indices, rng);
        SaliencySample sample;
        sample.clip.frames = Tensor::from_data(
            {3, spec.frames_per_video, spec.height, spec.width}, std::move(rendered.frames));
        sample.clip.source_id = video_id("sal", v);
        sample.clip.frame_indices = indices;
        sample.saliency = Tensor::from_data({1, spec.frames_per_video, spec.height, spec.width},
                                            std::move(rendered.saliency));
        sample.fixations = Tensor::from_data({1, spec.frames_per_video, spec.height, spec.width},
                                             std::move(rendered.fixations));
        out.saliency.push_back(std::move(sample));
    }

    for (std::size_t v = 0; v < spec.num_videos; ++v) {
        const Trajectory traj = draw_trajectory(spec, rng);
        const auto indices = sample_frames(spec.source_length, spec.vqa_frames_per_video);
        RenderedClip rendered = render_clip(spec, traj, indices, rng);
        // Per-video noise level spread over the configured grade range, so the
        // MOS ordering follows the sigma ordering strictly.
        const double f = spec.num_videos > 1
                             ? static_cast<double>(v) / static_cast<double>(spec.num_videos - 1)
                             : 0.0;
        const double sigma = spec.noise.sigma_min + f * (spec.noise.sigma_max - spec.noise.sigma_min);
        for (double& px : rendered.frames)
            px = std::clamp(px + sigma * rng.next_normal(), 0.0, 1.0);
        VideoClip clip;
        clip.frames = Tensor::from_data({3, spec.vqa_frames_per_video, spec.height, spec.width},
                                        std::move(rendered.frames));
        clip.source_id = video_id("vqa", v);
        clip.frame_indices = indices;
        clip.mos = mos_for_sigma(sigma, spec.noise);
        out.labeled.push_back(std::move(clip));
    }
    return out;
}

namespace {

json spec_to_json(const SyntheticSpec& spec) {
    json j;
    j["seed"] = spec.seed;
    j["num_videos"] = spec.num_videos;
    j["frames_per_video"] = spec.frames_per_video;
    j["vqa_frames_per_video"] = spec.vqa_frames_per_video;
    j["height"] = spec.height;
    j["width"] = spec.width;
    j["source_length"] = spec.source_length;
    j["blob"] = {{"sigma_frac", spec.blob.sigma_frac}, {"margin_frac", spec.blob.margin_frac}};
    j["noise"] = {{"sigma_min", spec.noise.sigma_min}, {"sigma_max", spec.noise.sigma_max}};
    return j;
}

void save_clip_dir(const fs::path& dir, const VideoClip& clip, const Tensor* saliency,
                   const Tensor* fixations) {
    fs::create_directories(dir);
    write_tensor_blob((dir / "clip.bin").string(), "clip", clip.frames);
    if (saliency) write_tensor_blob((dir / "saliency.bin").string(), "saliency", *saliency);
    if (fixations) write_tensor_blob((dir / "fixations.bin").string(), "fixations", *fixations);
    json meta;
    meta["source_id"] = clip.source_id;
    meta["frame_indices"] = clip.frame_indices;
    if (clip.mos) meta["mos"] = *clip.mos;
    write_text_file((dir / "meta.json").string(), meta.dump(2) + "\n");
}

VideoClip load_clip_dir(const fs::path& dir) {
    VideoClip clip;
    clip.frames = read_tensor_blob((dir / "clip.bin").string()).second;
    const json meta = json::parse(read_text_file((dir / "meta.json").string()));
    clip.source_id = meta.at("source_id").get<std::string>();
    clip.frame_indices = meta.at("frame_indices").get<std::vector<std::size_t>>();
    if (meta.contains("mos")) clip.mos = meta.at("mos").get<double>();
    return clip;
}

}  // namespace

void save_dataset(const std::string& dir, const SyntheticDataset& dataset,
                  const SyntheticSpec& spec) {
    const fs::path root(dir);
    fs::create_directories(root / "videos");
    write_text_file((root / "spec.json").string(), spec_to_json(spec).dump(2) + "\n");

    std::ostringstream labels;
    labels << "video_id,mos\n";
    for (const SaliencySample& s : dataset.saliency)
        save_clip_dir(root / "videos" / s.clip.source_id, s.clip, &s.saliency, &s.fixations);
    for (const VideoClip& clip : dataset.labeled) {
        save_clip_dir(root / "videos" / clip.source_id, clip, nullptr, nullptr);
        char row[64];
        std::snprintf(row, sizeof(row), "%s,%.17g\n", clip.source_id.c_str(),
                      clip.mos.value_or(0.0));
        labels << row;
    }
    write_text_file((root / "labels.csv").string(), labels.str());

    std::vector<std::string> ids;
    for (const VideoClip& clip : dataset.labeled) ids.push_back(clip.source_id);
    write_split_files(dir, split_ids(std::move(ids), 0.8, 0.1, spec.seed));
}

SyntheticDataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::is_directory(root / "videos")) throw Error("dataset: missing videos/ in '" + dir + "'");
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(root / "videos"))
        if (entry.is_directory()) names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    SyntheticDataset out;
    for (const std::string& name : names) {
        const fs::path vdir = root / "videos" / name;
        if (fs::exists(vdir / "saliency.bin")) {
            SaliencySample sample;
            sample.clip = load_clip_dir(vdir);
            sample.saliency = read_tensor_blob((vdir / "saliency.bin").string()).second;
            sample.fixations = read_tensor_blob((vdir / "fixations.bin").string()).second;
            out.saliency.push_back(std::move(sample));
        } else {
            out.labeled.push_back(load_clip_dir(vdir));
        }
    }
    return out;
}

SplitIds split_ids(std::vector<std::string> ids, double train_frac, double val_frac,
                   std::uint64_t seed) {
    if (train_frac < 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0)
        throw Error("split: bad fractions");
    RngState rng(seed);
    for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[rng.next_u64() % i]);
    const std::size_t n = ids.size();
    const std::size_t n_train = static_cast<std::size_t>(std::llround(train_frac * n));
    const std::size_t n_val = static_cast<std::size_t>(std::llround(val_frac * n));
    SplitIds out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train)
            out.train.push_back(ids[i]);
        else if (i < n_train + n_val)
            out.val.push_back(ids[i]);
        else
            out.test.push_back(ids[i]);
    }
    return out;
}

namespace {

void write_id_file(const fs::path& path, const std::vector<std::string>& ids) {
    std::ostringstream text;
    for (const std::string& id : ids) text << id << "\n";
    write_text_file(path.string(), text.str());
}

std::vector<std::string> read_id_file(const fs::path& path) {
    std::istringstream in(read_text_file(path.string()));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

}  // namespace

void write_split_files(const std::string& dir, const SplitIds& splits) {
    const fs::path root = fs::path(dir) / "splits";
    fs::create_directories(root);
    write_id_file(root / "train.txt", splits.train);
    write_id_file(root / "val.txt", splits.val);
    write_id_file(root / "test.txt", splits.test);
}

SplitIds read_split_files(const std::string& dir) {
    const fs::path root = fs::path(dir) / "splits";
    SplitIds out;
    out.train = read_id_file(root / "train.txt");
    out.val = read_id_file(root / "val.txt");
    out.test = read_id_file(root / "test.txt");
    return out;
}

}  // namespace dagr
