#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dagr/tensor.hpp"

namespace dagr {

struct VideoClip {
    Tensor frames;  // [C,T,H,W], values in [0,1]
    std::string source_id;
    std::vector<std::size_t> frame_indices;
    std::optional<double> mos;
};

void validate_clip(const VideoClip& clip);

/// Segment-center sampling: index_i = clamp(round((i+0.5)*L/N - 0.5), 0, L-1).
std::vector<std::size_t> sample_frames(std::size_t source_length, std::size_t n_frames);

/// Bilinear resize of one [C,h,w] frame; defaults to the 224x398 working size.
Tensor resize_frame(const Tensor& frame, std::size_t height = 224, std::size_t width = 398);

struct BlobParams {
    double sigma_frac = 0.18;   // blob stddev as a fraction of min(H,W)
    double margin_frac = 0.25;  // trajectory endpoints stay inside this margin
};

struct NoiseParams {
    double sigma_min = 0.0;
    double sigma_max = 0.25;
};

struct SyntheticSpec {
    std::uint64_t seed = 0;
    std::size_t num_videos = 4;
    std::size_t frames_per_video = 60;      // saliency clips
    std::size_t vqa_frames_per_video = 8;   // quality-labeled clips
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t source_length = 240;
    BlobParams blob;
    NoiseParams noise;

    void validate() const;
};

struct SaliencySample {
    VideoClip clip;
    Tensor saliency;   // [1,T,H,W] ground truth in [0,1]
    Tensor fixations;  // [1,T,H,W] binary, one fixation per frame
};

struct SyntheticDataset {
    std::vector<SaliencySample> saliency;
    std::vector<VideoClip> labeled;
};

/// Moving-Gaussian-blob clips. The blob density is the ground-truth saliency,
/// its center pixel the fixation; labeled clips add per-video noise whose
/// level maps monotonically onto the MOS.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

double mos_for_sigma(double sigma, const NoiseParams& noise);

// On-disk layout: spec.json, labels.csv, splits/{train,val,test}.txt and one
// directory per video holding clip.bin / meta.json (+ saliency and fixations
// for the eye-tracking-style subset).
void save_dataset(const std::string& dir, const SyntheticDataset& dataset,
                  const SyntheticSpec& spec);
SyntheticDataset load_dataset(const std::string& dir);

struct SplitIds {
    std::vector<std::string> train, val, test;
};

/// Deterministic 80:10:10 split (by fractions) of the given ids.
SplitIds split_ids(std::vector<std::string> ids, double train_frac, double val_frac,
                   std::uint64_t seed);
void write_split_files(const std::string& dir, const SplitIds& splits);
SplitIds read_split_files(const std::string& dir);

}  // namespace dagr
