#pragma once

// Synthetic microscopy-like videos with exactly known labels.
//
// Particles get a motility class by exact quota, move according to the
// class, and are drawn as a bright elliptic head with a one-pixel tail.
// Morphology-analog defects perturb the head shape (head), the brightness
// of the first tail segment (midpiece) or the tail length (tail). Labels are
// counted from the particle log, so they are exact by construction.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/types.h>

#include "featimg/core_data.hpp"

namespace featimg {

struct SynthParams {
    int n_particles = 20;
    Triple motility_fractions{0.5, 0.3, 0.2}; // progressive, non-progressive, immotile
    Triple defect_fractions{0.1, 0.1, 0.1};   // head, midpiece, tail
    int n_frames = 40;
    int frame_size = 64;
    double speed_px_per_frame = 1.0;
    double jitter_px = 1.5;
    double noise_sigma = 0.02;
    double head_radius_px = 1.5;
    std::uint64_t rng_seed = 0;

    /// Throws ValidationError for fractions outside [0,1], motility
    /// fractions not summing to 1 ± 1e-9, n_frames < 18 and similar.
    void validate() const;
};

nlohmann::json to_json(const SynthParams& params);
SynthParams synth_params_from_json(const nlohmann::json& j);

enum class MotilityClass : std::uint8_t { Progressive, NonProgressive, Immotile };

std::string to_string(MotilityClass cls);
MotilityClass parse_motility_class(std::string_view name);

struct Point2 {
    double x = 0;
    double y = 0;
};

struct ParticleRecord {
    int id = 0;
    MotilityClass cls = MotilityClass::Immotile;
    bool head_defect = false;
    bool midpiece_defect = false;
    bool tail_defect = false;
    std::vector<Point2> trajectory; // one head centre per frame
    std::vector<double> heading;    // radians, one per frame
};

struct SynthVideo {
    std::string video_id;
    torch::Tensor frames; // n_frames × frame_size × frame_size, values in [0,1]
    SemenLabels labels;
    std::vector<ParticleRecord> particle_log;
};

/// Net displacement |p_last - p_first| of one particle.
double net_displacement(const ParticleRecord& particle);

SynthVideo generate_video(const SynthParams& params, const std::string& video_id = "synth");

/// Per-video label draws for generate_dataset: motility fractions uniform on
/// the simplex, each defect fraction uniform in [defect_min, defect_max].
struct SynthDatasetParams {
    SynthParams base;
    double defect_min = 0.0;
    double defect_max = 0.4;
};

struct SynthDataset {
    std::vector<SynthVideo> videos;
    LabelMap labels;
    FoldSplit folds;
};

/// Video i (0-based) goes to fold (i mod 3) + 1. Throws ValidationError for
/// fewer than 3 videos.
SynthDataset generate_dataset(int n_videos, const SynthDatasetParams& params, std::uint64_t rng_seed);

nlohmann::json particle_log_to_json(const SynthVideo& video);
std::vector<ParticleRecord> particle_log_from_json(const nlohmann::json& j);

/// Writes videos/<id>.frames (8-bit), particles/<id>.json, labels.csv and
/// folds.csv under `out_dir`.
void write_dataset(const SynthDataset& dataset, const std::filesystem::path& out_dir);

} // namespace featimg
