#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "featimg/autoencoder.hpp"
#include "featimg/core_data.hpp"
#include "featimg/ingestion.hpp"
#include "featimg/regressor.hpp"

namespace featimg {

struct ExperimentPaths {
    std::filesystem::path videos_dir = "data/videos";
    std::filesystem::path labels_file = "data/labels.csv";
    std::filesystem::path folds_file = "data/folds.csv";
    std::filesystem::path output_dir = "out";
    /// Empty -> $FEATIMG_WEIGHTS_CACHE.
    std::filesystem::path weights_cache;

    bool operator==(const ExperimentPaths&) const = default;
};

/// One spec and one task. The nested configs' spec, channel counts and
/// task are overwritten by `normalize`; their rng_seed fields are ignored
/// by cross-validation, which derives per-stage seeds from `rng_seed`.
struct ExperimentConfig {
    ExperimentPaths paths;
    InputStackSpec spec = InputStackSpec::I1;
    TaskKind task = TaskKind::Motility;
    AutoencoderConfig autoencoder;
    RegressorConfig regressor;
    SamplingPlan train_sampling{4, 0, SamplingMode::UniformRandomStart};
    SamplingPlan eval_sampling{4, 0, SamplingMode::EvenlySpaced};
    int frame_size = 256;
    std::uint64_t rng_seed = 0;
    bool deterministic = false;
    int workers = 1;
    /// Train the autoencoder on every video, held-out fold included.
    bool autoencoder_on_all_videos = false;

    /// Propagates spec, feature channels and task into the nested configs.
    void normalize();
    /// Throws ValidationError when nested configs disagree.
    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown keys are a SchemaError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

} // namespace featimg
