#pragma once

// Three-fold cross-validation harness.
//
// For held-out fold f the autoencoder and regressor see only videos from
// the other two folds (unless autoencoder_on_all_videos is set, which
// widens the autoencoder's set only). Fold f's videos are then predicted
// from their evaluation stacks and scored per video.

#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "featimg/core_data.hpp"
#include "featimg/evaluation.hpp"
#include "featimg/experiment.hpp"

namespace featimg {

struct SplitRecord {
    InputStackSpec spec;
    TaskKind task;
    int fold;
    std::vector<std::string> train_ids;
    std::vector<std::string> autoencoder_ids;
    std::vector<std::string> eval_ids;
};

/// Ids present in both the training set (regressor or autoencoder, the
/// latter only when strict isolation applies) and the evaluation set.
std::vector<std::string> isolation_violations(const SplitRecord& split, bool autoencoder_sees_all);

struct FoldSeeds {
    std::uint64_t autoencoder;
    std::uint64_t regressor;
    std::uint64_t train_sampling;
};

/// Pure function of (global seed, spec, task, fold). The autoencoder seed
/// ignores the task so both tasks can share one encoder.
FoldSeeds derive_fold_seeds(std::uint64_t seed, InputStackSpec spec, TaskKind task, int fold);

/// Trained encoders keyed by everything that determines them. Shared
/// between runs for different tasks of the same spec.
class EncoderCache {
public:
    Encoder get_or_train(const std::string& key, const std::function<Encoder()>& train);
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, Encoder> encoders_;
};

struct FoldContext {
    const ExperimentConfig& config;
    int fold;
    FoldSeeds seeds;
    std::vector<std::string> train_ids;
    std::vector<std::string> autoencoder_ids;
    /// Labels of `train_ids` only.
    LabelMap train_labels;
    /// Every resolved source, keyed by id.
    const std::map<std::string, VideoSource>& sources;
    EncoderCache* encoder_cache;
};

using VideoPredictor = std::function<Triple(const std::string& video_id, const std::vector<FrameStack>& stacks)>;
using PredictorFactory = std::function<VideoPredictor(const FoldContext&)>;

/// The two-step pipeline: train the autoencoder, freeze (or fine-tune) its
/// encoder, train the regressor, predict by per-video mean.
VideoPredictor train_fold_predictor(const FoldContext& context);

struct CrossValHooks {
    /// Empty -> train_fold_predictor.
    PredictorFactory predictor_factory;
    std::function<void(const SplitRecord&)> on_split;
    std::function<void(const std::string&)> log;
    EncoderCache* encoder_cache = nullptr;
};

/// Wraps the failure of one (spec, task, fold) cell.
class CrossValidationError : public Error {
public:
    CrossValidationError(InputStackSpec spec, TaskKind task, int fold, std::exception_ptr cause,
                         const std::string& detail);
    InputStackSpec spec() const noexcept { return spec_; }
    TaskKind task() const noexcept { return task_; }
    int fold() const noexcept { return fold_; }
    std::exception_ptr cause() const noexcept { return cause_; }

private:
    InputStackSpec spec_;
    TaskKind task_;
    int fold_;
    std::exception_ptr cause_;
};

/// Runs folds 1..3 in order. Throws ValidationError on any isolation
/// violation before training starts for that fold.
MetricsReport run_cross_validation(ExperimentConfig config, const CrossValHooks& hooks = {});

} // namespace featimg
