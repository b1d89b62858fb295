#pragma once

// Step two of the pipeline: a CNN backbone whose classification layer is
// replaced by a three-output linear head, fed with encoder feature images.
//
// Backbones:
//   resnet34_pretrained  ResNet-34 loaded from the weights cache
//   resnet34_random      same architecture, random init
//   tiny_cnn             3 conv blocks + global average pool, for desk-scale runs
//
// Predictions are in percent: the head output is multiplied by 100, so the
// head itself works on fractions.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/linear.h>
#include <torch/types.h>

#include "featimg/autoencoder.hpp"
#include "featimg/checkpoint.hpp"
#include "featimg/core_data.hpp"
#include "featimg/ingestion.hpp"

namespace featimg {

enum class BackboneKind : std::uint8_t { ResNet34Pretrained, ResNet34Random, TinyCnn };
enum class RegressionLoss : std::uint8_t { L1, L2 };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone(std::string_view name);
std::string to_string(RegressionLoss loss);
RegressionLoss parse_loss(std::string_view name);

inline constexpr double kPercentScale = 100.0;

/// File name looked up inside the weights cache directory.
inline constexpr const char* kResNet34WeightsFile = "resnet34_imagenet.ckpt";
/// Environment variable naming the weights cache directory.
inline constexpr const char* kWeightsCacheEnv = "FEATIMG_WEIGHTS_CACHE";

struct RegressorConfig {
    BackboneKind backbone = BackboneKind::ResNet34Pretrained;
    int input_channels = 3;
    TaskKind task = TaskKind::Motility;
    bool freeze_encoder = true;
    RegressionLoss loss = RegressionLoss::L1;
    int epochs = 30;
    int batch_size = 8;
    double learning_rate = 1e-3;
    std::uint64_t rng_seed = 0;

    void validate() const;
    bool operator==(const RegressorConfig&) const = default;
};

nlohmann::json to_json(const RegressorConfig& config);
RegressorConfig regressor_config_from_json(const nlohmann::json& j);

/// Backbone + head. `embed` maps N×C×H×W to N×D; `head` maps D to 3.
class RegressorNetImpl : public torch::nn::Module {
public:
    virtual torch::Tensor embed(const torch::Tensor& x) = 0;
    virtual int embedding_dim() const = 0;
    /// N×3 predictions in percent.
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear fc{nullptr};
};

struct RegressionSample {
    FrameStack stack;
    Triple target;
};

struct RegressorTrainOptions {
    /// Set the head bias to the mean training target before the first step.
    bool init_bias_to_target_mean = true;
    int max_steps = 0;
    std::function<void(const LossPoint&)> on_epoch;
};

struct RegressorTrainResult {
    std::vector<LossPoint> loss_history;
    /// Fine-tuned copy of the encoder when freeze_encoder is false.
    std::optional<Encoder> tuned_encoder;
};

class Regressor {
public:
    Regressor() = default;
    Regressor(RegressorConfig config, std::shared_ptr<RegressorNetImpl> net);

    const RegressorConfig& config() const noexcept { return config_; }
    const std::vector<LossPoint>& loss_history() const noexcept { return loss_history_; }

    /// N×F×H×W feature batch -> N×3 percent, no graph (inference mode).
    torch::Tensor predict(const torch::Tensor& features) const;
    torch::nn::Linear& head() { return net_->fc; }
    RegressorNetImpl& net() { return *net_; }
    const RegressorNetImpl& net() const { return *net_; }

    std::vector<NamedTensor> named_state() const;

private:
    friend RegressorTrainResult train_regressor(const Encoder&, Regressor&, const std::vector<RegressionSample>&,
                                                const RegressorTrainOptions&);
    RegressorConfig config_;
    std::shared_ptr<RegressorNetImpl> net_;
    std::vector<LossPoint> loss_history_;
};

struct RegressorBuildOptions {
    /// Directory holding kResNet34WeightsFile; empty -> $FEATIMG_WEIGHTS_CACHE.
    std::filesystem::path weights_cache;
};

/// resnet34_pretrained throws WeightsUnavailableError when the cache file is
/// missing. With input_channels != 3 the first convolution is rebuilt for
/// that many channels, each a copy of the channel-mean of the 3-channel
/// kernel.
Regressor build_regressor(const RegressorConfig& config, const RegressorBuildOptions& options = {});

/// Writes a ResNet-34 backbone state in the weights-cache layout. Used to
/// seed caches from converted weights and in tests.
void export_backbone_weights(const Regressor& resnet, const std::filesystem::path& path);

/// head(backbone(encode(stack))), unclamped.
Triple forward(const Encoder& encoder, const Regressor& regressor, const FrameStack& stack);
/// Batch variant: N×C×H×W stacks -> N×3.
torch::Tensor forward_batch(const Encoder& encoder, const Regressor& regressor, const torch::Tensor& stacks);

/// Differentiable regression loss (L1: mean absolute error, L2: mean squared
/// error), both in percentage points.
torch::Tensor regression_loss(const torch::Tensor& predictions, const torch::Tensor& targets, RegressionLoss loss);

/// Adam on the configured loss. With freeze_encoder the encoder is only
/// read; feature images are computed once up front.
RegressorTrainResult train_regressor(const Encoder& encoder, Regressor& regressor,
                                     const std::vector<RegressionSample>& dataset,
                                     const RegressorTrainOptions& options = {});

/// Component-wise mean followed by a clamp to [0,100].
Triple aggregate_predictions(std::span<const Triple> per_stack);

/// Mean over the plan's stacks of `forward`, clamped to [0,100].
Triple predict_video(const Encoder& encoder, const Regressor& regressor, const VideoSource& source,
                     const SamplingPlan& plan, int frame_size);
Triple predict_video(const Encoder& encoder, const Regressor& regressor, const std::vector<FrameStack>& stacks);

void export_regressor(const Regressor& regressor, const std::filesystem::path& path);
/// Rebuilds the architecture from the stored config (no weights cache
/// needed) and loads every parameter and buffer.
Regressor import_regressor(const std::filesystem::path& path);

} // namespace featimg
