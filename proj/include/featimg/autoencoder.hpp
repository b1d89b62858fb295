#pragma once

// Step one of the pipeline: a resolution-preserving convolutional
// autoencoder trained on frame stacks with a mean-squared reconstruction
// loss. Its encoder turns a C×H×W stack into an F×H×W feature image.
//
// Encoder:  C -> w0 -> w1 -> ... -> F   (3×3, stride 1, same padding,
//           ReLU between layers, linear last layer)
// Decoder:  F -> ... -> w1 -> w0 -> C   (ReLU between layers, logistic output)

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/nn/modules/container/sequential.h>
#include <torch/types.h>

#include "featimg/checkpoint.hpp"
#include "featimg/core_data.hpp"

namespace featimg {

struct AutoencoderConfig {
    InputStackSpec spec = InputStackSpec::I1;
    int feature_channels = 3;
    std::vector<int> hidden_widths{64, 32};
    int epochs = 2000;
    int batch_size = 4;
    double learning_rate = 1e-3;
    std::uint64_t rng_seed = 0;

    /// Throws PreconditionError for F <= 0, empty or non-positive widths,
    /// non-positive epochs / batch size / learning rate.
    void validate() const;
    bool operator==(const AutoencoderConfig&) const = default;
};

nlohmann::json to_json(const AutoencoderConfig& config);
AutoencoderConfig autoencoder_config_from_json(const nlohmann::json& j);

struct LossPoint {
    int epoch = 0;
    double loss = 0;
};

/// Writes "epoch,loss" lines with a header.
std::string format_loss_history(const std::vector<LossPoint>& history);

/// Frozen encoder half. Copies share parameters; nothing in this class
/// mutates them, so concurrent `encode` calls are safe.
class Encoder {
public:
    Encoder() = default;
    Encoder(AutoencoderConfig config, torch::nn::Sequential net);

    const AutoencoderConfig& config() const noexcept { return config_; }
    InputStackSpec spec() const noexcept { return config_.spec; }
    int feature_channels() const noexcept { return config_.feature_channels; }
    bool empty() const noexcept { return net_.is_empty(); }

    /// N×C×H×W -> N×F×H×W without building a graph.
    torch::Tensor forward(const torch::Tensor& batch) const;
    FeatureImage encode(const FrameStack& stack) const;
    /// Throws SpecMismatchError naming both specs.
    void require_spec(InputStackSpec expected) const;

    std::vector<NamedTensor> named_parameters() const;
    std::vector<torch::Tensor> parameters() const;
    /// Deep copy with independent, trainable parameters.
    Encoder clone() const;
    /// Differentiable forward for fine-tuning; only valid on a clone.
    torch::Tensor forward_train(const torch::Tensor& batch) const;
    torch::nn::Sequential& module() noexcept { return net_; }

private:
    AutoencoderConfig config_;
    torch::nn::Sequential net_{nullptr};
};

struct AutoencoderTrainOptions;

class Autoencoder {
public:
    Autoencoder() = default;
    Autoencoder(AutoencoderConfig config, torch::nn::Sequential encoder, torch::nn::Sequential decoder);

    const AutoencoderConfig& config() const noexcept { return config_; }
    const std::vector<LossPoint>& loss_history() const noexcept { return loss_history_; }

    /// Differentiable encode + decode of an N×C×H×W batch.
    torch::Tensor reconstruct(const torch::Tensor& batch);
    torch::Tensor encode_batch(const torch::Tensor& batch) const;
    torch::Tensor decode_batch(const torch::Tensor& features) const;

    /// Snapshot of the current encoder weights.
    Encoder encoder() const;

    std::vector<torch::Tensor> parameters() const;
    std::vector<NamedTensor> named_parameters() const;
    /// Converts all parameters (e.g. to kFloat64 for gradient checks).
    void to(torch::Dtype dtype);

    torch::nn::Sequential& encoder_module() noexcept { return encoder_; }
    torch::nn::Sequential& decoder_module() noexcept { return decoder_; }

private:
    friend void train_autoencoder(Autoencoder&, const std::vector<FrameStack>&,
                                  const AutoencoderTrainOptions&);
    AutoencoderConfig config_;
    torch::nn::Sequential encoder_{nullptr};
    torch::nn::Sequential decoder_{nullptr};
    std::vector<LossPoint> loss_history_;
};

/// Parameters drawn from a generator seeded with config.rng_seed. Weights
/// are uniform ±sqrt(6/fan_in) ahead of a rectifier and ±sqrt(3/fan_in)
/// otherwise; biases uniform ±1/sqrt(fan_in).
Autoencoder build_autoencoder(const AutoencoderConfig& config);

/// Mean of squared elementwise differences; ShapeError on mismatch.
double mse_loss(const torch::Tensor& input, const torch::Tensor& reconstruction);
/// Differentiable variant used by the training loop.
torch::Tensor mse_loss_tensor(const torch::Tensor& input, const torch::Tensor& reconstruction);

struct AutoencoderTrainOptions {
    /// Stop after this many optimizer steps (<= 0: run all epochs).
    int max_steps = 0;
    std::function<void(const LossPoint&)> on_epoch;
};

/// Adam on mse_loss, minibatches drawn from a shuffle seeded by
/// config.rng_seed. Appends one LossPoint per epoch (mean batch MSE).
/// Throws PreconditionError for an empty dataset, SpecMismatchError when a
/// stack does not match config.spec, TrainingError on a non-finite loss.
void train_autoencoder(Autoencoder& model, const std::vector<FrameStack>& stacks,
                       const AutoencoderTrainOptions& options = {});

FeatureImage encode(const Autoencoder& model, const FrameStack& stack);
/// C×H×W reconstruction in [0,1]; ShapeError if the feature channel count
/// is not F.
torch::Tensor decode(const Autoencoder& model, const FeatureImage& feature);

void export_encoder(const Encoder& encoder, const std::filesystem::path& path);
/// Throws ChecksumError / VersionError for damaged or foreign files.
Encoder import_encoder(const std::filesystem::path& path);
/// Same, and rejects encoders trained for another input spec.
Encoder import_encoder(const std::filesystem::path& path, InputStackSpec expected);

} // namespace featimg
