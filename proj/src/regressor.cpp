#include "featimg/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <sstream>

#include <torch/torch.h>

#include "featimg/io_util.hpp"
#include "featimg/runtime.hpp"

namespace featimg {

namespace nn = torch::nn;

namespace {

// --- ResNet-34 ----------------------------------------------------------------
// Parameter names follow torchvision so converted ImageNet weights load as-is.

struct BasicBlockImpl : nn::Module {
    BasicBlockImpl(int in, int out, int stride) {
        conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
        bn1 = register_module("bn1", nn::BatchNorm2d(out));
        conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).stride(1).padding(1).bias(false)));
        bn2 = register_module("bn2", nn::BatchNorm2d(out));
        if (stride != 1 || in != out) {
            downsample = register_module(
                "downsample",
                nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)), nn::BatchNorm2d(out)));
        }
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto out = torch::relu(bn1(conv1(x)));
        out = bn2(conv2(out));
        const auto identity = downsample.is_empty() ? x : downsample->forward(x);
        return torch::relu(out + identity);
    }

    nn::Conv2d conv1{nullptr}, conv2{nullptr};
    nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
    nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BasicBlock);

class ResNet34 : public RegressorNetImpl {
public:
    explicit ResNet34(int in_channels) {
        conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, 64, 7).stride(2).padding(3).bias(false)));
        bn1 = register_module("bn1", nn::BatchNorm2d(64));
        const int blocks[] = {3, 4, 6, 3};
        const int widths[] = {64, 128, 256, 512};
        int in = 64;
        for (int stage = 0; stage < 4; ++stage) {
            nn::Sequential layer;
            for (int b = 0; b < blocks[stage]; ++b) {
                const int stride = (stage > 0 && b == 0) ? 2 : 1;
                layer->push_back(BasicBlock(in, widths[stage], stride));
                in = widths[stage];
            }
            layers[stage] = register_module("layer" + std::to_string(stage + 1), layer);
        }
        fc = register_module("fc", nn::Linear(512, 3));
    }

    torch::Tensor embed(const torch::Tensor& x) override {
        auto y = torch::relu(bn1(conv1(x)));
        y = torch::max_pool2d(y, 3, 2, 1);
        for (auto& layer : layers) y = layer->forward(y);
        return torch::adaptive_avg_pool2d(y, {1, 1}).flatten(1);
    }
    int embedding_dim() const override { return 512; }

    nn::Conv2d conv1{nullptr};
    nn::BatchNorm2d bn1{nullptr};
    std::array<nn::Sequential, 4> layers{nn::Sequential{nullptr}, nn::Sequential{nullptr}, nn::Sequential{nullptr},
                                         nn::Sequential{nullptr}};
};

// --- tiny CNN -----------------------------------------------------------------

class TinyCnn : public RegressorNetImpl {
public:
    explicit TinyCnn(int in_channels) {
        features = register_module(
            "features",
            nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels, 16, 3).padding(1)), nn::ReLU(),
                           nn::MaxPool2d(nn::MaxPool2dOptions(2)),
                           nn::Conv2d(nn::Conv2dOptions(16, 32, 3).padding(1)), nn::ReLU(),
                           nn::MaxPool2d(nn::MaxPool2dOptions(2)),
                           nn::Conv2d(nn::Conv2dOptions(32, 64, 3).padding(1)), nn::ReLU()));
        fc = register_module("fc", nn::Linear(64, 3));
    }

    torch::Tensor embed(const torch::Tensor& x) override {
        return torch::adaptive_avg_pool2d(features->forward(x), {1, 1}).flatten(1);
    }
    int embedding_dim() const override { return 64; }

    nn::Sequential features{nullptr};
};

void init_parameters(nn::Module& net, at::Generator& gen) {
    torch::NoGradGuard guard;
    net.apply([&](nn::Module& m) {
        if (auto* conv = m.as<nn::Conv2d>()) {
            auto& w = conv->weight;
            const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
            const double bound = std::sqrt(6.0 / fan_in);
            w.copy_(torch::rand(w.sizes(), gen, w.options()) * (2 * bound) - bound);
            if (conv->bias.defined()) conv->bias.zero_();
        } else if (auto* lin = m.as<nn::Linear>()) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(lin->weight.size(1)));
            lin->weight.copy_(torch::rand(lin->weight.sizes(), gen, lin->weight.options()) * (2 * bound) - bound);
            lin->bias.copy_(torch::rand(lin->bias.sizes(), gen, lin->bias.options()) * (2 * bound) - bound);
        } else if (auto* bn = m.as<nn::BatchNorm2d>()) {
            bn->weight.fill_(1.0);
            bn->bias.zero_();
        }
    });
}

std::vector<NamedTensor> state_of(const nn::Module& net) {
    std::vector<NamedTensor> out;
    for (const auto& p : net.named_parameters()) out.push_back({p.key(), p.value()});
    for (const auto& b : net.named_buffers()) out.push_back({b.key(), b.value()});
    return out;
}

void load_state(nn::Module& net, const Checkpoint& ckpt, const std::string& skip_prefix,
                const std::string& adapt_name) {
    torch::NoGradGuard guard;
    auto assign = [&](const std::string& name, torch::Tensor& target) {
        if (!skip_prefix.empty() && name.rfind(skip_prefix, 0) == 0) return;
        const auto& stored = ckpt.at(name);
        if (name == adapt_name && stored.sizes() != target.sizes()) {
            // Channel-mean of the stored kernel, replicated over every input channel.
            const auto mean = stored.to(target.dtype()).mean(1, true);
            target.copy_(mean.expand_as(target));
            return;
        }
        if (stored.sizes() != target.sizes()) {
            std::ostringstream msg;
            msg << "tensor " << name << " has shape " << stored.sizes() << ", expected " << target.sizes();
            throw SchemaError(msg.str());
        }
        target.copy_(stored.to(target.dtype()));
    };
    for (auto& p : net.named_parameters()) assign(p.key(), p.value());
    for (auto& b : net.named_buffers()) assign(b.key(), b.value());
}

std::shared_ptr<RegressorNetImpl> make_net(BackboneKind kind, int in_channels) {
    if (kind == BackboneKind::TinyCnn) return std::make_shared<TinyCnn>(in_channels);
    return std::make_shared<ResNet34>(in_channels);
}

std::filesystem::path weights_file(const RegressorBuildOptions& options) {
    std::filesystem::path dir = options.weights_cache;
    if (dir.empty()) {
        if (const char* env = std::getenv(kWeightsCacheEnv); env && *env) dir = env;
    }
    if (dir.empty()) {
        throw WeightsUnavailableError(std::string("resnet34_pretrained needs a weights cache; set ") + kWeightsCacheEnv +
                                      " or pass a cache directory (populate it with tools/export_resnet34_weights.py)");
    }
    const auto file = dir / kResNet34WeightsFile;
    if (!std::filesystem::exists(file)) {
        throw WeightsUnavailableError("pretrained weights not found at " + file.string() +
                                      " (populate the cache with tools/export_resnet34_weights.py)");
    }
    return file;
}

void check_channels(const Encoder& encoder, const Regressor& regressor) {
    if (encoder.feature_channels() != regressor.config().input_channels) {
        throw SpecMismatchError("encoder emits " + std::to_string(encoder.feature_channels()) +
                                " feature channels but the regressor expects " +
                                std::to_string(regressor.config().input_channels));
    }
}

torch::Dtype param_dtype(const nn::Module& m) {
    return m.parameters().front().scalar_type();
}

} // namespace

std::string to_string(BackboneKind kind) {
    switch (kind) {
    case BackboneKind::ResNet34Pretrained: return "resnet34_pretrained";
    case BackboneKind::ResNet34Random: return "resnet34_random";
    case BackboneKind::TinyCnn: return "tiny_cnn";
    }
    return "?";
}

BackboneKind parse_backbone(std::string_view name) {
    if (name == "resnet34_pretrained") return BackboneKind::ResNet34Pretrained;
    if (name == "resnet34_random") return BackboneKind::ResNet34Random;
    if (name == "tiny_cnn") return BackboneKind::TinyCnn;
    throw UsageError("unknown backbone '" + std::string(name) +
                     "'; valid backbones: resnet34_pretrained, resnet34_random, tiny_cnn");
}

std::string to_string(RegressionLoss loss) {
    return loss == RegressionLoss::L1 ? "l1" : "l2";
}

RegressionLoss parse_loss(std::string_view name) {
    if (name == "l1" || name == "L1") return RegressionLoss::L1;
    if (name == "l2" || name == "L2") return RegressionLoss::L2;
    throw UsageError("unknown loss '" + std::string(name) + "'; valid losses: l1, l2");
}

void RegressorConfig::validate() const {
    if (input_channels <= 0) throw PreconditionError("input_channels must be positive");
    if (epochs <= 0 || batch_size <= 0 || !(learning_rate > 0)) {
        throw PreconditionError("epochs, batch_size and learning_rate must be positive");
    }
}

nlohmann::json to_json(const RegressorConfig& c) {
    return {
        {"backbone", to_string(c.backbone)},
        {"input_channels", c.input_channels},
        {"task", to_string(c.task)},
        {"freeze_encoder", c.freeze_encoder},
        {"loss", to_string(c.loss)},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"rng_seed", c.rng_seed},
    };
}

RegressorConfig regressor_config_from_json(const nlohmann::json& j) {
    RegressorConfig c;
    if (j.contains("backbone")) c.backbone = parse_backbone(j.at("backbone").get<std::string>());
    c.input_channels = j.value("input_channels", c.input_channels);
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
    if (j.contains("loss")) c.loss = parse_loss(j.at("loss").get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    return c;
}

torch::Tensor RegressorNetImpl::forward(const torch::Tensor& x) {
    return fc->forward(embed(x)) * kPercentScale;
}

Regressor::Regressor(RegressorConfig config, std::shared_ptr<RegressorNetImpl> net)
    : config_(std::move(config)), net_(std::move(net)) {}

torch::Tensor Regressor::predict(const torch::Tensor& features) const {
    if (features.dim() != 4 || features.size(1) != config_.input_channels) {
        std::ostringstream msg;
        msg << "regressor expects N×" << config_.input_channels << "×H×W features, got " << features.sizes();
        throw ShapeError(msg.str());
    }
    torch::NoGradGuard guard;
    return net_->forward(features.to(param_dtype(*net_)));
}

std::vector<NamedTensor> Regressor::named_state() const {
    return state_of(*net_);
}

Regressor build_regressor(const RegressorConfig& config, const RegressorBuildOptions& options) {
    config.validate();
    auto net = make_net(config.backbone, config.input_channels);
    auto gen = make_generator(config.rng_seed);
    init_parameters(*net, gen);
    if (config.backbone == BackboneKind::ResNet34Pretrained) {
        const auto ckpt = read_checkpoint(weights_file(options));
        if (ckpt.kind != CheckpointKind::BackboneWeights) {
            throw SchemaError("weights cache file is not a backbone weights checkpoint");
        }
        // Backbone only: the 3-output head stays freshly initialized.
        load_state(*net, ckpt, "fc.", "conv1.weight");
    }
    net->eval();
    return Regressor(config, std::move(net));
}

void export_backbone_weights(const Regressor& resnet, const std::filesystem::path& path) {
    if (resnet.config().backbone == BackboneKind::TinyCnn) {
        throw PreconditionError("only ResNet-34 backbones have a weights-cache layout");
    }
    Checkpoint ckpt;
    ckpt.kind = CheckpointKind::BackboneWeights;
    ckpt.config = {{"arch", "resnet34"}, {"input_channels", resnet.config().input_channels}};
    for (auto& t : resnet.named_state()) {
        if (t.name.rfind("fc.", 0) != 0) ckpt.tensors.push_back(std::move(t));
    }
    write_checkpoint(path, ckpt);
}

torch::Tensor forward_batch(const Encoder& encoder, const Regressor& regressor, const torch::Tensor& stacks) {
    check_channels(encoder, regressor);
    return regressor.predict(encoder.forward(stacks));
}

Triple forward(const Encoder& encoder, const Regressor& regressor, const FrameStack& stack) {
    encoder.require_spec(stack.spec);
    const auto out = forward_batch(encoder, regressor, stack.data.unsqueeze(0)).to(torch::kFloat64);
    const auto* p = out.data_ptr<double>();
    return {p[0], p[1], p[2]};
}

torch::Tensor regression_loss(const torch::Tensor& predictions, const torch::Tensor& targets, RegressionLoss loss) {
    if (predictions.sizes() != targets.sizes()) {
        throw ShapeError("regression loss: prediction and target shapes differ");
    }
    const auto diff = predictions - targets;
    return loss == RegressionLoss::L1 ? diff.abs().mean() : diff.square().mean();
}

RegressorTrainResult train_regressor(const Encoder& encoder, Regressor& regressor,
                                     const std::vector<RegressionSample>& dataset,
                                     const RegressorTrainOptions& options) {
    const auto& cfg = regressor.config_;
    cfg.validate();
    if (dataset.empty()) {
        throw PreconditionError("train_regressor needs a non-empty dataset");
    }
    check_channels(encoder, regressor);
    for (const auto& s : dataset) encoder.require_spec(s.stack.spec);

    auto& net = *regressor.net_;
    const auto dtype = param_dtype(net);
    const auto n = static_cast<std::int64_t>(dataset.size());

    std::vector<FrameStack> stacks;
    stacks.reserve(dataset.size());
    auto targets = torch::empty({n, 3}, torch::kFloat64);
    for (std::int64_t i = 0; i < n; ++i) {
        stacks.push_back(dataset[i].stack);
        for (int k = 0; k < 3; ++k) targets[i][k] = dataset[i].target[k];
    }
    targets = targets.to(dtype);
    const auto inputs = batch_of(stacks);

    RegressorTrainResult result;
    torch::Tensor features;
    std::vector<torch::Tensor> params = net.parameters();
    if (cfg.freeze_encoder) {
        std::vector<torch::Tensor> chunks;
        for (std::int64_t b = 0; b < n; b += 64) {
            chunks.push_back(encoder.forward(inputs.slice(0, b, std::min(n, b + 64)).to(encoder.parameters().front().scalar_type())));
        }
        features = torch::cat(chunks).to(dtype);
    } else {
        result.tuned_encoder = encoder.clone();
        for (auto& p : result.tuned_encoder->parameters()) params.push_back(p);
    }

    if (options.init_bias_to_target_mean) {
        torch::NoGradGuard guard;
        net.fc->bias.copy_(targets.mean(0) / kPercentScale);
    }

    torch::optim::Adam optimizer(params, torch::optim::AdamOptions(cfg.learning_rate));
    std::mt19937_64 rng(io::mix_seed(cfg.rng_seed, 0x4e6));
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    // Batch boundaries; a trailing batch of one joins its predecessor so
    // batch norm always sees at least two samples.
    std::vector<std::pair<std::int64_t, std::int64_t>> batches;
    for (std::int64_t b = 0; b < n; b += cfg.batch_size) batches.emplace_back(b, std::min<std::int64_t>(n, b + cfg.batch_size));
    if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
        batches[batches.size() - 2].second = n;
        batches.pop_back();
    }

    net.train();
    if (result.tuned_encoder) result.tuned_encoder->module()->train();
    int steps = 0;
    const int first_epoch = regressor.loss_history_.empty() ? 1 : regressor.loss_history_.back().epoch + 1;
    for (int e = 0; e < cfg.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0;
        std::int64_t seen = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto [begin, end] = batches[bi];
            const auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + begin, order.begin() + end));
            torch::Tensor x;
            if (cfg.freeze_encoder) {
                x = features.index_select(0, idx);
            } else {
                x = result.tuned_encoder->forward_train(inputs.index_select(0, idx).to(dtype));
            }
            optimizer.zero_grad();
            auto loss = regression_loss(net.forward(x), targets.index_select(0, idx), cfg.loss);
            const double value = loss.item<double>();
            if (!std::isfinite(value)) {
                throw TrainingError("non-finite regression loss at epoch " + std::to_string(first_epoch + e) +
                                        ", batch " + std::to_string(bi) + ": " + io::format_double(value),
                                    first_epoch + e, static_cast<int>(bi), value);
            }
            loss.backward();
            optimizer.step();
            sum += value * static_cast<double>(end - begin);
            seen += end - begin;
            if (options.max_steps > 0 && ++steps >= options.max_steps) break;
        }
        const LossPoint point{first_epoch + e, sum / static_cast<double>(seen)};
        regressor.loss_history_.push_back(point);
        result.loss_history.push_back(point);
        if (options.on_epoch) options.on_epoch(point);
        if (options.max_steps > 0 && steps >= options.max_steps) break;
    }
    net.eval();
    if (result.tuned_encoder) result.tuned_encoder->module()->eval();
    return result;
}

Triple aggregate_predictions(std::span<const Triple> per_stack) {
    if (per_stack.empty()) {
        throw PreconditionError("cannot aggregate zero predictions");
    }
    Triple mean{0, 0, 0};
    for (const auto& t : per_stack) {
        for (int k = 0; k < 3; ++k) mean[k] += t[k];
    }
    for (auto& v : mean) v = std::clamp(v / static_cast<double>(per_stack.size()), 0.0, 100.0);
    return mean;
}

Triple predict_video(const Encoder& encoder, const Regressor& regressor, const std::vector<FrameStack>& stacks) {
    if (stacks.empty()) {
        throw PreconditionError("predict_video needs at least one stack");
    }
    for (const auto& s : stacks) encoder.require_spec(s.spec);
    const auto out = forward_batch(encoder, regressor, batch_of(stacks)).to(torch::kFloat64).contiguous();
    std::vector<Triple> per_stack(stacks.size());
    const auto* p = out.data_ptr<double>();
    for (std::size_t i = 0; i < stacks.size(); ++i) per_stack[i] = {p[3 * i], p[3 * i + 1], p[3 * i + 2]};
    return aggregate_predictions(per_stack);
}

Triple predict_video(const Encoder& encoder, const Regressor& regressor, const VideoSource& source,
                     const SamplingPlan& plan, int frame_size) {
    return predict_video(encoder, regressor, sample_stacks(source, encoder.spec(), plan, frame_size));
}

void export_regressor(const Regressor& regressor, const std::filesystem::path& path) {
    Checkpoint ckpt;
    ckpt.kind = CheckpointKind::Regressor;
    ckpt.config = to_json(regressor.config());
    ckpt.tensors = regressor.named_state();
    write_checkpoint(path, ckpt);
}

Regressor import_regressor(const std::filesystem::path& path) {
    const auto ckpt = read_checkpoint(path);
    if (ckpt.kind != CheckpointKind::Regressor) {
        throw SchemaError(path.string() + " is not a regressor checkpoint");
    }
    const auto config = regressor_config_from_json(ckpt.config);
    auto net = make_net(config.backbone, config.input_channels);
    load_state(*net, ckpt, "", "");
    net->eval();
    return Regressor(config, std::move(net));
}

} // namespace featimg
