#include "featimg/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <torch/torch.h>

#include "featimg/ingestion.hpp"
#include "featimg/io_util.hpp"
#include "featimg/runtime.hpp"

namespace featimg {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv3x3(int in, int out) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(1).padding(1));
}

void init_conv(nn::Conv2d& conv, at::Generator& gen, bool relu_follows) {
    const auto& w = conv->weight;
    const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
    const double w_bound = relu_follows ? std::sqrt(6.0 / fan_in) : std::sqrt(3.0 / fan_in);
    const double b_bound = 1.0 / std::sqrt(fan_in);
    torch::NoGradGuard guard;
    w.copy_(torch::rand(w.sizes(), gen, w.options()) * (2 * w_bound) - w_bound);
    conv->bias.copy_(torch::rand(conv->bias.sizes(), gen, conv->bias.options()) * (2 * b_bound) - b_bound);
}

// Conv layers along `widths` with ReLU between them; the last layer is
// linear, or logistic when `sigmoid_out`.
nn::Sequential conv_chain(const std::vector<int>& widths, at::Generator& gen, bool sigmoid_out) {
    nn::Sequential seq;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool last = i + 2 == widths.size();
        auto conv = conv3x3(widths[i], widths[i + 1]);
        init_conv(conv, gen, !last);
        seq->push_back(conv);
        if (!last) {
            seq->push_back(nn::ReLU());
        } else if (sigmoid_out) {
            seq->push_back(nn::Sigmoid());
        }
    }
    return seq;
}

std::vector<NamedTensor> collect(const std::string& prefix, const nn::Sequential& seq) {
    std::vector<NamedTensor> out;
    for (const auto& item : seq->named_parameters()) {
        out.push_back({prefix + item.key(), item.value()});
    }
    return out;
}

void check_batch(const torch::Tensor& batch, int channels, const char* what) {
    if (batch.dim() != 4 || batch.size(1) != channels) {
        std::ostringstream msg;
        msg << what << " expects N×" << channels << "×H×W input, got " << batch.sizes();
        throw ShapeError(msg.str());
    }
}

nn::Sequential clone_seq(const nn::Sequential& seq) {
    return nn::Sequential(std::dynamic_pointer_cast<nn::SequentialImpl>(seq->clone()));
}

} // namespace

void AutoencoderConfig::validate() const {
    if (feature_channels <= 0) {
        throw PreconditionError("feature_channels must be positive, got " + std::to_string(feature_channels));
    }
    if (hidden_widths.empty()) {
        throw PreconditionError("hidden_widths must not be empty");
    }
    if (std::any_of(hidden_widths.begin(), hidden_widths.end(), [](int w) { return w <= 0; })) {
        throw PreconditionError("hidden_widths must be positive");
    }
    if (epochs <= 0 || batch_size <= 0 || !(learning_rate > 0)) {
        throw PreconditionError("epochs, batch_size and learning_rate must be positive");
    }
}

nlohmann::json to_json(const AutoencoderConfig& c) {
    return {
        {"spec", to_string(c.spec)},
        {"feature_channels", c.feature_channels},
        {"hidden_widths", c.hidden_widths},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"rng_seed", c.rng_seed},
    };
}

AutoencoderConfig autoencoder_config_from_json(const nlohmann::json& j) {
    AutoencoderConfig c;
    if (j.contains("spec")) c.spec = parse_spec(j.at("spec").get<std::string>());
    c.feature_channels = j.value("feature_channels", c.feature_channels);
    c.hidden_widths = j.value("hidden_widths", c.hidden_widths);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    return c;
}

std::string format_loss_history(const std::vector<LossPoint>& history) {
    std::string out = "epoch,loss\n";
    for (const auto& p : history) {
        out += std::to_string(p.epoch) + "," + io::format_double(p.loss) + "\n";
    }
    return out;
}

// --- Encoder ----------------------------------------------------------------

Encoder::Encoder(AutoencoderConfig config, nn::Sequential net) : config_(std::move(config)), net_(std::move(net)) {}

torch::Tensor Encoder::forward(const torch::Tensor& batch) const {
    check_batch(batch, channel_count(config_.spec), "encoder");
    torch::NoGradGuard guard;
    return net_.ptr()->forward(batch);
}

torch::Tensor Encoder::forward_train(const torch::Tensor& batch) const {
    check_batch(batch, channel_count(config_.spec), "encoder");
    return net_.ptr()->forward(batch);
}

FeatureImage Encoder::encode(const FrameStack& stack) const {
    require_spec(stack.spec);
    FeatureImage out;
    out.data = forward(stack.data.unsqueeze(0)).squeeze(0);
    out.source_video_id = stack.video_id;
    out.source_start_frame = stack.start_frame;
    return out;
}

void Encoder::require_spec(InputStackSpec expected) const {
    if (config_.spec != expected) {
        throw SpecMismatchError("encoder was trained for " + to_string(config_.spec) + " but input is " +
                                to_string(expected));
    }
}

std::vector<NamedTensor> Encoder::named_parameters() const {
    return collect("encoder.", net_);
}

std::vector<torch::Tensor> Encoder::parameters() const {
    return net_->parameters();
}

Encoder Encoder::clone() const {
    return Encoder(config_, clone_seq(net_));
}

// --- Autoencoder ------------------------------------------------------------

Autoencoder::Autoencoder(AutoencoderConfig config, nn::Sequential encoder, nn::Sequential decoder)
    : config_(std::move(config)), encoder_(std::move(encoder)), decoder_(std::move(decoder)) {}

torch::Tensor Autoencoder::reconstruct(const torch::Tensor& batch) {
    check_batch(batch, channel_count(config_.spec), "autoencoder");
    return decoder_->forward(encoder_->forward(batch));
}

torch::Tensor Autoencoder::encode_batch(const torch::Tensor& batch) const {
    check_batch(batch, channel_count(config_.spec), "encoder");
    torch::NoGradGuard guard;
    return encoder_.ptr()->forward(batch);
}

torch::Tensor Autoencoder::decode_batch(const torch::Tensor& features) const {
    check_batch(features, config_.feature_channels, "decoder");
    torch::NoGradGuard guard;
    return decoder_.ptr()->forward(features);
}

Encoder Autoencoder::encoder() const {
    return Encoder(config_, clone_seq(encoder_));
}

std::vector<torch::Tensor> Autoencoder::parameters() const {
    auto out = encoder_->parameters();
    const auto dec = decoder_->parameters();
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
}

std::vector<NamedTensor> Autoencoder::named_parameters() const {
    auto out = collect("encoder.", encoder_);
    const auto dec = collect("decoder.", decoder_);
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
}

void Autoencoder::to(torch::Dtype dtype) {
    encoder_->to(dtype);
    decoder_->to(dtype);
}

Autoencoder build_autoencoder(const AutoencoderConfig& config) {
    config.validate();
    auto gen = make_generator(config.rng_seed);
    std::vector<int> enc_widths{channel_count(config.spec)};
    enc_widths.insert(enc_widths.end(), config.hidden_widths.begin(), config.hidden_widths.end());
    enc_widths.push_back(config.feature_channels);
    std::vector<int> dec_widths(enc_widths.rbegin(), enc_widths.rend());
    auto encoder = conv_chain(enc_widths, gen, false);
    auto decoder = conv_chain(dec_widths, gen, true);
    return Autoencoder(config, std::move(encoder), std::move(decoder));
}

torch::Tensor mse_loss_tensor(const torch::Tensor& input, const torch::Tensor& reconstruction) {
    if (input.sizes() != reconstruction.sizes()) {
        std::ostringstream msg;
        msg << "mse_loss shape mismatch: " << input.sizes() << " vs " << reconstruction.sizes();
        throw ShapeError(msg.str());
    }
    return (input - reconstruction).square().mean();
}

double mse_loss(const torch::Tensor& input, const torch::Tensor& reconstruction) {
    torch::NoGradGuard guard;
    return mse_loss_tensor(input.to(torch::kFloat64), reconstruction.to(torch::kFloat64)).item<double>();
}

void train_autoencoder(Autoencoder& model, const std::vector<FrameStack>& stacks,
                       const AutoencoderTrainOptions& options) {
    const auto& cfg = model.config_;
    cfg.validate();
    if (stacks.empty()) {
        throw PreconditionError("train_autoencoder needs a non-empty dataset");
    }
    for (const auto& s : stacks) {
        if (s.spec != cfg.spec || s.data.size(0) != channel_count(cfg.spec)) {
            throw SpecMismatchError("stack " + s.video_id + "@" + std::to_string(s.start_frame) + " is " +
                                    to_string(s.spec) + ", autoencoder expects " + to_string(cfg.spec));
        }
    }
    const auto dtype = model.encoder_->parameters().front().scalar_type();
    const auto data = batch_of(stacks).to(dtype);

    torch::optim::Adam optimizer(model.parameters(), torch::optim::AdamOptions(cfg.learning_rate));
    std::mt19937_64 rng(io::mix_seed(cfg.rng_seed, 0xae));
    std::vector<std::int64_t> order(stacks.size());
    std::iota(order.begin(), order.end(), 0);

    model.encoder_->train();
    model.decoder_->train();
    int steps = 0;
    const int first_epoch = model.loss_history_.empty() ? 1 : model.loss_history_.back().epoch + 1;
    for (int e = 0; e < cfg.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0;
        std::int64_t seen = 0;
        int batch_index = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
            const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + begin, order.begin() + end));
            const auto x = data.index_select(0, idx);
            optimizer.zero_grad();
            auto loss = mse_loss_tensor(x, model.reconstruct(x));
            const double value = loss.item<double>();
            if (!std::isfinite(value)) {
                throw TrainingError("non-finite autoencoder loss at epoch " + std::to_string(first_epoch + e) +
                                        ", batch " + std::to_string(batch_index) + ": " + io::format_double(value),
                                    first_epoch + e, batch_index, value);
            }
            loss.backward();
            optimizer.step();
            sum += value * static_cast<double>(end - begin);
            seen += static_cast<std::int64_t>(end - begin);
            if (options.max_steps > 0 && ++steps >= options.max_steps) break;
        }
        const LossPoint point{first_epoch + e, sum / static_cast<double>(seen)};
        model.loss_history_.push_back(point);
        if (options.on_epoch) options.on_epoch(point);
        if (options.max_steps > 0 && steps >= options.max_steps) break;
    }
    model.encoder_->eval();
    model.decoder_->eval();
}

FeatureImage encode(const Autoencoder& model, const FrameStack& stack) {
    if (stack.spec != model.config().spec) {
        throw SpecMismatchError("autoencoder was trained for " + to_string(model.config().spec) +
                                " but input is " + to_string(stack.spec));
    }
    FeatureImage out;
    out.data = model.encode_batch(stack.data.unsqueeze(0)).squeeze(0);
    out.source_video_id = stack.video_id;
    out.source_start_frame = stack.start_frame;
    return out;
}

torch::Tensor decode(const Autoencoder& model, const FeatureImage& feature) {
    if (feature.data.dim() != 3 || feature.data.size(0) != model.config().feature_channels) {
        throw ShapeError("decoder expects " + std::to_string(model.config().feature_channels) +
                         " feature channels");
    }
    return model.decode_batch(feature.data.unsqueeze(0)).squeeze(0);
}

void export_encoder(const Encoder& encoder, const std::filesystem::path& path) {
    if (encoder.empty()) {
        throw PreconditionError("cannot export an empty encoder");
    }
    Checkpoint ckpt;
    ckpt.kind = CheckpointKind::Encoder;
    ckpt.config = to_json(encoder.config());
    ckpt.tensors = encoder.named_parameters();
    write_checkpoint(path, ckpt);
}

Encoder import_encoder(const std::filesystem::path& path) {
    const auto ckpt = read_checkpoint(path);
    if (ckpt.kind != CheckpointKind::Encoder) {
        throw SchemaError(path.string() + " is not an encoder checkpoint");
    }
    auto config = autoencoder_config_from_json(ckpt.config);
    auto model = build_autoencoder(config);
    auto enc = model.encoder();
    torch::NoGradGuard guard;
    for (auto& item : enc.module()->named_parameters()) {
        const auto& stored = ckpt.at("encoder." + item.key());
        if (stored.sizes() != item.value().sizes()) {
            throw SchemaError("encoder tensor " + item.key() + " has unexpected shape");
        }
        item.value().set_data(stored.clone());
    }
    enc.module()->eval();
    return enc;
}

Encoder import_encoder(const std::filesystem::path& path, InputStackSpec expected) {
    auto enc = import_encoder(path);
    enc.require_spec(expected);
    return enc;
}

} // namespace featimg
