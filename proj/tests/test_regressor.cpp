#include <doctest.h>

#include <cstdlib>

#include "featimg/autoencoder.hpp"
#include "featimg/errors.hpp"
#include "featimg/regressor.hpp"
#include "featimg/runtime.hpp"
#include "support.hpp"

using namespace featimg;

namespace {

RegressorConfig tiny(int channels = 3) {
    RegressorConfig c;
    c.backbone = BackboneKind::TinyCnn;
    c.input_channels = channels;
    c.epochs = 2;
    c.batch_size = 4;
    c.rng_seed = 3;
    return c;
}

Encoder small_encoder(InputStackSpec spec, int features = 3) {
    AutoencoderConfig c;
    c.spec = spec;
    c.feature_channels = features;
    c.hidden_widths = {8, 4};
    c.rng_seed = 1;
    return build_autoencoder(c).encoder();
}

std::vector<FrameStack> random_stacks(InputStackSpec spec, int count, int size, std::uint64_t seed) {
    auto gen = make_generator(seed);
    std::vector<FrameStack> out;
    for (int i = 0; i < count; ++i) {
        out.push_back({torch::rand({channel_count(spec), size, size}, gen), "v" + std::to_string(i), 0, spec});
    }
    return out;
}

struct EnvGuard {
    explicit EnvGuard(const char* name) : name_(name) {
        if (const char* v = std::getenv(name)) saved_ = v;
        unsetenv(name);
    }
    ~EnvGuard() {
        if (saved_) setenv(name_, saved_->c_str(), 1);
    }
    const char* name_;
    std::optional<std::string> saved_;
};

} // namespace

TEST_CASE("tiny backbone yields three finite outputs") {
    const auto reg = build_regressor(tiny());
    const auto out = reg.predict(torch::rand({2, 3, 64, 64}));
    CHECK(out.sizes() == torch::IntArrayRef{2, 3});
    CHECK(torch::isfinite(out).all().item<bool>());
    CHECK_THROWS_AS(reg.predict(torch::rand({2, 4, 64, 64})), ShapeError);
}

TEST_CASE("ResNet-34 head has width three and adapts its first layer") {
    auto c = tiny();
    c.backbone = BackboneKind::ResNet34Random;
    auto three = build_regressor(c);
    CHECK(three.head()->weight.sizes() == torch::IntArrayRef{3, 512});
    c.input_channels = 4;
    const auto four = build_regressor(c);
    const auto out = four.predict(torch::rand({1, 4, 64, 64}));
    CHECK(out.sizes() == torch::IntArrayRef{1, 3});
    CHECK(torch::isfinite(out).all().item<bool>());
}

TEST_CASE("pretrained backbone loads from the weights cache") {
    test::TempDir cache;
    auto source_cfg = tiny();
    source_cfg.backbone = BackboneKind::ResNet34Random;
    source_cfg.rng_seed = 77;
    const auto source = build_regressor(source_cfg);
    export_backbone_weights(source, cache / kResNet34WeightsFile);

    auto c = tiny();
    c.backbone = BackboneKind::ResNet34Pretrained;
    const auto loaded = build_regressor(c, {cache.path()});
    std::map<std::string, torch::Tensor> src;
    for (const auto& t : source.named_state()) src[t.name] = t.value;
    for (const auto& t : loaded.named_state()) {
        if (t.name.rfind("fc.", 0) == 0) continue;
        CHECK_MESSAGE(torch::equal(t.value, src.at(t.name)), t.name);
    }

    SUBCASE("four input channels replicate the channel mean") {
        c.input_channels = 4;
        const auto adapted = build_regressor(c, {cache.path()});
        torch::Tensor conv1;
        for (const auto& t : adapted.named_state()) {
            if (t.name == "conv1.weight") conv1 = t.value;
        }
        REQUIRE(conv1.size(1) == 4);
        const auto mean = src.at("conv1.weight").mean(1);
        for (int ch = 0; ch < 4; ++ch) CHECK(torch::allclose(conv1.select(1, ch), mean));
    }
}

TEST_CASE("missing weights cache is reported, not downloaded") {
    EnvGuard env(kWeightsCacheEnv);
    auto c = tiny();
    c.backbone = BackboneKind::ResNet34Pretrained;
    CHECK_THROWS_AS(build_regressor(c), WeightsUnavailableError);
    test::TempDir empty;
    CHECK_THROWS_AS(build_regressor(c, {empty.path()}), WeightsUnavailableError);
}

TEST_CASE("zero head predicts zeros for any input") {
    auto reg = build_regressor(tiny());
    {
        torch::NoGradGuard guard;
        reg.head()->weight.zero_();
        reg.head()->bias.zero_();
    }
    const auto out = reg.predict(torch::rand({3, 3, 16, 16}) * 10);
    CHECK(out.abs().max().item<float>() == 0.0f);
}

TEST_CASE("forward is finite and repeatable in inference mode") {
    const auto enc = small_encoder(InputStackSpec::I3);
    const auto reg = build_regressor(tiny());
    const auto stack = random_stacks(InputStackSpec::I3, 1, 16, 2).front();
    const auto a = forward(enc, reg, stack);
    const auto b = forward(enc, reg, stack);
    CHECK(a == b);
    for (double v : a) CHECK(std::isfinite(v));
}

TEST_CASE("scaling head weights scales the non-bias part") {
    auto reg = build_regressor(tiny());
    const auto x = torch::rand({4, 3, 16, 16});
    const auto bias = reg.head()->bias.detach().clone() * kPercentScale;
    const auto base = reg.predict(x) - bias;
    for (double alpha : {0.5, 2.0, -3.0}) {
        auto scaled = build_regressor(tiny());
        {
            torch::NoGradGuard guard;
            scaled.head()->weight.mul_(alpha);
        }
        CHECK(torch::allclose(scaled.predict(x) - bias, base * alpha, 1e-4, 1e-4));
    }
}

TEST_CASE("eight stacks with fixed targets are fitted below one point") {
    const auto enc = small_encoder(InputStackSpec::I1);
    const auto stacks = random_stacks(InputStackSpec::I1, 8, 16, 5);
    std::vector<RegressionSample> data;
    for (int i = 0; i < 8; ++i) {
        data.push_back({stacks[i], {10.0 + 10 * i, 80.0 - 8 * i, 10.0 - i}});
    }
    auto c = tiny();
    c.epochs = 400;
    c.batch_size = 8;
    c.learning_rate = 3e-3;
    auto reg = build_regressor(c);
    train_regressor(enc, reg, data);
    double l1 = 0;
    for (const auto& s : data) {
        const auto p = forward(enc, reg, s.stack);
        for (int k = 0; k < 3; ++k) l1 += std::abs(p[k] - s.target[k]);
    }
    l1 /= 24;
    MESSAGE("training L1 after 400 steps: " << l1);
    CHECK(l1 < 1.0);
    CHECK(reg.loss_history().front().loss > reg.loss_history().back().loss);
}

TEST_CASE("frozen encoder is left untouched and fine-tuning works on a copy") {
    const auto enc = small_encoder(InputStackSpec::I2);
    const auto hash_before = tensor_hash(enc.parameters());
    const auto probe = random_stacks(InputStackSpec::I2, 1, 12, 9).front();
    const auto feature_before = enc.encode(probe).data;
    std::vector<RegressionSample> data;
    for (const auto& s : random_stacks(InputStackSpec::I2, 6, 12, 10)) data.push_back({s, {50, 30, 20}});

    auto reg = build_regressor(tiny());
    const auto frozen = train_regressor(enc, reg, data);
    CHECK_FALSE(frozen.tuned_encoder.has_value());
    CHECK(tensor_hash(enc.parameters()) == hash_before);
    CHECK(torch::equal(enc.encode(probe).data, feature_before));

    auto c = tiny();
    c.freeze_encoder = false;
    auto reg2 = build_regressor(c);
    const auto tuned = train_regressor(enc, reg2, data);
    REQUIRE(tuned.tuned_encoder.has_value());
    CHECK(tensor_hash(tuned.tuned_encoder->parameters()) != hash_before);
    CHECK(tensor_hash(enc.parameters()) == hash_before);
}

TEST_CASE("regressor training preconditions") {
    const auto enc = small_encoder(InputStackSpec::I1);
    auto reg = build_regressor(tiny());
    CHECK_THROWS_AS(train_regressor(enc, reg, {}), PreconditionError);
    auto wide = build_regressor(tiny(4));
    std::vector<RegressionSample> data{{random_stacks(InputStackSpec::I1, 1, 8, 1).front(), {1, 2, 3}}};
    CHECK_THROWS_AS(train_regressor(enc, wide, data), SpecMismatchError);
}

TEST_CASE("batch norm backbone trains when the last batch would hold one sample") {
    auto c = tiny();
    c.backbone = BackboneKind::ResNet34Random;
    c.epochs = 1;
    c.batch_size = 4;
    auto reg = build_regressor(c);
    const auto enc = small_encoder(InputStackSpec::I1);
    std::vector<RegressionSample> data;
    for (const auto& s : random_stacks(InputStackSpec::I1, 5, 32, 4)) data.push_back({s, {40, 40, 20}});
    CHECK_NOTHROW(train_regressor(enc, reg, data));
}

TEST_CASE("regression losses") {
    const auto p = torch::tensor({{1.0, 2.0, 3.0}, {0.0, 0.0, 0.0}});
    const auto t = torch::tensor({{2.0, 2.0, 5.0}, {0.0, 3.0, 0.0}});
    CHECK(regression_loss(p, t, RegressionLoss::L1).item<double>() == doctest::Approx(1.0));
    CHECK(regression_loss(p, t, RegressionLoss::L2).item<double>() == doctest::Approx(14.0 / 6));
    CHECK_THROWS_AS(regression_loss(p, t.slice(0, 0, 1), RegressionLoss::L1), ShapeError);
}

TEST_CASE("video aggregation is a clamped mean") {
    const std::vector<Triple> same(5, Triple{40, 35, 25});
    CHECK(aggregate_predictions(same) == Triple{40, 35, 25});
    const std::vector<Triple> two{{0, 0, 0}, {100, 100, 100}};
    CHECK(aggregate_predictions(two) == Triple{50, 50, 50});
    const std::vector<Triple> wild{{-3, 40, 105}};
    CHECK(aggregate_predictions(wild) == Triple{0, 40, 100});
    CHECK_THROWS_AS(aggregate_predictions(std::vector<Triple>{}), PreconditionError);
}

TEST_CASE("video prediction is bounded and order independent") {
    const auto enc = small_encoder(InputStackSpec::I3);
    auto reg = build_regressor(tiny());
    {
        torch::NoGradGuard guard;
        reg.head()->weight.mul_(1000); // push raw outputs past the bounds
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto stacks = random_stacks(InputStackSpec::I3, 6, 12, seed);
        const auto a = predict_video(enc, reg, stacks);
        std::reverse(stacks.begin(), stacks.end());
        const auto b = predict_video(enc, reg, stacks);
        for (int k = 0; k < 3; ++k) {
            CHECK(a[k] >= 0.0);
            CHECK(a[k] <= 100.0);
            CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
        }
    }
}

TEST_CASE("regressor export and import predict identically") {
    test::TempDir dir;
    for (auto kind : {BackboneKind::TinyCnn, BackboneKind::ResNet34Random}) {
        auto c = tiny();
        c.backbone = kind;
        const auto reg = build_regressor(c);
        export_regressor(reg, dir / "reg.ckpt");
        const auto back = import_regressor(dir / "reg.ckpt");
        CHECK(back.config() == reg.config());
        const auto x = torch::rand({2, 3, 32, 32});
        CHECK(torch::equal(back.predict(x), reg.predict(x)));
    }
}

TEST_CASE("backbone and loss names") {
    for (auto k : {BackboneKind::ResNet34Pretrained, BackboneKind::ResNet34Random, BackboneKind::TinyCnn}) {
        CHECK(parse_backbone(to_string(k)) == k);
    }
    CHECK_THROWS_AS(parse_backbone("vgg"), UsageError);
    CHECK(parse_loss("l2") == RegressionLoss::L2);
    auto c = tiny(4);
    c.loss = RegressionLoss::L2;
    c.freeze_encoder = false;
    CHECK(regressor_config_from_json(to_json(c)) == c);
}
