#include "featimg/crossval.hpp"

#include <algorithm>
#include <set>

#include <torch/torch.h>

#include "featimg/io_util.hpp"
#include "featimg/runtime.hpp"

namespace featimg {

namespace {

std::string cell_name(InputStackSpec spec, TaskKind task, int fold) {
    return to_string(spec) + "/" + to_string(task) + "/fold" + std::to_string(fold);
}

std::string join(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) out += (out.empty() ? "" : ",") + id;
    return out;
}

std::vector<VideoSource> sources_for(const std::vector<std::string>& ids,
                                     const std::map<std::string, VideoSource>& sources) {
    std::vector<VideoSource> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(sources.at(id));
    return out;
}

} // namespace

std::vector<std::string> isolation_violations(const SplitRecord& split, bool autoencoder_sees_all) {
    std::set<std::string> train(split.train_ids.begin(), split.train_ids.end());
    if (!autoencoder_sees_all) train.insert(split.autoencoder_ids.begin(), split.autoencoder_ids.end());
    std::vector<std::string> out;
    for (const auto& id : split.eval_ids) {
        if (train.contains(id)) out.push_back(id);
    }
    return out;
}

FoldSeeds derive_fold_seeds(std::uint64_t seed, InputStackSpec spec, TaskKind task, int fold) {
    const auto base = io::mix_seed(seed, static_cast<std::uint64_t>(spec) * 16 + static_cast<std::uint64_t>(fold));
    return {
        io::mix_seed(base, 0xAE),
        io::mix_seed(base, 0x100 + static_cast<std::uint64_t>(task)),
        io::mix_seed(base, 0x5A),
    };
}

Encoder EncoderCache::get_or_train(const std::string& key, const std::function<Encoder()>& train) {
    {
        std::lock_guard lock(mutex_);
        if (auto it = encoders_.find(key); it != encoders_.end()) return it->second;
    }
    auto encoder = train();
    std::lock_guard lock(mutex_);
    return encoders_.emplace(key, std::move(encoder)).first->second;
}

std::size_t EncoderCache::size() const {
    std::lock_guard lock(mutex_);
    return encoders_.size();
}

VideoPredictor train_fold_predictor(const FoldContext& ctx) {
    const auto& cfg = ctx.config;
    SamplingPlan train_plan = cfg.train_sampling;
    train_plan.rng_seed = ctx.seeds.train_sampling;

    auto ae_config = cfg.autoencoder;
    ae_config.rng_seed = ctx.seeds.autoencoder;
    auto train_encoder = [&] {
        const auto stacks = sample_dataset(sources_for(ctx.autoencoder_ids, ctx.sources), cfg.spec, train_plan,
                                           cfg.frame_size, cfg.workers);
        auto model = build_autoencoder(ae_config);
        train_autoencoder(model, stacks);
        return model.encoder();
    };
    Encoder encoder;
    if (ctx.encoder_cache) {
        const nlohmann::json key{{"autoencoder", to_json(ae_config)},
                                 {"ids", ctx.autoencoder_ids},
                                 {"frame_size", cfg.frame_size},
                                 {"sampling", {train_plan.stacks_per_video, train_plan.rng_seed, to_string(train_plan.mode)}},
                                 {"videos_dir", cfg.paths.videos_dir.string()}};
        encoder = ctx.encoder_cache->get_or_train(key.dump(), train_encoder);
    } else {
        encoder = train_encoder();
    }

    const auto stacks =
        sample_dataset(sources_for(ctx.train_ids, ctx.sources), cfg.spec, train_plan, cfg.frame_size, cfg.workers);
    std::vector<RegressionSample> samples;
    samples.reserve(stacks.size());
    for (const auto& s : stacks) samples.push_back({s, select_target(ctx.train_labels.at(s.video_id), cfg.task)});

    auto reg_config = cfg.regressor;
    reg_config.rng_seed = ctx.seeds.regressor;
    auto regressor = std::make_shared<Regressor>(build_regressor(reg_config, {cfg.paths.weights_cache}));
    auto result = train_regressor(encoder, *regressor, samples);
    auto final_encoder = std::make_shared<Encoder>(result.tuned_encoder ? *result.tuned_encoder : encoder);

    return [final_encoder, regressor](const std::string&, const std::vector<FrameStack>& eval_stacks) {
        return predict_video(*final_encoder, *regressor, eval_stacks);
    };
}

CrossValidationError::CrossValidationError(InputStackSpec spec, TaskKind task, int fold, std::exception_ptr cause,
                                           const std::string& detail)
    : Error("cross-validation failed at " + cell_name(spec, task, fold) + ": " + detail),
      spec_(spec), task_(task), fold_(fold), cause_(std::move(cause)) {}

MetricsReport run_cross_validation(ExperimentConfig config, const CrossValHooks& hooks) {
    config.normalize();
    config.validate();
    configure_runtime(config.deterministic, config.workers);
    if (config.deterministic) config.workers = 1;

    const auto labels = load_labels(config.paths.labels_file);
    const auto folds = load_folds(config.paths.folds_file);
    std::map<std::string, VideoSource> sources;
    for (const auto& id : folds.all_videos()) {
        if (!labels.contains(id)) throw ValidationError("video " + id + " has a fold but no labels");
        sources.emplace(id, resolve_video(config.paths.videos_dir, id));
    }

    auto log = [&](const std::string& msg) {
        if (hooks.log) hooks.log(msg);
    };
    const auto factory = hooks.predictor_factory ? hooks.predictor_factory : PredictorFactory(train_fold_predictor);

    MetricsReport report;
    report.cells.push_back({config.spec, config.task});
    report.config = to_json(config);

    for (int fold = 1; fold <= FoldSplit::kFolds; ++fold) {
        const auto name = cell_name(config.spec, config.task, fold);
        SplitRecord split{config.spec, config.task, fold, folds.videos_not_in(fold), {}, folds.videos_in(fold)};
        split.autoencoder_ids = config.autoencoder_on_all_videos ? folds.all_videos() : split.train_ids;
        if (hooks.on_split) hooks.on_split(split);
        if (const auto leaked = isolation_violations(split, config.autoencoder_on_all_videos); !leaked.empty()) {
            throw ValidationError("fold isolation violated at " + name + ": " + join(leaked));
        }

        const auto seeds = derive_fold_seeds(config.rng_seed, config.spec, config.task, fold);
        report.seeds[name] = {{"autoencoder", seeds.autoencoder},
                              {"regressor", seeds.regressor},
                              {"train_sampling", seeds.train_sampling}};
        try {
            LabelMap train_labels;
            for (const auto& id : split.train_ids) train_labels.emplace(id, labels.at(id));
            const FoldContext ctx{config,         fold,    seeds, split.train_ids, split.autoencoder_ids,
                                  std::move(train_labels), sources, hooks.encoder_cache};
            log(name + ": training on " + std::to_string(split.train_ids.size()) + " videos");
            const auto predictor = factory(ctx);

            std::vector<Triple> predictions;
            std::vector<Triple> targets;
            for (const auto& id : split.eval_ids) {
                const auto stacks = sample_stacks(sources.at(id), config.spec, config.eval_sampling, config.frame_size);
                predictions.push_back(predictor(id, stacks));
                targets.push_back(select_target(labels.at(id), config.task));
            }
            const double fold_mae = mae(predictions, targets);
            log(name + ": MAE " + io::format_double(fold_mae));
            report.add({fold, config.task, config.spec, fold_mae, static_cast<int>(split.eval_ids.size())});
        } catch (const Error& e) {
            throw CrossValidationError(config.spec, config.task, fold, std::current_exception(), e.what());
        } catch (const c10::Error& e) {
            throw CrossValidationError(config.spec, config.task, fold, std::current_exception(), e.what_without_backtrace());
        }
    }
    report.finalize();
    return report;
}

} // namespace featimg
