#include "featimg/experiment.hpp"

#include <set>

#include "featimg/io_util.hpp"

namespace featimg {

namespace {

nlohmann::json plan_to_json(const SamplingPlan& p) {
    return {{"stacks_per_video", p.stacks_per_video}, {"rng_seed", p.rng_seed}, {"mode", to_string(p.mode)}};
}

SamplingPlan plan_from_json(const nlohmann::json& j, SamplingPlan p) {
    p.stacks_per_video = j.value("stacks_per_video", p.stacks_per_video);
    p.rng_seed = j.value("rng_seed", p.rng_seed);
    if (j.contains("mode")) p.mode = parse_sampling_mode(j.at("mode").get<std::string>());
    return p;
}

} // namespace

void ExperimentConfig::normalize() {
    autoencoder.spec = spec;
    regressor.input_channels = autoencoder.feature_channels;
    regressor.task = task;
}

void ExperimentConfig::validate() const {
    if (autoencoder.spec != spec) {
        throw ValidationError("autoencoder spec " + to_string(autoencoder.spec) + " disagrees with experiment spec " +
                              to_string(spec));
    }
    if (regressor.input_channels != autoencoder.feature_channels) {
        throw ValidationError("regressor input_channels " + std::to_string(regressor.input_channels) +
                              " disagrees with autoencoder feature_channels " +
                              std::to_string(autoencoder.feature_channels));
    }
    if (regressor.task != task) {
        throw ValidationError("regressor task disagrees with experiment task");
    }
    if (frame_size <= 0) throw ValidationError("frame_size must be positive");
    if (workers <= 0) throw ValidationError("workers must be positive");
    if (train_sampling.stacks_per_video <= 0 || eval_sampling.stacks_per_video <= 0) {
        throw ValidationError("stacks_per_video must be positive");
    }
    autoencoder.validate();
    regressor.validate();
}

nlohmann::json to_json(const ExperimentConfig& c) {
    return {
        {"paths",
         {{"videos_dir", c.paths.videos_dir.string()},
          {"labels_file", c.paths.labels_file.string()},
          {"folds_file", c.paths.folds_file.string()},
          {"output_dir", c.paths.output_dir.string()},
          {"weights_cache", c.paths.weights_cache.string()}}},
        {"spec", to_string(c.spec)},
        {"task", to_string(c.task)},
        {"autoencoder", to_json(c.autoencoder)},
        {"regressor", to_json(c.regressor)},
        {"train_sampling", plan_to_json(c.train_sampling)},
        {"eval_sampling", plan_to_json(c.eval_sampling)},
        {"frame_size", c.frame_size},
        {"rng_seed", c.rng_seed},
        {"deterministic", c.deterministic},
        {"workers", c.workers},
        {"autoencoder_on_all_videos", c.autoencoder_on_all_videos},
    };
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"paths",       "spec",         "task",       "autoencoder",
                                             "regressor",   "train_sampling", "eval_sampling", "frame_size",
                                             "rng_seed",    "deterministic", "workers",    "autoencoder_on_all_videos"};
    if (!j.is_object()) throw SchemaError("experiment config must be an object");
    for (const auto& item : j.items()) {
        if (!known.contains(item.key())) throw SchemaError("unknown experiment config key '" + item.key() + "'");
    }
    try {
        ExperimentConfig c;
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            c.paths.videos_dir = p.value("videos_dir", c.paths.videos_dir.string());
            c.paths.labels_file = p.value("labels_file", c.paths.labels_file.string());
            c.paths.folds_file = p.value("folds_file", c.paths.folds_file.string());
            c.paths.output_dir = p.value("output_dir", c.paths.output_dir.string());
            c.paths.weights_cache = p.value("weights_cache", c.paths.weights_cache.string());
        }
        if (j.contains("spec")) c.spec = parse_spec(j.at("spec").get<std::string>());
        if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
        if (j.contains("autoencoder")) c.autoencoder = autoencoder_config_from_json(j.at("autoencoder"));
        if (j.contains("regressor")) c.regressor = regressor_config_from_json(j.at("regressor"));
        if (j.contains("train_sampling")) c.train_sampling = plan_from_json(j.at("train_sampling"), c.train_sampling);
        if (j.contains("eval_sampling")) c.eval_sampling = plan_from_json(j.at("eval_sampling"), c.eval_sampling);
        c.frame_size = j.value("frame_size", c.frame_size);
        c.rng_seed = j.value("rng_seed", c.rng_seed);
        c.deterministic = j.value("deterministic", c.deterministic);
        c.workers = j.value("workers", c.workers);
        c.autoencoder_on_all_videos = j.value("autoencoder_on_all_videos", c.autoencoder_on_all_videos);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("experiment config: ") + e.what());
    }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    try {
        return experiment_config_from_json(nlohmann::json::parse(io::read_text(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

} // namespace featimg
