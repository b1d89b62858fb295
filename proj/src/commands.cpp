#include "featimg/commands.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "featimg/autoencoder.hpp"
#include "featimg/crossval.hpp"
#include "featimg/evaluation.hpp"
#include "featimg/experiment.hpp"
#include "featimg/io_util.hpp"
#include "featimg/regressor.hpp"
#include "featimg/runtime.hpp"
#include "featimg/synthgen.hpp"

namespace featimg::cli {

namespace fs = std::filesystem;

namespace {

// --- shared option groups -----------------------------------------------------

struct DataOptions {
    std::optional<std::string> data_dir;
    std::optional<std::string> videos_dir;
    std::optional<std::string> labels;
    std::optional<std::string> folds;

    void add_to(CLI::App& app) {
        app.add_option("--data", data_dir, "dataset root holding videos/, labels.csv and folds.csv");
        app.add_option("--videos-dir", videos_dir, "directory of video files");
        app.add_option("--labels", labels, "label file");
        app.add_option("--folds", folds, "fold file");
    }

    void apply(ExperimentPaths& paths) const {
        if (data_dir) {
            paths.videos_dir = fs::path(*data_dir) / "videos";
            paths.labels_file = fs::path(*data_dir) / "labels.csv";
            paths.folds_file = fs::path(*data_dir) / "folds.csv";
        }
        if (videos_dir) paths.videos_dir = *videos_dir;
        if (labels) paths.labels_file = *labels;
        if (folds) paths.folds_file = *folds;
    }
};

struct RunOptions {
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::optional<int> workers;
    std::optional<int> frame_size;
    std::optional<int> stacks_per_video;

    void add_to(CLI::App& app) {
        app.add_option("--seed", seed, "global RNG seed");
        app.add_flag("--deterministic", deterministic, "single thread, deterministic kernels, no timestamps");
        app.add_option("--workers", workers, "ingestion worker threads")->check(CLI::PositiveNumber);
        app.add_option("--frame-size", frame_size, "square working resolution")->check(CLI::PositiveNumber);
        app.add_option("--stacks-per-video", stacks_per_video, "stacks sampled per video")->check(CLI::PositiveNumber);
    }

    void apply(ExperimentConfig& c) const {
        if (seed) c.rng_seed = *seed;
        if (deterministic) c.deterministic = true;
        if (workers) c.workers = *workers;
        if (frame_size) c.frame_size = *frame_size;
        if (stacks_per_video) {
            c.train_sampling.stacks_per_video = *stacks_per_video;
            c.eval_sampling.stacks_per_video = *stacks_per_video;
        }
    }
};

struct AeOptions {
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<double> lr;
    std::optional<int> features;
    std::optional<std::vector<int>> widths;

    void add_to(CLI::App& app, const std::string& prefix) {
        app.add_option("--" + prefix + "epochs", epochs, "autoencoder epochs")->check(CLI::PositiveNumber);
        app.add_option("--" + prefix + "batch-size", batch_size, "autoencoder batch size")->check(CLI::PositiveNumber);
        app.add_option("--" + prefix + "lr", lr, "autoencoder learning rate")->check(CLI::PositiveNumber);
        app.add_option("--features", features, "feature-image channels F")->check(CLI::PositiveNumber);
        app.add_option("--widths", widths, "hidden conv widths, comma separated")->delimiter(',');
    }

    void apply(AutoencoderConfig& c) const {
        if (epochs) c.epochs = *epochs;
        if (batch_size) c.batch_size = *batch_size;
        if (lr) c.learning_rate = *lr;
        if (features) c.feature_channels = *features;
        if (widths) c.hidden_widths = *widths;
    }
};

struct RegOptions {
    std::optional<std::string> backbone;
    std::optional<std::string> loss;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<double> lr;
    bool fine_tune = false;
    std::optional<std::string> weights_cache;

    void add_to(CLI::App& app, const std::string& prefix) {
        app.add_option("--backbone", backbone, "resnet34_pretrained | resnet34_random | tiny_cnn");
        app.add_option("--loss", loss, "l1 | l2");
        app.add_option("--" + prefix + "epochs", epochs, "regressor epochs")->check(CLI::PositiveNumber);
        app.add_option("--" + prefix + "batch-size", batch_size, "regressor batch size")->check(CLI::PositiveNumber);
        app.add_option("--" + prefix + "lr", lr, "regressor learning rate")->check(CLI::PositiveNumber);
        app.add_flag("--fine-tune", fine_tune, "train the encoder together with the regressor");
        app.add_option("--weights-cache", weights_cache, "directory holding pretrained backbone weights");
    }

    void apply(RegressorConfig& c, ExperimentPaths& paths) const {
        if (backbone) c.backbone = parse_backbone(*backbone);
        if (loss) c.loss = parse_loss(*loss);
        if (epochs) c.epochs = *epochs;
        if (batch_size) c.batch_size = *batch_size;
        if (lr) c.learning_rate = *lr;
        if (fine_tune) c.freeze_encoder = false;
        if (weights_cache) paths.weights_cache = *weights_cache;
    }
};

void require_file(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) throw UsageError(what + " not found: " + path.string());
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

std::vector<std::string> training_ids(const LabelMap& labels, const std::optional<FoldSplit>& folds,
                                      std::optional<int> held_out) {
    std::vector<std::string> ids;
    if (held_out) {
        ids = folds->videos_not_in(*held_out);
    } else {
        for (const auto& [id, _] : labels) ids.push_back(id);
    }
    for (const auto& id : ids) {
        if (!labels.contains(id)) throw ValidationError("video " + id + " has no labels");
    }
    return ids;
}

std::vector<VideoSource> resolve_all(const fs::path& dir, const std::vector<std::string>& ids) {
    std::vector<VideoSource> out;
    for (const auto& id : ids) out.push_back(resolve_video(dir, id));
    return out;
}

// Any library error raised while assembling a configuration is a usage error.
template <typename F>
auto as_config_step(F&& f) {
    try {
        return f();
    } catch (const UsageError&) {
        throw;
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

// --- synth ----------------------------------------------------------------------

struct SynthArgs {
    int videos = 30;
    std::uint64_t seed = 0;
    std::string out;
    std::optional<int> frames;
    std::optional<int> frame_size;
    std::optional<int> particles;
    std::optional<double> noise;
    std::optional<double> speed;
    std::optional<double> jitter;
    std::optional<double> defect_max;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    if (a.videos < 3) throw UsageError("--videos must be at least 3 (one video per fold), got " + std::to_string(a.videos));
    SynthDatasetParams params;
    if (a.frames) params.base.n_frames = *a.frames;
    if (a.frame_size) params.base.frame_size = *a.frame_size;
    if (a.particles) params.base.n_particles = *a.particles;
    if (a.noise) params.base.noise_sigma = *a.noise;
    if (a.speed) params.base.speed_px_per_frame = *a.speed;
    if (a.jitter) params.base.jitter_px = *a.jitter;
    if (a.defect_max) params.defect_max = *a.defect_max;
    as_config_step([&] {
        params.base.validate();
        return 0;
    });
    const auto dataset = generate_dataset(a.videos, params, a.seed);
    write_dataset(dataset, a.out);
    out << "wrote " << dataset.videos.size() << " videos to " << a.out << "\n";
    return kExitOk;
}

// --- train-ae -------------------------------------------------------------------

struct TrainAeArgs {
    std::optional<std::string> config;
    DataOptions data;
    RunOptions run;
    AeOptions ae;
    std::optional<std::string> spec;
    std::optional<int> fold;
    std::string out;
};

int cmd_train_ae(const TrainAeArgs& a, std::ostream& out, std::ostream& err) {
    auto config = as_config_step([&] {
        auto c = a.config ? load_experiment_config(*a.config) : ExperimentConfig{};
        a.data.apply(c.paths);
        a.run.apply(c);
        a.ae.apply(c.autoencoder);
        if (a.spec) c.spec = parse_spec(*a.spec);
        c.normalize();
        c.validate();
        return c;
    });
    require_file(config.paths.labels_file, "labels file");
    std::optional<FoldSplit> folds;
    if (a.fold) {
        require_file(config.paths.folds_file, "folds file");
        folds = load_folds(config.paths.folds_file);
    }
    configure_runtime(config.deterministic, config.workers);

    const auto labels = load_labels(config.paths.labels_file);
    const auto ids = training_ids(labels, folds, a.fold);
    SamplingPlan plan = config.train_sampling;
    plan.rng_seed = io::mix_seed(config.rng_seed, 0x5A);
    const auto stacks = sample_dataset(resolve_all(config.paths.videos_dir, ids), config.spec, plan,
                                       config.frame_size, config.deterministic ? 1 : config.workers);

    auto ae_config = config.autoencoder;
    ae_config.rng_seed = config.rng_seed;
    auto model = build_autoencoder(ae_config);
    AutoencoderTrainOptions options;
    options.on_epoch = [&](const LossPoint& p) {
        if (p.epoch == 1 || p.epoch % 50 == 0 || p.epoch == ae_config.epochs) {
            err << "epoch " << p.epoch << " loss " << io::format_double(p.loss) << "\n";
        }
    };
    train_autoencoder(model, stacks, options);

    const fs::path ckpt = a.out.empty() ? config.paths.output_dir / ("encoder_" + to_string(config.spec) + ".ckpt")
                                        : fs::path(a.out);
    export_encoder(model.encoder(), ckpt);
    io::write_atomic(fs::path(ckpt.string() + ".loss.csv"), format_loss_history(model.loss_history()));
    out << "encoder " << ckpt.string() << " crc32 " << io::hex32(checkpoint_checksum(ckpt)) << "\n";
    return kExitOk;
}

// --- train-reg ------------------------------------------------------------------

struct TrainRegArgs {
    std::optional<std::string> config;
    DataOptions data;
    RunOptions run;
    RegOptions reg;
    std::string encoder;
    std::optional<std::string> spec;
    std::string task;
    std::optional<int> fold;
    std::string out;
};

int cmd_train_reg(const TrainRegArgs& a, std::ostream& out, std::ostream& err) {
    auto config = as_config_step([&] {
        auto c = a.config ? load_experiment_config(*a.config) : ExperimentConfig{};
        a.data.apply(c.paths);
        a.run.apply(c);
        a.reg.apply(c.regressor, c.paths);
        c.task = parse_task(a.task);
        return c;
    });
    require_file(a.encoder, "encoder checkpoint");
    require_file(config.paths.labels_file, "labels file");
    std::optional<FoldSplit> folds;
    if (a.fold) {
        require_file(config.paths.folds_file, "folds file");
        folds = load_folds(config.paths.folds_file);
    }
    configure_runtime(config.deterministic, config.workers);

    Encoder encoder;
    if (a.spec) {
        const auto expected = as_config_step([&] { return parse_spec(*a.spec); });
        try {
            encoder = import_encoder(a.encoder, expected);
        } catch (const SpecMismatchError& e) {
            throw UsageError(e.what());
        }
    } else {
        encoder = import_encoder(a.encoder);
    }
    config.spec = encoder.spec();
    config.autoencoder = encoder.config();
    as_config_step([&] {
        config.normalize();
        config.validate();
        return 0;
    });

    const auto labels = load_labels(config.paths.labels_file);
    const auto ids = training_ids(labels, folds, a.fold);
    SamplingPlan plan = config.train_sampling;
    plan.rng_seed = io::mix_seed(config.rng_seed, 0x5A);
    const auto stacks = sample_dataset(resolve_all(config.paths.videos_dir, ids), config.spec, plan,
                                       config.frame_size, config.deterministic ? 1 : config.workers);
    std::vector<RegressionSample> samples;
    for (const auto& s : stacks) samples.push_back({s, select_target(labels.at(s.video_id), config.task)});

    auto reg_config = config.regressor;
    reg_config.rng_seed = config.rng_seed;
    auto regressor = build_regressor(reg_config, {config.paths.weights_cache});
    RegressorTrainOptions options;
    options.on_epoch = [&](const LossPoint& p) {
        err << "epoch " << p.epoch << " loss " << io::format_double(p.loss) << "\n";
    };
    const auto result = train_regressor(encoder, regressor, samples, options);

    const fs::path ckpt = a.out.empty() ? config.paths.output_dir / ("regressor_" + to_string(config.spec) + "_" +
                                                                     to_string(config.task) + ".ckpt")
                                        : fs::path(a.out);
    export_regressor(regressor, ckpt);
    if (result.tuned_encoder) {
        export_encoder(*result.tuned_encoder, fs::path(ckpt.string() + ".encoder.ckpt"));
    }
    io::write_atomic(fs::path(ckpt.string() + ".loss.csv"), format_loss_history(result.loss_history));
    out << "regressor " << ckpt.string() << " crc32 " << io::hex32(checkpoint_checksum(ckpt)) << "\n";
    return kExitOk;
}

// --- crossval -------------------------------------------------------------------

struct CrossvalArgs {
    std::optional<std::string> config;
    DataOptions data;
    RunOptions run;
    AeOptions ae;
    RegOptions reg;
    std::optional<std::vector<std::string>> specs;
    std::optional<std::vector<std::string>> tasks;
    std::optional<std::string> out;
    bool ae_all_videos = false;
};

int cmd_crossval(const CrossvalArgs& a, std::ostream& out, std::ostream& err) {
    std::vector<InputStackSpec> specs;
    std::vector<TaskKind> tasks;
    auto base = as_config_step([&] {
        auto c = a.config ? load_experiment_config(*a.config) : ExperimentConfig{};
        a.data.apply(c.paths);
        a.run.apply(c);
        a.ae.apply(c.autoencoder);
        a.reg.apply(c.regressor, c.paths);
        if (a.out) c.paths.output_dir = *a.out;
        if (a.ae_all_videos) c.autoencoder_on_all_videos = true;
        if (a.specs) {
            for (const auto& s : *a.specs) specs.push_back(parse_spec(s));
        } else {
            specs.push_back(c.spec);
        }
        if (a.tasks) {
            for (const auto& t : *a.tasks) tasks.push_back(parse_task(t));
        } else {
            tasks.push_back(c.task);
        }
        c.normalize();
        c.validate();
        return c;
    });
    require_file(base.paths.labels_file, "labels file");
    require_file(base.paths.folds_file, "folds file");
    if (base.regressor.backbone == BackboneKind::ResNet34Pretrained) {
        // Fail before any training when the weights cache is missing.
        as_config_step([&] { return build_regressor(base.regressor, {base.paths.weights_cache}).config(); });
    }

    EncoderCache cache;
    CrossValHooks hooks;
    hooks.encoder_cache = &cache;
    hooks.log = [&](const std::string& msg) { err << msg << "\n"; };

    MetricsReport merged;
    for (auto spec : specs) {
        for (auto task : tasks) {
            auto c = base;
            c.spec = spec;
            c.task = task;
            merged.merge(run_cross_validation(c, hooks));
        }
    }
    nlohmann::json spec_names = nlohmann::json::array();
    nlohmann::json task_names = nlohmann::json::array();
    for (auto s : specs) spec_names.push_back(to_string(s));
    for (auto t : tasks) task_names.push_back(to_string(t));
    // Where the report lands does not affect it.
    auto experiment = to_json(base);
    experiment["paths"].erase("output_dir");
    merged.config = {{"experiment", experiment}, {"specs", spec_names}, {"tasks", task_names}};
    if (!base.deterministic) merged.created_at = timestamp_utc();
    merged.finalize();

    const auto table = render_report(merged);
    save_report(base.paths.output_dir / "report.json", merged);
    io::write_atomic(base.paths.output_dir / "report.txt", table);
    io::write_atomic(base.paths.output_dir / "report.csv", report_to_csv(merged));
    out << table;
    return kExitOk;
}

// --- report ---------------------------------------------------------------------

struct ReportArgs {
    std::string in;
    std::string format = "text";
    std::optional<std::string> out;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
    require_file(a.in, "report file");
    const auto report = load_report(a.in);
    std::string text;
    if (a.format == "text") {
        text = render_report(report);
    } else if (a.format == "csv") {
        text = report_to_csv(report);
    } else if (a.format == "json") {
        text = serialize_report(report);
    } else {
        throw UsageError("unknown --format '" + a.format + "'; valid formats: text, csv, json");
    }
    if (a.out) {
        io::write_atomic(*a.out, text);
    } else {
        out << text;
    }
    return kExitOk;
}

int exit_code_for(const std::exception_ptr& ep, std::ostream& err) {
    try {
        std::rethrow_exception(ep);
    } catch (const CrossValidationError& e) {
        err << "error: " << e.what() << "\n";
        try {
            std::rethrow_exception(e.cause());
        } catch (const UsageError&) {
            return kExitUsage;
        } catch (const WeightsUnavailableError&) {
            return kExitUsage;
        } catch (...) {
            return kExitFailure;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const WeightsUnavailableError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const c10::Error& e) {
        err << "error: " << e.what_without_backtrace() << "\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Feature-image pipeline: synthetic data, two-step training, cross-validation"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a labelled synthetic video dataset");
    synth_cmd->add_option("--videos", synth.videos, "number of videos (>= 3)");
    synth_cmd->add_option("--seed", synth.seed, "RNG seed");
    synth_cmd->add_option("--out", synth.out, "output directory")->required();
    synth_cmd->add_option("--frames", synth.frames, "frames per video (>= 18)");
    synth_cmd->add_option("--frame-size", synth.frame_size, "frame edge in pixels");
    synth_cmd->add_option("--particles", synth.particles, "particles per video");
    synth_cmd->add_option("--noise", synth.noise, "pixel noise sigma");
    synth_cmd->add_option("--speed", synth.speed, "progressive speed, px per frame");
    synth_cmd->add_option("--jitter", synth.jitter, "non-progressive jitter radius, px");
    synth_cmd->add_option("--defect-max", synth.defect_max, "upper bound of per-video defect fractions");

    TrainAeArgs ae;
    auto* ae_cmd = app.add_subcommand("train-ae", "train the autoencoder and export its encoder");
    ae_cmd->add_option("--config", ae.config, "experiment config (JSON); flags override it");
    ae.data.add_to(*ae_cmd);
    ae.run.add_to(*ae_cmd);
    ae.ae.add_to(*ae_cmd, "");
    ae_cmd->add_option("--spec", ae.spec, "input stack spec: I1, I2, I3 or I4");
    ae_cmd->add_option("--fold", ae.fold, "exclude this fold from training")->check(CLI::Range(1, 3));
    ae_cmd->add_option("--out", ae.out, "encoder checkpoint path");

    TrainRegArgs reg;
    auto* reg_cmd = app.add_subcommand("train-reg", "train the regressor on encoder feature images");
    reg_cmd->add_option("--config", reg.config, "experiment config (JSON); flags override it");
    reg.data.add_to(*reg_cmd);
    reg.run.add_to(*reg_cmd);
    reg.reg.add_to(*reg_cmd, "");
    reg_cmd->add_option("--encoder", reg.encoder, "encoder checkpoint")->required();
    reg_cmd->add_option("--spec", reg.spec, "expected encoder spec");
    reg_cmd->add_option("--task", reg.task, "motility or morphology")->required();
    reg_cmd->add_option("--fold", reg.fold, "exclude this fold from training")->check(CLI::Range(1, 3));
    reg_cmd->add_option("--out", reg.out, "regressor checkpoint path");

    CrossvalArgs cv;
    auto* cv_cmd = app.add_subcommand("crossval", "three-fold cross-validation over specs and tasks");
    cv_cmd->add_option("--config", cv.config, "experiment config (JSON); flags override it");
    cv.data.add_to(*cv_cmd);
    cv.run.add_to(*cv_cmd);
    cv.ae.add_to(*cv_cmd, "ae-");
    cv.reg.add_to(*cv_cmd, "reg-");
    cv_cmd->add_option("--specs", cv.specs, "comma separated specs")->delimiter(',');
    cv_cmd->add_option("--tasks", cv.tasks, "comma separated tasks")->delimiter(',');
    cv_cmd->add_option("--out", cv.out, "output directory for report.json, report.txt, report.csv");
    cv_cmd->add_flag("--ae-all-videos", cv.ae_all_videos, "train the autoencoder on every video");

    ReportArgs rep;
    auto* rep_cmd = app.add_subcommand("report", "render a saved report");
    rep_cmd->add_option("--in", rep.in, "report.json")->required();
    rep_cmd->add_option("--format", rep.format, "text, csv or json");
    rep_cmd->add_option("--out", rep.out, "write here instead of standard output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(synth, out);
        if (ae_cmd->parsed()) return cmd_train_ae(ae, out, err);
        if (reg_cmd->parsed()) return cmd_train_reg(reg, out, err);
        if (cv_cmd->parsed()) return cmd_crossval(cv, out, err);
        if (rep_cmd->parsed()) return cmd_report(rep, out);
    } catch (...) {
        return exit_code_for(std::current_exception(), err);
    }
    return kExitUsage;
}

} // namespace featimg::cli
