#include <doctest.h>

#include <cmath>
#include <random>

#include "featimg/errors.hpp"
#include "featimg/ingestion.hpp"
#include "featimg/io_util.hpp"
#include "featimg/synthgen.hpp"
#include "support.hpp"

using namespace featimg;

namespace {

SynthParams small(std::uint64_t seed) {
    SynthParams p;
    p.n_particles = 10;
    p.frame_size = 32;
    p.n_frames = 20;
    p.rng_seed = seed;
    return p;
}

SemenLabels recount(const std::vector<ParticleRecord>& log) {
    int prog = 0, np = 0, imm = 0, head = 0, mid = 0, tail = 0;
    for (const auto& p : log) {
        prog += p.cls == MotilityClass::Progressive;
        np += p.cls == MotilityClass::NonProgressive;
        imm += p.cls == MotilityClass::Immotile;
        head += p.head_defect;
        mid += p.midpiece_defect;
        tail += p.tail_defect;
    }
    const double n = static_cast<double>(log.size());
    return {100.0 * prog / n, 100.0 * np / n, 100.0 * imm / n, 100.0 * head / n, 100.0 * mid / n, 100.0 * tail / n};
}

double mean_interframe_difference(const torch::Tensor& frames) {
    return (frames.slice(0, 1) - frames.slice(0, 0, -1)).abs().mean().item<double>();
}

} // namespace

TEST_CASE("ten particles at (0.5, 0.3, 0.2) give exact labels") {
    const auto v = generate_video(small(1));
    CHECK(v.labels.progressive == 50.0);
    CHECK(v.labels.non_progressive == 30.0);
    CHECK(v.labels.immotile == 20.0);
    CHECK(recount(v.particle_log) == v.labels);
}

TEST_CASE("all-progressive video moves every particle far") {
    auto p = small(2);
    p.motility_fractions = {1, 0, 0};
    const auto v = generate_video(p);
    CHECK(v.labels.progressive == 100.0);
    CHECK(v.labels.non_progressive == 0.0);
    CHECK(v.labels.immotile == 0.0);
    for (const auto& rec : v.particle_log) {
        CHECK(net_displacement(rec) >= 0.5 * p.speed_px_per_frame * p.n_frames);
    }
}

TEST_CASE("all-immotile video has identical frames") {
    auto p = small(3);
    p.motility_fractions = {0, 0, 1};
    const auto v = generate_video(p);
    CHECK((v.frames.slice(0, 1) - v.frames.slice(0, 0, -1)).abs().max().item<float>() == 0.0f);
}

TEST_CASE("frames have the configured shape and range") {
    const auto v = generate_video(small(4));
    CHECK(v.frames.sizes() == torch::IntArrayRef{20, 32, 32});
    CHECK(v.frames.min().item<float>() >= 0.0f);
    CHECK(v.frames.max().item<float>() <= 1.0f);
    CHECK(v.particle_log.size() == 10);
    for (const auto& rec : v.particle_log) CHECK(rec.trajectory.size() == 20);
}

TEST_CASE("label and motion oracles over random parameters") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 10; ++trial) {
        SynthParams p;
        p.n_particles = 1 + static_cast<int>(rng() % 15);
        double a = u(rng), b = u(rng);
        if (a > b) std::swap(a, b);
        p.motility_fractions = {a, b - a, 1 - b};
        p.defect_fractions = {u(rng), u(rng), u(rng)};
        p.n_frames = 18 + static_cast<int>(rng() % 10);
        p.frame_size = 32 + static_cast<int>(rng() % 16);
        p.speed_px_per_frame = 0.5 + u(rng);
        p.jitter_px = 2 * u(rng);
        p.rng_seed = rng();
        const auto v = generate_video(p);
        CHECK(recount(v.particle_log) == v.labels);
        CHECK_NOTHROW(validate_labels(v.labels, v.video_id));
        for (const auto& rec : v.particle_log) {
            const double d = net_displacement(rec);
            if (rec.cls == MotilityClass::Immotile) CHECK(d == 0.0);
            if (rec.cls == MotilityClass::Progressive) CHECK(d > 0.5 * p.speed_px_per_frame * p.n_frames);
            if (rec.cls == MotilityClass::NonProgressive && p.jitter_px > 0) CHECK(d < 2 * p.jitter_px);
        }
    }
}

TEST_CASE("motion shows up in interframe differences") {
    auto moving = small(5);
    moving.motility_fractions = {0.5, 0.3, 0.2};
    auto still = small(5);
    still.motility_fractions = {0, 0, 1};
    CHECK(mean_interframe_difference(generate_video(moving).frames) >
          mean_interframe_difference(generate_video(still).frames));
}

TEST_CASE("generation is a pure function of the parameters") {
    const auto a = generate_video(small(9));
    const auto b = generate_video(small(9));
    CHECK(torch::equal(a.frames, b.frames));
    CHECK(a.labels == b.labels);
    CHECK(particle_log_to_json(a) == particle_log_to_json(b));
    CHECK_FALSE(torch::equal(a.frames, generate_video(small(10)).frames));
}

TEST_CASE("invalid parameters are rejected") {
    auto p = small(1);
    p.motility_fractions = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(generate_video(p), ValidationError);
    p = small(1);
    p.n_frames = 17;
    CHECK_THROWS_AS(generate_video(p), ValidationError);
    p = small(1);
    p.defect_fractions = {1.5, 0, 0};
    CHECK_THROWS_AS(generate_video(p), ValidationError);
    p = small(1);
    p.n_particles = 0;
    CHECK_THROWS_AS(generate_video(p), ValidationError);
    p = small(1);
    p.speed_px_per_frame = 0;
    CHECK_THROWS_AS(generate_video(p), ValidationError);
}

TEST_CASE("synth params json round-trip") {
    auto p = small(33);
    p.motility_fractions = {0.2, 0.3, 0.5};
    p.noise_sigma = 0;
    const auto back = synth_params_from_json(to_json(p));
    CHECK(to_json(back) == to_json(p));
}

TEST_CASE("dataset folds are round-robin") {
    SynthDatasetParams params;
    params.base = small(0);
    params.base.n_particles = 4;
    const auto three = generate_dataset(3, params, 1);
    for (int f = 1; f <= 3; ++f) CHECK(three.folds.videos_in(f).size() == 1);

    const auto thirty = generate_dataset(30, params, 1);
    for (int f = 1; f <= 3; ++f) CHECK(thirty.folds.videos_in(f).size() == 10);
    CHECK(thirty.labels.size() == 30);
    CHECK_THROWS_AS(generate_dataset(2, params, 1), ValidationError);
}

TEST_CASE("dataset labels are deterministic per seed and exact per video") {
    SynthDatasetParams params;
    params.base = small(0);
    const auto a = generate_dataset(6, params, 4);
    const auto b = generate_dataset(6, params, 4);
    CHECK(a.labels == b.labels);
    for (const auto& v : a.videos) CHECK(recount(v.particle_log) == a.labels.at(v.video_id));
    for (const auto& [id, l] : a.labels) {
        CHECK(l.head_defects <= 100.0 * std::ceil(params.defect_max * params.base.n_particles) / params.base.n_particles);
    }
}

TEST_CASE("written dataset reloads through the public loaders") {
    test::TempDir dir;
    SynthDatasetParams params;
    params.base = small(0);
    params.base.n_particles = 3;
    const auto ds = generate_dataset(4, params, 2);
    write_dataset(ds, dir.path());
    CHECK(load_labels(dir / "labels.csv") == ds.labels);
    CHECK(load_folds(dir / "folds.csv") == ds.folds);
    for (const auto& v : ds.videos) {
        const auto src = resolve_video(dir / "videos", v.video_id);
        CHECK(src.frame_count == params.base.n_frames);
        const auto frames = decode_video(src, params.base.frame_size);
        CHECK((frames - v.frames).abs().max().item<float>() <= 0.5f / 255 + 1e-6f);
        const auto log = particle_log_from_json(nlohmann::json::parse(io::read_text(dir / "particles" / (v.video_id + ".json"))));
        CHECK(recount(log) == v.labels);
    }
}
