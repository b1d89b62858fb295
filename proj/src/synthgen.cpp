#include "featimg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <torch/torch.h>

#include "featimg/ingestion.hpp"
#include "featimg/io_util.hpp"

namespace featimg {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr float kBackground = 0.1f;
constexpr float kHeadBrightness = 0.9f;
constexpr float kTailBrightness = 0.45f;
constexpr float kMidpieceBrightness = 0.55f;
constexpr float kDefectMidpieceBrightness = 0.95f;

// Generator-independent draws so a seed means the same video everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * kPi * u2);
    }
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
};

struct Shape {
    double head_major = 0;
    double head_minor = 0;
    double tail_length = 0;
    double midpiece_length = 0;
    float midpiece_brightness = kMidpieceBrightness;
};

Shape shape_of(const ParticleRecord& p, double r) {
    Shape s;
    if (p.head_defect) {
        s.head_major = s.head_minor = 1.3 * r;
    } else {
        s.head_major = 1.6 * r;
        s.head_minor = r;
    }
    const double full_tail = 7.0 * r;
    s.tail_length = p.tail_defect ? 0.35 * full_tail : full_tail;
    s.midpiece_length = 0.25 * full_tail;
    s.midpiece_brightness = p.midpiece_defect ? kDefectMidpieceBrightness : kMidpieceBrightness;
    return s;
}

class Canvas {
public:
    explicit Canvas(int size) : size_(size), pixels_(static_cast<std::size_t>(size) * size, kBackground) {}

    void plot_max(int x, int y, float v) {
        if (x < 0 || y < 0 || x >= size_ || y >= size_) return;
        auto& p = pixels_[static_cast<std::size_t>(y) * size_ + x];
        p = std::max(p, v);
    }

    void ellipse(Point2 c, double heading, double major, double minor, float brightness) {
        const double ch = std::cos(heading), sh = std::sin(heading);
        const int reach = static_cast<int>(std::ceil(major * 1.3)) + 1;
        const int cx = static_cast<int>(std::floor(c.x)), cy = static_cast<int>(std::floor(c.y));
        for (int y = cy - reach; y <= cy + reach; ++y) {
            for (int x = cx - reach; x <= cx + reach; ++x) {
                const double dx = x + 0.5 - c.x, dy = y + 0.5 - c.y;
                const double u = dx * ch + dy * sh;
                const double v = -dx * sh + dy * ch;
                const double d = std::sqrt((u / major) * (u / major) + (v / minor) * (v / minor));
                const double w = std::clamp((1.25 - d) / 0.5, 0.0, 1.0);
                if (w > 0) plot_max(x, y, static_cast<float>(brightness * w));
            }
        }
    }

    const std::vector<float>& pixels() const { return pixels_; }

private:
    int size_;
    std::vector<float> pixels_;
};

void draw_particle(Canvas& canvas, const ParticleRecord& p, std::size_t t, double r, double tail_phase) {
    const auto s = shape_of(p, r);
    const Point2 c = p.trajectory[t];
    const double h = p.heading[t];
    canvas.ellipse(c, h, s.head_major, s.head_minor, kHeadBrightness);

    // Tail: one-pixel polyline trailing the head with a lateral wave whose
    // amplitude grows towards the tip.
    const double bx = -std::cos(h), by = -std::sin(h); // backwards
    const double nx = -by, ny = bx;                    // lateral
    const double amplitude = 0.6 * r;
    const double wavelength = 4.0 * r;
    const Point2 root{c.x + bx * s.head_major, c.y + by * s.head_major};
    for (double d = 0; d <= s.tail_length; d += 0.25) {
        const double lateral = amplitude * (d / (7.0 * r)) * std::sin(2 * kPi * d / wavelength - tail_phase);
        const double x = root.x + bx * d + nx * lateral;
        const double y = root.y + by * d + ny * lateral;
        const float v = d <= s.midpiece_length ? s.midpiece_brightness : kTailBrightness;
        canvas.plot_max(static_cast<int>(std::floor(x)), static_cast<int>(std::floor(y)), v);
    }
}

void move_progressive(ParticleRecord& p, const SynthParams& params, double margin, Rng& rng) {
    const double lo = margin, hi = params.frame_size - margin;
    const double need = 0.5 * params.speed_px_per_frame * params.n_frames;
    for (int attempt = 0; attempt < 5000; ++attempt) {
        Point2 pos{rng.uniform(lo, hi), rng.uniform(lo, hi)};
        const double heading = rng.uniform(0, 2 * kPi);
        double vx = params.speed_px_per_frame * std::cos(heading);
        double vy = params.speed_px_per_frame * std::sin(heading);
        p.trajectory.clear();
        p.heading.clear();
        for (int t = 0; t < params.n_frames; ++t) {
            p.trajectory.push_back(pos);
            p.heading.push_back(std::atan2(vy, vx));
            pos.x += vx;
            pos.y += vy;
            if (pos.x < lo) { pos.x = 2 * lo - pos.x; vx = -vx; }
            if (pos.x > hi) { pos.x = 2 * hi - pos.x; vx = -vx; }
            if (pos.y < lo) { pos.y = 2 * lo - pos.y; vy = -vy; }
            if (pos.y > hi) { pos.y = 2 * hi - pos.y; vy = -vy; }
        }
        if (net_displacement(p) > need) return;
    }
    throw ValidationError("cannot place a progressive particle: speed " +
                          io::format_double(params.speed_px_per_frame) + " px/frame over " +
                          std::to_string(params.n_frames) + " frames does not fit a " +
                          std::to_string(params.frame_size) + " px frame");
}

void move_non_progressive(ParticleRecord& p, const SynthParams& params, double margin, Rng& rng) {
    const double j = params.jitter_px;
    const double lo = margin + j, hi = params.frame_size - margin - j;
    const Point2 anchor{rng.uniform(lo, hi), rng.uniform(lo, hi)};
    const double radius = 0.75 * j;
    const double spin = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.3, 0.6);
    const double phase = rng.uniform(0, 2 * kPi);
    for (int t = 0; t < params.n_frames; ++t) {
        const double a = phase + spin * t;
        // Uniform offset inside a disc of radius j/4.
        double ox = 0, oy = 0;
        do {
            ox = rng.uniform(-1, 1);
            oy = rng.uniform(-1, 1);
        } while (ox * ox + oy * oy >= 1.0);
        ox *= 0.25 * j;
        oy *= 0.25 * j;
        p.trajectory.push_back({anchor.x + radius * std::cos(a) + ox, anchor.y + radius * std::sin(a) + oy});
        p.heading.push_back(a + (spin > 0 ? kPi / 2 : -kPi / 2));
    }
}

void place_immotile(ParticleRecord& p, const SynthParams& params, double margin, Rng& rng) {
    const double lo = margin, hi = params.frame_size - margin;
    const Point2 pos{rng.uniform(lo, hi), rng.uniform(lo, hi)};
    const double heading = rng.uniform(0, 2 * kPi);
    p.trajectory.assign(params.n_frames, pos);
    p.heading.assign(params.n_frames, heading);
}

int quota(int n, double fraction) {
    return static_cast<int>(std::lround(n * fraction));
}

SemenLabels count_labels(const std::vector<ParticleRecord>& log) {
    std::array<int, 3> cls{};
    std::array<int, 3> defects{};
    for (const auto& p : log) {
        ++cls[static_cast<int>(p.cls)];
        defects[0] += p.head_defect;
        defects[1] += p.midpiece_defect;
        defects[2] += p.tail_defect;
    }
    const double n = static_cast<double>(log.size());
    SemenLabels l;
    l.progressive = 100.0 * cls[0] / n;
    l.non_progressive = 100.0 * cls[1] / n;
    l.immotile = 100.0 * cls[2] / n;
    l.head_defects = 100.0 * defects[0] / n;
    l.midpiece_defects = 100.0 * defects[1] / n;
    l.tail_defects = 100.0 * defects[2] / n;
    return l;
}

} // namespace

void SynthParams::validate() const {
    auto fail = [](const std::string& what) { throw ValidationError("invalid synth params: " + what); };
    if (n_particles <= 0) fail("n_particles must be positive");
    for (double f : motility_fractions) {
        if (!(f >= 0.0 && f <= 1.0)) fail("motility fractions must lie in [0,1]");
    }
    const double sum = motility_fractions[0] + motility_fractions[1] + motility_fractions[2];
    if (std::abs(sum - 1.0) > 1e-9) fail("motility fractions sum to " + io::format_double(sum) + ", expected 1");
    for (double f : defect_fractions) {
        if (!(f >= 0.0 && f <= 1.0)) fail("defect fractions must lie in [0,1]");
    }
    if (n_frames < 18) fail("n_frames must be at least 18");
    if (frame_size < 16) fail("frame_size must be at least 16");
    if (!(speed_px_per_frame > 0)) fail("speed_px_per_frame must be positive");
    if (!(jitter_px >= 0)) fail("jitter_px must be non-negative");
    if (!(noise_sigma >= 0)) fail("noise_sigma must be non-negative");
    if (!(head_radius_px > 0)) fail("head_radius_px must be positive");
    const double margin = 1.6 * head_radius_px + 1.0;
    if (frame_size - 2 * (margin + jitter_px) <= 0) fail("frame too small for particle size and jitter");
}

nlohmann::json to_json(const SynthParams& p) {
    return {
        {"n_particles", p.n_particles},
        {"motility_fractions", p.motility_fractions},
        {"defect_fractions", p.defect_fractions},
        {"n_frames", p.n_frames},
        {"frame_size", p.frame_size},
        {"speed_px_per_frame", p.speed_px_per_frame},
        {"jitter_px", p.jitter_px},
        {"noise_sigma", p.noise_sigma},
        {"head_radius_px", p.head_radius_px},
        {"rng_seed", p.rng_seed},
    };
}

SynthParams synth_params_from_json(const nlohmann::json& j) {
    SynthParams p;
    p.n_particles = j.value("n_particles", p.n_particles);
    p.motility_fractions = j.value("motility_fractions", p.motility_fractions);
    p.defect_fractions = j.value("defect_fractions", p.defect_fractions);
    p.n_frames = j.value("n_frames", p.n_frames);
    p.frame_size = j.value("frame_size", p.frame_size);
    p.speed_px_per_frame = j.value("speed_px_per_frame", p.speed_px_per_frame);
    p.jitter_px = j.value("jitter_px", p.jitter_px);
    p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
    p.head_radius_px = j.value("head_radius_px", p.head_radius_px);
    p.rng_seed = j.value("rng_seed", p.rng_seed);
    return p;
}

std::string to_string(MotilityClass cls) {
    switch (cls) {
    case MotilityClass::Progressive: return "progressive";
    case MotilityClass::NonProgressive: return "non_progressive";
    case MotilityClass::Immotile: return "immotile";
    }
    return "?";
}

MotilityClass parse_motility_class(std::string_view name) {
    if (name == "progressive") return MotilityClass::Progressive;
    if (name == "non_progressive") return MotilityClass::NonProgressive;
    if (name == "immotile") return MotilityClass::Immotile;
    throw SchemaError("unknown motility class '" + std::string(name) + "'");
}

double net_displacement(const ParticleRecord& p) {
    if (p.trajectory.empty()) return 0.0;
    const auto& a = p.trajectory.front();
    const auto& b = p.trajectory.back();
    return std::hypot(b.x - a.x, b.y - a.y);
}

SynthVideo generate_video(const SynthParams& params, const std::string& video_id) {
    params.validate();
    Rng rng(params.rng_seed);
    const int n = params.n_particles;
    const double r = params.head_radius_px;
    const double margin = 1.6 * r + 1.0;

    const int n_prog = std::min(n, quota(n, params.motility_fractions[0]));
    const int n_np = std::min(n - n_prog, quota(n, params.motility_fractions[1]));

    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    std::vector<ParticleRecord> log(n);
    rng.shuffle(ids);
    for (int k = 0; k < n; ++k) {
        auto& p = log[ids[k]];
        p.id = ids[k];
        p.cls = k < n_prog ? MotilityClass::Progressive
              : k < n_prog + n_np ? MotilityClass::NonProgressive
                                  : MotilityClass::Immotile;
    }
    for (int d = 0; d < 3; ++d) {
        rng.shuffle(ids);
        const int flagged = std::min(n, quota(n, params.defect_fractions[d]));
        for (int k = 0; k < flagged; ++k) {
            auto& p = log[ids[k]];
            (d == 0 ? p.head_defect : d == 1 ? p.midpiece_defect : p.tail_defect) = true;
        }
    }

    std::vector<double> tail_phase(n), tail_speed(n);
    for (auto& p : log) {
        switch (p.cls) {
        case MotilityClass::Progressive: move_progressive(p, params, margin, rng); break;
        case MotilityClass::NonProgressive: move_non_progressive(p, params, margin, rng); break;
        case MotilityClass::Immotile: place_immotile(p, params, margin, rng); break;
        }
        tail_phase[p.id] = rng.uniform(0, 2 * kPi);
        tail_speed[p.id] = p.cls == MotilityClass::Immotile ? 0.0 : rng.uniform(0.9, 1.5);
    }

    const int size = params.frame_size;
    const auto pixels = static_cast<std::size_t>(size) * size;
    std::vector<float> noise(pixels, 0.0f);
    if (params.noise_sigma > 0) {
        for (auto& v : noise) v = static_cast<float>(params.noise_sigma * rng.normal());
    }

    SynthVideo video;
    video.video_id = video_id;
    video.frames = torch::empty({params.n_frames, size, size}, torch::kFloat32);
    float* out = video.frames.data_ptr<float>();
    for (int t = 0; t < params.n_frames; ++t) {
        Canvas canvas(size);
        for (const auto& p : log) {
            draw_particle(canvas, p, static_cast<std::size_t>(t), r, tail_phase[p.id] + tail_speed[p.id] * t);
        }
        const auto& px = canvas.pixels();
        for (std::size_t i = 0; i < pixels; ++i) {
            out[t * pixels + i] = std::clamp(px[i] + noise[i], 0.0f, 1.0f);
        }
    }
    video.labels = count_labels(log);
    video.particle_log = std::move(log);
    return video;
}

SynthDataset generate_dataset(int n_videos, const SynthDatasetParams& params, std::uint64_t rng_seed) {
    if (n_videos < 3) {
        throw ValidationError("a synthetic dataset needs at least 3 videos (one per fold), got " +
                              std::to_string(n_videos));
    }
    if (!(params.defect_min >= 0 && params.defect_min <= params.defect_max && params.defect_max <= 1)) {
        throw ValidationError("defect range must satisfy 0 <= min <= max <= 1");
    }
    SynthDataset ds;
    std::map<std::string, int> folds;
    for (int i = 0; i < n_videos; ++i) {
        Rng draw(io::mix_seed(rng_seed, static_cast<std::uint64_t>(i)));
        double a = draw.uniform(), b = draw.uniform();
        if (a > b) std::swap(a, b);
        SynthParams p = params.base;
        p.motility_fractions = {a, b - a, 1.0 - b};
        for (auto& f : p.defect_fractions) f = draw.uniform(params.defect_min, params.defect_max);
        p.rng_seed = io::mix_seed(rng_seed ^ 0x5eed, static_cast<std::uint64_t>(i));

        char id[32];
        std::snprintf(id, sizeof id, "synth_%03d", i + 1);
        auto video = generate_video(p, id);
        ds.labels.emplace(video.video_id, video.labels);
        folds.emplace(video.video_id, i % FoldSplit::kFolds + 1);
        ds.videos.push_back(std::move(video));
    }
    ds.folds = FoldSplit(std::move(folds));
    return ds;
}

nlohmann::json particle_log_to_json(const SynthVideo& video) {
    nlohmann::json particles = nlohmann::json::array();
    for (const auto& p : video.particle_log) {
        nlohmann::json traj = nlohmann::json::array();
        for (const auto& pt : p.trajectory) traj.push_back({pt.x, pt.y});
        particles.push_back({
            {"id", p.id},
            {"class", to_string(p.cls)},
            {"head_defect", p.head_defect},
            {"midpiece_defect", p.midpiece_defect},
            {"tail_defect", p.tail_defect},
            {"trajectory", std::move(traj)},
            {"heading", p.heading},
        });
    }
    const auto& l = video.labels;
    return {
        {"video_id", video.video_id},
        {"labels",
         {{"progressive", l.progressive},
          {"non_progressive", l.non_progressive},
          {"immotile", l.immotile},
          {"head_defects", l.head_defects},
          {"midpiece_defects", l.midpiece_defects},
          {"tail_defects", l.tail_defects}}},
        {"particles", std::move(particles)},
    };
}

std::vector<ParticleRecord> particle_log_from_json(const nlohmann::json& j) {
    std::vector<ParticleRecord> out;
    for (const auto& item : j.at("particles")) {
        ParticleRecord p;
        p.id = item.at("id").get<int>();
        p.cls = parse_motility_class(item.at("class").get<std::string>());
        p.head_defect = item.at("head_defect").get<bool>();
        p.midpiece_defect = item.at("midpiece_defect").get<bool>();
        p.tail_defect = item.at("tail_defect").get<bool>();
        for (const auto& pt : item.at("trajectory")) p.trajectory.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
        p.heading = item.at("heading").get<std::vector<double>>();
        out.push_back(std::move(p));
    }
    return out;
}

void write_dataset(const SynthDataset& dataset, const std::filesystem::path& out_dir) {
    for (const auto& v : dataset.videos) {
        write_frame_cache(out_dir / "videos" / (v.video_id + ".frames"), v.video_id, v.frames, FrameDType::U8);
        io::write_atomic(out_dir / "particles" / (v.video_id + ".json"), particle_log_to_json(v).dump(1));
    }
    save_labels(dataset.labels, out_dir / "labels.csv");
    save_folds(dataset.folds, out_dir / "folds.csv");
}

} // namespace featimg
