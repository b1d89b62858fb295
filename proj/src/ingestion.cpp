#include "featimg/ingestion.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>
#include <torch/torch.h>

#include "featimg/io_util.hpp"

namespace featimg {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "frame cache I/O assumes a little-endian host");

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::istream& in, const fs::path& path) {
    std::uint8_t b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw IoError("truncated frame cache header in " + path.string());
    }
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::size_t dtype_size(FrameDType dtype) {
    switch (dtype) {
    case FrameDType::U8: return 1;
    case FrameDType::U16: return 2;
    case FrameDType::F32: return 4;
    }
    return 0;
}

FrameCacheHeader read_header(std::istream& in, const fs::path& path) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kFrameCacheMagic, 8) != 0) {
        throw IoError(path.string() + " is not a frame cache file");
    }
    FrameCacheHeader h;
    const auto id_len = get_u32(in, path);
    if (id_len > 4096) {
        throw IoError("corrupt frame cache header in " + path.string());
    }
    h.video_id.resize(id_len);
    if (id_len > 0 && !in.read(h.video_id.data(), id_len)) {
        throw IoError("truncated frame cache header in " + path.string());
    }
    h.frame_count = static_cast<int>(get_u32(in, path));
    h.height = static_cast<int>(get_u32(in, path));
    h.width = static_cast<int>(get_u32(in, path));
    char dtype = 0;
    if (!in.read(&dtype, 1) || static_cast<unsigned char>(dtype) > 2) {
        throw IoError("bad dtype in frame cache " + path.string());
    }
    h.dtype = static_cast<FrameDType>(dtype);
    return h;
}

bool is_frame_cache(const fs::path& path) {
    return path.extension() == ".frames";
}

torch::Tensor mat_to_unit_tensor(const cv::Mat& frame) {
    cv::Mat gray;
    if (frame.channels() == 3) {
        cv::cvtColor(frame, gray, cv::COLOR_BGR2GRAY);
    } else if (frame.channels() == 4) {
        cv::cvtColor(frame, gray, cv::COLOR_BGRA2GRAY);
    } else {
        gray = frame;
    }
    cv::Mat f32;
    double scale = 1.0;
    if (gray.depth() == CV_8U) scale = 1.0 / 255.0;
    else if (gray.depth() == CV_16U) scale = 1.0 / 65535.0;
    gray.convertTo(f32, CV_32F, scale);
    auto t = torch::from_blob(f32.data, {f32.rows, f32.cols}, torch::kFloat32).clone();
    return t.clamp(0.0, 1.0);
}

std::vector<cv::Mat> read_container(const fs::path& path) {
    cv::VideoCapture cap(path.string());
    if (!cap.isOpened()) {
        throw IoError("cannot open video " + path.string());
    }
    std::vector<cv::Mat> frames;
    cv::Mat frame;
    while (cap.read(frame)) {
        if (frame.empty()) break;
        frames.push_back(frame.clone());
    }
    return frames;
}

} // namespace

std::string to_string(SamplingMode mode) {
    return mode == SamplingMode::UniformRandomStart ? "uniform_random_start" : "evenly_spaced";
}

SamplingMode parse_sampling_mode(std::string_view name) {
    if (name == "uniform_random_start") return SamplingMode::UniformRandomStart;
    if (name == "evenly_spaced") return SamplingMode::EvenlySpaced;
    throw UsageError("unknown sampling mode '" + std::string(name) +
                     "'; valid modes: uniform_random_start, evenly_spaced");
}

void write_frame_cache(const fs::path& path, const std::string& video_id, const torch::Tensor& frames,
                       FrameDType dtype) {
    if (frames.dim() != 3) {
        throw ShapeError("frame cache expects a T×H×W tensor");
    }
    const auto t = frames.to(torch::kFloat32).contiguous();
    std::vector<std::uint8_t> out(kFrameCacheMagic, kFrameCacheMagic + 8);
    put_u32(out, static_cast<std::uint32_t>(video_id.size()));
    out.insert(out.end(), video_id.begin(), video_id.end());
    put_u32(out, static_cast<std::uint32_t>(t.size(0)));
    put_u32(out, static_cast<std::uint32_t>(t.size(1)));
    put_u32(out, static_cast<std::uint32_t>(t.size(2)));
    out.push_back(static_cast<std::uint8_t>(dtype));

    const float* src = t.data_ptr<float>();
    const auto n = static_cast<std::size_t>(t.numel());
    const auto body = out.size();
    out.resize(body + n * dtype_size(dtype));
    std::uint8_t* dst = out.data() + body;
    for (std::size_t i = 0; i < n; ++i) {
        const float v = std::clamp(src[i], 0.0f, 1.0f);
        switch (dtype) {
        case FrameDType::U8:
            dst[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
            break;
        case FrameDType::U16: {
            const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
            std::memcpy(dst + 2 * i, &q, 2);
            break;
        }
        case FrameDType::F32:
            std::memcpy(dst + 4 * i, &v, 4);
            break;
        }
    }
    io::write_atomic(path, out);
}

FrameCacheHeader read_frame_cache_header(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return read_header(in, path);
}

torch::Tensor read_frame_cache(const fs::path& path, FrameCacheHeader* header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    const auto h = read_header(in, path);
    const auto n = static_cast<std::size_t>(h.frame_count) * h.height * h.width;
    std::vector<std::uint8_t> body(n * dtype_size(h.dtype));
    if (!in.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(body.size()))) {
        throw IoError("truncated frame data in " + path.string());
    }
    auto out = torch::empty({h.frame_count, h.height, h.width}, torch::kFloat32);
    float* dst = out.data_ptr<float>();
    for (std::size_t i = 0; i < n; ++i) {
        switch (h.dtype) {
        case FrameDType::U8:
            dst[i] = static_cast<float>(body[i]) / 255.0f;
            break;
        case FrameDType::U16: {
            std::uint16_t q;
            std::memcpy(&q, body.data() + 2 * i, 2);
            dst[i] = static_cast<float>(q) / 65535.0f;
            break;
        }
        case FrameDType::F32:
            std::memcpy(dst + i, body.data() + 4 * i, 4);
            dst[i] = std::clamp(dst[i], 0.0f, 1.0f);
            break;
        }
    }
    if (header) *header = h;
    return out;
}

VideoSource probe_video(const fs::path& path, std::string video_id) {
    VideoSource src;
    src.path = path;
    if (is_frame_cache(path)) {
        const auto h = read_frame_cache_header(path);
        src.video_id = video_id.empty() ? h.video_id : std::move(video_id);
        src.frame_count = h.frame_count;
        src.native_size = {h.height, h.width};
        return src;
    }
    const auto frames = read_container(path);
    src.video_id = video_id.empty() ? path.stem().string() : std::move(video_id);
    src.frame_count = static_cast<int>(frames.size());
    if (!frames.empty()) {
        src.native_size = {frames.front().rows, frames.front().cols};
    }
    return src;
}

VideoSource resolve_video(const fs::path& dir, const std::string& video_id) {
    const auto cache = dir / (video_id + ".frames");
    if (fs::exists(cache)) {
        return probe_video(cache, video_id);
    }
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        if (entry.is_regular_file() && entry.path().stem() == video_id) {
            return probe_video(entry.path(), video_id);
        }
    }
    throw IoError("no video file for '" + video_id + "' in " + dir.string());
}

torch::Tensor resize_frame(const torch::Tensor& frame, int frame_size) {
    if (frame.size(0) == frame_size && frame.size(1) == frame_size) {
        return frame.contiguous();
    }
    namespace F = torch::nn::functional;
    auto x = frame.unsqueeze(0).unsqueeze(0);
    auto y = F::interpolate(x, F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{frame_size, frame_size})
                                   .mode(torch::kBilinear)
                                   .align_corners(false));
    return y.squeeze(0).squeeze(0).clamp(0.0, 1.0).contiguous();
}

torch::Tensor decode_video(const VideoSource& source, int frame_size) {
    if (frame_size <= 0) {
        throw PreconditionError("frame_size must be positive");
    }
    torch::Tensor native;
    if (is_frame_cache(source.path)) {
        native = read_frame_cache(source.path);
    } else {
        const auto mats = read_container(source.path);
        std::vector<torch::Tensor> frames;
        frames.reserve(mats.size());
        for (const auto& m : mats) frames.push_back(mat_to_unit_tensor(m));
        if (!frames.empty()) native = torch::stack(frames);
    }
    if (!native.defined() || native.size(0) == 0) {
        throw IoError("video " + source.path.string() + " has zero frames");
    }
    if (native.size(1) == frame_size && native.size(2) == frame_size) {
        return native;
    }
    namespace F = torch::nn::functional;
    auto y = F::interpolate(native.unsqueeze(1), F::InterpolateFuncOptions()
                                                     .size(std::vector<int64_t>{frame_size, frame_size})
                                                     .mode(torch::kBilinear)
                                                     .align_corners(false));
    return y.squeeze(1).clamp(0.0, 1.0).contiguous();
}

FrameStack build_stack(const torch::Tensor& frames, InputStackSpec spec, int start, const std::string& video_id) {
    if (frames.dim() != 3) {
        throw ShapeError("build_stack expects T×H×W frames");
    }
    const int total = static_cast<int>(frames.size(0));
    const int k = channel_count(spec);
    const int needed = is_temporal(spec) ? k : 1;
    if (start < 0 || start + needed > total) {
        throw BoundsError(to_string(spec) + " stack at start " + std::to_string(start) + " needs " +
                          std::to_string(needed) + " frame(s) but video has " + std::to_string(total));
    }
    FrameStack stack;
    stack.video_id = video_id;
    stack.start_frame = start;
    stack.spec = spec;
    if (is_temporal(spec)) {
        stack.data = frames.slice(0, start, start + k).clone();
    } else {
        stack.data = frames[start].unsqueeze(0).repeat({k, 1, 1}).contiguous();
    }
    return stack;
}

std::vector<int> plan_starts(int frame_count, InputStackSpec spec, const SamplingPlan& plan,
                             const std::string& video_id) {
    if (plan.stacks_per_video <= 0) {
        throw PreconditionError("stacks_per_video must be positive");
    }
    const int k = channel_count(spec);
    if (frame_count < k) {
        throw BoundsError("video " + video_id + " has " + std::to_string(frame_count) + " frames; " +
                          to_string(spec) + " needs at least " + std::to_string(k));
    }
    const int last = frame_count - k;
    const int count = plan.stacks_per_video;
    std::vector<int> starts;
    starts.reserve(count);
    if (plan.mode == SamplingMode::EvenlySpaced) {
        for (int i = 0; i < count; ++i) {
            starts.push_back(count == 1 ? 0 : static_cast<int>((static_cast<long long>(i) * last) / (count - 1)));
        }
    } else {
        std::mt19937_64 rng(io::mix_seed(plan.rng_seed, io::crc32(video_id)));
        for (int i = 0; i < count; ++i) {
            // Modulo bias is negligible at video lengths.
            starts.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(last + 1)));
        }
        std::sort(starts.begin(), starts.end());
    }
    return starts;
}

std::vector<FrameStack> sample_stacks(const torch::Tensor& frames, const std::string& video_id, InputStackSpec spec,
                                      const SamplingPlan& plan) {
    const auto starts = plan_starts(static_cast<int>(frames.size(0)), spec, plan, video_id);
    std::vector<FrameStack> out;
    out.reserve(starts.size());
    for (int s : starts) out.push_back(build_stack(frames, spec, s, video_id));
    return out;
}

std::vector<FrameStack> sample_stacks(const VideoSource& source, InputStackSpec spec, const SamplingPlan& plan,
                                      int frame_size) {
    if (source.frame_count < channel_count(spec)) {
        throw BoundsError("video " + source.video_id + " has " + std::to_string(source.frame_count) +
                          " frames; " + to_string(spec) + " needs at least " + std::to_string(channel_count(spec)));
    }
    return sample_stacks(decode_video(source, frame_size), source.video_id, spec, plan);
}

std::vector<FrameStack> sample_dataset(const std::vector<VideoSource>& sources, InputStackSpec spec,
                                       const SamplingPlan& plan, int frame_size, int workers) {
    std::vector<std::vector<FrameStack>> per_video(sources.size());
    const int n_workers = std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(sources.size(), 1)));
    if (n_workers == 1) {
        for (std::size_t i = 0; i < sources.size(); ++i) {
            per_video[i] = sample_stacks(sources[i], spec, plan, frame_size);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::jthread> pool;
        for (int w = 0; w < n_workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < sources.size(); i = next++) {
                    try {
                        per_video[i] = sample_stacks(sources[i], spec, plan, frame_size);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        pool.clear();
        if (failure) std::rethrow_exception(failure);
    }
    std::vector<FrameStack> out;
    for (auto& v : per_video) {
        for (auto& s : v) out.push_back(std::move(s));
    }
    std::stable_sort(out.begin(), out.end(), [](const FrameStack& a, const FrameStack& b) {
        return std::tie(a.video_id, a.start_frame) < std::tie(b.video_id, b.start_frame);
    });
    return out;
}

torch::Tensor batch_of(const std::vector<FrameStack>& stacks) {
    if (stacks.empty()) {
        throw PreconditionError("cannot batch an empty stack list");
    }
    std::vector<torch::Tensor> parts;
    parts.reserve(stacks.size());
    for (const auto& s : stacks) parts.push_back(s.data);
    return torch::stack(parts);
}

} // namespace featimg
