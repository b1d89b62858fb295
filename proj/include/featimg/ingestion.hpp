#pragma once

// Video decoding, frame normalization and frame-stack assembly.
//
// Two input routes exist: the raw frame-array cache (`.frames`, layout in
// docs/formats.md) read directly, and any container the OpenCV video backend
// can open. Either way frames come out grayscale, bilinearly resized to a
// square working size and scaled to [0,1].

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/types.h>

#include "featimg/core_data.hpp"

namespace featimg {

struct VideoSource {
    std::string video_id;
    std::filesystem::path path;
    int frame_count = 0;
    std::pair<int, int> native_size{0, 0}; // (height, width)
};

/// Reads header information (frame count, native size) without decoding.
VideoSource probe_video(const std::filesystem::path& path, std::string video_id = {});

/// Finds `<video_id>.frames` or any other file with stem `video_id` in `dir`.
VideoSource resolve_video(const std::filesystem::path& dir, const std::string& video_id);

/// Returns a T×frame_size×frame_size float tensor with values in [0,1].
torch::Tensor decode_video(const VideoSource& source, int frame_size);

/// Bilinear resize of a single H×W float frame (align-corners off, the
/// usual half-pixel convention).
torch::Tensor resize_frame(const torch::Tensor& frame, int frame_size);

// --- raw frame-array cache ------------------------------------------------

enum class FrameDType : std::uint8_t { U8 = 0, U16 = 1, F32 = 2 };

inline constexpr char kFrameCacheMagic[8] = {'F', 'I', 'M', 'G', 'F', 'R', 'M', '1'};

struct FrameCacheHeader {
    std::string video_id;
    int frame_count = 0;
    int height = 0;
    int width = 0;
    FrameDType dtype = FrameDType::U8;
};

/// Writes T×H×W frames in [0,1]. Integer dtypes are quantized with
/// round-to-nearest over their full range.
void write_frame_cache(const std::filesystem::path& path, const std::string& video_id,
                       const torch::Tensor& frames, FrameDType dtype);
FrameCacheHeader read_frame_cache_header(const std::filesystem::path& path);
/// Returns the stored frames scaled to [0,1] at native resolution.
torch::Tensor read_frame_cache(const std::filesystem::path& path, FrameCacheHeader* header = nullptr);

// --- stacks ---------------------------------------------------------------

/// `frames` is T×H×W. I1 -> frames[start]; I2 -> three copies of
/// frames[start]; I3/I4 -> frames[start, start+k) in order.
FrameStack build_stack(const torch::Tensor& frames, InputStackSpec spec, int start,
                       const std::string& video_id = {});

enum class SamplingMode : std::uint8_t { UniformRandomStart, EvenlySpaced };

std::string to_string(SamplingMode mode);
SamplingMode parse_sampling_mode(std::string_view name);

struct SamplingPlan {
    int stacks_per_video = 4;
    std::uint64_t rng_seed = 0;
    SamplingMode mode = SamplingMode::EvenlySpaced;

    bool operator==(const SamplingPlan&) const = default;
};

/// Start indices for one video, sorted ascending. Every start s satisfies
/// 0 <= s <= frame_count - channel_count(spec). EvenlySpaced uses
/// floor(i * (N - k) / (count - 1)); UniformRandomStart draws from a
/// generator seeded by (plan.rng_seed, video_id).
std::vector<int> plan_starts(int frame_count, InputStackSpec spec, const SamplingPlan& plan,
                             const std::string& video_id = {});

std::vector<FrameStack> sample_stacks(const VideoSource& source, InputStackSpec spec,
                                      const SamplingPlan& plan, int frame_size);

/// Same, given already decoded frames.
std::vector<FrameStack> sample_stacks(const torch::Tensor& frames, const std::string& video_id,
                                      InputStackSpec spec, const SamplingPlan& plan);

/// Samples every source with up to `workers` threads; the result is sorted
/// by (video_id, start_frame) whatever the scheduling.
std::vector<FrameStack> sample_dataset(const std::vector<VideoSource>& sources, InputStackSpec spec,
                                       const SamplingPlan& plan, int frame_size, int workers = 1);

/// Stacks a list of FrameStacks into an N×C×H×W batch.
torch::Tensor batch_of(const std::vector<FrameStack>& stacks);

} // namespace featimg
