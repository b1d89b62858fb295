#pragma once

// Domain types shared by every stage of the pipeline: input stack kinds,
// frame stacks, feature images, per-video labels and the fold split.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <torch/types.h>

#include "featimg/errors.hpp"

namespace featimg {

using Triple = std::array<double, 3>;

/// The four input constructions: one raw frame, three copies of one frame,
/// 9 consecutive frames, 18 consecutive frames.
enum class InputStackSpec : std::uint8_t { I1 = 1, I2 = 2, I3 = 3, I4 = 4 };

constexpr int channel_count(InputStackSpec spec) noexcept {
    switch (spec) {
    case InputStackSpec::I1: return 1;
    case InputStackSpec::I2: return 3;
    case InputStackSpec::I3: return 9;
    case InputStackSpec::I4: return 18;
    }
    return 0;
}

constexpr bool is_temporal(InputStackSpec spec) noexcept {
    return spec == InputStackSpec::I3 || spec == InputStackSpec::I4;
}

constexpr std::array<InputStackSpec, 4> all_specs() noexcept {
    return {InputStackSpec::I1, InputStackSpec::I2, InputStackSpec::I3, InputStackSpec::I4};
}

std::string to_string(InputStackSpec spec);
/// Accepts "I1".."I4" (case-insensitive); throws UsageError listing the valid names.
InputStackSpec parse_spec(std::string_view name);

enum class TaskKind : std::uint8_t { Motility, Morphology };

std::string to_string(TaskKind task);
/// Accepts "motility" / "morphology" (case-insensitive).
TaskKind parse_task(std::string_view name);

/// C×H×W block of frames in [0,1], channel k = frame start_frame + k for
/// temporal specs.
struct FrameStack {
    torch::Tensor data;
    std::string video_id;
    int start_frame = 0;
    InputStackSpec spec = InputStackSpec::I1;

    int height() const { return static_cast<int>(data.size(1)); }
    int width() const { return static_cast<int>(data.size(2)); }
};

/// F×H×W encoder output at the resolution of the stack it came from.
struct FeatureImage {
    torch::Tensor data;
    std::string source_video_id;
    int source_start_frame = 0;
};

/// Per-video ground truth, all values in percent.
struct SemenLabels {
    double progressive = 0;
    double non_progressive = 0;
    double immotile = 0;
    double head_defects = 0;
    double midpiece_defects = 0;
    double tail_defects = 0;

    bool operator==(const SemenLabels&) const = default;
};

/// Motility triples must sum to 100 within this many percentage points.
inline constexpr double kMotilitySumTolerance = 0.5;

/// Throws ValidationError (mentioning `video_id`) when a field is outside
/// [0,100] or the motility triple does not sum to 100 ± kMotilitySumTolerance.
void validate_labels(const SemenLabels& labels, std::string_view video_id);

/// Motility -> (progressive, non_progressive, immotile);
/// Morphology -> (head, midpiece, tail).
Triple select_target(const SemenLabels& labels, TaskKind task) noexcept;

using LabelMap = std::map<std::string, SemenLabels>;

inline constexpr std::string_view kLabelHeader =
    "video_id,progressive,non_progressive,immotile,head_defects,midpiece_defects,tail_defects";
inline constexpr std::string_view kFoldHeader = "video_id,fold";

LabelMap load_labels(const std::filesystem::path& path);
LabelMap parse_labels(std::string_view text);
std::string format_labels(const LabelMap& labels);
void save_labels(const LabelMap& labels, const std::filesystem::path& path);

/// Partition of video ids into folds 1..3; every fold non-empty.
class FoldSplit {
public:
    static constexpr int kFolds = 3;

    FoldSplit() = default;
    /// Validates the assignment; throws ValidationError for a fold index
    /// outside 1..3 or an empty fold.
    explicit FoldSplit(std::map<std::string, int> assignment);

    int fold_of(const std::string& video_id) const;
    bool contains(const std::string& video_id) const { return assignment_.count(video_id) != 0; }
    std::vector<std::string> videos_in(int fold) const;
    std::vector<std::string> videos_not_in(int fold) const;
    std::vector<std::string> all_videos() const;
    const std::map<std::string, int>& assignment() const noexcept { return assignment_; }
    std::size_t size() const noexcept { return assignment_.size(); }

    bool operator==(const FoldSplit&) const = default;

private:
    std::map<std::string, int> assignment_;
};

FoldSplit load_folds(const std::filesystem::path& path);
FoldSplit parse_folds(std::string_view text);
std::string format_folds(const FoldSplit& folds);
void save_folds(const FoldSplit& folds, const std::filesystem::path& path);

} // namespace featimg
