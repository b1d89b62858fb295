#pragma once

#include <filesystem>
#include <ostream>
#include <random>
#include <string>

#include <torch/torch.h>

#include "featimg/core_data.hpp"
#include "featimg/evaluation.hpp"

namespace featimg {

// Lets doctest print labels, including inside maps.
inline std::ostream& operator<<(std::ostream& os, const SemenLabels& l) {
    return os << "{" << l.progressive << ", " << l.non_progressive << ", " << l.immotile << " | " << l.head_defects
              << ", " << l.midpiece_defects << ", " << l.tail_defects << "}";
}

inline std::ostream& operator<<(std::ostream& os, const CellGap& g) {
    return os << to_string(g.spec) << "/" << to_string(g.task) << "/fold " << g.fold;
}

} // namespace featimg

namespace featimg::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("featimg_test_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// T×S×S frames where frame t is filled with t/T plus a fixed spatial ramp.
inline torch::Tensor ramp_frames(int t, int s) {
    auto time = torch::arange(t, torch::kFloat32).div(static_cast<float>(t)).view({t, 1, 1});
    auto space = torch::arange(s * s, torch::kFloat32).div(static_cast<float>(4 * s * s)).view({1, s, s});
    return (time * 0.75f + space).clamp(0, 1);
}

} // namespace featimg::test
