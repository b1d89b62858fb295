#include <doctest.h>

#include <fstream>

#include <opencv2/videoio.hpp>

#include "featimg/errors.hpp"
#include "featimg/ingestion.hpp"
#include "support.hpp"

using namespace featimg;

namespace {

VideoSource cache_video(const test::TempDir& dir, const std::string& id, const torch::Tensor& frames,
                        FrameDType dtype = FrameDType::F32) {
    const auto path = dir / (id + ".frames");
    write_frame_cache(path, id, frames, dtype);
    return probe_video(path, id);
}

torch::Tensor checkerboard(int t, int s, int cell) {
    auto idx = torch::arange(s, torch::kInt64).div(cell, "floor");
    auto board = (idx.view({s, 1}) + idx.view({1, s})).remainder(2).to(torch::kFloat32);
    return board.unsqueeze(0).expand({t, s, s}).contiguous();
}

} // namespace

TEST_CASE("frame cache round-trips float frames exactly") {
    test::TempDir dir;
    const auto frames = test::ramp_frames(7, 12);
    FrameCacheHeader header;
    write_frame_cache(dir / "v.frames", "v", frames, FrameDType::F32);
    const auto back = read_frame_cache(dir / "v.frames", &header);
    CHECK(header.video_id == "v");
    CHECK(header.frame_count == 7);
    CHECK(header.height == 12);
    CHECK(torch::equal(back, frames));
}

TEST_CASE("8-bit cache quantizes to the nearest level") {
    test::TempDir dir;
    const auto frames = test::ramp_frames(3, 8);
    write_frame_cache(dir / "q.frames", "q", frames, FrameDType::U8);
    const auto back = read_frame_cache(dir / "q.frames");
    CHECK(back.sub(frames).abs().max().item<float>() <= 0.5f / 255.0f + 1e-6f);
}

TEST_CASE("20-frame video at working size keeps its shape") {
    test::TempDir dir;
    const auto src = cache_video(dir, "v", test::ramp_frames(20, 64));
    CHECK(src.frame_count == 20);
    const auto frames = decode_video(src, 64);
    CHECK(frames.sizes() == torch::IntArrayRef{20, 64, 64});
    CHECK(torch::allclose(frames, test::ramp_frames(20, 64)));
}

TEST_CASE("all-black video decodes to zeros") {
    test::TempDir dir;
    const auto src = cache_video(dir, "black", torch::zeros({5, 16, 16}), FrameDType::U8);
    const auto frames = decode_video(src, 8);
    CHECK(frames.abs().max().item<float>() == 0.0f);
}

TEST_CASE("downscaled checkerboard stays within its native range") {
    test::TempDir dir;
    const auto board = checkerboard(2, 512, 3);
    const auto src = cache_video(dir, "board", board, FrameDType::U8);
    CHECK(src.native_size == std::pair<int, int>{512, 512});
    const auto frames = decode_video(src, 256);
    CHECK(frames.sizes() == torch::IntArrayRef{2, 256, 256});
    // Bilinear output is a convex combination of the inputs.
    CHECK(frames.min().item<float>() >= 0.0f);
    CHECK(frames.max().item<float>() <= 1.0f);
    CHECK(frames.mean().item<double>() == doctest::Approx(board.mean().item<double>()).epsilon(0.02));
}

TEST_CASE("bilinear resize of a constant frame is the constant") {
    const auto frame = torch::full({30, 30}, 0.37f);
    const auto out = resize_frame(frame, 11);
    CHECK(out.sizes() == torch::IntArrayRef{11, 11});
    CHECK(torch::allclose(out, torch::full({11, 11}, 0.37f)));
}

TEST_CASE("standard container route through the video backend") {
    test::TempDir dir;
    const auto path = dir / "clip.avi";
    cv::VideoWriter writer(path.string(), cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), 10, cv::Size(40, 40), true);
    if (!writer.isOpened()) {
        MESSAGE("no video writer backend available; container route not exercised");
        return;
    }
    for (int t = 0; t < 6; ++t) writer.write(cv::Mat(40, 40, CV_8UC3, cv::Scalar(40 * t, 40 * t, 40 * t)));
    writer.release();
    const auto src = resolve_video(dir.path(), "clip");
    const auto frames = decode_video(src, 20);
    CHECK(frames.size(0) == 6);
    CHECK(frames.size(1) == 20);
    CHECK(frames.min().item<float>() >= 0.0f);
    CHECK(frames.max().item<float>() <= 1.0f);
    // Brightness rises frame over frame.
    CHECK(frames[5].mean().item<float>() > frames[0].mean().item<float>());
}

TEST_CASE("resolve_video prefers the frame cache and reports missing ids") {
    test::TempDir dir;
    cache_video(dir, "a", test::ramp_frames(3, 4));
    CHECK(resolve_video(dir.path(), "a").path.extension() == ".frames");
    CHECK_THROWS_AS(resolve_video(dir.path(), "missing"), IoError);
}

TEST_CASE("corrupt frame cache is rejected") {
    test::TempDir dir;
    {
        std::ofstream f(dir / "bad.frames", std::ios::binary);
        f << "NOTAFRAMEFILE";
    }
    CHECK_THROWS_AS(read_frame_cache(dir / "bad.frames"), IoError);
}

TEST_CASE("I2 repeats the start frame three times") {
    const auto frames = test::ramp_frames(10, 6);
    const auto stack = build_stack(frames, InputStackSpec::I2, 5);
    REQUIRE(stack.data.size(0) == 3);
    for (int c = 0; c < 3; ++c) CHECK(torch::equal(stack.data[c], frames[5]));
    CHECK((std::get<0>(stack.data.max(0)) - std::get<0>(stack.data.min(0))).abs().max().item<float>() == 0.0f);
}

TEST_CASE("I1 holds the start frame") {
    const auto frames = test::ramp_frames(10, 6);
    const auto stack = build_stack(frames, InputStackSpec::I1, 7);
    CHECK(stack.data.sizes() == torch::IntArrayRef{1, 6, 6});
    CHECK(torch::equal(stack.data[0], frames[7]));
}

TEST_CASE("I3 holds nine consecutive frames in order") {
    const auto frames = test::ramp_frames(12, 6);
    const auto stack = build_stack(frames, InputStackSpec::I3, 0);
    REQUIRE(stack.data.size(0) == 9);
    for (int k = 0; k < 9; ++k) CHECK(torch::equal(stack.data[k], frames[k]));
}

TEST_CASE("I4 on a 10-frame video is out of bounds") {
    CHECK_THROWS_AS(build_stack(test::ramp_frames(10, 4), InputStackSpec::I4, 0), BoundsError);
    CHECK_THROWS_AS(build_stack(test::ramp_frames(30, 4), InputStackSpec::I4, 13), BoundsError);
    CHECK_THROWS_AS(build_stack(test::ramp_frames(30, 4), InputStackSpec::I1, -1), BoundsError);
}

TEST_CASE("evenly spaced starts on a 100-frame video") {
    const SamplingPlan plan{4, 0, SamplingMode::EvenlySpaced};
    CHECK(plan_starts(100, InputStackSpec::I3, plan) == std::vector<int>{0, 30, 60, 91});
    // Independent enumeration of floor(i*(N-k)/(count-1)).
    for (int count = 2; count <= 9; ++count) {
        const SamplingPlan p{count, 0, SamplingMode::EvenlySpaced};
        const auto starts = plan_starts(57, InputStackSpec::I4, p);
        REQUIRE(starts.size() == static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) CHECK(starts[i] == (i * (57 - 18)) / (count - 1));
    }
}

TEST_CASE("random starts are reproducible and in range") {
    const SamplingPlan plan{5, 7, SamplingMode::UniformRandomStart};
    const auto a = plan_starts(100, InputStackSpec::I1, plan, "vid");
    const auto b = plan_starts(100, InputStackSpec::I1, plan, "vid");
    CHECK(a == b);
    CHECK(std::is_sorted(a.begin(), a.end()));
    for (int s : a) CHECK((s >= 0 && s <= 99));
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        for (int s : plan_starts(40, InputStackSpec::I4, {8, seed, SamplingMode::UniformRandomStart}, "x")) {
            CHECK((s >= 0 && s <= 40 - 18));
        }
    }
}

TEST_CASE("18-frame video admits a single I4 start") {
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
        CHECK(plan_starts(18, InputStackSpec::I4, {1, seed, SamplingMode::UniformRandomStart}, "v") ==
              std::vector<int>{0});
        CHECK(plan_starts(18, InputStackSpec::I4, {1, seed, SamplingMode::EvenlySpaced}, "v") == std::vector<int>{0});
    }
}

TEST_CASE("temporal stack channels equal decoded frames bit for bit") {
    test::TempDir dir;
    const auto src = cache_video(dir, "t", test::ramp_frames(40, 16), FrameDType::U8);
    const auto decoded = decode_video(src, 16);
    for (auto spec : {InputStackSpec::I3, InputStackSpec::I4}) {
        const auto stacks = sample_stacks(src, spec, {3, 11, SamplingMode::UniformRandomStart}, 16);
        for (const auto& s : stacks) {
            for (int k = 0; k < channel_count(spec); ++k) CHECK(torch::equal(s.data[k], decoded[s.start_frame + k]));
        }
    }
}

TEST_CASE("dataset sampling is ordered and independent of worker count") {
    test::TempDir dir;
    std::vector<VideoSource> sources;
    for (int i = 5; i >= 0; --i) {
        sources.push_back(cache_video(dir, "v" + std::to_string(i), test::ramp_frames(20 + i, 8) * (0.5 + 0.1 * i)));
    }
    const SamplingPlan plan{3, 2, SamplingMode::UniformRandomStart};
    const auto one = sample_dataset(sources, InputStackSpec::I3, plan, 8, 1);
    const auto four = sample_dataset(sources, InputStackSpec::I3, plan, 8, 4);
    REQUIRE(one.size() == 18);
    REQUIRE(four.size() == one.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
        CHECK(one[i].video_id == four[i].video_id);
        CHECK(one[i].start_frame == four[i].start_frame);
        CHECK(torch::equal(one[i].data, four[i].data));
        if (i > 0) CHECK(one[i - 1].video_id <= one[i].video_id);
    }
    CHECK(batch_of(one).sizes() == torch::IntArrayRef{18, 9, 8, 8});
}
