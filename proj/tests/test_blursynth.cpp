#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "dbn/blursynth.hpp"
#include "dbn/image.hpp"
#include "oracles.hpp"

using namespace dbn;

namespace {

FlowField uniform_flow(int h, int w, float u, float v) {
    FlowField f;
    f.u = Tensor({h, w}, u);
    f.v = Tensor({h, w}, v);
    f.valid.assign(static_cast<std::size_t>(h) * w, 1);
    return f;
}

Tensor square_frame(int h, int w, int x0, int y0, int side) {
    Tensor f({3, h, w});
    for (int c = 0; c < 3; ++c) {
        for (int y = y0; y < y0 + side; ++y) {
            for (int x = x0; x < x0 + side; ++x) f.at3(c, y, x) = 1.0f;
        }
    }
    return f;
}

double frame_sum(const Tensor& f) {
    double s = 0.0;
    for (float v : f.data) s += v;
    return s;
}

// Independent counting oracle for the subsampling rule: walk the source
// grid directly and count centers with full 7-frame windows.
std::vector<int> counting_oracle(int frames, int stride) {
    std::vector<int> centers;
    for (int c = 3; c + 3 <= frames - 1; c += stride) centers.push_back(c);
    return centers;
}

}  // namespace

TEST_CASE("subsampling: stride for 240->30 fps is 8") {
    HighFpsSequence seq;
    seq.frame_paths.assign(240, "");
    CHECK(subsample_stride(seq) == 8);
    seq.target_fps = 29.0;
    CHECK_THROWS_AS(subsample_stride(seq), Error);
}

TEST_CASE("subsampling: counts match the counting oracle") {
    // 240 source frames: centers 3, 11, ..., 235 (every frame keeps 3 on both sides)
    const auto expect240 = counting_oracle(240, 8);
    CHECK(subsample_sharp(240, 8) == expect240);
    CHECK(expect240.front() == 3);
    CHECK(expect240.back() == 235);
    CHECK(expect240.size() == 30);

    // minimum window: exactly one pair from 7 frames
    const auto expect7 = counting_oracle(7, 8);
    CHECK(subsample_sharp(7, 8) == expect7);
    CHECK(expect7.size() == 1);
    CHECK(expect7[0] == 3);

    // the k-pair rule: 7 + 8*(k-1) frames emit exactly k pairs
    for (int k = 1; k <= 5; ++k) {
        CHECK(static_cast<int>(subsample_sharp(7 + 8 * (k - 1), 8).size()) == k);
    }
}

TEST_CASE("subsampling rejects too-short sequences naming the minimum") {
    CHECK_THROWS_WITH_AS(subsample_sharp(6, 8), doctest::Contains("7"), Error);
}

TEST_CASE("interpolation with zero flow between equal frames is the identity") {
    Rng rng(3);
    auto a = oracles::random_tensor<float>({3, 16, 16}, rng, 0.0, 1.0);
    auto flow = uniform_flow(16, 16, 0.0f, 0.0f);
    auto frames = interpolate_subframes(a, a, flow, 10);
    CHECK(frames.size() == 10);
    for (const auto& f : frames) {
        for (std::size_t i = 0; i < f.numel(); ++i) {
            CHECK(f.data[i] == doctest::Approx(a.data[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("interpolated impulse moves linearly along a uniform flow") {
    // impulse at (8, 8), flow (+22, 0), n = 10: frame j puts it at x = 8 + 2j
    const int n = 10;
    const int d = 22;  // d * j / (n+1) integral for every j
    Tensor a({3, 24, 48});
    for (int c = 0; c < 3; ++c) a.at3(c, 8, 8) = 1.0f;
    Tensor b({3, 24, 48});
    for (int c = 0; c < 3; ++c) b.at3(c, 8, 8 + d) = 1.0f;
    auto flow = uniform_flow(24, 48, static_cast<float>(d), 0.0f);

    auto frames = interpolate_subframes(a, b, flow, n);
    for (int j = 1; j <= n; ++j) {
        const auto& f = frames[static_cast<std::size_t>(j - 1)];
        const int expect_x = 8 + d * j / (n + 1);
        // all mass at the expected location
        CHECK(f.at3(0, 8, expect_x) == doctest::Approx(1.0).epsilon(1e-5));
        CHECK(frame_sum(f) == doctest::Approx(3.0).epsilon(1e-4));
    }
}

TEST_CASE("static scene synthesizes to the sharp frame exactly after quantization") {
    Rng rng(7);
    auto frame = oracles::random_tensor<float>({3, 24, 24}, rng, 0.0, 1.0);
    // quantize to 8-bit values first, as file frames would be
    for (auto& v : frame.data) v = std::floor(v * 255.0f + 0.5f) / 255.0f;

    std::vector<Tensor> window(7, frame);
    std::vector<FlowField> flows(6, uniform_flow(24, 24, 0.0f, 0.0f));
    auto blurry = synthesize_blurry(window, flows);

    for (std::size_t i = 0; i < blurry.numel(); ++i) {
        const int qa = static_cast<int>(std::floor(std::clamp(blurry.data[i], 0.0f, 1.0f) * 255.0f + 0.5f));
        const int qb = static_cast<int>(std::floor(std::clamp(frame.data[i], 0.0f, 1.0f) * 255.0f + 0.5f));
        CHECK(qa == qb);
    }
}

TEST_CASE("energy conservation: mean of blurry equals mean over the 67 images") {
    Rng rng(11);
    std::vector<Tensor> window;
    for (int k = 0; k < 7; ++k) window.push_back(oracles::random_tensor<float>({3, 16, 16}, rng, 0.0, 1.0));
    std::vector<FlowField> flows(6, uniform_flow(16, 16, 0.5f, -0.25f));

    auto blurry = synthesize_blurry(window, flows);

    // oracle: accumulate the same 67 images independently in double
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& f : window) {
        total += frame_sum(f);
        count += f.numel();
    }
    for (int k = 0; k < 6; ++k) {
        for (const auto& f : interpolate_subframes(window[static_cast<std::size_t>(k)],
                                                   window[static_cast<std::size_t>(k + 1)], flows[static_cast<std::size_t>(k)], 10)) {
            total += frame_sum(f);
            count += f.numel();
        }
    }
    const double expect_mean = total / static_cast<double>(count);
    const double got_mean = frame_sum(blurry) / static_cast<double>(blurry.numel());
    CHECK(std::abs(got_mean - expect_mean) <= 1e-6);
}

TEST_CASE("translating square leaves a streak with conserved mass") {
    // square of side 6 translating 3 px right per source frame
    const int h = 32, w = 96, side = 6, d = 3;
    std::vector<Tensor> window;
    for (int k = 0; k < 7; ++k) window.push_back(square_frame(h, w, 12 + d * k, 12, side));
    std::vector<FlowField> flows(6, uniform_flow(h, w, static_cast<float>(d), 0.0f));

    auto blurry = synthesize_blurry(window, flows);

    const double mass = frame_sum(blurry);
    const double square_mass = 3.0 * side * side;
    CHECK(std::abs(mass - square_mass) / square_mass < 0.01);

    // analytic box blur: the streak spans side + 6*d columns; mass per column
    // of the fully covered region is side * 3 / (6*d + 1) per unit exposure
    // (each of the 67 uniformly weighted images contributes side rows)
    const int first = 12, last = 12 + 6 * d + side;  // [first, last)
    for (int x = 0; x < w; ++x) {
        double col = 0.0;
        for (int y = 0; y < h; ++y) col += blurry.at3(0, y, x);
        if (x < first - 1 || x > last) CHECK(col == doctest::Approx(0.0).epsilon(1e-6));
    }

    // monotone blur: doubling the displacement stretches the streak
    std::vector<Tensor> window2;
    for (int k = 0; k < 7; ++k) window2.push_back(square_frame(h, w, 12 + 2 * d * k, 12, side));
    std::vector<FlowField> flows2(6, uniform_flow(h, w, static_cast<float>(2 * d), 0.0f));
    auto blurry2 = synthesize_blurry(window2, flows2);
    auto streak_len = [&](const Tensor& img) {
        int lo = w, hi = 0;
        for (int x = 0; x < w; ++x) {
            double col = 0.0;
            for (int y = 0; y < h; ++y) col += img.at3(0, y, x);
            if (col > 1e-3) {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
        }
        return hi - lo + 1;
    };
    const int len1 = streak_len(blurry);
    const int len2 = streak_len(blurry2);
    CHECK(len2 - len1 == 6 * d);  // streak grows linearly with displacement
}

TEST_CASE("generate_pairs writes pairs, sharp frames bit-exact, manifest complete") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "dbn_synth_test";
    fs::remove_all(dir);
    fs::create_directories(dir / "src");

    // 15-frame synthetic pan: expect 2 pairs (centers 3 and 11)
    Rng rng(13);
    Tensor base({3, 40, 64});
    {
        Tensor noise({40, 64});
        for (auto& v : noise.data) v = static_cast<float>(rng.uniform());
        noise = gaussian_blur(noise, 2.0f);
        for (int c = 0; c < 3; ++c) {
            for (int i = 0; i < 40 * 64; ++i) base.data[static_cast<std::size_t>(c * 40 * 64 + i)] = noise.data[static_cast<std::size_t>(i)];
        }
    }
    HighFpsSequence seq;
    for (int k = 0; k < 15; ++k) {
        Tensor frame({3, 40, 64});
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < 40; ++y) {
                for (int x = 0; x < 64; ++x) {
                    frame.at3(c, y, x) = base.at3(c, y, std::clamp(x - k, 0, 63));
                }
            }
        }
        const auto path = (dir / "src" / (std::to_string(k) + ".png")).string();
        save_image(frame, path);
        seq.frame_paths.push_back(path);
    }

    auto rows = generate_pairs(seq, "pan", (dir / "out").string());
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].source_center_index == 3);
    CHECK(rows[1].source_center_index == 11);
    CHECK_FALSE(rows[0].skipped);

    // sharp output pixels identical to the source frame
    auto sharp = load_image((dir / "out/pan/sharp/00000.png").string());
    auto src = load_image(seq.frame_paths[3]);
    CHECK(sharp.data == src.data);

    write_manifest(rows, (dir / "out/manifest.csv").string());
    std::ifstream mf(dir / "out/manifest.csv");
    std::string line;
    std::getline(mf, line);
    CHECK(line == "video_id,pair_index,source_center_index,skipped_flag");
    std::getline(mf, line);
    CHECK(line == "pan,0,3,0");

    // determinism: regeneration is byte-identical
    auto read_bytes = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    };
    const auto blurry_bytes = read_bytes(dir / "out/pan/blurry/00000.png");
    generate_pairs(seq, "pan", (dir / "out").string());
    CHECK(read_bytes(dir / "out/pan/blurry/00000.png") == blurry_bytes);

    fs::remove_all(dir);
}

TEST_CASE("generate_pairs on an empty sequence raises before writing anything") {
    HighFpsSequence seq;
    CHECK_THROWS_AS(generate_pairs(seq, "x", "/tmp/dbn_should_not_exist"), Error);
    CHECK_FALSE(std::filesystem::exists("/tmp/dbn_should_not_exist"));
}
