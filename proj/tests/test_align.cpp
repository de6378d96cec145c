#include <algorithm>
#include <cmath>

#include <doctest.h>

#include "dbn/align.hpp"
#include "dbn/image.hpp"
#include "dbn/metrics.hpp"
#include "oracles.hpp"

using namespace dbn;

namespace {

// Multi-octave noise texture: structure at fine and coarse scales, the way
// real footage behaves, so pyramid methods have signal at every level.
Tensor textured_frame(int h, int w, std::uint64_t seed, float base_sigma = 1.2f) {
    Rng rng(seed);
    Tensor gray({h, w});
    const float octaves[] = {base_sigma, 4.0f * base_sigma, 12.0f * base_sigma};
    float gain = 1.0f;
    for (float sigma : octaves) {
        Tensor noise({h, w});
        for (auto& v : noise.data) v = static_cast<float>(rng.uniform());
        noise = gaussian_blur(noise, sigma);
        for (int i = 0; i < h * w; ++i) gray.data[static_cast<std::size_t>(i)] += gain * noise.data[static_cast<std::size_t>(i)];
        gain *= 2.0f;
    }
    const auto [lo, hi] = std::minmax_element(gray.data.begin(), gray.data.end());
    const float span = *hi - *lo;
    Tensor frame({3, h, w});
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < h * w; ++i) {
            frame.data[static_cast<std::size_t>(c) * h * w + i] = (gray.data[static_cast<std::size_t>(i)] - *lo) / span;
        }
    }
    return frame;
}

// Integer-pixel translate with edge replication: content moves by (dx, dy).
Tensor shift_frame(const Tensor& f, int dx, int dy) {
    const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const int sy = std::clamp(y - dy, 0, h - 1);
                const int sx = std::clamp(x - dx, 0, w - 1);
                out.at3(ci, y, x) = f.at3(ci, sy, sx);
            }
        }
    }
    return out;
}

Homography make_h(std::initializer_list<double> v) {
    Homography h;
    std::copy(v.begin(), v.end(), h.h.begin());
    return h;
}

}  // namespace

TEST_CASE("identical frames match with near-zero displacement") {
    auto f = textured_frame(96, 96, 5);
    auto matches = detect_and_match(f, f);
    REQUIRE(matches.size() >= 10);
    for (const auto& m : matches) {
        CHECK(std::abs(m.px - m.qx) < 0.5);
        CHECK(std::abs(m.py - m.qy) < 0.5);
    }
}

TEST_CASE("matching a 5-pixel shift recovers the displacement") {
    auto f = textured_frame(96, 96, 6);
    auto shifted = shift_frame(f, 5, 0);
    // shifted is the neighbor: its points sit 5 px right of the reference's
    auto matches = detect_and_match(f, shifted);
    REQUIRE(matches.size() >= 10);
    std::vector<double> dx, dy;
    for (const auto& m : matches) {
        dx.push_back(m.px - m.qx);
        dy.push_back(m.py - m.qy);
    }
    std::sort(dx.begin(), dx.end());
    std::sort(dy.begin(), dy.end());
    CHECK(std::abs(dx[dx.size() / 2] - 5.0) <= 0.5);
    CHECK(std::abs(dy[dy.size() / 2]) <= 0.5);
}

TEST_CASE("textureless frames produce an empty match list") {
    Tensor flat({3, 64, 64}, 0.5f);
    auto matches = detect_and_match(flat, flat);
    CHECK(matches.size() <= 2);
}

TEST_CASE("mlesac recovers an exact homography from noise-free points") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Homography truth = make_h({1.02, 0.01, 3.0, -0.02, 0.98, -2.0, 1e-5, -2e-5, 1.0});
        std::vector<Correspondence> matches;
        for (int i = 0; i < 50; ++i) {
            const double px = rng.uniform(0, 200), py = rng.uniform(0, 150);
            double qx, qy;
            truth.apply(px, py, qx, qy);
            matches.push_back({px, py, qx, qy, 1.0});
        }
        std::vector<std::uint8_t> mask;
        auto est = estimate_homography_mlesac(matches, seed + 1, 500, 1.0, &mask);
        for (int i = 0; i < 9; ++i) CHECK(std::abs(est.h[static_cast<std::size_t>(i)] - truth.h[static_cast<std::size_t>(i)]) < 1e-6);
        CHECK(std::count(mask.begin(), mask.end(), 1) == 50);
    }
}

TEST_CASE("mlesac tolerates 30% outliers and flags them") {
    for (std::uint64_t seed = 50; seed < 70; ++seed) {
        Rng rng(seed);
        Homography truth = make_h({0.99, -0.015, -4.0, 0.012, 1.03, 5.0, -1e-5, 2e-5, 1.0});
        std::vector<Correspondence> matches;
        for (int i = 0; i < 35; ++i) {
            const double px = rng.uniform(0, 200), py = rng.uniform(0, 150);
            double qx, qy;
            truth.apply(px, py, qx, qy);
            matches.push_back({px, py, qx, qy, 1.0});
        }
        for (int i = 0; i < 15; ++i) {  // 30% uniform outliers
            matches.push_back({rng.uniform(0, 200), rng.uniform(0, 150), rng.uniform(0, 200),
                               rng.uniform(0, 150), 1.0});
        }
        std::vector<std::uint8_t> mask;
        auto est = estimate_homography_mlesac(matches, seed + 7, 2000, 1.0, &mask);
        for (int i = 0; i < 9; ++i) CHECK(std::abs(est.h[static_cast<std::size_t>(i)] - truth.h[static_cast<std::size_t>(i)]) < 1e-3);
        // every true inlier kept, outliers overwhelmingly rejected
        int kept_inliers = 0, kept_outliers = 0;
        for (int i = 0; i < 35; ++i) kept_inliers += mask[static_cast<std::size_t>(i)];
        for (int i = 35; i < 50; ++i) kept_outliers += mask[static_cast<std::size_t>(i)];
        CHECK(kept_inliers == 35);
        CHECK(kept_outliers <= 1);
    }
}

TEST_CASE("identity correspondences give the identity homography") {
    Rng rng(3);
    std::vector<Correspondence> matches;
    for (int i = 0; i < 20; ++i) {
        const double x = rng.uniform(0, 100), y = rng.uniform(0, 100);
        matches.push_back({x, y, x, y, 1.0});
    }
    auto est = estimate_homography_mlesac(matches, 1, 200, 1.0, nullptr);
    Homography id;
    for (int i = 0; i < 9; ++i) CHECK(std::abs(est.h[static_cast<std::size_t>(i)] - id.h[static_cast<std::size_t>(i)]) < 1e-9);
}

TEST_CASE("mlesac requires at least 4 matches") {
    std::vector<Correspondence> matches = {{0, 0, 0, 0, 1}, {1, 0, 1, 0, 1}, {0, 1, 0, 1, 1}};
    CHECK_THROWS_WITH_AS(estimate_homography_mlesac(matches, 1, 100, 1.0, nullptr),
                         doctest::Contains("no-model"), Error);
}

TEST_CASE("flow between identical frames is near zero") {
    auto f = textured_frame(80, 80, 11);
    auto flow = compute_flow(f, f);
    double mean = 0.0;
    for (std::size_t i = 0; i < flow.u.numel(); ++i) {
        mean += std::hypot(flow.u.data[i], flow.v.data[i]);
    }
    mean /= static_cast<double>(flow.u.numel());
    CHECK(mean < 0.05);
}

TEST_CASE("flow recovers synthetic shifts up to 5 px within 0.25 px") {
    for (int d : {2, 3, 5}) {
        auto f = textured_frame(96, 96, 13 + static_cast<std::uint64_t>(d));
        auto shifted = shift_frame(f, d, 0);
        auto flow = compute_flow(f, shifted);
        // interior mean; borders excluded
        const int m = 12;
        double mu = 0.0, mv = 0.0;
        int count = 0;
        for (int y = m; y < 96 - m; ++y) {
            for (int x = m; x < 96 - m; ++x) {
                mu += flow.u.at2(y, x);
                mv += flow.v.at2(y, x);
                count++;
            }
        }
        mu /= count;
        mv /= count;
        INFO("shift ", d);
        CHECK(std::abs(mu - d) < 0.25);
        CHECK(std::abs(mv) < 0.25);
    }
}

TEST_CASE("flow on constant frames is regularized toward zero") {
    Tensor flat({3, 64, 64}, 0.3f);
    auto flow = compute_flow(flat, flat);
    for (std::size_t i = 0; i < flow.u.numel(); ++i) {
        CHECK(std::abs(flow.u.data[i]) < 1e-3);
        CHECK(std::abs(flow.v.data[i]) < 1e-3);
    }
}

TEST_CASE("warp by the identity homography is bit-exact") {
    auto f = textured_frame(64, 64, 17);
    auto out = warp(f, Homography::identity());
    CHECK(out.data == f.data);
}

TEST_CASE("warp round trip through H and H^-1 stays above 35 dB") {
    auto f = textured_frame(96, 96, 19, 2.0f);
    Homography h = make_h({1.01, 0.02, 1.5, -0.01, 0.99, -1.0, 0, 0, 1.0});
    auto once = warp(f, h);
    auto back = warp(once, h.inverse());
    // interior crop: border pixels saw edge replication
    auto fc = crop(f, 8, 8, 80, 80);
    auto bc = crop(back, 8, 8, 80, 80);
    CHECK(psnr(fc, bc) > 35.0);
}

TEST_CASE("integer-translation homography shifts pixels exactly") {
    auto f = textured_frame(48, 48, 23);
    // neighbor -> reference translation by (+3, +2)
    Homography h = make_h({1, 0, 3, 0, 1, 2, 0, 0, 1});
    auto out = warp(f, h);
    for (int c = 0; c < 3; ++c) {
        for (int y = 10; y < 40; ++y) {
            for (int x = 10; x < 40; ++x) {
                CHECK(out.at3(c, y, x) == f.at3(c, y - 2, x - 3));
            }
        }
    }
}

TEST_CASE("align_stack mode none returns the stack unchanged") {
    FrameStack s;
    for (int k = 0; k < 5; ++k) s.frames[static_cast<std::size_t>(k)] = textured_frame(48, 48, 29 + static_cast<std::uint64_t>(k));
    auto out = align_stack(s, AlignMode::None);
    for (int k = 0; k < 5; ++k) CHECK(out.frames[static_cast<std::size_t>(k)].data == s.frames[static_cast<std::size_t>(k)].data);
}

TEST_CASE("align_stack homography pulls shifted copies onto the center") {
    auto base = textured_frame(96, 96, 31);
    FrameStack s;
    const int shifts[5][2] = {{-4, 2}, {-2, 1}, {0, 0}, {2, -1}, {4, -2}};
    for (int k = 0; k < 5; ++k) {
        s.frames[static_cast<std::size_t>(k)] = shift_frame(base, shifts[k][0], shifts[k][1]);
    }
    auto out = align_stack(s, AlignMode::Homography);
    // central frame untouched, byte equality
    CHECK(out.frames[2].data == s.frames[2].data);
    // aligned neighbors match the center within 0.5 px: compare interior pixels
    for (int k = 0; k < 5; ++k) {
        if (k == 2) continue;
        auto a = crop(out.frames[static_cast<std::size_t>(k)], 10, 10, 76, 76);
        auto c = crop(s.frames[2], 10, 10, 76, 76);
        CHECK(psnr(a, c) > 30.0);
    }
}

TEST_CASE("align_stack flow mode keeps the central frame untouched") {
    auto base = textured_frame(64, 64, 37);
    FrameStack s;
    for (int k = 0; k < 5; ++k) s.frames[static_cast<std::size_t>(k)] = shift_frame(base, k - 2, 0);
    auto out = align_stack(s, AlignMode::Flow);
    CHECK(out.frames[2].data == s.frames[2].data);
}

TEST_CASE("homography failure passes the frame through and logs") {
    FrameStack s;
    for (int k = 0; k < 5; ++k) s.frames[static_cast<std::size_t>(k)] = Tensor({3, 48, 48}, 0.5f);  // textureless
    std::vector<std::string> events;
    auto out = align_stack(s, AlignMode::Homography, [&](const std::string& msg) { events.push_back(msg); });
    for (int k = 0; k < 5; ++k) CHECK(out.frames[static_cast<std::size_t>(k)].data == s.frames[static_cast<std::size_t>(k)].data);
    CHECK(events.size() == 4);
}
