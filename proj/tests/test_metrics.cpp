#include <algorithm>
#include <cmath>

#include <doctest.h>

#include "dbn/image.hpp"
#include "dbn/metrics.hpp"
#include "oracles.hpp"

using namespace dbn;

namespace {

Tensor mid_contrast_frame(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor gray({h, w});
    for (auto& v : gray.data) v = static_cast<float>(rng.uniform());
    gray = gaussian_blur(gray, 1.5f);
    const auto [lo, hi] = std::minmax_element(gray.data.begin(), gray.data.end());
    const float span = *hi - *lo;
    Tensor f({3, h, w});
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < h * w; ++i) {
            f.data[static_cast<std::size_t>(c * h * w + i)] =
                0.15f + 0.7f * (gray.data[static_cast<std::size_t>(i)] - *lo) / span;
        }
    }
    return f;
}

Tensor add_noise(const Tensor& f, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    Tensor out = f;
    for (auto& v : out.data) {
        v = std::clamp(v + static_cast<float>(rng.normal() * sigma), 0.0f, 1.0f);
    }
    return out;
}

}  // namespace

TEST_CASE("psnr closed form: uniform 0.1 difference is 20 dB") {
    Tensor a({3, 32, 32}, 0.5f);
    Tensor b({3, 32, 32}, 0.6f);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
}

TEST_CASE("psnr of identical images is the +inf sentinel") {
    Tensor a({3, 8, 8}, 0.3f);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr(a, a) > 0);
}

TEST_CASE("psnr is symmetric and matches an independent recomputation") {
    Rng rng(5);
    auto a = oracles::random_tensor<float>({3, 16, 16}, rng, 0.0, 1.0);
    auto b = oracles::random_tensor<float>({3, 16, 16}, rng, 0.0, 1.0);
    CHECK(psnr(a, b) == psnr(b, a));

    // direct double-precision recomputation
    double mse = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    const double expect = 10.0 * std::log10(1.0 / mse);
    CHECK(std::abs(psnr(a, b) - expect) < 1e-9);
}

TEST_CASE("mssim of an image with itself is exactly 1") {
    auto f = mid_contrast_frame(200, 200, 7);
    CHECK(mssim(f, f) == doctest::Approx(1.0).epsilon(1e-12));
    auto s = mid_contrast_frame(64, 48, 8);  // reduced-scale path
    CHECK(mssim(s, s) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mssim of an image against its negative is well below 0.5") {
    auto f = mid_contrast_frame(200, 200, 9);
    Tensor inv = f;
    for (auto& v : inv.data) v = 1.0f - v;
    CHECK(mssim(f, inv) < 0.3);
}

TEST_CASE("mssim decreases strictly with increasing noise") {
    auto f = mid_contrast_frame(200, 200, 11);
    const double s1 = mssim(f, add_noise(f, 0.01, 1));
    const double s2 = mssim(f, add_noise(f, 0.05, 2));
    const double s3 = mssim(f, add_noise(f, 0.10, 3));
    CHECK(s1 > s2);
    CHECK(s2 > s3);
    CHECK(s1 < 1.0);
}

TEST_CASE("mssim rejects images smaller than the window") {
    Tensor a({3, 8, 8}, 0.5f);
    CHECK_THROWS_AS(mssim(a, a), Error);
}

TEST_CASE("mssim stays within [-1, 1] on random pairs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        auto a = oracles::random_tensor<float>({3, 64, 64}, rng, 0.0, 1.0);
        auto b = oracles::random_tensor<float>({3, 64, 64}, rng, 0.0, 1.0);
        const double v = mssim(a, b);
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}
