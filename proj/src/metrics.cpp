#include "dbn/metrics.hpp"

#include <array>
#include <cmath>

#include "dbn/image.hpp"

namespace dbn {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;
// Standard 5-scale weights (Wang et al. multiscale SSIM).
constexpr std::array<double, 5> kScaleWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::array<double, kWindow> gaussian_window() {
    std::array<double, kWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - (kWindow - 1) / 2.0;
        w[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d / (kSigma * kSigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Valid-region separable Gaussian filter.
TensorD filter_valid(const TensorD& img) {
    static const auto win = gaussian_window();
    const int h = img.dim(0), w = img.dim(1);
    const int oh = h - kWindow + 1, ow = w - kWindow + 1;
    TensorD tmp({h, ow});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWindow; ++k) acc += win[static_cast<std::size_t>(k)] * img.at2(y, x + k);
            tmp.at2(y, x) = acc;
        }
    }
    TensorD out({oh, ow});
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWindow; ++k) acc += win[static_cast<std::size_t>(k)] * tmp.at2(y + k, x);
            out.at2(y, x) = acc;
        }
    }
    return out;
}

TensorD elementwise(const TensorD& a, const TensorD& b, double (*op)(double, double)) {
    TensorD out(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = op(a.data[i], b.data[i]);
    return out;
}

// Mean luminance (l) and contrast-structure (cs) terms of SSIM at one scale.
void ssim_terms(const TensorD& x, const TensorD& y, double& l, double& cs) {
    const double c1 = kK1 * kK1;  // peak = 1
    const double c2 = kK2 * kK2;

    TensorD mu_x = filter_valid(x);
    TensorD mu_y = filter_valid(y);
    TensorD xx = elementwise(x, x, [](double a, double b) { return a * b; });
    TensorD yy = elementwise(y, y, [](double a, double b) { return a * b; });
    TensorD xy = elementwise(x, y, [](double a, double b) { return a * b; });
    TensorD sxx = filter_valid(xx);
    TensorD syy = filter_valid(yy);
    TensorD sxy = filter_valid(xy);

    double lsum = 0.0, cssum = 0.0;
    for (std::size_t i = 0; i < mu_x.numel(); ++i) {
        const double mx = mu_x.data[i], my = mu_y.data[i];
        const double vx = sxx.data[i] - mx * mx;
        const double vy = syy.data[i] - my * my;
        const double cxy = sxy.data[i] - mx * my;
        lsum += (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        cssum += (2.0 * cxy + c2) / (vx + vy + c2);
    }
    l = lsum / static_cast<double>(mu_x.numel());
    cs = cssum / static_cast<double>(mu_x.numel());
}

// 2x2 mean pool with stride 2.
TensorD downsample2(const TensorD& img) {
    const int h = img.dim(0) / 2, w = img.dim(1) / 2;
    TensorD out({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out.at2(y, x) = 0.25 * (img.at2(2 * y, 2 * x) + img.at2(2 * y, 2 * x + 1) +
                                    img.at2(2 * y + 1, 2 * x) + img.at2(2 * y + 1, 2 * x + 1));
        }
    }
    return out;
}

}  // namespace

double mssim(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mssim");
    TensorD x = to_gray(a).cast<double>();
    TensorD y = to_gray(b).cast<double>();

    const int min_dim = std::min(x.dim(0), x.dim(1));
    if (min_dim < kWindow) {
        raise("bad-argument", "image smaller than the " + std::to_string(kWindow) + "px SSIM window");
    }
    // number of scales the image supports (each scale halves, needs >= 11 px)
    int scales = 1;
    int d = min_dim;
    while (scales < 5 && d / 2 >= kWindow) {
        d /= 2;
        scales++;
    }
    double weight_sum = 0.0;
    for (int s = 0; s < scales; ++s) weight_sum += kScaleWeights[static_cast<std::size_t>(s)];

    double result = 1.0;
    for (int s = 0; s < scales; ++s) {
        double l = 0.0, cs = 0.0;
        ssim_terms(x, y, l, cs);
        const double w = kScaleWeights[static_cast<std::size_t>(s)] / weight_sum;
        // contrast/structure at every scale, luminance only at the coarsest
        const double term = (s == scales - 1) ? l * cs : cs;
        result *= std::pow(std::max(term, 0.0), w);
        if (s + 1 < scales) {
            x = downsample2(x);
            y = downsample2(y);
        }
    }
    return result;
}

}  // namespace dbn
