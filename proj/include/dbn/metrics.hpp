#pragma once

#include <limits>

#include "dbn/tensor.hpp"

namespace dbn {

/// 10*log10(peak^2 / MSE) in dB over all channels and pixels. Identical
/// images return +infinity.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Multiscale SSIM on Rec.601 luma: 11x11 Gaussian window (sigma 1.5),
/// up to 5 scales with the standard weights, contrast/structure at every
/// scale and luminance at the coarsest. Frames smaller than 176 px use
/// fewer scales with renormalized weights; frames smaller than the window
/// are an error.
double mssim(const Tensor& a, const Tensor& b);

}  // namespace dbn
