#pragma once

#include <string>

#include "dbn/tensor.hpp"

namespace dbn {

/// Frames are planar float tensors [3,H,W] with values in [0,1].
/// Only 8-bit RGB PNGs are accepted; values map as v/255.
Tensor load_image(const std::string& path);

/// Saves with round-half-up quantization; save∘load is lossless on 8-bit
/// data. Writes are atomic (temp file + rename).
void save_image(const Tensor& frame, const std::string& path);

/// Rec.601 luma, [H,W].
Tensor to_gray(const Tensor& frame);

/// Bilinear sample with edge replication; works on [C,H,W] and [H,W].
float sample_bilinear(const Tensor& img, int channel, float y, float x);

Tensor resize_bilinear(const Tensor& frame, int out_h, int out_w);

/// Exact-index geometric transforms.
Tensor rotate90(const Tensor& frame, int quarter_turns);
Tensor hflip(const Tensor& frame);
Tensor crop(const Tensor& frame, int y0, int x0, int h, int w);

/// Symmetric (edge-mirroring) padding on the bottom/right.
Tensor pad_reflect(const Tensor& frame, int pad_bottom, int pad_right);

/// Separable Gaussian blur on a [H,W] tensor.
Tensor gaussian_blur(const Tensor& gray, float sigma);

}  // namespace dbn
