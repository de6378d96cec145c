#include "dbn/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <vector>

#include <png.h>

namespace dbn {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void require_rgb(const Tensor& frame) {
    if (frame.rank() != 3 || frame.dim(0) != 3) {
        raise("shape-mismatch", "expected an RGB frame [3,H,W], got " + format_shape(frame.shape));
    }
}

}  // namespace

Tensor load_image(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) raise("io-error", "cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        raise("decode-error", "not a PNG file: " + path);
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_read_struct(&png, &info, nullptr);
        raise("decode-error", "libpng init failed for " + path);
    }
    std::vector<png_bytep> rows;
    std::vector<png_byte> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        raise("decode-error", "corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth != 8 || color_type != PNG_COLOR_TYPE_RGB) {
        png_destroy_read_struct(&png, &info, nullptr);
        raise("unsupported-format",
              path + ": only 8-bit RGB PNG is supported (bit depth " + std::to_string(bit_depth) +
                  ", color type " + std::to_string(color_type) + ")");
    }
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    pixels.resize(static_cast<std::size_t>(h) * w * 3);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor frame({3, static_cast<int>(h), static_cast<int>(w)});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    constexpr float kInv = 1.0f / 255.0f;
    for (std::size_t i = 0; i < plane; ++i) {
        frame.data[i] = pixels[i * 3] * kInv;
        frame.data[plane + i] = pixels[i * 3 + 1] * kInv;
        frame.data[2 * plane + i] = pixels[i * 3 + 2] * kInv;
    }
    return frame;
}

void save_image(const Tensor& frame, const std::string& path) {
    require_rgb(frame);
    const int h = frame.dim(1), w = frame.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    std::vector<png_byte> pixels(plane * 3);
    for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            const float v = std::clamp(frame.data[c * plane + i], 0.0f, 1.0f);
            pixels[i * 3 + c] = static_cast<png_byte>(std::floor(v * 255.0f + 0.5f));
        }
    }

    const std::string tmp = path + ".tmp";
    {
        FilePtr fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp) raise("io-error", "cannot open " + tmp + " for writing");
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (png == nullptr || info == nullptr) {
            png_destroy_write_struct(&png, &info);
            raise("io-error", "libpng init failed for " + tmp);
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            raise("io-error", "PNG write failed: " + tmp);
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                     PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < h; ++y) {
            png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * w * 3);
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) raise("io-error", "rename " + tmp + " -> " + path + ": " + ec.message());
}

Tensor to_gray(const Tensor& frame) {
    require_rgb(frame);
    const int h = frame.dim(1), w = frame.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor gray({h, w});
    for (std::size_t i = 0; i < plane; ++i) {
        gray.data[i] = 0.299f * frame.data[i] + 0.587f * frame.data[plane + i] +
                       0.114f * frame.data[2 * plane + i];
    }
    return gray;
}

float sample_bilinear(const Tensor& img, int channel, float y, float x) {
    const int h = img.rank() == 3 ? img.dim(1) : img.dim(0);
    const int w = img.rank() == 3 ? img.dim(2) : img.dim(1);
    const float* base = img.ptr() + (img.rank() == 3 ? static_cast<std::size_t>(channel) * h * w : 0);

    x = std::clamp(x, 0.0f, static_cast<float>(w - 1));
    y = std::clamp(y, 0.0f, static_cast<float>(h - 1));
    const int x0 = std::min(static_cast<int>(x), w - 1);
    const int y0 = std::min(static_cast<int>(y), h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const float fx = x - static_cast<float>(x0);
    const float fy = y - static_cast<float>(y0);
    const float a = base[static_cast<std::size_t>(y0) * w + x0];
    const float b = base[static_cast<std::size_t>(y0) * w + x1];
    const float c = base[static_cast<std::size_t>(y1) * w + x0];
    const float d = base[static_cast<std::size_t>(y1) * w + x1];
    return a * (1 - fx) * (1 - fy) + b * fx * (1 - fy) + c * (1 - fx) * fy + d * fx * fy;
}

Tensor resize_bilinear(const Tensor& frame, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) raise("bad-argument", "resize target must be positive");
    const int rank = frame.rank();
    const int c = rank == 3 ? frame.dim(0) : 1;
    const int h = rank == 3 ? frame.dim(1) : frame.dim(0);
    const int w = rank == 3 ? frame.dim(2) : frame.dim(1);
    Tensor out(rank == 3 ? std::vector<int>{c, out_h, out_w} : std::vector<int>{out_h, out_w});
    const float sy = static_cast<float>(h) / static_cast<float>(out_h);
    const float sx = static_cast<float>(w) / static_cast<float>(out_w);
    for (int ci = 0; ci < c; ++ci) {
        float* dst = out.ptr() + static_cast<std::size_t>(ci) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
            for (int x = 0; x < out_w; ++x) {
                const float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
                dst[static_cast<std::size_t>(y) * out_w + x] = sample_bilinear(frame, ci, fy, fx);
            }
        }
    }
    return out;
}

Tensor rotate90(const Tensor& frame, int quarter_turns) {
    require_rgb(frame);
    const int q = ((quarter_turns % 4) + 4) % 4;
    if (q == 0) return frame;
    const int h = frame.dim(1), w = frame.dim(2);
    const int oh = (q % 2 == 0) ? h : w;
    const int ow = (q % 2 == 0) ? w : h;
    Tensor out({3, oh, ow});
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                int ny, nx;
                // counter-clockwise quarter turns
                if (q == 1) {
                    ny = w - 1 - x;
                    nx = y;
                } else if (q == 2) {
                    ny = h - 1 - y;
                    nx = w - 1 - x;
                } else {
                    ny = x;
                    nx = h - 1 - y;
                }
                out.at3(c, ny, nx) = frame.at3(c, y, x);
            }
        }
    }
    return out;
}

Tensor hflip(const Tensor& frame) {
    require_rgb(frame);
    const int h = frame.dim(1), w = frame.dim(2);
    Tensor out({3, h, w});
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) out.at3(c, y, w - 1 - x) = frame.at3(c, y, x);
        }
    }
    return out;
}

Tensor crop(const Tensor& frame, int y0, int x0, int h, int w) {
    require_rgb(frame);
    if (y0 < 0 || x0 < 0 || y0 + h > frame.dim(1) || x0 + w > frame.dim(2)) {
        raise("bad-argument", "crop window exceeds frame bounds");
    }
    Tensor out({3, h, w});
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            const float* src = frame.ptr() + (static_cast<std::size_t>(c) * frame.dim(1) + y0 + y) * frame.dim(2) + x0;
            std::memcpy(&out.at3(c, y, 0), src, static_cast<std::size_t>(w) * sizeof(float));
        }
    }
    return out;
}

Tensor pad_reflect(const Tensor& frame, int pad_bottom, int pad_right) {
    require_rgb(frame);
    const int h = frame.dim(1), w = frame.dim(2);
    if (pad_bottom >= h || pad_right >= w) raise("bad-argument", "reflect padding exceeds frame size");
    if (pad_bottom == 0 && pad_right == 0) return frame;
    Tensor out({3, h + pad_bottom, w + pad_right});
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h + pad_bottom; ++y) {
            const int sy = y < h ? y : 2 * h - 1 - y;
            for (int x = 0; x < w + pad_right; ++x) {
                const int sx = x < w ? x : 2 * w - 1 - x;
                out.at3(c, y, x) = frame.at3(c, sy, sx);
            }
        }
    }
    return out;
}

Tensor gaussian_blur(const Tensor& gray, float sigma) {
    if (gray.rank() != 2) raise("shape-mismatch", "gaussian_blur expects [H,W]");
    if (sigma <= 0.0f) return gray;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
    std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
    float sum = 0.0f;
    for (int i = -radius; i <= radius; ++i) {
        const float v = std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : kernel) v /= sum;

    const int h = gray.dim(0), w = gray.dim(1);
    Tensor tmp({h, w}), out({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i) {
                const int sx = std::clamp(x + i, 0, w - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] * gray.at2(y, sx);
            }
            tmp.at2(y, x) = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i) {
                const int sy = std::clamp(y + i, 0, h - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at2(sy, x);
            }
            out.at2(y, x) = acc;
        }
    }
    return out;
}

}  // namespace dbn
