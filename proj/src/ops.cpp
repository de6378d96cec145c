#include "dbn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace dbn {

namespace {

// BLAS threading is pinned to one thread; parallelism happens at the batch /
// chunk level where each task writes disjoint output, so results do not
// depend on the worker count.
struct BlasInit {
    BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit blas_init;

// Row-major C(MxN) = alpha*op(A)*op(B) + beta*C.
inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
                 int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha,
                a, lda, b, ldb, beta, c, ldc);
}
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha,
                a, lda, b, ldb, beta, c, ldc);
}

// Patch-matrix buffers are processed in output-row chunks to bound memory.
constexpr std::size_t kMaxColBytes = std::size_t(64) << 20;

int rows_per_chunk(std::size_t k, int out_w, int out_h, std::size_t elem) {
    const std::size_t per_row = k * static_cast<std::size_t>(out_w) * elem;
    int rows = per_row == 0 ? out_h : static_cast<int>(kMaxColBytes / std::max<std::size_t>(per_row, 1));
    return std::max(1, std::min(rows, out_h));
}

// Extracts patches for output rows [y0,y1) of one image into col, laid out
// as [Cin*kh*kw][rows*out_w].
template <typename T>
void im2col(const T* img, int channels, int h, int w, int kh, int kw, int stride, int pad, int y0, int y1,
            int out_w, T* col) {
    const int px = (y1 - y0) * out_w;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = col + (static_cast<std::size_t>(c) * kh * kw + ky * kw + kx) * px;
                for (int oy = y0; oy < y1; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + out_w, T(0));
                        dst += out_w;
                        continue;
                    }
                    const T* src_row = img + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        *dst++ = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch matrix back into an image; inverse of im2col.
template <typename T>
void col2im(const T* col, int channels, int h, int w, int kh, int kw, int stride, int pad, int y0, int y1,
            int out_w, T* img) {
    const int px = (y1 - y0) * out_w;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const T* src = col + (static_cast<std::size_t>(c) * kh * kw + ky * kw + kx) * px;
                for (int oy = y0; oy < y1; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        src += out_w;
                        continue;
                    }
                    T* dst_row = img + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst_row[ix] += *src;
                        ++src;
                    }
                }
            }
        }
    }
}

template <typename T>
void check_conv_args(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                     const ConvSpec& spec) {
    if (input.rank() != 4) raise("shape-mismatch", "conv input must be 4-D, got " + format_shape(input.shape));
    if (weights.shape != spec.weight_shape()) {
        raise("shape-mismatch",
              "conv weights " + format_shape(weights.shape) + " do not match spec " +
                  format_shape(spec.weight_shape()));
    }
    if (input.dim(1) != spec.in_channels) {
        raise("shape-mismatch", "conv input channels " + format_shape(input.shape) + " vs weights " +
                                    format_shape(weights.shape));
    }
    if (!bias.empty() && bias.shape != std::vector<int>{spec.out_channels}) {
        raise("shape-mismatch", "conv bias " + format_shape(bias.shape) + " expected [" +
                                    std::to_string(spec.out_channels) + "]");
    }
}

}  // namespace

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                          const ConvSpec& spec) {
    if (spec.transposed) return conv2d_transpose_forward(input, weights, bias, spec);
    check_conv_args(input, weights, bias, spec);
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int oh = spec.out_h(h), ow = spec.out_w(w);
    if (oh <= 0 || ow <= 0) raise("bad-shape", "conv output would be empty for input " + format_shape(input.shape));
    const int k = cin * spec.kh * spec.kw;
    TensorT<T> out({n, spec.out_channels, oh, ow});

    parallel_for(0, n, [&](std::int64_t ni) {
        std::vector<T> col;
        const int chunk = rows_per_chunk(static_cast<std::size_t>(k), ow, oh, sizeof(T));
        col.resize(static_cast<std::size_t>(k) * chunk * ow);
        const T* img = input.ptr() + static_cast<std::size_t>(ni) * cin * h * w;
        T* dst = out.ptr() + static_cast<std::size_t>(ni) * spec.out_channels * oh * ow;
        for (int y0 = 0; y0 < oh; y0 += chunk) {
            const int y1 = std::min(oh, y0 + chunk);
            const int px = (y1 - y0) * ow;
            im2col(img, cin, h, w, spec.kh, spec.kw, spec.stride, spec.padding, y0, y1, ow, col.data());
            // out[co][px] = W[co][k] * col[k][px]; chunk output is strided by rows.
            std::vector<T> tmp(static_cast<std::size_t>(spec.out_channels) * px);
            gemm(false, false, spec.out_channels, px, k, T(1), weights.ptr(), k, col.data(), px, T(0),
                 tmp.data(), px);
            for (int co = 0; co < spec.out_channels; ++co) {
                const T b = bias.empty() ? T(0) : bias.data[co];
                const T* s = tmp.data() + static_cast<std::size_t>(co) * px;
                T* d = dst + (static_cast<std::size_t>(co) * oh + y0) * ow;
                for (int i = 0; i < px; ++i) d[i] = s[i] + b;
            }
        }
    });
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input, const TensorT<T>& weights,
                             const ConvSpec& spec, bool need_grad_input) {
    if (spec.transposed) return conv2d_transpose_backward(grad_out, input, weights, spec, need_grad_input);
    check_conv_args(input, weights, TensorT<T>(), spec);
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int oh = spec.out_h(h), ow = spec.out_w(w);
    const std::vector<int> expect = {n, spec.out_channels, oh, ow};
    if (grad_out.shape != expect) {
        raise("shape-mismatch", "conv grad_out " + format_shape(grad_out.shape) + " expected " +
                                    format_shape(expect));
    }
    const int k = cin * spec.kh * spec.kw;

    ConvGrads<T> g;
    if (need_grad_input) g.input = TensorT<T>(input.shape);
    g.weights = TensorT<T>(weights.shape);
    g.bias = TensorT<T>({spec.out_channels});

    // Per-sample weight-gradient partials, reduced in sample order afterwards
    // so results are independent of the worker count.
    const int group = static_cast<int>(std::min<std::int64_t>(n, 8));
    std::vector<TensorT<T>> partial(static_cast<std::size_t>(group));
    for (auto& p : partial) p = TensorT<T>(weights.shape);

    for (int base = 0; base < n; base += group) {
        const int cnt = std::min(group, n - base);
        parallel_for(0, cnt, [&](std::int64_t gi) {
            const int ni = base + static_cast<int>(gi);
            const int chunk = rows_per_chunk(static_cast<std::size_t>(k), ow, oh, sizeof(T));
            std::vector<T> col(static_cast<std::size_t>(k) * chunk * ow);
            std::vector<T> dy(static_cast<std::size_t>(spec.out_channels) * chunk * ow);
            std::vector<T> dcol(need_grad_input ? col.size() : 0);
            const T* img = input.ptr() + static_cast<std::size_t>(ni) * cin * h * w;
            const T* gsrc = grad_out.ptr() + static_cast<std::size_t>(ni) * spec.out_channels * oh * ow;
            T* dw = partial[static_cast<std::size_t>(gi)].ptr();
            T* dx = need_grad_input ? g.input.ptr() + static_cast<std::size_t>(ni) * cin * h * w : nullptr;
            for (int y0 = 0; y0 < oh; y0 += chunk) {
                const int y1 = std::min(oh, y0 + chunk);
                const int px = (y1 - y0) * ow;
                // Gather grad_out rows for this chunk into [co][px].
                for (int co = 0; co < spec.out_channels; ++co) {
                    std::memcpy(dy.data() + static_cast<std::size_t>(co) * px,
                                gsrc + (static_cast<std::size_t>(co) * oh + y0) * ow,
                                static_cast<std::size_t>(px) * sizeof(T));
                }
                im2col(img, cin, h, w, spec.kh, spec.kw, spec.stride, spec.padding, y0, y1, ow, col.data());
                // dW[co][k] += dY[co][px] * col[k][px]^T
                gemm(false, true, spec.out_channels, k, px, T(1), dy.data(), px, col.data(), px, T(1), dw, k);
                if (need_grad_input) {
                    // dcol[k][px] = W[co][k]^T * dY[co][px]
                    gemm(true, false, k, px, spec.out_channels, T(1), weights.ptr(), k, dy.data(), px, T(0),
                         dcol.data(), px);
                    col2im(dcol.data(), cin, h, w, spec.kh, spec.kw, spec.stride, spec.padding, y0, y1, ow, dx);
                }
            }
        });
        for (int gi = 0; gi < cnt; ++gi) {
            const T* src = partial[static_cast<std::size_t>(gi)].ptr();
            T* dst = g.weights.ptr();
            for (std::size_t i = 0; i < g.weights.numel(); ++i) dst[i] += src[i];
            std::fill(partial[static_cast<std::size_t>(gi)].data.begin(),
                      partial[static_cast<std::size_t>(gi)].data.end(), T(0));
        }
    }

    // Bias gradient: plain reduction over batch and pixels.
    for (int ni = 0; ni < n; ++ni) {
        for (int co = 0; co < spec.out_channels; ++co) {
            const T* s = grad_out.ptr() + (static_cast<std::size_t>(ni) * spec.out_channels + co) * oh * ow;
            T acc = 0;
            for (int i = 0; i < oh * ow; ++i) acc += s[i];
            g.bias.data[co] += acc;
        }
    }
    return g;
}

template <typename T>
TensorT<T> conv2d_transpose_forward(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                                    const ConvSpec& spec) {
    if (!spec.transposed) raise("bad-argument", "spec.transposed must be set");
    check_conv_args(input, weights, bias, spec);
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int oh = spec.out_h(h), ow = spec.out_w(w);
    if (oh <= 0 || ow <= 0) raise("bad-shape", "transposed conv output empty for " + format_shape(input.shape));
    const int k = spec.out_channels * spec.kh * spec.kw;
    TensorT<T> out({n, spec.out_channels, oh, ow});

    parallel_for(0, n, [&](std::int64_t ni) {
        const int chunk = rows_per_chunk(static_cast<std::size_t>(k), w, h, sizeof(T));
        std::vector<T> col(static_cast<std::size_t>(k) * chunk * w);
        std::vector<T> xrows(static_cast<std::size_t>(cin) * chunk * w);
        const T* img = input.ptr() + static_cast<std::size_t>(ni) * cin * h * w;
        T* dst = out.ptr() + static_cast<std::size_t>(ni) * spec.out_channels * oh * ow;
        for (int y0 = 0; y0 < h; y0 += chunk) {
            const int y1 = std::min(h, y0 + chunk);
            const int px = (y1 - y0) * w;
            for (int c = 0; c < cin; ++c) {
                std::memcpy(xrows.data() + static_cast<std::size_t>(c) * px,
                            img + (static_cast<std::size_t>(c) * h + y0) * w,
                            static_cast<std::size_t>(px) * sizeof(T));
            }
            // col[k][px] = W[cin][k]^T * X[cin][px]
            gemm(true, false, k, px, cin, T(1), weights.ptr(), k, xrows.data(), px, T(0), col.data(), px);
            // Input rows [y0,y1) scatter into the output grid; serial within a
            // sample because adjacent chunks overlap rows.
            col2im(col.data(), spec.out_channels, oh, ow, spec.kh, spec.kw, spec.stride, spec.padding, y0, y1,
                   w, dst);
        }
        if (!bias.empty()) {
            for (int co = 0; co < spec.out_channels; ++co) {
                T* d = dst + static_cast<std::size_t>(co) * oh * ow;
                const T b = bias.data[co];
                for (int i = 0; i < oh * ow; ++i) d[i] += b;
            }
        }
    });
    return out;
}

template <typename T>
ConvGrads<T> conv2d_transpose_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                                       const TensorT<T>& weights, const ConvSpec& spec, bool need_grad_input) {
    if (!spec.transposed) raise("bad-argument", "spec.transposed must be set");
    check_conv_args(input, weights, TensorT<T>(), spec);
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int oh = spec.out_h(h), ow = spec.out_w(w);
    const std::vector<int> expect = {n, spec.out_channels, oh, ow};
    if (grad_out.shape != expect) {
        raise("shape-mismatch", "transposed conv grad_out " + format_shape(grad_out.shape) + " expected " +
                                    format_shape(expect));
    }
    const int k = spec.out_channels * spec.kh * spec.kw;

    ConvGrads<T> g;
    if (need_grad_input) g.input = TensorT<T>(input.shape);
    g.weights = TensorT<T>(weights.shape);
    g.bias = TensorT<T>({spec.out_channels});

    const int group = static_cast<int>(std::min<std::int64_t>(n, 8));
    std::vector<TensorT<T>> partial(static_cast<std::size_t>(group));
    for (auto& p : partial) p = TensorT<T>(weights.shape);

    for (int base = 0; base < n; base += group) {
        const int cnt = std::min(group, n - base);
        parallel_for(0, cnt, [&](std::int64_t gi) {
            const int ni = base + static_cast<int>(gi);
            const int chunk = rows_per_chunk(static_cast<std::size_t>(k), w, h, sizeof(T));
            std::vector<T> col(static_cast<std::size_t>(k) * chunk * w);
            std::vector<T> xrows(static_cast<std::size_t>(cin) * chunk * w);
            const T* img = input.ptr() + static_cast<std::size_t>(ni) * cin * h * w;
            const T* gsrc = grad_out.ptr() + static_cast<std::size_t>(ni) * spec.out_channels * oh * ow;
            T* dw = partial[static_cast<std::size_t>(gi)].ptr();
            T* dx = need_grad_input ? g.input.ptr() + static_cast<std::size_t>(ni) * cin * h * w : nullptr;
            for (int y0 = 0; y0 < h; y0 += chunk) {
                const int y1 = std::min(h, y0 + chunk);
                const int px = (y1 - y0) * w;
                // Patches of grad_out sampled at the input grid positions.
                im2col(gsrc, spec.out_channels, oh, ow, spec.kh, spec.kw, spec.stride, spec.padding, y0, y1, w,
                       col.data());
                // dW[cin][k] += X[cin][px] * col[k][px]^T
                for (int c = 0; c < cin; ++c) {
                    std::memcpy(xrows.data() + static_cast<std::size_t>(c) * px,
                                img + (static_cast<std::size_t>(c) * h + y0) * w,
                                static_cast<std::size_t>(px) * sizeof(T));
                }
                gemm(false, true, cin, k, px, T(1), xrows.data(), px, col.data(), px, T(1), dw, k);
                if (need_grad_input) {
                    // dX[cin][px] = W[cin][k] * col[k][px]
                    gemm(false, false, cin, px, k, T(1), weights.ptr(), k, col.data(), px, T(0), xrows.data(),
                         px);
                    for (int c = 0; c < cin; ++c) {
                        std::memcpy(dx + (static_cast<std::size_t>(c) * h + y0) * w,
                                    xrows.data() + static_cast<std::size_t>(c) * px,
                                    static_cast<std::size_t>(px) * sizeof(T));
                    }
                }
            }
        });
        for (int gi = 0; gi < cnt; ++gi) {
            const T* src = partial[static_cast<std::size_t>(gi)].ptr();
            T* dst = g.weights.ptr();
            for (std::size_t i = 0; i < g.weights.numel(); ++i) dst[i] += src[i];
            std::fill(partial[static_cast<std::size_t>(gi)].data.begin(),
                      partial[static_cast<std::size_t>(gi)].data.end(), T(0));
        }
    }

    for (int ni = 0; ni < n; ++ni) {
        for (int co = 0; co < spec.out_channels; ++co) {
            const T* s = grad_out.ptr() + (static_cast<std::size_t>(ni) * spec.out_channels + co) * oh * ow;
            T acc = 0;
            for (int i = 0; i < oh * ow; ++i) acc += s[i];
            g.bias.data[co] += acc;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
TensorT<T> batchnorm_forward(const TensorT<T>& input, BatchNormStateT<T>& state, bool training,
                             BatchNormCache<T>* cache) {
    if (input.rank() != 4) raise("shape-mismatch", "batchnorm input must be 4-D, got " + format_shape(input.shape));
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (c != state.channels()) {
        raise("shape-mismatch", "batchnorm channels: input " + format_shape(input.shape) + " vs state [" +
                                    std::to_string(state.channels()) + "]");
    }
    const std::int64_t m = static_cast<std::int64_t>(n) * h * w;
    if (training && m < 2) raise("bad-argument", "batchnorm training mode needs N*H*W >= 2 per channel");

    std::vector<T> mean(c), var(c);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    if (training) {
        for (int ci = 0; ci < c; ++ci) {
            double acc = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const T* s = input.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
                for (std::size_t i = 0; i < plane; ++i) acc += s[i];
            }
            mean[ci] = static_cast<T>(acc / static_cast<double>(m));
        }
        for (int ci = 0; ci < c; ++ci) {
            double acc = 0.0;
            const double mu = mean[ci];
            for (int ni = 0; ni < n; ++ni) {
                const T* s = input.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = s[i] - mu;
                    acc += d * d;
                }
            }
            var[ci] = static_cast<T>(acc / static_cast<double>(m));
        }
        for (int ci = 0; ci < c; ++ci) {
            state.running_mean[ci] = (T(1) - state.momentum) * state.running_mean[ci] + state.momentum * mean[ci];
            state.running_var[ci] = (T(1) - state.momentum) * state.running_var[ci] + state.momentum * var[ci];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<T> invstd(c);
    for (int ci = 0; ci < c; ++ci) invstd[ci] = T(1) / std::sqrt(var[ci] + state.epsilon);
    if (cache != nullptr) {
        cache->mean = mean;
        cache->invstd = invstd;
    }

    TensorT<T> out(input.shape);
    parallel_for(0, static_cast<std::int64_t>(n) * c, [&](std::int64_t nc) {
        const int ci = static_cast<int>(nc % c);
        const T* s = input.ptr() + static_cast<std::size_t>(nc) * plane;
        T* d = out.ptr() + static_cast<std::size_t>(nc) * plane;
        const T mu = mean[ci], is = invstd[ci], ga = state.gamma[ci], be = state.beta[ci];
        for (std::size_t i = 0; i < plane; ++i) d[i] = (s[i] - mu) * is * ga + be;
    });
    return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                                     const BatchNormStateT<T>& state, const BatchNormCache<T>& cache) {
    require_same_shape(grad_out, input, "batchnorm backward");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (static_cast<int>(cache.mean.size()) != c) raise("bad-argument", "batchnorm cache does not match input");
    const double m = static_cast<double>(n) * h * w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    BatchNormGrads<T> g;
    g.input = TensorT<T>(input.shape);
    g.gamma.assign(c, T(0));
    g.beta.assign(c, T(0));

    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (int ci = 0; ci < c; ++ci) {
        const double mu = cache.mean[ci], is = cache.invstd[ci];
        double s1 = 0.0, s2 = 0.0;
        for (int ni = 0; ni < n; ++ni) {
            const T* gs = grad_out.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
            const T* xs = input.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (xs[i] - mu) * is;
                s1 += gs[i];
                s2 += gs[i] * xhat;
            }
        }
        sum_dy[ci] = s1;
        sum_dy_xhat[ci] = s2;
        g.beta[ci] = static_cast<T>(s1);
        g.gamma[ci] = static_cast<T>(s2);
    }

    // dx = gamma*invstd/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
    parallel_for(0, static_cast<std::int64_t>(n) * c, [&](std::int64_t nc) {
        const int ci = static_cast<int>(nc % c);
        const T* gs = grad_out.ptr() + static_cast<std::size_t>(nc) * plane;
        const T* xs = input.ptr() + static_cast<std::size_t>(nc) * plane;
        T* d = g.input.ptr() + static_cast<std::size_t>(nc) * plane;
        const double mu = cache.mean[ci], is = cache.invstd[ci];
        const double scale = state.gamma[ci] * is / m;
        const double s1 = sum_dy[ci], s2 = sum_dy_xhat[ci];
        for (std::size_t i = 0; i < plane; ++i) {
            const double xhat = (xs[i] - mu) * is;
            d[i] = static_cast<T>(scale * (m * gs[i] - s1 - xhat * s2));
        }
    });
    return g;
}

// ---------------------------------------------------------------------------
// Element-wise layers

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> out(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& grad_out, const TensorT<T>& x) {
    require_same_shape(grad_out, x, "relu backward");
    TensorT<T> out(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] > T(0) ? grad_out.data[i] : T(0);
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> out(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
    return out;
}

template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& grad_out, const TensorT<T>& y) {
    require_same_shape(grad_out, y, "sigmoid backward");
    TensorT<T> out(y.shape);
    for (std::size_t i = 0; i < y.numel(); ++i) out.data[i] = grad_out.data[i] * y.data[i] * (T(1) - y.data[i]);
    return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "add");
    TensorT<T> out(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

template <typename T>
std::pair<T, TensorT<T>> mse_loss(const TensorT<T>& prediction, const TensorT<T>& target) {
    require_same_shape(prediction, target, "mse_loss");
    const std::size_t n = prediction.numel();
    double acc = 0.0;
    TensorT<T> grad(prediction.shape);
    const T scale = T(2) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(prediction.data[i]) - static_cast<double>(target.data[i]);
        acc += d * d;
        grad.data[i] = scale * static_cast<T>(d);
    }
    return {static_cast<T>(acc / static_cast<double>(n)), std::move(grad)};
}

// ---------------------------------------------------------------------------
// ADAM

template <typename T>
static void adam_update(T* p, const T* g, T* m, T* v, std::size_t n, std::int64_t t, T lr, T beta1, T beta2,
                        T eps) {
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(g[i]))) {
            raise("non-finite-gradient", "non-finite gradient at element " + std::to_string(i));
        }
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
    }
}

template <typename T>
void adam_step(TensorT<T>& params, const TensorT<T>& grads, AdamStateT<T>& state, T lr) {
    require_same_shape(params, grads, "adam_step");
    require_same_shape(params, state.m, "adam_step moments");
    state.t += 1;
    adam_update(params.ptr(), grads.ptr(), state.m.ptr(), state.v.ptr(), params.numel(), state.t, lr,
                state.beta1, state.beta2, state.epsilon);
}

template <typename T>
void adam_step_vec(std::vector<T>& params, const std::vector<T>& grads, AdamStateT<T>& state, T lr) {
    if (params.size() != grads.size() || params.size() != state.m.numel()) {
        raise("shape-mismatch", "adam_step_vec sizes disagree");
    }
    state.t += 1;
    adam_update(params.data(), grads.data(), state.m.ptr(), state.v.ptr(), params.size(), state.t, lr,
                state.beta1, state.beta2, state.epsilon);
}

// ---------------------------------------------------------------------------

#define DBN_INSTANTIATE(T)                                                                                    \
    template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,            \
                                          const ConvSpec&);                                                   \
    template ConvGrads<T> conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,         \
                                             const ConvSpec&, bool);                                          \
    template TensorT<T> conv2d_transpose_forward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                                    const ConvSpec&);                                         \
    template ConvGrads<T> conv2d_transpose_backward<T>(const TensorT<T>&, const TensorT<T>&,                  \
                                                       const TensorT<T>&, const ConvSpec&, bool);             \
    template TensorT<T> batchnorm_forward<T>(const TensorT<T>&, BatchNormStateT<T>&, bool,                    \
                                             BatchNormCache<T>*);                                             \
    template BatchNormGrads<T> batchnorm_backward<T>(const TensorT<T>&, const TensorT<T>&,                    \
                                                     const BatchNormStateT<T>&, const BatchNormCache<T>&);    \
    template TensorT<T> relu<T>(const TensorT<T>&);                                                           \
    template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);                               \
    template TensorT<T> sigmoid<T>(const TensorT<T>&);                                                        \
    template TensorT<T> sigmoid_backward<T>(const TensorT<T>&, const TensorT<T>&);                            \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                                         \
    template std::pair<T, TensorT<T>> mse_loss<T>(const TensorT<T>&, const TensorT<T>&);                      \
    template void adam_step<T>(TensorT<T>&, const TensorT<T>&, AdamStateT<T>&, T);                            \
    template void adam_step_vec<T>(std::vector<T>&, const std::vector<T>&, AdamStateT<T>&, T);

DBN_INSTANTIATE(float)
DBN_INSTANTIATE(double)

#undef DBN_INSTANTIATE

}  // namespace dbn
