#include "dbn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "dbn/image.hpp"

namespace dbn {

const std::vector<LayerDef>& dbn_layers() {
    // name        in   out  k  s  p  transp  bn     relu   skip_from   source
    static const std::vector<LayerDef> defs = {
        {"F0",      15,  64,  5, 1, 2, false, true,  true,  -1,         true},
        {"D1",      64,  64,  3, 2, 1, false, true,  true,  -1,         false},
        {"F1_1",    64,  128, 3, 1, 1, false, true,  true,  -1,         false},
        {"F1_2",    128, 128, 3, 1, 1, false, true,  true,  -1,         true},
        {"D2",      128, 256, 3, 2, 1, false, true,  true,  -1,         false},
        {"F2_1",    256, 256, 3, 1, 1, false, true,  true,  -1,         false},
        {"F2_2",    256, 256, 3, 1, 1, false, true,  true,  -1,         false},
        {"F2_3",    256, 256, 3, 1, 1, false, true,  true,  -1,         true},
        {"D3",      256, 512, 3, 2, 1, false, true,  true,  -1,         false},
        {"F3_1",    512, 512, 3, 1, 1, false, true,  true,  -1,         false},
        {"F3_2",    512, 512, 3, 1, 1, false, true,  true,  -1,         false},
        {"F3_3",    512, 512, 3, 1, 1, false, true,  true,  -1,         false},
        {"U1",      512, 256, 4, 2, 1, true,  true,  true,  7,          false},
        {"F4_1",    256, 256, 3, 1, 1, false, true,  true,  -1,         false},
        {"F4_2",    256, 256, 3, 1, 1, false, true,  true,  -1,         false},
        {"F4_3",    256, 256, 3, 1, 1, false, true,  true,  -1,         false},
        {"U2",      256, 128, 4, 2, 1, true,  true,  true,  3,          false},
        {"F5_1",    128, 128, 3, 1, 1, false, true,  true,  -1,         false},
        {"F5_2",    128, 64,  3, 1, 1, false, true,  true,  -1,         false},
        {"U3",      64,  64,  4, 2, 1, true,  true,  true,  0,          false},
        {"F6_1",    64,  15,  3, 1, 1, false, true,  true,  -1,         false},
        {"F6_2",    15,  3,   3, 1, 1, false, false, false, kInputSkip, false},
    };
    return defs;
}

void FrameStack::validate() const {
    for (const auto& f : frames) {
        if (f.rank() != 3 || f.dim(0) != 3) {
            raise("shape-mismatch", "stack frame must be [3,H,W], got " + format_shape(f.shape));
        }
        if (f.shape != frames[0].shape) {
            raise("shape-mismatch", "stack frames disagree: " + format_shape(f.shape) + " vs " +
                                        format_shape(frames[0].shape));
        }
    }
}

Tensor FrameStack::fuse() const {
    validate();
    const int h = height(), w = width();
    Tensor out({15, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int k = 0; k < 5; ++k) {
        std::memcpy(out.ptr() + static_cast<std::size_t>(k) * 3 * plane, frames[k].ptr(),
                    3 * plane * sizeof(float));
    }
    return out;
}

template <typename T>
ModelParamsT<T> build_model_t(std::uint64_t seed) {
    const auto& defs = dbn_layers();
    ModelParamsT<T> params;
    params.layers.resize(defs.size());
    Rng rng(seed);
    for (std::size_t i = 0; i < defs.size(); ++i) {
        const LayerDef& d = defs[i];
        auto& lp = params.layers[i];
        lp.weights = TensorT<T>(d.spec().weight_shape());
        const double stddev = std::sqrt(2.0 / (static_cast<double>(d.in_ch) * d.k * d.k));
        for (auto& v : lp.weights.data) v = static_cast<T>(rng.normal() * stddev);
        lp.bias = TensorT<T>({d.out_ch});
        if (d.has_bn) lp.bn = BatchNormStateT<T>(d.out_ch);
    }
    return params;
}

ModelParams build_model(std::uint64_t seed) { return build_model_t<float>(seed); }

template <typename T>
TensorT<T> forward(ModelParamsT<T>& params, const TensorT<T>& input, bool training, ForwardCacheT<T>* cache) {
    const auto& defs = dbn_layers();
    if (params.layers.size() != defs.size()) raise("bad-argument", "model params do not match layer table");
    if (input.rank() != 4 || input.dim(1) != 15) {
        raise("shape-mismatch", "model input must be [N,15,H,W], got " + format_shape(input.shape));
    }
    const int h = input.dim(2), w = input.dim(3);
    if (h % 8 != 0 || w % 8 != 0) {
        raise("indivisible-extent", "spatial extents " + std::to_string(h) + "x" + std::to_string(w) +
                                        " must be divisible by 8; pad the frame first");
    }

    const std::size_t nlayers = defs.size();
    if (cache != nullptr) {
        cache->input = input;
        cache->conv_out.assign(nlayers, TensorT<T>());
        cache->out.assign(nlayers, TensorT<T>());
        cache->presum.assign(nlayers, TensorT<T>());
        cache->bn.assign(nlayers, BatchNormCache<T>());
    }

    // Pre-ReLU values stashed by skip sources, consumed once by their target.
    std::vector<TensorT<T>> stash(nlayers);

    TensorT<T> cur = input;
    for (std::size_t i = 0; i < nlayers; ++i) {
        const LayerDef& d = defs[i];
        auto& lp = params.layers[i];
        TensorT<T> z = d.transposed ? conv2d_transpose_forward(cur, lp.weights, lp.bias, d.spec())
                                    : conv2d_forward(cur, lp.weights, lp.bias, d.spec());
        if (cache != nullptr) cache->conv_out[i] = z;
        if (!d.has_bn) {
            // Output layer: central-frame skip, then sigmoid.
            if (d.skip_from == kInputSkip) {
                const int n = z.dim(0), hh = z.dim(2), ww = z.dim(3);
                const std::size_t plane = static_cast<std::size_t>(hh) * ww;
                for (int ni = 0; ni < n; ++ni) {
                    const T* center =
                        input.ptr() + (static_cast<std::size_t>(ni) * 15 + FrameStack::center_index * 3) * plane;
                    T* dst = z.ptr() + static_cast<std::size_t>(ni) * 3 * plane;
                    for (std::size_t j = 0; j < 3 * plane; ++j) dst[j] += center[j];
                }
            }
            cur = sigmoid(z);
        } else {
            TensorT<T> v = batchnorm_forward(z, lp.bn, training, cache != nullptr ? &cache->bn[i] : nullptr);
            if (d.skip_source) stash[i] = v;  // pre-ReLU copy for the skip target
            if (d.skip_from >= 0) {
                v = add(v, stash[static_cast<std::size_t>(d.skip_from)]);
                stash[static_cast<std::size_t>(d.skip_from)] = TensorT<T>();
                if (cache != nullptr) cache->presum[i] = v;
            }
            cur = d.relu_after ? relu(v) : std::move(v);
        }
        if (cache != nullptr) cache->out[i] = cur;
    }
    return cur;
}

Tensor forward_stack(ModelParams& params, const FrameStack& stack, bool training) {
    Tensor fused = stack.fuse();
    Tensor batched({1, 15, fused.dim(1), fused.dim(2)});
    std::memcpy(batched.ptr(), fused.ptr(), fused.numel() * sizeof(float));
    Tensor out = forward(params, batched, training);
    Tensor frame({3, out.dim(2), out.dim(3)});
    std::memcpy(frame.ptr(), out.ptr(), frame.numel() * sizeof(float));
    return frame;
}

template <typename T>
ModelGradsT<T> backward(const ModelParamsT<T>& params, const ForwardCacheT<T>& cache,
                        const TensorT<T>& grad_output) {
    const auto& defs = dbn_layers();
    const std::size_t nlayers = defs.size();
    if (cache.out.size() != nlayers || cache.conv_out.size() != nlayers) {
        raise("bad-argument", "forward cache does not match the model (run forward with a cache first)");
    }
    require_same_shape(grad_output, cache.out.back(), "model backward grad_output");

    ModelGradsT<T> grads;
    grads.layers.resize(nlayers);
    grads.input = TensorT<T>(cache.input.shape);

    // Gradients flowing into skip-source pre-ReLU values, keyed by source.
    std::vector<TensorT<T>> skip_grad(nlayers);

    TensorT<T> g = grad_output;  // grad wrt out[i] of the layer being visited
    for (std::size_t ii = nlayers; ii-- > 0;) {
        const LayerDef& d = defs[ii];
        const auto& lp = params.layers[ii];
        const TensorT<T>& layer_in = (ii == 0) ? cache.input : cache.out[ii - 1];

        TensorT<T> dz;  // grad wrt this layer's conv output
        if (!d.has_bn) {
            // sigmoid output layer, central-frame skip
            dz = sigmoid_backward(g, cache.out[ii]);
            if (d.skip_from == kInputSkip) {
                const int n = dz.dim(0), hh = dz.dim(2), ww = dz.dim(3);
                const std::size_t plane = static_cast<std::size_t>(hh) * ww;
                for (int ni = 0; ni < n; ++ni) {
                    T* dst = grads.input.ptr() +
                             (static_cast<std::size_t>(ni) * 15 + FrameStack::center_index * 3) * plane;
                    const T* src = dz.ptr() + static_cast<std::size_t>(ni) * 3 * plane;
                    for (std::size_t j = 0; j < 3 * plane; ++j) dst[j] += src[j];
                }
            }
        } else {
            TensorT<T> dv = d.relu_after ? relu_backward(g, cache.out[ii]) : g;
            if (!skip_grad[ii].empty()) {
                // This layer is a skip source: its pre-ReLU value also fed a
                // later layer, whose gradient arrives un-masked.
                dv = add(dv, skip_grad[ii]);
                skip_grad[ii] = TensorT<T>();
            }
            if (d.skip_from >= 0) skip_grad[static_cast<std::size_t>(d.skip_from)] = dv;
            auto bng = batchnorm_backward(dv, cache.conv_out[ii], lp.bn, cache.bn[ii]);
            grads.layers[ii].gamma = std::move(bng.gamma);
            grads.layers[ii].beta = std::move(bng.beta);
            dz = std::move(bng.input);
        }

        auto cg = d.transposed ? conv2d_transpose_backward(dz, layer_in, lp.weights, d.spec(), true)
                               : conv2d_backward(dz, layer_in, lp.weights, d.spec(), true);
        grads.layers[ii].weights = std::move(cg.weights);
        grads.layers[ii].bias = std::move(cg.bias);
        if (ii == 0) {
            T* dst = grads.input.ptr();
            const T* src = cg.input.ptr();
            for (std::size_t j = 0; j < grads.input.numel(); ++j) dst[j] += src[j];
        } else {
            g = std::move(cg.input);
        }
    }
    return grads;
}

std::int64_t trainable_param_count(const ModelParams& params) {
    const auto& defs = dbn_layers();
    std::int64_t n = 0;
    for (std::size_t i = 0; i < defs.size(); ++i) {
        n += static_cast<std::int64_t>(params.layers[i].weights.numel());
        n += static_cast<std::int64_t>(params.layers[i].bias.numel());
        if (defs[i].has_bn) {
            n += 2 * static_cast<std::int64_t>(params.layers[i].bn.gamma.size());
        }
    }
    return n;
}

namespace {

// Min-max to [0,1]; constant images map to mid-gray.
void normalize_minmax(std::vector<float>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (*hi > *lo) {
        const float scale = 1.0f / (*hi - *lo);
        const float base = *lo;
        for (auto& x : v) x = (x - base) * scale;
    } else {
        std::fill(v.begin(), v.end(), 0.5f);
    }
}

}  // namespace

void dump_filters(ModelParams& params, const FrameStack& stack, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const Tensor& w = params.layers[0].weights;  // [64,15,5,5]
    const int k = w.dim(2);
    char name[64];

    for (int f = 0; f < w.dim(0); ++f) {
        // 5 RGB sub-tiles of k x k laid out horizontally.
        Tensor img({3, k, 5 * k});
        std::vector<float> vals(static_cast<std::size_t>(3 * k) * 5 * k);
        for (int t = 0; t < 5; ++t) {
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < k; ++y) {
                    for (int x = 0; x < k; ++x) {
                        vals[(static_cast<std::size_t>(c) * k + y) * (5 * k) + t * k + x] =
                            w.at(f, t * 3 + c, y, x);
                    }
                }
            }
        }
        normalize_minmax(vals);
        std::copy(vals.begin(), vals.end(), img.data.begin());
        std::snprintf(name, sizeof(name), "/filter_%02d.png", f);
        save_image(img, out_dir + name);
    }

    // Feature maps: raw F0 conv responses on the fused stack.
    Tensor fused = stack.fuse();
    Tensor batched({1, 15, fused.dim(1), fused.dim(2)});
    std::memcpy(batched.ptr(), fused.ptr(), fused.numel() * sizeof(float));
    Tensor maps = conv2d_forward(batched, params.layers[0].weights, params.layers[0].bias,
                                 dbn_layers()[0].spec());
    const int h = maps.dim(2), wd = maps.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    for (int f = 0; f < maps.dim(1); ++f) {
        std::vector<float> vals(maps.ptr() + static_cast<std::size_t>(f) * plane,
                                maps.ptr() + static_cast<std::size_t>(f + 1) * plane);
        normalize_minmax(vals);
        Tensor img({3, h, wd});
        for (int c = 0; c < 3; ++c) std::copy(vals.begin(), vals.end(), img.data.begin() + c * plane);
        std::snprintf(name, sizeof(name), "/featuremap_%02d.png", f);
        save_image(img, out_dir + name);
    }
}

template ModelParamsT<float> build_model_t<float>(std::uint64_t);
template ModelParamsT<double> build_model_t<double>(std::uint64_t);
template TensorT<float> forward<float>(ModelParamsT<float>&, const TensorT<float>&, bool, ForwardCacheT<float>*);
template TensorT<double> forward<double>(ModelParamsT<double>&, const TensorT<double>&, bool,
                                         ForwardCacheT<double>*);
template ModelGradsT<float> backward<float>(const ModelParamsT<float>&, const ForwardCacheT<float>&,
                                            const TensorT<float>&);
template ModelGradsT<double> backward<double>(const ModelParamsT<double>&, const ForwardCacheT<double>&,
                                              const TensorT<double>&);

}  // namespace dbn
