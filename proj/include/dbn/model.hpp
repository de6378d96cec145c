#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dbn/ops.hpp"
#include "dbn/tensor.hpp"

namespace dbn {

/// Skip source index meaning "central frame of the input stack".
constexpr int kInputSkip = -2;

/// One network layer. The table built by dbn_layers() mirrors the layer
/// stack of the model: F0, D1..D3 (stride-2 downs), F*_* flats, U1..U3
/// (stride-1/2 ups), F6_2 output.
struct LayerDef {
    const char* name;
    int in_ch, out_ch;
    int k, stride, pad;
    bool transposed;
    bool has_bn;
    bool relu_after;   // ReLU applied after BN (and after the skip sum, if any)
    int skip_from;     // layer index whose pre-ReLU value is summed in; -1 none
    bool skip_source;  // emits its pre-ReLU value to a later layer

    ConvSpec spec() const {
        return ConvSpec{in_ch, out_ch, k, k, stride, pad, transposed};
    }
};

const std::vector<LayerDef>& dbn_layers();

template <typename T>
struct LayerParamsT {
    TensorT<T> weights;
    TensorT<T> bias;
    BatchNormStateT<T> bn;  // unused when the layer has no batchnorm
};

template <typename T>
struct ModelParamsT {
    std::vector<LayerParamsT<T>> layers;
    std::int64_t iteration = 0;
};

using ModelParams = ModelParamsT<float>;

/// 5 consecutive RGB frames; the network deblurs the central one.
struct FrameStack {
    static constexpr int center_index = 2;
    std::array<Tensor, 5> frames;

    int height() const { return frames[0].dim(1); }
    int width() const { return frames[0].dim(2); }
    void validate() const;
    /// Concatenate to a [15,H,W] tensor, temporal order, RGB within a frame.
    Tensor fuse() const;
};

/// Fan-in-scaled normal init for conv weights, zero biases, identity BN.
/// Equal seeds give bit-identical parameters.
template <typename T>
ModelParamsT<T> build_model_t(std::uint64_t seed);
ModelParams build_model(std::uint64_t seed);

template <typename T>
struct ForwardCacheT {
    TensorT<T> input;
    std::vector<TensorT<T>> conv_out;  // pre-BN conv outputs per layer
    std::vector<TensorT<T>> out;       // post-activation outputs per layer
    std::vector<TensorT<T>> presum;    // pre-ReLU sums at skip targets
    std::vector<BatchNormCache<T>> bn;
};

/// Runs the network on a [N,15,H,W] batch; H and W must be divisible by 8.
/// With `cache` set (training) all intermediates are retained for backward.
template <typename T>
TensorT<T> forward(ModelParamsT<T>& params, const TensorT<T>& input, bool training,
                   ForwardCacheT<T>* cache = nullptr);

/// Single-stack convenience wrapper; returns the deblurred [3,H,W] frame.
Tensor forward_stack(ModelParams& params, const FrameStack& stack, bool training);

template <typename T>
struct ModelGradsT {
    struct LayerGrads {
        TensorT<T> weights;
        TensorT<T> bias;
        std::vector<T> gamma, beta;
    };
    std::vector<LayerGrads> layers;
    TensorT<T> input;  // includes the identity path through the central frame
};

template <typename T>
ModelGradsT<T> backward(const ModelParamsT<T>& params, const ForwardCacheT<T>& cache,
                        const TensorT<T>& grad_output);

/// Enumerates every trainable tensor with a stable name ("F0.weight",
/// "U1.bn.gamma", ...). BN running statistics are visited by
/// for_each_state_vec, not here.
template <typename T, typename Fn>
void for_each_param(ModelParamsT<T>& params, Fn&& fn) {
    const auto& defs = dbn_layers();
    for (std::size_t i = 0; i < defs.size(); ++i) {
        auto& lp = params.layers[i];
        const std::string base = defs[i].name;
        fn(base + ".weight", lp.weights);
        fn(base + ".bias", lp.bias);
    }
}

template <typename T, typename Fn>
void for_each_bn_vec(ModelParamsT<T>& params, Fn&& fn) {
    const auto& defs = dbn_layers();
    for (std::size_t i = 0; i < defs.size(); ++i) {
        if (!defs[i].has_bn) continue;
        auto& bn = params.layers[i].bn;
        const std::string base = defs[i].name;
        fn(base + ".bn.gamma", bn.gamma, true);
        fn(base + ".bn.beta", bn.beta, true);
        fn(base + ".bn.running_mean", bn.running_mean, false);
        fn(base + ".bn.running_var", bn.running_var, false);
    }
}

/// Canonical walk over every trainable value as flat storage:
/// per layer weight, bias, then gamma and beta when batchnorm is present.
/// Optimizer state and checkpoints index parameters in this order.
template <typename T, typename Fn>
void for_each_trainable(ModelParamsT<T>& params, Fn&& fn) {
    const auto& defs = dbn_layers();
    for (std::size_t i = 0; i < defs.size(); ++i) {
        auto& lp = params.layers[i];
        const std::string base = defs[i].name;
        fn(base + ".weight", lp.weights.data, lp.weights.shape);
        fn(base + ".bias", lp.bias.data, lp.bias.shape);
        if (defs[i].has_bn) {
            const std::vector<int> cshape = {defs[i].out_ch};
            fn(base + ".bn.gamma", lp.bn.gamma, cshape);
            fn(base + ".bn.beta", lp.bn.beta, cshape);
        }
    }
}

/// Total trainable parameter count (weights, biases, BN gamma/beta).
std::int64_t trainable_param_count(const ModelParams& params);

/// Writes the 64 F0 kernels (5 RGB sub-tiles each) and the 64 F0 feature
/// maps for `stack`, min-max normalized, as PNGs under out_dir.
void dump_filters(ModelParams& params, const FrameStack& stack, const std::string& out_dir);

}  // namespace dbn
