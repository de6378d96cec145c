#pragma once

#include <cstdint>
#include <vector>

#include "dbn/tensor.hpp"

namespace dbn {

/// Geometry of one convolution. Weight layout is [out,in,kh,kw] for plain
/// convolutions and [in,out,kh,kw] for transposed ones.
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kh = 0;
    int kw = 0;
    int stride = 1;
    int padding = 0;
    bool transposed = false;

    int out_extent(int in_extent, int k) const {
        if (transposed) return (in_extent - 1) * stride - 2 * padding + k;
        return (in_extent + 2 * padding - k) / stride + 1;
    }
    int out_h(int in_h) const { return out_extent(in_h, kh); }
    int out_w(int in_w) const { return out_extent(in_w, kw); }
    std::vector<int> weight_shape() const {
        if (transposed) return {in_channels, out_channels, kh, kw};
        return {out_channels, in_channels, kh, kw};
    }
};

template <typename T>
struct ConvGrads {
    TensorT<T> input;
    TensorT<T> weights;
    TensorT<T> bias;
};

/// Cross-correlation with zero padding; input [N,Cin,H,W] -> [N,Cout,H',W'].
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                          const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input, const TensorT<T>& weights,
                             const ConvSpec& spec, bool need_grad_input = true);

/// Fractionally-strided convolution; with k=4, s=2, p=1 the output is exactly
/// twice the input extent.
template <typename T>
TensorT<T> conv2d_transpose_forward(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                                    const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_transpose_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                                       const TensorT<T>& weights, const ConvSpec& spec,
                                       bool need_grad_input = true);

template <typename T>
struct BatchNormStateT {
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    explicit BatchNormStateT(int channels = 0)
        : gamma(channels, T(1)), beta(channels, T(0)),
          running_mean(channels, T(0)), running_var(channels, T(1)) {}
    int channels() const { return static_cast<int>(gamma.size()); }
};

/// Per-batch statistics captured by the training-mode forward, needed by the
/// backward pass.
template <typename T>
struct BatchNormCache {
    std::vector<T> mean, invstd;
};

template <typename T>
struct BatchNormGrads {
    TensorT<T> input;
    std::vector<T> gamma, beta;
};

/// Training mode normalizes by batch statistics and updates running stats;
/// inference mode uses running stats. Requires N*H*W >= 2 in training mode.
template <typename T>
TensorT<T> batchnorm_forward(const TensorT<T>& input, BatchNormStateT<T>& state, bool training,
                             BatchNormCache<T>* cache = nullptr);

template <typename T>
BatchNormGrads<T> batchnorm_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                                     const BatchNormStateT<T>& state, const BatchNormCache<T>& cache);

template <typename T>
TensorT<T> relu(const TensorT<T>& x);
/// grad wrt x given the forward input x.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& grad_out, const TensorT<T>& x);

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);
/// grad wrt x given the forward *output* y = sigmoid(x).
template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& grad_out, const TensorT<T>& y);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);

/// Mean squared error over all elements; grad is wrt `prediction`.
template <typename T>
std::pair<T, TensorT<T>> mse_loss(const TensorT<T>& prediction, const TensorT<T>& target);

template <typename T>
struct AdamStateT {
    TensorT<T> m, v;
    std::int64_t t = 0;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);
    T weight_decay = T(0);

    AdamStateT() = default;
    explicit AdamStateT(const std::vector<int>& param_shape) : m(param_shape), v(param_shape) {}
};

/// One bias-corrected ADAM update in place. Rejects non-finite gradients.
template <typename T>
void adam_step(TensorT<T>& params, const TensorT<T>& grads, AdamStateT<T>& state, T lr);

/// Flat-vector ADAM update used for batchnorm gamma/beta.
template <typename T>
void adam_step_vec(std::vector<T>& params, const std::vector<T>& grads, AdamStateT<T>& state, T lr);

}  // namespace dbn
