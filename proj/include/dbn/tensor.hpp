#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

#include "dbn/common.hpp"

namespace dbn {

/// Dense N-dimensional array, row-major. Images and activations use
/// channel-planar layouts: frames are {3,H,W}, batches {N,C,H,W}.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}
    TensorT(std::vector<int> s, T fill) : shape(std::move(s)), data(count(shape), fill) {}

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int e : s) {
            if (e <= 0) raise("bad-shape", "non-positive extent in " + format_shape(s));
            n *= static_cast<std::size_t>(e);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool empty() const { return data.empty(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    // 4-D accessors (N,C,H,W).
    T& at(int n, int c, int y, int x) {
        assert(rank() == 4);
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    T at(int n, int c, int y, int x) const {
        assert(rank() == 4);
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    // 3-D accessors (C,H,W).
    T& at3(int c, int y, int x) {
        assert(rank() == 3);
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    T at3(int c, int y, int x) const {
        assert(rank() == 3);
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    // 2-D accessors (H,W).
    T& at2(int y, int x) {
        assert(rank() == 2);
        return data[static_cast<std::size_t>(y) * shape[1] + x];
    }
    T at2(int y, int x) const {
        assert(rank() == 2);
        return data[static_cast<std::size_t>(y) * shape[1] + x];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
    if (!a.same_shape(b)) {
        raise("shape-mismatch",
              std::string(what) + ": " + format_shape(a.shape) + " vs " + format_shape(b.shape));
    }
}

}  // namespace dbn
