#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "gmmt/common.hpp"
#include "gmmt/rng.hpp"

namespace gmmt {

// Dense row-major tensor. Rank is dynamic but the engine only ever builds
// vectors [E], maps [C,H,W] and batches [N,C,H,W].
struct Tensor {
    std::vector<int> shape;
    std::vector<real> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<real> d) : shape(std::move(s)), data(std::move(d)) {}

    static Tensor zeros(std::vector<int> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(t.count(t.shape), real(0));
        return t;
    }

    static Tensor full(std::vector<int> s, real v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor randn(std::vector<int> s, Rng& rng) {
        Tensor t = zeros(std::move(s));
        for (real& v : t.data) v = static_cast<real>(rng.normal());
        return t;
    }

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int e : s) n *= e;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    real& at3(int c, int h, int w) { return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w]; }
    real at3(int c, int h, int w) const { return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (real v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

// Channels [c0,c1) of a [C,H,W] map, copied out.
inline Tensor channel_slice(const Tensor& x, int c0, int c1) {
    if (x.rank() != 3 || c0 < 0 || c1 < c0 || c1 > x.shape[0])
        throw ShapeError("channel_slice: bad range");
    const std::int64_t plane = static_cast<std::int64_t>(x.shape[1]) * x.shape[2];
    Tensor out = Tensor::zeros({c1 - c0, x.shape[1], x.shape[2]});
    std::copy(x.data.begin() + c0 * plane, x.data.begin() + c1 * plane, out.data.begin());
    return out;
}

// Learnable tensor with its gradient and SGD momentum buffer.
struct Param {
    Tensor value;
    Tensor grad;
    Tensor momentum;

    Param() = default;
    explicit Param(Tensor init)
        : value(std::move(init)), grad(Tensor::zeros(value.shape)), momentum(Tensor::zeros(value.shape)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), real(0)); }
};

// buf <- momentum*buf + grad + weight_decay*value; value <- value - lr*buf.
// Gradients are zeroed afterwards. Throws NumericError on non-finite grads.
void sgd_step(const std::vector<Param*>& params, real lr, real momentum, real weight_decay);

}  // namespace gmmt
