#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fovx/error.hpp"

namespace fovx::nn {

// Storage aligned to the widest SIMD width. Eigen picks its peeling from the
// base address, so unaligned buffers would make results depend on where the
// allocator happened to put them.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// Single-sample CHW tensor.
template <class T>
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    Buffer<T> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_, T fill = T(0))
        : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, fill)
    {
    }

    std::size_t size() const { return v.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    T* channel(int ch) { return v.data() + ch * plane(); }
    const T* channel(int ch) const { return v.data() + ch * plane(); }
    T& at(int ch, int y, int x) { return v[ch * plane() + static_cast<std::size_t>(y) * w + x]; }
    T at(int ch, int y, int x) const { return v[ch * plane() + static_cast<std::size_t>(y) * w + x]; }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

/// Channel-wise concatenation.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.h != b.h || a.w != b.w)
        throw shape_error("concat_channels: spatial mismatch");
    Tensor<T> out(a.c + b.c, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

/// Learnable tensor with its accumulated gradient.
template <class T>
struct Param {
    std::string name;
    std::vector<int> shape;
    Buffer<T> value;
    Buffer<T> grad;

    Param() = default;
    Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s))
    {
        std::size_t count = 1;
        for (int d : shape)
            count *= static_cast<std::size_t>(d);
        value.assign(count, T(0));
        grad.assign(count, T(0));
    }

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// LIFO store of forward intermediates; each layer pops exactly what it
/// pushed, in reverse order, during backward.
template <class T>
class Tape {
public:
    void push(Tensor<T> t) { stack_.push_back(std::move(t)); }
    Tensor<T> pop()
    {
        if (stack_.empty())
            throw shape_error("tape underflow");
        Tensor<T> t = std::move(stack_.back());
        stack_.pop_back();
        return t;
    }
    bool empty() const { return stack_.empty(); }
    void clear() { stack_.clear(); }

private:
    std::vector<Tensor<T>> stack_;
};

} // namespace fovx::nn
