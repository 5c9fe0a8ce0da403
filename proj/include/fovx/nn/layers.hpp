#pragma once

// Minimal layer set for the image-to-image networks: convolutions, transposed
// convolutions, instance normalization, pointwise activations and residual
// blocks. Layers are stateless apart from their parameters; intermediates
// live on a caller-owned Tape so a const network can serve concurrent
// inference.

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fovx/nn/tensor.hpp"

namespace fovx::nn {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad, Tape<T>& tape) = 0;
    virtual void collect(std::vector<Param<T>*>&) {}
    virtual std::unique_ptr<Layer> clone() const = 0;
};

template <class Derived, class T>
class ClonableLayer : public Layer<T> {
public:
    std::unique_ptr<Layer<T>> clone() const override
    {
        return std::make_unique<Derived>(static_cast<const Derived&>(*this));
    }
};

enum class PadMode { zero, reflect };

namespace detail {

inline int reflect_index(int i, int n)
{
    if (n == 1)
        return 0;
    while (i < 0 || i >= n) {
        if (i < 0)
            i = -i;
        if (i >= n)
            i = 2 * n - 2 - i;
    }
    return i;
}

/// Maps output position o and kernel tap t onto a source coordinate, or -1
/// when the tap lands in zero padding.
inline std::vector<int> tap_map(int out_size, int in_size, int k, int stride, int pad, PadMode mode)
{
    std::vector<int> m(static_cast<std::size_t>(out_size) * k);
    for (int t = 0; t < k; ++t)
        for (int o = 0; o < out_size; ++o) {
            const int i = o * stride - pad + t;
            int src = -1;
            if (i >= 0 && i < in_size)
                src = i;
            else if (mode == PadMode::reflect)
                src = reflect_index(i, in_size);
            m[static_cast<std::size_t>(t) * out_size + o] = src;
        }
    return m;
}

struct ConvGeometry {
    int channels, in_h, in_w, out_h, out_w, k, stride, pad;
    PadMode mode;
};

/// cols[(c*k*k + ky*k + kx), oy*out_w + ox] = img[c, iy, ix]
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* cols)
{
    const auto ymap = tap_map(g.out_h, g.in_h, g.k, g.stride, g.pad, g.mode);
    const auto xmap = tap_map(g.out_w, g.in_w, g.k, g.stride, g.pad, g.mode);
    const std::size_t out_plane = static_cast<std::size_t>(g.out_h) * g.out_w;
    const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
    for (int c = 0; c < g.channels; ++c) {
        const T* src = img + c * in_plane;
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                T* dst = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * out_plane;
                const int* ym = ymap.data() + static_cast<std::size_t>(ky) * g.out_h;
                const int* xm = xmap.data() + static_cast<std::size_t>(kx) * g.out_w;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    T* row = dst + static_cast<std::size_t>(oy) * g.out_w;
                    const int iy = ym[oy];
                    if (iy < 0) {
                        std::fill_n(row, g.out_w, T(0));
                        continue;
                    }
                    const T* srow = src + static_cast<std::size_t>(iy) * g.in_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = xm[ox];
                        row[ox] = ix < 0 ? T(0) : srow[ix];
                    }
                }
            }
    }
}

/// Adjoint of im2col: scatters columns back, accumulating into img.
template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* img)
{
    const auto ymap = tap_map(g.out_h, g.in_h, g.k, g.stride, g.pad, g.mode);
    const auto xmap = tap_map(g.out_w, g.in_w, g.k, g.stride, g.pad, g.mode);
    const std::size_t out_plane = static_cast<std::size_t>(g.out_h) * g.out_w;
    const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
    for (int c = 0; c < g.channels; ++c) {
        T* dst = img + c * in_plane;
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                const T* src = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * out_plane;
                const int* ym = ymap.data() + static_cast<std::size_t>(ky) * g.out_h;
                const int* xm = xmap.data() + static_cast<std::size_t>(kx) * g.out_w;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = ym[oy];
                    if (iy < 0)
                        continue;
                    T* drow = dst + static_cast<std::size_t>(iy) * g.in_w;
                    const T* row = src + static_cast<std::size_t>(oy) * g.out_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = xm[ox];
                        if (ix >= 0)
                            drow[ix] += row[ox];
                    }
                }
            }
    }
}

template <class T, class Rng>
void init_normal(Param<T>& p, Rng& rng, double stddev)
{
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : p.value)
        v = static_cast<T>(dist(rng));
}

} // namespace detail

/// 2D convolution. Weight layout (out, in, k, k).
template <class T>
class Conv2d : public ClonableLayer<Conv2d<T>, T> {
public:
    Conv2d(std::string name, int in_ch, int out_ch, int k, int stride, int pad, PadMode mode = PadMode::zero)
        : in_(in_ch), out_(out_ch), k_(k), stride_(stride), pad_(pad), mode_(mode),
          weight_(name + ".weight", {out_ch, in_ch, k, k}), bias_(name + ".bias", {out_ch})
    {
    }

    template <class Rng>
    void init(Rng& rng, double stddev = 0.02)
    {
        detail::init_normal(weight_, rng, stddev);
        std::fill(bias_.value.begin(), bias_.value.end(), T(0));
    }

    /// The first layer of a network never needs the gradient of its input.
    void set_needs_input_grad(bool v) { needs_input_grad_ = v; }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override
    {
        if (x.c != in_)
            throw shape_error("conv: expected " + std::to_string(in_) + " input channels, got " +
                              std::to_string(x.c));
        const auto g = geometry(x);
        const int K = in_ * k_ * k_;
        const int P = g.out_h * g.out_w;
        // cols keeps the input's shape so backward can rebuild the geometry.
        Tensor<T> cols;
        cols.c = x.c;
        cols.h = x.h;
        cols.w = x.w;
        cols.v.resize(static_cast<std::size_t>(K) * P);
        detail::im2col(x.v.data(), g, cols.v.data());

        Tensor<T> y(out_, g.out_h, g.out_w);
        Eigen::Map<const MatR<T>> W(weight_.value.data(), out_, K);
        Eigen::Map<const MatR<T>> C(cols.v.data(), K, P);
        Eigen::Map<MatR<T>> Y(y.v.data(), out_, P);
        Y.noalias() = W * C;
        for (int o = 0; o < out_; ++o)
            Y.row(o).array() += bias_.value[o];
        if (tape)
            tape->push(std::move(cols));
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad, Tape<T>& tape) override
    {
        Tensor<T> cols = tape.pop();
        Tensor<T> x_shape(0, 0, 0);
        x_shape.c = cols.c;
        x_shape.h = cols.h;
        x_shape.w = cols.w;
        const auto g = geometry(x_shape);
        const int K = in_ * k_ * k_;
        const int P = g.out_h * g.out_w;
        if (grad.c != out_ || grad.h != g.out_h || grad.w != g.out_w)
            throw shape_error("conv backward: gradient shape mismatch");

        Eigen::Map<const MatR<T>> G(grad.v.data(), out_, P);
        Eigen::Map<const MatR<T>> C(cols.v.data(), K, P);
        Eigen::Map<MatR<T>> dW(weight_.grad.data(), out_, K);
        dW.noalias() += G * C.transpose();
        for (int o = 0; o < out_; ++o)
            bias_.grad[o] += G.row(o).sum();

        Tensor<T> dx(cols.c, cols.h, cols.w);
        if (!needs_input_grad_)
            return dx;
        Eigen::Map<const MatR<T>> W(weight_.value.data(), out_, K);
        MatR<T> dcols = W.transpose() * G;
        detail::col2im(dcols.data(), g, dx.v.data());
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) override
    {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

    int out_channels() const { return out_; }

private:
    detail::ConvGeometry geometry(const Tensor<T>& x) const
    {
        detail::ConvGeometry g{};
        g.channels = x.c;
        g.in_h = x.h;
        g.in_w = x.w;
        g.out_h = (x.h + 2 * pad_ - k_) / stride_ + 1;
        g.out_w = (x.w + 2 * pad_ - k_) / stride_ + 1;
        g.k = k_;
        g.stride = stride_;
        g.pad = pad_;
        g.mode = mode_;
        if (g.out_h <= 0 || g.out_w <= 0)
            throw shape_error("conv: input smaller than kernel");
        if (mode_ == PadMode::reflect && (pad_ >= x.h || pad_ >= x.w))
            throw shape_error("conv: reflection padding wider than input");
        return g;
    }

    int in_, out_, k_, stride_, pad_;
    PadMode mode_;
    bool needs_input_grad_ = true;
    Param<T> weight_, bias_;
};

/// Transposed convolution (zero padding). Weight layout (in, out, k, k);
/// output size (in - 1) * stride - 2 * pad + k + output_pad.
template <class T>
class ConvTranspose2d : public ClonableLayer<ConvTranspose2d<T>, T> {
public:
    ConvTranspose2d(std::string name, int in_ch, int out_ch, int k, int stride, int pad, int output_pad)
        : in_(in_ch), out_(out_ch), k_(k), stride_(stride), pad_(pad), output_pad_(output_pad),
          weight_(name + ".weight", {in_ch, out_ch, k, k}), bias_(name + ".bias", {out_ch})
    {
    }

    template <class Rng>
    void init(Rng& rng, double stddev = 0.02)
    {
        detail::init_normal(weight_, rng, stddev);
        std::fill(bias_.value.begin(), bias_.value.end(), T(0));
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override
    {
        if (x.c != in_)
            throw shape_error("conv-transpose: input channel mismatch");
        const auto g = geometry(x.h, x.w);
        const int K = out_ * k_ * k_;
        const int P = x.h * x.w;
        Eigen::Map<const MatR<T>> W(weight_.value.data(), in_, K);
        Eigen::Map<const MatR<T>> X(x.v.data(), in_, P);
        MatR<T> cols = W.transpose() * X;
        Tensor<T> y(out_, g.in_h, g.in_w);
        detail::col2im(cols.data(), g, y.v.data());
        for (int o = 0; o < out_; ++o) {
            T* p = y.channel(o);
            for (std::size_t i = 0; i < y.plane(); ++i)
                p[i] += bias_.value[o];
        }
        if (tape)
            tape->push(x);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad, Tape<T>& tape) override
    {
        Tensor<T> x = tape.pop();
        const auto g = geometry(x.h, x.w);
        if (grad.c != out_ || grad.h != g.in_h || grad.w != g.in_w)
            throw shape_error("conv-transpose backward: gradient shape mismatch");
        const int K = out_ * k_ * k_;
        const int P = x.h * x.w;
        MatR<T> dcols(K, P);
        detail::im2col(grad.v.data(), g, dcols.data());
        Eigen::Map<const MatR<T>> X(x.v.data(), in_, P);
        Eigen::Map<MatR<T>> dW(weight_.grad.data(), in_, K);
        dW.noalias() += X * dcols.transpose();
        for (int o = 0; o < out_; ++o) {
            const T* p = grad.channel(o);
            T s = 0;
            for (std::size_t i = 0; i < grad.plane(); ++i)
                s += p[i];
            bias_.grad[o] += s;
        }
        Tensor<T> dx(in_, x.h, x.w);
        Eigen::Map<const MatR<T>> W(weight_.value.data(), in_, K);
        Eigen::Map<MatR<T>> DX(dx.v.data(), in_, P);
        DX.noalias() = W * dcols;
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) override
    {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    // The output image plays the role of a convolution input whose output
    // grid is the transposed layer's input.
    detail::ConvGeometry geometry(int h, int w) const
    {
        detail::ConvGeometry g{};
        g.channels = out_;
        g.in_h = (h - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
        g.in_w = (w - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
        g.out_h = h;
        g.out_w = w;
        g.k = k_;
        g.stride = stride_;
        g.pad = pad_;
        g.mode = PadMode::zero;
        return g;
    }

    int in_, out_, k_, stride_, pad_, output_pad_;
    Param<T> weight_, bias_;
};

/// Per-sample, per-channel normalization without affine parameters.
template <class T>
class InstanceNorm : public ClonableLayer<InstanceNorm<T>, T> {
public:
    explicit InstanceNorm(double eps = 1e-5) : eps_(static_cast<T>(eps)) {}

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override
    {
        Tensor<T> y(x.c, x.h, x.w);
        Tensor<T> inv(x.c, 1, 1);
        const auto n = static_cast<double>(x.plane());
        for (int ch = 0; ch < x.c; ++ch) {
            const T* p = x.channel(ch);
            double mean = 0;
            for (std::size_t i = 0; i < x.plane(); ++i)
                mean += p[i];
            mean /= n;
            double var = 0;
            for (std::size_t i = 0; i < x.plane(); ++i)
                var += (p[i] - mean) * (p[i] - mean);
            var /= n;
            const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
            inv.v[ch] = is;
            T* q = y.channel(ch);
            const T m = static_cast<T>(mean);
            for (std::size_t i = 0; i < x.plane(); ++i)
                q[i] = (p[i] - m) * is;
        }
        if (tape) {
            tape->push(y);
            tape->push(std::move(inv));
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad, Tape<T>& tape) override
    {
        Tensor<T> inv = tape.pop();
        Tensor<T> xhat = tape.pop();
        Tensor<T> dx(grad.c, grad.h, grad.w);
        const auto n = static_cast<double>(grad.plane());
        for (int ch = 0; ch < grad.c; ++ch) {
            const T* g = grad.channel(ch);
            const T* xh = xhat.channel(ch);
            double mg = 0, mgx = 0;
            for (std::size_t i = 0; i < grad.plane(); ++i) {
                mg += g[i];
                mgx += static_cast<double>(g[i]) * xh[i];
            }
            const T a = static_cast<T>(mg / n), b = static_cast<T>(mgx / n);
            T* d = dx.channel(ch);
            for (std::size_t i = 0; i < grad.plane(); ++i)
                d[i] = inv.v[ch] * (g[i] - a - xh[i] * b);
        }
        return dx;
    }

private:
    T eps_;
};

/// slope = 0 gives ReLU.
template <class T>
class LeakyRelu : public ClonableLayer<LeakyRelu<T>, T> {
public:
    explicit LeakyRelu(double slope = 0.0) : slope_(static_cast<T>(slope)) {}

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override
    {
        Tensor<T> y = x;
        for (auto& v : y.v)
            if (v < T(0))
                v *= slope_;
        if (tape)
            tape->push(x);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad, Tape<T>& tape) override
    {
        Tensor<T> x = tape.pop();
        Tensor<T> dx = grad;
        for (std::size_t i = 0; i < dx.v.size(); ++i)
            if (x.v[i] < T(0))
                dx.v[i] *= slope_;
        return dx;
    }

private:
    T slope_;
};

template <class T>
class Sigmoid : public ClonableLayer<Sigmoid<T>, T> {
public:
    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override
    {
        Tensor<T> y = x;
        for (auto& v : y.v)
            v = T(1) / (T(1) + std::exp(-v));
        if (tape)
            tape->push(y);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad, Tape<T>& tape) override
    {
        Tensor<T> y = tape.pop();
        Tensor<T> dx = grad;
        for (std::size_t i = 0; i < dx.v.size(); ++i)
            dx.v[i] *= y.v[i] * (T(1) - y.v[i]);
        return dx;
    }
};

template <class T>
class Sequential : public ClonableLayer<Sequential<T>, T> {
public:
    Sequential() = default;
    Sequential(const Sequential& o)
    {
        for (const auto& l : o.layers_)
            layers_.push_back(l->clone());
    }
    Sequential& operator=(const Sequential& o)
    {
        if (this != &o) {
            layers_.clear();
            for (const auto& l : o.layers_)
                layers_.push_back(l->clone());
        }
        return *this;
    }
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    template <class L>
    L& add(L layer)
    {
        auto p = std::make_unique<L>(std::move(layer));
        L& ref = *p;
        layers_.push_back(std::move(p));
        return ref;
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override
    {
        Tensor<T> h = x;
        for (const auto& l : layers_)
            h = l->forward(h, tape);
        return h;
    }

    Tensor<T> backward(const Tensor<T>& grad, Tape<T>& tape) override
    {
        Tensor<T> g = grad;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
            g = (*it)->backward(g, tape);
        return g;
    }

    void collect(std::vector<Param<T>*>& out) override
    {
        for (auto& l : layers_)
            l->collect(out);
    }

    std::size_t size() const { return layers_.size(); }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// x + F(x) with F = reflect-conv3, IN, ReLU, reflect-conv3, IN.
template <class T>
class ResidualBlock : public ClonableLayer<ResidualBlock<T>, T> {
public:
    template <class Rng>
    ResidualBlock(const std::string& name, int channels, Rng& rng)
    {
        auto& a = body_.add(Conv2d<T>(name + ".conv0", channels, channels, 3, 1, 1, PadMode::reflect));
        a.init(rng);
        body_.add(InstanceNorm<T>());
        body_.add(LeakyRelu<T>(0.0));
        auto& b = body_.add(Conv2d<T>(name + ".conv1", channels, channels, 3, 1, 1, PadMode::reflect));
        b.init(rng);
        body_.add(InstanceNorm<T>());
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const override
    {
        Tensor<T> y = body_.forward(x, tape);
        for (std::size_t i = 0; i < y.v.size(); ++i)
            y.v[i] += x.v[i];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad, Tape<T>& tape) override
    {
        Tensor<T> g = body_.backward(grad, tape);
        for (std::size_t i = 0; i < g.v.size(); ++i)
            g.v[i] += grad.v[i];
        return g;
    }

    void collect(std::vector<Param<T>*>& out) override { body_.collect(out); }

private:
    Sequential<T> body_;
};

} // namespace fovx::nn
