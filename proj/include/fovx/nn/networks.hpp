#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fovx/nn/layers.hpp"

namespace fovx::nn {

struct GeneratorConfig {
    int n = 7;              // slab half-width
    int base_width = 64;    // feature channels after the stem
    int n_res_blocks = 9;
    int stem_kernel = 7;
    int n_downsample = 2;

    int in_channels() const { return 2 * (2 * n + 1); }
    int out_channels() const { return 1; }

    void validate() const
    {
        if (n < 1)
            throw config_error("generator: n must be >= 1");
        if (base_width < 1 || n_res_blocks < 1 || n_downsample < 0)
            throw config_error("generator: widths and block counts must be positive");
        if (stem_kernel < 1 || stem_kernel % 2 == 0)
            throw config_error("generator: stem kernel must be odd");
    }

    bool operator==(const GeneratorConfig&) const = default;
};

struct DiscriminatorConfig {
    int base_width = 64;
    int n_layers = 3;          // stride-2 stages
    bool conditional = false;  // also show D the input slab

    bool operator==(const DiscriminatorConfig&) const = default;
};

/// ResNet image-to-image generator: reflect-padded stem, strided
/// downsampling, residual blocks, transposed-conv upsampling and a sigmoid
/// head so outputs live in [0, 1]. Inputs whose sides are not multiples of
/// 2^n_downsample are zero padded internally and cropped back.
template <class T>
class Generator {
public:
    Generator() = default;

    template <class Rng>
    Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg)
    {
        cfg.validate();
        const int w = cfg.base_width;
        const int k = cfg.stem_kernel;
        auto& stem = body_.add(Conv2d<T>("stem", cfg.in_channels(), w, k, 1, k / 2, PadMode::reflect));
        stem.init(rng);
        stem.set_needs_input_grad(false);
        body_.add(InstanceNorm<T>());
        body_.add(LeakyRelu<T>(0.0));
        int ch = w;
        for (int d = 0; d < cfg.n_downsample; ++d) {
            auto& c = body_.add(Conv2d<T>("down" + std::to_string(d), ch, ch * 2, 3, 2, 1));
            c.init(rng);
            body_.add(InstanceNorm<T>());
            body_.add(LeakyRelu<T>(0.0));
            ch *= 2;
        }
        for (int r = 0; r < cfg.n_res_blocks; ++r)
            body_.add(ResidualBlock<T>("res" + std::to_string(r), ch, rng));
        for (int u = 0; u < cfg.n_downsample; ++u) {
            auto& c = body_.add(ConvTranspose2d<T>("up" + std::to_string(u), ch, ch / 2, 3, 2, 1, 1));
            c.init(rng);
            body_.add(InstanceNorm<T>());
            body_.add(LeakyRelu<T>(0.0));
            ch /= 2;
        }
        auto& head = body_.add(Conv2d<T>("head", ch, cfg.out_channels(), k, 1, k / 2, PadMode::reflect));
        head.init(rng);
        body_.add(Sigmoid<T>());
    }

    /// Two 3x3 convolutions and a sigmoid; used by gradient checks.
    template <class Rng>
    static Generator tiny(int in_channels, int hidden, Rng& rng)
    {
        Generator g;
        g.cfg_.n = (in_channels / 2 - 1) / 2;
        g.cfg_.n_downsample = 0;
        auto& a = g.body_.add(Conv2d<T>("conv0", in_channels, hidden, 3, 1, 1, PadMode::reflect));
        a.init(rng, 0.3);
        g.body_.add(LeakyRelu<T>(0.2));
        auto& b = g.body_.add(Conv2d<T>("conv1", hidden, 1, 3, 1, 1, PadMode::zero));
        b.init(rng, 0.3);
        g.body_.add(Sigmoid<T>());
        g.expected_in_ = in_channels;
        return g;
    }

    const GeneratorConfig& config() const { return cfg_; }

    int input_channels() const { return expected_in_ ? expected_in_ : cfg_.in_channels(); }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr) const
    {
        if (x.c != input_channels())
            throw shape_error("generator: expected " + std::to_string(input_channels()) +
                              " channels, got " + std::to_string(x.c));
        const int m = 1 << cfg_.n_downsample;
        const int ph = (m - x.h % m) % m, pw = (m - x.w % m) % m;
        if (ph == 0 && pw == 0)
            return body_.forward(x, tape);
        Tensor<T> padded(x.c, x.h + ph, x.w + pw);
        for (int c = 0; c < x.c; ++c)
            for (int y = 0; y < x.h; ++y)
                std::copy_n(x.channel(c) + static_cast<std::size_t>(y) * x.w, x.w,
                            padded.channel(c) + static_cast<std::size_t>(y) * padded.w);
        Tensor<T> out = body_.forward(padded, tape);
        Tensor<T> cropped(out.c, x.h, x.w);
        for (int c = 0; c < out.c; ++c)
            for (int y = 0; y < x.h; ++y)
                std::copy_n(out.channel(c) + static_cast<std::size_t>(y) * out.w, x.w,
                            cropped.channel(c) + static_cast<std::size_t>(y) * x.w);
        return cropped;
    }

    /// Accumulates parameter gradients for d(loss)/d(output) = grad.
    void backward(const Tensor<T>& grad, Tape<T>& tape)
    {
        const int m = 1 << cfg_.n_downsample;
        const int ph = (m - grad.h % m) % m, pw = (m - grad.w % m) % m;
        if (ph == 0 && pw == 0) {
            body_.backward(grad, tape);
            return;
        }
        Tensor<T> padded(grad.c, grad.h + ph, grad.w + pw);
        for (int c = 0; c < grad.c; ++c)
            for (int y = 0; y < grad.h; ++y)
                std::copy_n(grad.channel(c) + static_cast<std::size_t>(y) * grad.w, grad.w,
                            padded.channel(c) + static_cast<std::size_t>(y) * padded.w);
        body_.backward(padded, tape);
    }

    std::vector<Param<T>*> params()
    {
        std::vector<Param<T>*> out;
        body_.collect(out);
        return out;
    }

    std::vector<const Param<T>*> params() const
    {
        std::vector<Param<T>*> tmp;
        const_cast<Sequential<T>&>(body_).collect(tmp);
        return {tmp.begin(), tmp.end()};
    }

    void zero_grad()
    {
        for (auto* p : params())
            p->zero_grad();
    }

private:
    GeneratorConfig cfg_;
    Sequential<T> body_;
    int expected_in_ = 0;
};

/// PatchGAN-style discriminator producing a grid of patch logits.
template <class T>
class Discriminator {
public:
    Discriminator() = default;

    template <class Rng>
    Discriminator(const DiscriminatorConfig& cfg, int in_channels, Rng& rng) : cfg_(cfg), in_(in_channels)
    {
        int ch = cfg.base_width;
        auto& first = body_.add(Conv2d<T>("d0", in_channels, ch, 4, 2, 1));
        first.init(rng);
        body_.add(LeakyRelu<T>(0.2));
        for (int l = 1; l < cfg.n_layers; ++l) {
            auto& c = body_.add(Conv2d<T>("d" + std::to_string(l), ch, ch * 2, 4, 2, 1));
            c.init(rng);
            body_.add(InstanceNorm<T>());
            body_.add(LeakyRelu<T>(0.2));
            ch *= 2;
        }
        auto& last = body_.add(Conv2d<T>("d_out", ch, 1, 4, 1, 1));
        last.init(rng);
    }

    /// Minimal two-layer variant for gradient checks.
    template <class Rng>
    static Discriminator tiny(int in_channels, int hidden, Rng& rng)
    {
        Discriminator d;
        d.in_ = in_channels;
        auto& a = d.body_.add(Conv2d<T>("d0", in_channels, hidden, 4, 2, 1));
        a.init(rng, 0.3);
        d.body_.add(LeakyRelu<T>(0.2));
        auto& b = d.body_.add(Conv2d<T>("d_out", hidden, 1, 3, 1, 1));
        b.init(rng, 0.3);
        return d;
    }

    const DiscriminatorConfig& config() const { return cfg_; }
    int input_channels() const { return in_; }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr) const
    {
        if (x.c != in_)
            throw shape_error("discriminator: input channel mismatch");
        return body_.forward(x, tape);
    }

    Tensor<T> backward(const Tensor<T>& grad, Tape<T>& tape) { return body_.backward(grad, tape); }

    std::vector<Param<T>*> params()
    {
        std::vector<Param<T>*> out;
        body_.collect(out);
        return out;
    }

    void zero_grad()
    {
        for (auto* p : params())
            p->zero_grad();
    }

private:
    DiscriminatorConfig cfg_;
    int in_ = 1;
    Sequential<T> body_;
};

} // namespace fovx::nn
