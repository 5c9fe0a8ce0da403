#include <cmath>
#include <memory>

#include <gtest/gtest.h>

#include "fovx/nn/adam.hpp"
#include "fovx/nn/loss.hpp"
#include "fovx/nn/networks.hpp"
#include "unit/gradcheck.hpp"

using namespace fovx;
using namespace fovx::nn;
using fovx::testing::check_entries;
using fovx::testing::dot;
using fovx::testing::random_tensor;

namespace {

// Checks parameter and (optionally) input gradients of a layer under the
// scalar probe loss sum(w * layer(x)).
void check_layer(Layer<double>& layer, Tensor<double> x, bool input_grad, double tol = 1e-6,
                 double floor = 1e-6)
{
    std::mt19937_64 rng(99);
    Tape<double> tape;
    const auto y = layer.forward(x, &tape);
    const auto w = random_tensor(y.c, y.h, y.w, rng);
    std::vector<Param<double>*> params;
    layer.collect(params);
    for (auto* p : params)
        p->zero_grad();
    const auto dx = layer.backward(w, tape);
    EXPECT_TRUE(tape.empty());

    auto f = [&] { return dot(w, layer.forward(x, nullptr)); };
    for (auto* p : params) {
        EXPECT_LT(check_entries(p->value, p->grad, f, 1e-5, floor), tol) << p->name;
    }
    if (input_grad) {
        EXPECT_LT(check_entries(x.v, dx.v, f, 1e-5, floor), tol) << "input";
    }
}

} // namespace

TEST(Layers, Conv2dGradients)
{
    std::mt19937_64 rng(1);
    for (auto mode : {PadMode::zero, PadMode::reflect}) {
        Conv2d<double> c("c", 3, 4, 3, 1, 1, mode);
        c.init(rng, 0.5);
        check_layer(c, random_tensor(3, 6, 5, rng), true);
    }
    Conv2d<double> s("s", 2, 3, 4, 2, 1);
    s.init(rng, 0.5);
    check_layer(s, random_tensor(2, 8, 8, rng), true);
    Conv2d<double> big("b", 2, 2, 7, 1, 3, PadMode::reflect);
    big.init(rng, 0.3);
    check_layer(big, random_tensor(2, 8, 8, rng), true);
}

TEST(Layers, Conv2dMatchesDirectConvolution)
{
    std::mt19937_64 rng(2);
    Conv2d<double> c("c", 2, 3, 3, 2, 1);
    c.init(rng, 1.0);
    std::vector<Param<double>*> ps;
    c.collect(ps);
    ps[1]->value = {0.1, -0.2, 0.3};
    auto x = random_tensor(2, 7, 6, rng);
    auto y = c.forward(x, nullptr);
    ASSERT_EQ(y.h, 4);
    ASSERT_EQ(y.w, 3);
    for (int o = 0; o < 3; ++o)
        for (int oy = 0; oy < y.h; ++oy)
            for (int ox = 0; ox < y.w; ++ox) {
                double s = ps[1]->value[o];
                for (int ci = 0; ci < 2; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                            if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6)
                                continue;
                            s += ps[0]->value[((o * 2 + ci) * 3 + ky) * 3 + kx] * x.at(ci, iy, ix);
                        }
                EXPECT_NEAR(y.at(o, oy, ox), s, 1e-12);
            }
}

TEST(Layers, ReflectPaddingIndices)
{
    EXPECT_EQ(detail::reflect_index(-1, 5), 1);
    EXPECT_EQ(detail::reflect_index(-3, 5), 3);
    EXPECT_EQ(detail::reflect_index(5, 5), 3);
    EXPECT_EQ(detail::reflect_index(7, 5), 1);
    EXPECT_EQ(detail::reflect_index(3, 1), 0);
}

TEST(Layers, ConvTransposeIsAdjointOfConv)
{
    // <conv(x), y> = <x, convT(y)> when both share weights and have no bias.
    std::mt19937_64 rng(3);
    Conv2d<double> c("c", 3, 2, 3, 2, 1);
    c.init(rng, 1.0);
    ConvTranspose2d<double> t("t", 2, 3, 3, 2, 1, 1);
    std::vector<Param<double>*> pc, pt;
    c.collect(pc);
    t.collect(pt);
    pt[0]->value = pc[0]->value; // (out=2,in=3,k,k) as (in=2,out=3,k,k)
    auto x = random_tensor(3, 8, 8, rng);
    auto y = random_tensor(2, 4, 4, rng);
    const auto cx = c.forward(x, nullptr);
    const auto ty = t.forward(y, nullptr);
    ASSERT_EQ(ty.h, 8);
    EXPECT_NEAR(dot(cx, y), dot(x, ty), 1e-10);
}

TEST(Layers, ConvTransposeGradients)
{
    std::mt19937_64 rng(4);
    ConvTranspose2d<double> t("t", 3, 2, 3, 2, 1, 1);
    t.init(rng, 0.5);
    check_layer(t, random_tensor(3, 4, 3, rng), true);
}

TEST(Layers, InstanceNormGradients)
{
    std::mt19937_64 rng(5);
    InstanceNorm<double> n;
    check_layer(n, random_tensor(3, 4, 5, rng, 2.0), true);
    auto y = n.forward(random_tensor(2, 6, 6, rng, 3.0), nullptr);
    for (int c = 0; c < 2; ++c) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < y.plane(); ++i)
            m += y.channel(c)[i];
        m /= y.plane();
        for (std::size_t i = 0; i < y.plane(); ++i)
            v += (y.channel(c)[i] - m) * (y.channel(c)[i] - m);
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v / y.plane(), 1.0, 1e-5);
    }
}

TEST(Layers, ActivationGradients)
{
    std::mt19937_64 rng(6);
    LeakyRelu<double> l(0.2);
    check_layer(l, random_tensor(2, 5, 5, rng), true);
    Sigmoid<double> s;
    check_layer(s, random_tensor(2, 5, 5, rng), true);
}

TEST(Layers, ResidualBlockGradients)
{
    std::mt19937_64 rng(7);
    ResidualBlock<double> r("r", 3, rng);
    // the second bias feeds an instance norm, so its true gradient is 0 and
    // only difference noise is left; the floor absorbs it
    check_layer(r, random_tensor(3, 6, 6, rng), true, 1e-4, 1e-4);
}

TEST(Networks, GeneratorShapesRangeAndDeterminism)
{
    std::mt19937_64 rng(8);
    GeneratorConfig cfg;
    cfg.base_width = 4;
    cfg.n_res_blocks = 1;
    Generator<float> g(cfg, rng);
    EXPECT_EQ(cfg.in_channels(), 30);
    Tensor<float> x(30, 64, 64);
    std::mt19937_64 r2(1);
    std::uniform_real_distribution<float> u(0, 1);
    for (auto& v : x.v)
        v = u(r2);
    auto a = g.forward(x);
    auto b = g.forward(x);
    EXPECT_EQ(a.c, 1);
    EXPECT_EQ(a.h, 64);
    EXPECT_EQ(a.w, 64);
    EXPECT_EQ(a.v, b.v);
    auto z = g.forward(Tensor<float>(30, 64, 64));
    for (float v : z.v) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
    auto odd = g.forward(Tensor<float>(30, 13, 10, 0.5f));
    EXPECT_EQ(odd.h, 13);
    EXPECT_EQ(odd.w, 10);
    EXPECT_THROW(g.forward(Tensor<float>(28, 8, 8)), shape_error);
}

TEST(Networks, ConfigValidation)
{
    GeneratorConfig c;
    c.n = 0;
    EXPECT_THROW(c.validate(), config_error);
    c = {};
    c.n_res_blocks = 0;
    EXPECT_THROW(c.validate(), config_error);
    c = {};
    c.stem_kernel = 4;
    EXPECT_THROW(c.validate(), config_error);
}

TEST(Networks, FullGeneratorParameterGradients)
{
    std::mt19937_64 rng(9);
    GeneratorConfig cfg;
    cfg.n = 1;
    cfg.base_width = 2;
    cfg.n_res_blocks = 1;
    cfg.stem_kernel = 3;
    Generator<double> g(cfg, rng);
    // Instance norm over the small bottleneck makes the loss strongly curved,
    // hence the short step and the larger spatial size.
    for (auto shape : {std::pair{24, 24}, std::pair{23, 21}}) {
        auto x = random_tensor(6, shape.first, shape.second, rng);
        Tape<double> tape;
        auto y = g.forward(x, &tape);
        auto w = random_tensor(1, y.h, y.w, rng);
        g.zero_grad();
        g.backward(w, tape);
        EXPECT_TRUE(tape.empty());
        auto f = [&] { return dot(w, g.forward(x)); };
        for (auto* p : g.params()) {
            const bool feeds_norm = p->name.ends_with(".bias") && p->name != "head.bias";
            if (feeds_norm) {
                for (double v : p->grad)
                    EXPECT_NEAR(v, 0.0, 1e-10) << p->name;
                continue;
            }
            EXPECT_LT(check_entries(p->value, p->grad, f, 1e-6, 1e-5), 1e-3) << p->name;
        }
    }
}

TEST(Networks, DiscriminatorInputAndParameterGradients)
{
    std::mt19937_64 rng(10);
    DiscriminatorConfig cfg;
    cfg.base_width = 3;
    cfg.n_layers = 2;
    Discriminator<double> d(cfg, 2, rng);
    auto x = random_tensor(2, 16, 16, rng);
    Tape<double> tape;
    auto y = d.forward(x, &tape);
    EXPECT_GT(y.h, 0);
    auto w = random_tensor(y.c, y.h, y.w, rng);
    d.zero_grad();
    auto dx = d.backward(w, tape);
    auto f = [&] { return dot(w, d.forward(x)); };
    for (auto* p : d.params()) {
        EXPECT_LT(check_entries(p->value, p->grad, f), 1e-4) << p->name;
    }
    EXPECT_LT(check_entries(x.v, dx.v, f), 1e-4);
}

TEST(Networks, CopiesAreIndependent)
{
    std::mt19937_64 rng(11);
    auto g = Generator<float>::tiny(6, 3, rng);
    auto h = g;
    h.params()[0]->value[0] += 1.0f;
    EXPECT_NE(g.params()[0]->value[0], h.params()[0]->value[0]);
}

TEST(Loss, GanLossExamples)
{
    std::vector<double> half(16, 0.5);
    EXPECT_NEAR(gan_loss<double>(half, half), -2 * std::log(2.0), 1e-12);
    std::vector<double> one(4, 1.0), zero(4, 0.0);
    const double perfect = gan_loss<double>(one, zero);
    EXPECT_LT(perfect, 0.0);
    EXPECT_GT(perfect, -1e-6);
    EXPECT_THROW(gan_loss<double>({}, half), shape_error);
}

TEST(Loss, GanLossMatchesElementwiseOracle)
{
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.001, 0.999);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> r(5 + t), f(3 + 2 * t);
        for (auto& v : r)
            v = u(rng);
        for (auto& v : f)
            v = u(rng);
        double sr = 0, sf = 0;
        for (double v : r)
            sr += std::log(v);
        for (double v : f)
            sf += std::log(1 - v);
        EXPECT_NEAR(gan_loss<double>(r, f), sr / r.size() + sf / f.size(), 1e-6);
    }
}

TEST(Loss, L1Examples)
{
    std::vector<float> a{0.1f, 0.5f, 0.9f}, b{0.1f, 0.5f, 0.9f}, c{0.35f, 0.75f, 1.15f};
    EXPECT_EQ(l1_loss<float>(a, b), 0.0);
    EXPECT_NEAR(l1_loss<float>(a, c), 0.25, 1e-7);
    EXPECT_THROW(l1_loss<float>(a, std::vector<float>{1.0f}), shape_error);
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n;
    std::vector<double> x(100), y(100);
    double s = 0;
    for (int i = 0; i < 100; ++i) {
        x[i] = n(rng);
        y[i] = n(rng);
        s += std::abs(x[i] - y[i]);
    }
    EXPECT_NEAR(l1_loss<double>(x, y), s / 100, 1e-7);
}

TEST(Loss, CombinedObjective)
{
    EXPECT_DOUBLE_EQ(combined_generator_objective(0.7, 0.1, 100.0), 10.7);
    EXPECT_DOUBLE_EQ(combined_generator_objective(0.7, 0.1, 0.0), 0.7);
    EXPECT_THROW(combined_generator_objective(0.7, 0.1, -1.0), config_error);
}

TEST(Loss, LogitGradients)
{
    std::mt19937_64 rng(14);
    auto s = random_tensor(1, 3, 3, rng, 2.0);
    for (auto term : {LogTerm::log_p, LogTerm::log_one_minus_p})
        for (double sign : {1.0, -1.0}) {
            auto l = mean_log_sigmoid(s, term, sign);
            auto f = [&] { return mean_log_sigmoid(s, term, sign).value; };
            EXPECT_LT(check_entries(s.v, l.grad.v, f), 1e-6);
        }
}

// Full generator objective on a two-convolution generator and a tiny
// discriminator, 8x8 inputs, double precision.
TEST(Loss, GeneratorObjectiveGradientCheck)
{
    std::mt19937_64 rng(15);
    auto g = Generator<double>::tiny(6, 4, rng);
    auto d = Discriminator<double>::tiny(1, 3, rng);
    auto x = random_tensor(6, 8, 8, rng);
    Tensor<double> y(1, 8, 8);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& v : y.v)
        v = u(rng);
    const double lambda = 100.0;
    for (bool saturating : {false, true}) {
        auto objective = [&] {
            auto out = g.forward(x);
            auto logits = d.forward(out);
            const double adv = saturating ? mean_log_sigmoid(logits, LogTerm::log_one_minus_p, 1.0).value
                                          : mean_log_sigmoid(logits, LogTerm::log_p, -1.0).value;
            return adv + weighted_l1(y, out, lambda).value;
        };
        Tape<double> tg, td;
        auto out = g.forward(x, &tg);
        auto logits = d.forward(out, &td);
        auto adv = saturating ? mean_log_sigmoid(logits, LogTerm::log_one_minus_p, 1.0)
                              : mean_log_sigmoid(logits, LogTerm::log_p, -1.0);
        auto gout = d.backward(adv.grad, td);
        auto l1 = weighted_l1(y, out, lambda);
        for (std::size_t i = 0; i < gout.v.size(); ++i)
            gout.v[i] += l1.grad.v[i];
        g.zero_grad();
        g.backward(gout, tg);
        for (auto* p : g.params()) {
            EXPECT_LT(check_entries(p->value, p->grad, objective), 1e-4) << p->name;
        }
    }
}

TEST(Adam, MatchesHandComputedFirstSteps)
{
    Param<double> p("p", {2});
    p.value = {1.0, -1.0};
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    Adam<double> opt({&p}, cfg);
    p.grad = {0.5, -2.0};
    opt.step({&p});
    // first step moves each entry by lr * sign(g) (up to eps)
    EXPECT_NEAR(p.value[0], 0.9, 1e-7);
    EXPECT_NEAR(p.value[1], -0.9, 1e-7);
    const double x0 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), y0 = -1.0 + 0.1 * 2.0 / (2.0 + 1e-8);
    EXPECT_DOUBLE_EQ(p.value[0], x0);
    EXPECT_DOUBLE_EQ(p.value[1], y0);
    p.grad = {0.5, 1.0};
    opt.step({&p});
    const double m1 = 0.5 * 0.5 * 0.5 + 0.5 * 0.5, v1 = 0.999 * 0.001 * 0.25 + 0.001 * 0.25;
    const double m2 = 0.5 * 0.5 * -2.0 + 0.5 * 1.0, v2 = 0.999 * 0.001 * 4.0 + 0.001 * 1.0;
    const double c1 = 1 - 0.25, c2 = 1 - 0.999 * 0.999;
    EXPECT_NEAR(p.value[0], x0 - 0.1 * (m1 / c1) / (std::sqrt(v1 / c2) + 1e-8), 1e-12);
    EXPECT_NEAR(p.value[1], y0 - 0.1 * (m2 / c1) / (std::sqrt(v2 / c2) + 1e-8), 1e-12);
}

TEST(Adam, GeneratorStepLowersAdversarialLoss)
{
    // One small step with lambda = 0 decreases the non-saturating term on the same batch.
    std::mt19937_64 rng(16);
    auto g = Generator<double>::tiny(6, 4, rng);
    auto d = Discriminator<double>::tiny(1, 3, rng);
    auto x = random_tensor(6, 8, 8, rng);
    auto loss = [&] { return mean_log_sigmoid(d.forward(g.forward(x)), LogTerm::log_p, -1.0).value; };
    const double before = loss();
    Tape<double> tg, td;
    auto out = g.forward(x, &tg);
    auto adv = mean_log_sigmoid(d.forward(out, &td), LogTerm::log_p, -1.0);
    auto gout = d.backward(adv.grad, td);
    g.zero_grad();
    g.backward(gout, tg);
    AdamConfig cfg;
    cfg.learning_rate = 1e-4;
    Adam<double> opt(g.params(), cfg);
    opt.step(g.params());
    EXPECT_LT(loss(), before);
}
