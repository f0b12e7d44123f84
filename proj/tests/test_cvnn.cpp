#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "radood/cvnn.hpp"
#include "radood/error.hpp"

using namespace radood;
using namespace radood::nn;

namespace {

ComplexTensor random_tensor(std::size_t n, std::size_t c, std::size_t l, Stream& rng) {
    ComplexTensor t(n, c, l);
    for (auto& v : t.data()) v = rng.complex_normal();
    return t;
}

// Real test loss Σ|y - target|² and its packed gradient 2(y - target).
struct SquaredLoss {
    ComplexTensor target;
    double value(const ComplexTensor& y) const {
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += std::norm(y.data()[i] - target.data()[i]);
        return s;
    }
    ComplexTensor grad(const ComplexTensor& y) const {
        ComplexTensor g = y;
        for (std::size_t i = 0; i < y.size(); ++i) g.data()[i] = 2.0 * (y.data()[i] - target.data()[i]);
        return g;
    }
};

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

// Compares analytic gradients with central differences (step h) on the real
// and imaginary part of every parameter entry and every input entry.
// Relative error uses max(|a|, |fd|, 1e-2) as the scale so entries near zero
// are held to an absolute tolerance instead.
GradCheck check_net(Sequential& net, ComplexTensor x, const SquaredLoss& loss, double h = 1e-4) {
    net.zero_grad();
    const ComplexTensor y = net.forward(x);
    const ComplexTensor gx = net.backward(loss.grad(y));
    auto eval = [&]() { return loss.value(net.forward(x)); };
    GradCheck r;
    auto compare = [&](cplx analytic, double fd_re, double fd_im) {
        for (auto [a, f] : {std::pair{analytic.real(), fd_re}, std::pair{analytic.imag(), fd_im}}) {
            const double scale = std::max({std::abs(a), std::abs(f), 1e-2});
            r.max_rel = std::max(r.max_rel, std::abs(a - f) / scale);
            ++r.checked;
        }
    };
    auto central = [&](cplx& slot, cplx dir) {
        const cplx saved = slot;
        slot = saved + h * dir;
        const double lp = eval();
        slot = saved - h * dir;
        const double lm = eval();
        slot = saved;
        return (lp - lm) / (2 * h);
    };
    for (auto* p : net.params())
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double fr = central(p->value[i], {1, 0});
            const double fi = central(p->value[i], {0, 1});
            compare(p->grad[i], fr, fi);
        }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double fr = central(x.data()[i], {1, 0});
        const double fi = central(x.data()[i], {0, 1});
        compare(gx.data()[i], fr, fi);
    }
    return r;
}

struct LayerCase {
    const char* name;
    std::vector<LayerSpec> specs;
    std::size_t channels, length;
};

class LayerGradient : public ::testing::TestWithParam<LayerCase> {};

}  // namespace

TEST_P(LayerGradient, MatchesFiniteDifferences) {
    const auto& c = GetParam();
    Stream rng(42);
    Sequential net(c.specs, rng);
    // Move batch-norm affine off identity so its gradients are exercised.
    for (auto* p : net.params())
        if (p->name.rfind("gamma", 0) == 0 || p->name == "beta")
            for (auto& v : p->value) v += 0.3 * rng.complex_normal();
    ComplexTensor x = random_tensor(5, c.channels, c.length, rng);
    const ComplexTensor y = net.infer(x);
    SquaredLoss loss{random_tensor(y.batch(), y.channels(), y.length(), rng)};
    const auto r = check_net(net, x, loss);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LE(r.max_rel, 1e-5) << c.name;
}

INSTANTIATE_TEST_SUITE_P(
    Kinds, LayerGradient,
    ::testing::Values(
        LayerCase{"dense", {LayerSpec::dense(6, 4)}, 3, 2},
        LayerCase{"conv1d", {LayerSpec::conv(2, 3, 3, 2)}, 2, 8},
        LayerCase{"conv1d_transposed", {LayerSpec::conv_transposed(3, 2, 3, 2)}, 3, 4},
        LayerCase{"batch_norm", {LayerSpec::batch_norm(3)}, 3, 4},
        LayerCase{"crelu", {LayerSpec::dense(4, 4), LayerSpec::crelu()}, 4, 1},
        LayerCase{"two_layer_dense", {LayerSpec::dense(4, 6), LayerSpec::crelu(), LayerSpec::dense(6, 3)}, 4, 1},
        LayerCase{"conv_bn_crelu_convT",
                  {LayerSpec::conv(1, 4, 3, 2), LayerSpec::batch_norm(4), LayerSpec::crelu(),
                   LayerSpec::conv_transposed(4, 1, 3, 2)},
                  1, 8}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Wirtinger, SquaredModulusGradientIsTwoTheta) {
    Stream rng(1);
    Sequential net({LayerSpec::dense(1, 1)}, rng);
    net.params()[0]->value[0] = {3, 4};
    ComplexTensor x(1, 1, 1);
    x(0, 0, 0) = 1.0;
    const auto y = net.forward(x);
    ComplexTensor g = y;
    g(0, 0, 0) = 2.0 * y(0, 0, 0);  // ∂|y|²/∂Re + i∂/∂Im
    net.zero_grad();
    net.backward(g);
    EXPECT_EQ(net.params()[0]->grad[0], cplx(6, 8));
}

TEST(Wirtinger, ZeroLossGivesZeroGradients) {
    Stream rng(2);
    Sequential net({LayerSpec::dense(3, 2), LayerSpec::crelu(), LayerSpec::dense(2, 2)}, rng);
    ComplexTensor x = random_tensor(4, 3, 1, rng);
    const auto y = net.forward(x);
    net.zero_grad();
    net.backward(SquaredLoss{y}.grad(y));
    for (auto* p : net.params())
        for (auto g : p->grad) EXPECT_EQ(g, cplx(0.0));
}

TEST(Wirtinger, SmallStepDecreasesLossByLrTimesGradNorm) {
    Stream rng(3);
    Sequential net({LayerSpec::dense(4, 5), LayerSpec::crelu(), LayerSpec::dense(5, 2)}, rng);
    ComplexTensor x = random_tensor(6, 4, 1, rng);
    SquaredLoss loss{random_tensor(6, 2, 1, rng)};
    const double l0 = loss.value(net.forward(x));
    net.zero_grad();
    net.backward(loss.grad(net.forward(x)));
    double gnorm = 0;
    for (auto* p : net.params())
        for (auto g : p->grad) gnorm += std::norm(g);
    const double lr = 1e-6;
    for (auto* p : net.params())
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * p->grad[i];
    const double l1 = loss.value(net.forward(x));
    EXPECT_NEAR((l1 - l0) / (-lr * gnorm), 1.0, 1e-3);
}

TEST(Layers, CReluDefinitionAndProperties) {
    EXPECT_EQ(crelu({1, -2}), cplx(1, 0));
    EXPECT_EQ(crelu({-1, 2}), cplx(0, 2));
    Stream rng(4);
    for (int i = 0; i < 100; ++i) {
        const cplx v = 3.0 * rng.complex_normal();
        EXPECT_EQ(crelu(crelu(v)), crelu(v));
        EXPECT_EQ(crelu(2.5 * v), 2.5 * crelu(v));
    }
}

TEST(Layers, DenseWithIdentityWeightIsIdentity) {
    Stream rng(5);
    Sequential net({LayerSpec::dense(3, 3)}, rng);
    auto* w = net.params()[0];
    auto* b = net.params()[1];
    std::fill(w->value.begin(), w->value.end(), cplx{});
    for (int i = 0; i < 3; ++i) w->value[i * 3 + i] = 1.0;
    std::fill(b->value.begin(), b->value.end(), cplx{});
    const auto x = random_tensor(2, 3, 1, rng);
    EXPECT_EQ(net.infer(x).data(), x.data());
}

TEST(Layers, UnitKernelConvIsIdentityPerChannel) {
    Stream rng(6);
    Sequential net({LayerSpec::conv(2, 2, 1, 1)}, rng);
    auto* w = net.params()[0];
    std::fill(w->value.begin(), w->value.end(), cplx{});
    w->value[0] = 1.0;  // [o=0][c=0][k=0]
    w->value[3] = 1.0;  // [o=1][c=1][k=0]
    std::fill(net.params()[1]->value.begin(), net.params()[1]->value.end(), cplx{});
    const auto x = random_tensor(3, 2, 5, rng);
    EXPECT_EQ(net.infer(x).data(), x.data());
}

TEST(Layers, ConvGeometryHalvesAndDoubles) {
    EXPECT_EQ(LayerSpec::conv(1, 8, 3, 2).output_length(16), 8u);
    EXPECT_EQ(LayerSpec::conv(8, 16, 3, 2).output_length(8), 4u);
    EXPECT_EQ(LayerSpec::conv_transposed(16, 8, 3, 2).output_length(4), 8u);
    EXPECT_EQ(LayerSpec::conv_transposed(8, 1, 3, 2).output_length(8), 16u);
}

TEST(Layers, ShapeMismatchAndMissingTape) {
    Stream rng(7);
    Sequential net({LayerSpec::dense(3, 2)}, rng);
    EXPECT_THROW(net.infer(ComplexTensor(1, 4, 1)), ConfigError);
    EXPECT_THROW(net.backward(ComplexTensor(1, 2, 1)), std::logic_error);
    Sequential bn({LayerSpec::batch_norm(2)}, rng);
    EXPECT_THROW(bn.forward(ComplexTensor(1, 2, 1)), ConfigError);
}

TEST(BatchNorm, WhitensRandomBatch) {
    Stream rng(8);
    Sequential bn({LayerSpec::batch_norm(3)}, rng);
    ComplexTensor x(64, 3, 4);
    for (std::size_t n = 0; n < 64; ++n)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < 4; ++t) {
                const double a = rng.normal(), b = rng.normal();
                x(n, c, t) = cplx(2.0 + 3.0 * a, -1.0 + 0.5 * a + 1.5 * b) * double(c + 1);
            }
    const auto y = bn.forward(x);
    for (std::size_t c = 0; c < 3; ++c) {
        cplx mean = 0;
        double rr = 0, ri = 0, ii = 0;
        for (std::size_t n = 0; n < 64; ++n)
            for (std::size_t t = 0; t < 4; ++t) mean += y(n, c, t);
        mean /= 256.0;
        for (std::size_t n = 0; n < 64; ++n)
            for (std::size_t t = 0; t < 4; ++t) {
                const cplx u = y(n, c, t) - mean;
                rr += u.real() * u.real();
                ri += u.real() * u.imag();
                ii += u.imag() * u.imag();
            }
        // Regularisation biases the covariance by about eps / lambda_min.
        EXPECT_LE(std::abs(mean), 1e-6);
        EXPECT_NEAR(rr / 256, 1.0, 1e-4);
        EXPECT_NEAR(ri / 256, 0.0, 1e-4);
        EXPECT_NEAR(ii / 256, 1.0, 1e-4);
    }
}

TEST(BatchNorm, ConstantBatchMapsToZero) {
    Stream rng(9);
    Sequential bn({LayerSpec::batch_norm(2)}, rng);
    ComplexTensor x(8, 2, 1);
    for (auto& v : x.data()) v = {3.0, -7.0};
    const auto y = bn.forward(x);
    for (auto v : y.data()) EXPECT_EQ(v, cplx(0.0));
}

TEST(BatchNorm, WhitenedBatchPassesThrough) {
    Stream rng(10);
    Sequential bn({LayerSpec::batch_norm(1)}, rng);
    ComplexTensor x(4, 1, 1);
    const cplx pts[4] = {{1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
    for (int i = 0; i < 4; ++i) x(i, 0, 0) = pts[i];
    const auto y = bn.forward(x);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(std::abs(y(i, 0, 0) - pts[i]), 0.0, 1e-5);
}

TEST(BatchNorm, InferenceUsesRunningStats) {
    Stream rng(11);
    Sequential bn({LayerSpec::batch_norm(1)}, rng);
    ComplexTensor x(1, 1, 1);
    x(0, 0, 0) = {2.0, -3.0};
    // Fresh running stats are mean 0, covariance I: inference is ~identity.
    EXPECT_NEAR(std::abs(bn.infer(x)(0, 0, 0) - x(0, 0, 0)), 0.0, 1e-4);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Param p{"w", {{1, 2}, {3, 4}}, {{0, 0}, {0, 0}}};
    const auto before = p.value;
    AdamState st;
    for (int i = 0; i < 5; ++i) adam_step({&p}, st, {});
    EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepIsSignedLrPerComponent) {
    Param p{"w", {{1, 2}}, {{0.5, -2.0}}};
    AdamState st;
    const AdamConfig cfg{1e-3};
    adam_step({&p}, st, cfg);
    EXPECT_NEAR(p.value[0].real(), 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8), 1e-15);
    EXPECT_NEAR(p.value[0].imag(), 2.0 + 1e-3 * 2.0 / (2.0 + 1e-8), 1e-15);
}

TEST(Adam, DeterministicTrajectoryAndDivergenceSignal) {
    auto run = [] {
        Param p{"w", {{1, 1}, {-1, 0.5}}, {}};
        AdamState st;
        for (int i = 0; i < 20; ++i) {
            p.grad = {2.0 * p.value[0], 2.0 * p.value[1]};
            adam_step({&p}, st, {});
        }
        return p.value;
    };
    EXPECT_EQ(run(), run());
    Param bad{"w", {{1, 1}}, {{NAN, 0}}};
    AdamState st;
    EXPECT_THROW(adam_step({&bad}, st, {}), NumericError);
    EXPECT_EQ(bad.value[0], cplx(1, 1));
}

TEST(Checkpoint, RoundTripAndChecksum) {
    Stream rng(12);
    Sequential net({LayerSpec::conv(1, 2, 3, 2), LayerSpec::batch_norm(2), LayerSpec::crelu()}, rng);
    Checkpoint ck;
    ck.header = {{"networks", specs_to_json(net.specs())}};
    append_payload(net, ck.payload);
    auto bytes = encode_checkpoint(ck);
    const auto back = decode_checkpoint(bytes);
    EXPECT_EQ(back.payload, ck.payload);
    EXPECT_EQ(specs_from_json(back.header.at("networks")), net.specs());

    Sequential other({LayerSpec::conv(1, 2, 3, 2), LayerSpec::batch_norm(2), LayerSpec::crelu()}, rng);
    std::size_t off = 0;
    read_payload(other, back.payload, off);
    EXPECT_EQ(off, back.payload.size());
    const auto x = random_tensor(2, 1, 8, rng);
    const auto a = net.infer(x), b = other.infer(x);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(std::abs(a.data()[i] - b.data()[i]), 0.0, 1e-5);

    bytes[20] ^= 0x01;
    EXPECT_THROW(decode_checkpoint(bytes), IoError);
}
