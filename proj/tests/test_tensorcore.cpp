#include <gtest/gtest.h>

#include <cmath>

#include "geoflow/ops.hpp"
#include "geoflow/optim.hpp"
#include "support/gradcheck.hpp"

using namespace geoflow;
using namespace geoflow::tc;
using geoflow::testing::gradcheck;
using geoflow::testing::probe;
using geoflow::testing::random_tensor;

namespace {

using VarsD = std::vector<Var<double>>;

Var<double> rand_param(const Shape& s, Rng& rng) { return parameter(random_tensor<double>(s, rng)); }

constexpr double kTol64 = 1e-4;

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
    EXPECT_THROW(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), ShapeError);
    Tensor<float> t(Shape{2, 3, 4});
    EXPECT_EQ(t.numel(), 24);
    EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
}

TEST(Conv3d, IdentityKernelIsIdentity) {
    Rng rng(1);
    auto x = constant(random_tensor<float>({2, 3, 4, 5, 6}, rng));
    Tensor<float> w(Shape{3, 3, 1, 1, 1});
    for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0f;
    auto y = conv3d(x, constant(w), constant(Tensor<float>(Shape{3})), 1, 0);
    EXPECT_EQ(y.value(), x.value());
}

TEST(Conv3d, AllOnesCountsKernelVolume) {
    auto x = constant(Tensor<float>(Shape{1, 1, 3, 3, 3}, 1.0f));
    auto w = constant(Tensor<float>(Shape{1, 1, 3, 3, 3}, 1.0f));
    auto y = conv3d(x, w, constant(Tensor<float>(Shape{1})), 1, 0);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1, 1}));
    EXPECT_FLOAT_EQ(y.value()[0], 27.0f);
}

TEST(Conv3d, OutputExtentFormula) {
    auto x = constant(Tensor<float>(Shape{1, 2, 7, 8, 9}));
    auto w = constant(Tensor<float>(Shape{4, 2, 3, 3, 3}));
    auto b = constant(Tensor<float>(Shape{4}));
    EXPECT_EQ(conv3d(x, w, b, 2, 1).shape(), (Shape{1, 4, 4, 4, 5}));
    EXPECT_EQ(conv3d(x, w, b, 1, 0).shape(), (Shape{1, 4, 5, 6, 7}));
}

TEST(Conv3d, ChannelMismatchIsShapeError) {
    auto x = constant(Tensor<float>(Shape{1, 3, 4, 4, 4}));
    auto w = constant(Tensor<float>(Shape{2, 2, 3, 3, 3}));
    EXPECT_THROW(conv3d(x, w, constant(Tensor<float>(Shape{2})), 1, 1), ShapeError);
}

TEST(Conv3d, GradientMatchesFiniteDifferences) {
    Rng rng(11);
    for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
        VarsD in{rand_param({2, 4, 5, 5, 5}, rng), rand_param({3, 4, 3, 3, 3}, rng), rand_param({3}, rng)};
        auto r = gradcheck<double>(
            [stride, pad](const VarsD& v) { return probe(conv3d(v[0], v[1], v[2], stride, pad)); }, in);
        EXPECT_LT(r.max_rel_error, kTol64) << "stride " << stride << " pad " << pad;
    }
}

TEST(Conv3d, PointwiseGradient) {
    Rng rng(12);
    VarsD in{rand_param({2, 4, 3, 4, 5}, rng), rand_param({3, 4, 1, 1, 1}, rng), rand_param({3}, rng)};
    auto r = gradcheck<double>([](const VarsD& v) { return probe(conv3d(v[0], v[1], v[2], 1, 0)); }, in);
    EXPECT_LT(r.max_rel_error, kTol64);
}

TEST(GroupNorm, ConstantInputNormalisesToZero) {
    auto x = constant(Tensor<float>(Shape{1, 4, 3, 3, 3}, 5.0f));
    auto y = group_norm(x, 2, constant(Tensor<float>(Shape{4}, 1.0f)), constant(Tensor<float>(Shape{4})));
    for (float v : y.value().data()) EXPECT_EQ(v, 0.0f);
}

TEST(GroupNorm, AffineCollapse) {
    Rng rng(2);
    auto x = constant(random_tensor<float>({2, 4, 3, 3, 3}, rng));
    auto y = group_norm(x, 4, constant(Tensor<float>(Shape{4})), constant(Tensor<float>(Shape{4}, 7.0f)));
    for (float v : y.value().data()) EXPECT_FLOAT_EQ(v, 7.0f);
}

TEST(GroupNorm, PerGroupStatistics) {
    Rng rng(3);
    const int B = 2, C = 8, G = 4, S = 5 * 5 * 5;
    auto x = constant(random_tensor<double>({B, C, 5, 5, 5}, rng, -3.0, 5.0));
    auto y = group_norm(x, G, constant(Tensor<double>(Shape{C}, 1.0)), constant(Tensor<double>(Shape{C})));
    const int per = C / G * S;
    for (int n = 0; n < B; ++n)
        for (int g = 0; g < G; ++g) {
            double m = 0, v = 0;
            for (int i = 0; i < per; ++i) m += y.value()[(n * C + g * C / G) * S + i];
            m /= per;
            for (int i = 0; i < per; ++i) {
                const double d = y.value()[(n * C + g * C / G) * S + i] - m;
                v += d * d;
            }
            v /= per;
            EXPECT_LT(std::abs(m), 1e-5);
            EXPECT_LT(std::abs(v - 1.0), 1e-3);
        }
}

TEST(GroupNorm, IndivisibleChannelsIsConfigError) {
    auto x = constant(Tensor<float>(Shape{1, 6, 2, 2, 2}));
    EXPECT_THROW(group_norm(x, 4, constant(Tensor<float>(Shape{6})), constant(Tensor<float>(Shape{6}))),
                 ConfigError);
}

TEST(GroupNorm, GradientMatchesFiniteDifferences) {
    Rng rng(13);
    VarsD in{rand_param({2, 4, 5, 5, 5}, rng), rand_param({4}, rng), rand_param({4}, rng)};
    auto r = gradcheck<double>([](const VarsD& v) { return probe(group_norm(v[0], 2, v[1], v[2])); }, in);
    EXPECT_LT(r.max_rel_error, kTol64);
}

TEST(Elementwise, ScalarIdentities) {
    auto x = constant(Tensor<float>(Shape{2}, std::vector<float>{-3.0f, 2.0f}));
    auto r = relu(x);
    EXPECT_EQ(r.value()[0], 0.0f);
    EXPECT_EQ(r.value()[1], 2.0f);
    auto s = sigmoid(constant(Tensor<float>(Shape{1}, 0.0f)));
    EXPECT_EQ(s.value()[0], 0.5f);
}

TEST(Elementwise, HadamardWithUnitMaskIsIdentity) {
    Rng rng(4);
    auto x = constant(random_tensor<float>({2, 3, 2, 2, 2}, rng));
    auto ones = constant(Tensor<float>(Shape{2, 1, 2, 2, 2}, 1.0f));
    EXPECT_EQ(hadamard(x, ones).value(), x.value());
    EXPECT_THROW(hadamard(x, constant(Tensor<float>(Shape{2, 2, 2, 2, 2}))), ShapeError);
    EXPECT_THROW(add(x, ones), ShapeError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
    Rng rng(14);
    const Shape s{2, 4, 5, 5, 5};
    auto check = [&](const char* name, auto fn, VarsD in) {
        auto r = gradcheck<double>(fn, std::move(in));
        EXPECT_LT(r.max_rel_error, kTol64) << name;
    };
    // Keep ReLU inputs away from the kink so central differences are valid.
    auto away_from_zero = rand_param(s, rng);
    for (auto& v : away_from_zero.mutable_value().data()) v += v >= 0 ? 0.01 : -0.01;
    check("relu", [](const VarsD& v) { return probe(relu(v[0])); }, VarsD{away_from_zero});
    check("sigmoid", [](const VarsD& v) { return probe(sigmoid(v[0])); }, VarsD{rand_param(s, rng)});
    check("add", [](const VarsD& v) { return probe(add(v[0], v[1])); }, VarsD{rand_param(s, rng), rand_param(s, rng)});
    check("sub", [](const VarsD& v) { return probe(sub(v[0], v[1])); }, VarsD{rand_param(s, rng), rand_param(s, rng)});
    check("scale", [](const VarsD& v) { return probe(scale(v[0], 1.7)); }, VarsD{rand_param(s, rng)});
    check("hadamard", [](const VarsD& v) { return probe(hadamard(v[0], v[1])); },
          VarsD{rand_param(s, rng), rand_param(s, rng)});
    check("hadamard-broadcast", [](const VarsD& v) { return probe(hadamard(v[0], v[1])); },
          VarsD{rand_param(s, rng), rand_param({2, 1, 5, 5, 5}, rng)});
    check("concat", [](const VarsD& v) { return probe(concat_channels(v[0], v[1])); },
          VarsD{rand_param(s, rng), rand_param({2, 3, 5, 5, 5}, rng)});
    check("upsample", [](const VarsD& v) { return probe(upsample_nearest2(v[0])); },
          VarsD{rand_param({2, 4, 2, 3, 2}, rng)});
    check("downsample", [](const VarsD& v) { return probe(downsample_stride2(v[0], v[1], v[2])); },
          VarsD{rand_param({2, 4, 4, 4, 4}, rng), rand_param({4, 4, 3, 3, 3}, rng), rand_param({4}, rng)});
    check("channel-bias", [](const VarsD& v) { return probe(add_channel_bias(v[0], v[1])); },
          VarsD{rand_param(s, rng), rand_param({2, 4}, rng)});
    check("linear", [](const VarsD& v) { return probe(linear(v[0], v[1], v[2])); },
          VarsD{rand_param({3, 6}, rng), rand_param({4, 6}, rng), rand_param({4}, rng)});
    check("mse", [](const VarsD& v) { return mse_loss(v[0], v[1]); }, VarsD{rand_param(s, rng), rand_param(s, rng)});
}

TEST(Upsample, NearestReplicatesEachVoxel) {
    Tensor<float> t(Shape{1, 1, 1, 1, 2}, std::vector<float>{1.0f, 2.0f});
    auto y = upsample_nearest2(constant(t));
    ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2, 4}));
    const std::vector<float> row{1, 1, 2, 2};
    for (int r = 0; r < 4; ++r)
        for (int i = 0; i < 4; ++i) EXPECT_EQ(y.value()[r * 4 + i], row[i]);
}

TEST(MseLoss, ClosedFormValues) {
    Rng rng(5);
    auto a = random_tensor<float>({2, 3, 2, 2, 2}, rng);
    EXPECT_EQ(mse_loss(constant(a), constant(a)).item(), 0.0f);
    Tensor<float> b = a;
    for (auto& v : b.data()) v += 2.0f;
    EXPECT_NEAR(mse_loss(constant(b), constant(a)).item(), 4.0f, 1e-5);
    EXPECT_THROW(mse_loss(constant(a), constant(Tensor<float>(Shape{3}))), ShapeError);
}

TEST(Backward, SumGivesUnitGradient) {
    Rng rng(6);
    auto x = parameter(random_tensor<float>({2, 3, 4}, rng));
    backward(sum(x));
    for (float g : x.grad().data()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, ScalarMse) {
    auto x = parameter(Tensor<float>(Shape{1}, 3.0f));
    backward(mse_loss(x, constant(Tensor<float>(Shape{1}))));
    EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);
}

TEST(Backward, RepeatedCallsAccumulate) {
    auto x = parameter(Tensor<float>(Shape{3}, 1.0f));
    auto loss = sum(scale(x, 2.0f));
    backward(loss);
    backward(loss);
    for (float g : x.grad().data()) EXPECT_EQ(g, 4.0f);
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NonScalarIsUsageError) {
    auto x = parameter(Tensor<float>(Shape{3}, 1.0f));
    EXPECT_THROW(backward(relu(x)), UsageError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    auto x = parameter(Tensor<float>(Shape{3}, 1.0f));
    NoGradGuard guard;
    auto y = sum(relu(x));
    EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, DeterministicAcrossRuns) {
    auto run = [] {
        Rng rng(21);
        auto x = parameter(random_tensor<float>({2, 4, 4, 4, 4}, rng));
        auto w = parameter(random_tensor<float>({4, 4, 3, 3, 3}, rng));
        auto b = parameter(random_tensor<float>({4}, rng));
        auto y = group_norm(conv3d(x, w, b, 1, 1), 2, constant(Tensor<float>(Shape{4}, 1.0f)),
                            constant(Tensor<float>(Shape{4})));
        auto loss = probe(relu(y));
        backward(loss);
        return std::make_tuple(loss.item(), x.grad(), w.grad());
    };
    EXPECT_EQ(run(), run());
}

TEST(Optimizer, FirstStepMagnitudeIsLearningRate) {
    ParameterSet<double> ps;
    auto& p = ps.add("w", Tensor<double>(Shape{1}, 0.5));
    p.mutable_grad()[0] = 3.0;
    OptimizerState<double> st;
    st.config.learning_rate = 0.01;
    optimizer_step(ps, st);
    EXPECT_NEAR(0.5 - p.value()[0], 0.01, 1e-9);
    EXPECT_EQ(p.grad()[0], 3.0);
}

TEST(Optimizer, ZeroGradientLeavesParameter) {
    ParameterSet<double> ps;
    auto& p = ps.add("w", Tensor<double>(Shape{2}, 0.25));
    p.mutable_grad();
    OptimizerState<double> st;
    optimizer_step(ps, st);
    EXPECT_EQ(p.value()[0], 0.25);
    EXPECT_EQ(p.value()[1], 0.25);
}

TEST(Optimizer, MissingGradientIsUsageError) {
    ParameterSet<double> ps;
    ps.add("w", Tensor<double>(Shape{1}));
    OptimizerState<double> st;
    EXPECT_THROW(optimizer_step(ps, st), UsageError);
}

TEST(Optimizer, ConvexQuadraticConverges) {
    // loss = (w - 3)^2 has its minimiser at w = 3.
    ParameterSet<double> ps;
    auto& w = ps.add("w", Tensor<double>(Shape{1}, -2.0));
    OptimizerState<double> st;
    st.config.learning_rate = 0.05;
    int steps = 0;
    for (; steps < 2000; ++steps) {
        ps.zero_grad();
        backward(mse_loss(w, constant(Tensor<double>(Shape{1}, 3.0))));
        optimizer_step(ps, st);
    }
    EXPECT_NEAR(w.value()[0], 3.0, 1e-3);
}

TEST(Optimizer, ClipGradNorm) {
    ParameterSet<double> ps;
    auto& a = ps.add("a", Tensor<double>(Shape{1}));
    auto& b = ps.add("b", Tensor<double>(Shape{1}));
    a.mutable_grad()[0] = 3.0;
    b.mutable_grad()[0] = 4.0;
    EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
    EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
    EXPECT_NEAR(b.grad()[0], 0.8, 1e-12);
}

TEST(ParameterSet, EveryParameterReceivesGradient) {
    Rng rng(8);
    ParameterSet<float> ps;
    auto& w = ps.add("w", random_tensor<float>({2, 3, 3, 3, 3}, rng));
    auto& b = ps.add("b", random_tensor<float>({2}, rng));
    auto x = constant(random_tensor<float>({1, 3, 4, 4, 4}, rng));
    backward(probe(conv3d(x, w, b, 1, 1)));
    for (auto& [name, p] : ps) EXPECT_TRUE(p.has_grad()) << name;
    EXPECT_THROW(ps.add("w", Tensor<float>(Shape{1})), ConfigError);
}
