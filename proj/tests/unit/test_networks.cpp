#include <gtest/gtest.h>

#include <cmath>

#include "fd_cases.hpp"
#include "rtsmono/depth_net.hpp"
#include "rtsmono/pose_net.hpp"

using namespace rtsmono;
using rtsmono::testing::random_tensor;

namespace {

using V = Var<double>;

Tensor<float> random_image(std::int64_t n, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor({n, 3, h, w}, rng, 0, 1).cast<float>();
}

void set_identity_projection(Conv2d<double>& conv, std::int64_t in_channels) {
  auto& w = conv.weight.mutable_value();
  w.fill(0);
  for (std::int64_t o = 0; o < w.dim(0) && o < in_channels; ++o) w.at({o, o, 0, 0}) = 1;
  conv.bias.mutable_value().fill(0);
}

}  // namespace

TEST(DepthNet, PyramidShapes640x192) {
  const DepthNet<float> net(ModelConfig::preset(Variant::S, 640, 192), 0);
  NoGradGuard guard;
  const auto p = net.encode(Var<float>(random_image(1, 192, 640, 1)));
  EXPECT_EQ(p.f0.shape(), (Shape{1, 48, 48, 160}));
  EXPECT_EQ(p.f1.shape(), (Shape{1, 48, 48, 160}));
  EXPECT_EQ(p.f2.shape(), (Shape{1, 80, 24, 80}));
  EXPECT_EQ(p.f3.shape(), (Shape{1, 128, 12, 40}));
  const auto d = net.decode(p);
  EXPECT_EQ(d.shape(), (Shape{1, 1, 192, 640}));
  for (float v : d.value().data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(DepthNet, PyramidShapes1024x320) {
  const DepthNet<float> net(ModelConfig::preset(Variant::XS, 1024, 320), 0);
  NoGradGuard guard;
  const auto p = net.encode(Var<float>(random_image(1, 320, 1024, 2)));
  EXPECT_EQ(p.f0.shape(), (Shape{1, 48, 80, 256}));
  EXPECT_EQ(p.f1.shape(), (Shape{1, 48, 80, 256}));
  EXPECT_EQ(p.f2.shape(), (Shape{1, 80, 40, 128}));
  EXPECT_EQ(p.f3.shape(), (Shape{1, 128, 20, 64}));
}

TEST(DepthNet, DeterministicForward) {
  const DepthNet<float> a(ModelConfig::preset(Variant::Desk, 128, 64), 5), b(ModelConfig::preset(Variant::Desk, 128, 64), 5);
  const Var<float> img(random_image(2, 64, 128, 3));
  NoGradGuard guard;
  const auto pa = a.encode(img), pb = b.encode(img);
  EXPECT_EQ(pa.f3.value(), pb.f3.value());
  EXPECT_EQ(a.forward(img).value(), b.forward(img).value());
  {
    const auto out = a.forward(img);
    for (float v : out.value().data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(DepthNet, RejectsIndivisibleResolution) {
  const DepthNet<float> net(ModelConfig::preset(Variant::Test, 64, 32), 0);
  try {
    net.encode(Var<float>(Tensor<float>({1, 3, 40, 64})));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("16"), std::string::npos);
  }
  EXPECT_THROW(ModelConfig::preset(Variant::S, 650, 192).validate(), std::invalid_argument);
  ModelConfig c = ModelConfig::preset(Variant::S);
  c.dmin = 200;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(DepthNet, ParameterBudgets) {
  const DepthNet<float> s(ModelConfig::preset(Variant::S), 0), xs(ModelConfig::preset(Variant::XS), 0);
  EXPECT_LE(s.parameters().count(), 3'500'000);
  EXPECT_LE(xs.parameters().count(), 2'800'000);
  EXPECT_LT(xs.parameters().count(), s.parameters().count());
  EXPECT_LE(s.decoder_parameter_count(), 300'000);
  EXPECT_EQ(s.decoder_parameter_count(), xs.decoder_parameter_count());
  EXPECT_EQ(s.encoder_parameter_count() + s.decoder_parameter_count(), s.parameters().count());
}

TEST(DepthNet, SparseFusionTopology) {
  const DepthNet<float> net(ModelConfig::preset(Variant::S), 0);
  int fusion = 0, att = 0, conv3 = 0;
  const std::string dec = "depth/decoder/";
  for (const auto& p : net.parameters().items()) {
    if (p.name.rfind(dec, 0) != 0 || p.var.rank() != 4) continue;
    const std::string n = p.name.substr(dec.size());
    if (n.rfind("conv_", 0) == 0 && p.var.dim(2) == 3) ++conv3;
    if (n.find(".proj") != std::string::npos) {
      if (n.rfind("fusion", 0) == 0) ++fusion;
      if (n.rfind("att_", 0) == 0) ++att;
    }
  }
  EXPECT_EQ(fusion, 1);
  EXPECT_EQ(att, 2);
  EXPECT_EQ(conv3, 3);
}

TEST(DepthNet, ZeroFinalConvGivesHalfDisparity) {
  const DepthNet<float> net(ModelConfig::preset(Variant::Test, 64, 32), 0);
  auto w = net.disp_conv().weight;
  auto b = net.disp_conv().bias;
  w.mutable_value().fill(0);
  b.mutable_value().fill(0);
  NoGradGuard guard;
  {
    const auto out = net.forward(Var<float>(random_image(1, 32, 64, 4)));
    for (float v : out.value().data()) EXPECT_EQ(v, 0.5f);
  }
}

TEST(DispToDepth, BoundsAndMidpoint) {
  EXPECT_NEAR(disp_to_depth(0.5, 0.1, 100), 1.0 / (0.01 + 0.5 * 9.99), 1e-15);
  EXPECT_NEAR(disp_to_depth(0.5, 0.1, 100), 0.19980, 1e-5);
  EXPECT_NEAR(disp_to_depth(1.0, 0.1, 100), 0.1, 1e-12);
  EXPECT_NEAR(disp_to_depth(0.0, 0.1, 100), 100, 1e-9);
  const auto v = disp_to_depth(V(Tensor<double>({2}, std::vector<double>{0.25, 0.75})), 0.1, 100).value();
  EXPECT_DOUBLE_EQ(v[0], disp_to_depth(0.25, 0.1, 100));
  EXPECT_DOUBLE_EQ(v[1], disp_to_depth(0.75, 0.1, 100));
}

TEST(FusionBlock, ShapeContractAndIdentityProjection) {
  Rng rng(1);
  ParameterList<double> params;
  auto blk = FusionBlock<double>::create(params, "f", 4, 6, 4, rng);
  const Tensor<double> low = random_tensor({1, 4, 6, 8}, rng), high = random_tensor({1, 6, 3, 4}, rng);
  set_identity_projection(blk.proj, 4);
  EXPECT_EQ(blk(V(low), V(high)).value(), low);
  EXPECT_THROW(blk(V(low), V(random_tensor({1, 6, 4, 4}, rng))), ShapeError);

  ParameterList<float> pf;
  const auto big = FusionBlock<float>::create(pf, "f", 48, 80, 48, rng);
  const auto y = big(Var<float>(Tensor<float>({1, 48, 48, 160})), Var<float>(Tensor<float>({1, 80, 24, 80})));
  EXPECT_EQ(y.shape(), (Shape{1, 48, 48, 160}));
}

TEST(FusionBlock, ConstantInputsMatchScalarOracle) {
  Rng rng(2);
  ParameterList<double> params;
  const auto blk = FusionBlock<double>::create(params, "f", 2, 3, 2, rng);
  const auto y = blk(V(Tensor<double>({1, 2, 4, 4}, 0.3)), V(Tensor<double>({1, 3, 2, 2}, -0.7))).value();
  const auto& w = blk.proj.weight.value();
  const auto& b = blk.proj.bias.value();
  for (std::int64_t o = 0; o < 2; ++o) {
    double expected = b[o];
    for (std::int64_t c = 0; c < 5; ++c) expected += w.at({o, c, 0, 0}) * (c < 2 ? 0.3 : -0.7);
    for (std::int64_t k = 0; k < 16; ++k) EXPECT_NEAR(y[o * 16 + k], expected, 1e-12);
  }
}

TEST(AttBlock, OpenAndClosedGates) {
  Rng rng(3);
  ParameterList<double> params;
  auto blk = AttBlock<double>::create(params, "a", 4, 4, 8, 16, 4, rng);
  set_identity_projection(blk.proj, 8);
  const Tensor<double> low = random_tensor({1, 4, 4, 6}, rng), high = random_tensor({1, 4, 2, 3}, rng);
  ParameterList<double> fp;
  auto fusion = FusionBlock<double>::create(fp, "f", 4, 4, 8, rng);
  set_identity_projection(fusion.proj, 8);
  const auto fused = fusion(V(low), V(high)).value();

  blk.expand.weight.mutable_value().fill(0);
  blk.expand.bias.mutable_value().fill(50);
  const auto open = blk(V(low), V(high)).value();
  for (std::int64_t i = 0; i < open.size(); ++i) EXPECT_NEAR(open[i], fused[i], 1e-12);

  blk.expand.bias.mutable_value().fill(-50);
  blk.proj.bias.mutable_value().fill(0.25);
  {
    const auto out = blk(V(low), V(high));
    for (double v : out.value().data()) EXPECT_NEAR(v, 0.25, 1e-12);
  }
}

TEST(AttBlock, OutputScalesWithItsGate) {
  Rng rng(4);
  ParameterList<double> params;
  auto blk = AttBlock<double>::create(params, "a", 4, 4, 8, 16, 4, rng);
  set_identity_projection(blk.proj, 8);
  const V low(random_tensor({1, 4, 4, 6}, rng)), high(random_tensor({1, 4, 2, 3}, rng));
  const auto before = blk(low, high).value();
  const std::int64_t k = 5;
  blk.expand.bias.mutable_value()[k] += 1.0;
  const auto after = blk(low, high).value();
  const std::int64_t plane = 4 * 6;
  for (std::int64_t c = 0; c < 8; ++c) {
    for (std::int64_t i = 0; i < plane; ++i) {
      const double a = before[c * plane + i], b = after[c * plane + i];
      if (c == k) {
        EXPECT_GE(std::abs(b), std::abs(a));
        if (a != 0) EXPECT_GT(b / a, 1.0);
      } else {
        EXPECT_EQ(a, b);
      }
    }
  }
}

TEST(AttBlock, ReducedChannels) {
  EXPECT_EQ(AttBlock<float>::reduced_channels(208, 16, 4), 13);
  EXPECT_EQ(AttBlock<float>::reduced_channels(40, 16, 4), 4);
}

TEST(PoseNet, ZeroHeadGivesIdentity) {
  const PoseNet<float> net(PoseNetConfig::compact(), 0);
  auto w = net.head().weight;
  auto b = net.head().bias;
  w.mutable_value().fill(0);
  b.mutable_value().fill(0);
  const PoseSE3 p = estimate_pose(net, random_image(1, 64, 128, 1).reshaped({3, 64, 128}),
                                  random_image(1, 64, 128, 2).reshaped({3, 64, 128}));
  EXPECT_EQ(p.rotation, Eigen::Matrix3d::Identity());
  EXPECT_EQ(p.translation, Eigen::Vector3d::Zero());
}

TEST(PoseNet, OutputShapeScaleAndValidity) {
  const PoseNet<float> net(PoseNetConfig{}, 1);
  NoGradGuard guard;
  const Var<float> a(random_image(2, 64, 128, 3)), b(random_image(2, 64, 128, 4));
  const auto r = net.regress(a, b);
  EXPECT_EQ(r.shape(), (Shape{2, 6}));
  for (float v : r.value().data()) EXPECT_LT(std::abs(v), 0.5f);
  EXPECT_EQ(r.value(), net.regress(a, b).value());
  const PoseSE3 p = estimate_pose(net, random_image(1, 64, 128, 6).reshaped({3, 64, 128}),
                                  random_image(1, 64, 128, 7).reshaped({3, 64, 128}));
  EXPECT_NO_THROW(p.validate());
  EXPECT_THROW(net.regress(a, Var<float>(random_image(2, 32, 128, 5))), ShapeError);
  EXPECT_THROW((PoseNetConfig{{}, 0.01}.validate()), std::invalid_argument);
  EXPECT_THROW((PoseNetConfig{{8}, 0.0}.validate()), std::invalid_argument);
}

TEST(PoseNet, ParameterNamesUsePrefix) {
  const PoseNet<float> net(PoseNetConfig::tiny(), 0);
  for (const auto& p : net.parameters().items()) EXPECT_EQ(p.name.rfind("pose/", 0), 0u) << p.name;
  EXPECT_EQ(net.parameter_count(), net.parameters().count());
}

TEST(MacCount, DoublingAreaDoublesMacs) {
  const DepthNet<float> net(ModelConfig::preset(Variant::Desk, 320, 96), 0);
  NoGradGuard guard;
  auto macs = [&](int w) {
    MacCounter counter;
    net.forward(Var<float>(Tensor<float>({1, 3, 96, w})));
    return static_cast<double>(counter.macs());
  };
  // Only the pooled context and gate layers do not scale with area.
  EXPECT_NEAR(macs(640) / macs(320), 2.0, 0.01);
}

class NetworkFd : public ::testing::TestWithParam<rtsmono::testing::FdCase> {};

TEST_P(NetworkFd, CentralDifference) {
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    const auto r = GetParam().run(seed);
    EXPECT_TRUE(r.ok()) << "seed " << seed << " max rel " << r.max_rel << " at " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(Networks, NetworkFd, ::testing::ValuesIn(rtsmono::testing::op_fd_cases("networks")),
                         [](const auto& info) { return rtsmono::testing::fd_case_name(info.param.name); });

TEST(ComposedLoss, CentralDifference) {
  const auto r = rtsmono::testing::composed_loss_fd(0, 1);
  EXPECT_TRUE(r.ok()) << "max rel " << r.max_rel << " at " << r.worst;
}
