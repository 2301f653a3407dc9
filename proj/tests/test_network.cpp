#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "sbnet/analysis.hpp"
#include "sbnet/network.hpp"

using namespace sbnet;

namespace {

NetworkConfig toy(bool sb, Family family = Family::cifar_regular, int depth = 8) {
  NetworkConfig c;
  c.family = family;
  c.depth = depth;
  c.input_hw = 8;
  c.widths = {4, 8, 8};
  c.sb.enabled = sb;
  return c;
}

std::vector<int> labels_for(std::int64_t n, int classes) {
  std::vector<int> l;
  for (std::int64_t i = 0; i < n; ++i) l.push_back(static_cast<int>(i % classes));
  return l;
}

}  // namespace

TEST(Plan, CifarRegularDepth20) {
  const NetworkPlan p = plan(preset("rn20"));
  ASSERT_EQ(p.blocks.size(), 9u);
  EXPECT_EQ(p.stem.in_channels, 3);
  EXPECT_EQ(p.stem.out_channels, 16);
  EXPECT_EQ(p.stem.kernel, 3);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(p.stage_of_block[i], static_cast<int>(i / 3) + 1);
    EXPECT_EQ(p.blocks[i].kind, BlockKind::rRB);
    EXPECT_EQ(p.blocks[i].stride, (i == 3 || i == 6) ? 2 : 1);
  }
  EXPECT_EQ(p.blocks[3].shortcut, Shortcut::zero_pad_identity);
  EXPECT_EQ(p.head_channels, 64);
}

TEST(Plan, CifarBottleneckDepth29) {
  const NetworkPlan p = plan(preset("crn29"));
  ASSERT_EQ(p.blocks.size(), 9u);
  for (const BlockSpec& b : p.blocks) {
    EXPECT_EQ(b.kind, BlockKind::cRB);
    EXPECT_EQ(b.bottleneck, 4);
  }
  EXPECT_EQ(p.blocks[0].channels, 64);
  EXPECT_EQ(p.blocks[0].inner_width(), 16);
}

TEST(Plan, SbnLeavesStridedBlocksRegular) {
  const NetworkPlan p = plan(preset("sbn20"));
  for (const BlockSpec& b : p.blocks) {
    if (b.stride == 2) EXPECT_EQ(b.kind, BlockKind::rRB);
    else {
      EXPECT_EQ(b.kind, BlockKind::rSB);
      EXPECT_EQ(b.pattern, make_pattern("2/4"));
    }
  }
}

TEST(Plan, ToSbTransform) {
  BlockSpec r;
  r.channels = r.in_channels = 16;
  const BlockSpec s = to_sb(r, make_pattern("2/4"));
  EXPECT_EQ(s.kind, BlockKind::rSB);
  EXPECT_EQ(s.channels, 16);
  BlockSpec c;
  c.kind = BlockKind::cRB;
  c.in_channels = c.channels = 64;
  const BlockSpec cs = to_sb(c, make_pattern("2/4"));
  EXPECT_EQ(cs.kind, BlockKind::cSB);
  EXPECT_EQ(cs.sb_mid_width(), 8);
  BlockSpec strided = r;
  strided.stride = 2;
  strided.channels = 32;
  strided.shortcut = Shortcut::zero_pad_identity;
  EXPECT_EQ(to_sb(strided, make_pattern("2/4")).kind, BlockKind::rRB);
}

TEST(Plan, InvalidConfigs) {
  NetworkConfig c;
  c.depth = 21;
  EXPECT_THROW(plan(c), std::invalid_argument);
  c.family = Family::imagenet_regular;
  c.depth = 50;
  EXPECT_THROW(plan(c), std::invalid_argument);
  EXPECT_THROW(preset("rn"), std::invalid_argument);
  EXPECT_THROW(preset("vgg16"), std::invalid_argument);
  EXPECT_THROW(preset("sbn20:9/4"), std::invalid_argument);
}

TEST(Plan, PresetsAndJsonRoundTrip) {
  for (const std::string& name : preset_names()) {
    const NetworkConfig c = preset(name);
    const NetworkConfig back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c)) << name;
  }
  EXPECT_EQ(preset("sbn20:3/4").sb.pattern, "3/4");
  EXPECT_THROW(config_from_json(nlohmann::json{{"depth", 20}}), std::invalid_argument);
}

TEST(Network, LogitsShapeDepth20) {
  Rng rng(0);
  Network net = Network::build(preset("rn20"), rng);
  Rng data(1);
  const Tensor4 x = fill_random(net.input_shape(2), data, Gaussian{});
  EXPECT_EQ(net.forward(x, Mode::eval).shape(), (Shape4{2, 10, 1, 1}));
  EXPECT_THROW(net.forward(zeros({2, 3, 16, 16}), Mode::eval), ShapeError);
}

TEST(Network, EvalIsDeterministic) {
  Rng rng(2);
  Network net = Network::build(toy(true), rng);
  Rng data(3);
  const Tensor4 x = fill_random(net.input_shape(3), data, Gaussian{});
  EXPECT_TRUE(bitwise_equal(net.forward(x, Mode::eval), net.forward(x, Mode::eval)));
}

TEST(Network, ParametersAreUniqueAndCounted) {
  for (const char* name : {"rn20", "sbn20", "crn29", "csbn29"}) {
    Rng rng(4);
    Network net = Network::build(preset(name), rng);
    std::set<const Tensor4*> seen;
    std::set<std::string> names;
    for (const ParamRef& p : net.parameters()) {
      EXPECT_TRUE(seen.insert(p.value).second) << p.name;
      EXPECT_TRUE(names.insert(p.name).second) << p.name;
      EXPECT_EQ(p.value->shape(), p.grad->shape()) << p.name;
    }
    EXPECT_EQ(net.param_count(), count_params(preset(name)).total_params()) << name;
  }
}

TEST(Network, ExecutedMacsMatchCostModel) {
  for (bool sb : {false, true})
    for (Family f : {Family::cifar_regular, Family::cifar_bottleneck}) {
      const NetworkConfig c = toy(sb, f, f == Family::cifar_regular ? 14 : 20);
      Rng rng(5);
      Network net = Network::build(c, rng);
      const Tensor4 x = fill_random(net.input_shape(1), rng, Gaussian{});
      MacCounter counter;
      (void)net.forward(x, Mode::eval);
      EXPECT_EQ(counter.count(), count_flops(c).total_macs()) << to_json(c).dump();
    }
}

TEST(Network, GradcheckToyDepth8) {
  for (bool sb : {false, true}) {
    Rng rng(6);
    Network net = Network::build(toy(sb), rng);
    const Tensor4 x = fill_random(net.input_shape(4), rng, Gaussian{});
    const auto labels = labels_for(4, 10);
    const GradcheckReport r = gradcheck_network(net, x, labels, {1e-5, 6, 7});
    for (const auto& e : r.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.name << (sb ? " sb" : "");
  }
}

TEST(Network, GradcheckBottleneckToy) {
  Rng rng(8);
  Network net = Network::build(toy(true, Family::cifar_bottleneck, 11), rng);
  const Tensor4 x = fill_random(net.input_shape(3), rng, Gaussian{});
  const auto labels = labels_for(3, 10);
  const GradcheckReport r = gradcheck_network(net, x, labels, {1e-5, 6, 9});
  EXPECT_LT(r.max_rel_error(), 1e-4);
}

TEST(Network, CheckpointRoundTrip) {
  Rng rng(10);
  Network net = Network::build(toy(true), rng);
  const Tensor4 x = fill_random(net.input_shape(2), rng, Gaussian{});
  (void)net.forward(x, Mode::train);  // move running statistics off their defaults
  const auto dir = std::filesystem::temp_directory_path() / "sbnet_ckpt_test";
  std::filesystem::remove_all(dir);
  net.save(dir);
  Network back = Network::load(dir);
  EXPECT_TRUE(bitwise_equal(net.forward(x, Mode::eval), back.forward(x, Mode::eval)));
  std::filesystem::remove_all(dir);
  EXPECT_THROW(Network::load(dir), FormatError);
}

TEST(Network, BackwardNeedsForward) {
  Rng rng(11);
  Network net = Network::build(toy(false), rng);
  EXPECT_THROW(net.backward(zeros({1, 10, 1, 1})), std::logic_error);
}

TEST(Network, ImagenetShapes) {
  Rng rng(12);
  NetworkConfig c = preset("sbn-imagenet18");
  c.input_hw = 64;
  c.widths = {4, 4, 8, 8};
  c.num_classes = 7;
  Network net = Network::build(c, rng);
  const Tensor4 x = fill_random(net.input_shape(1), rng, Gaussian{});
  MacCounter counter;
  EXPECT_EQ(net.forward(x, Mode::eval).shape(), (Shape4{1, 7, 1, 1}));
  EXPECT_EQ(counter.count(), count_flops(c).total_macs());
}
