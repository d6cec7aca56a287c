#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mobiletl/layers.hpp"
#include "mobiletl/policy.hpp"
#include "oracles.hpp"

using namespace mobiletl;
using doctest::Approx;

namespace {

BlockSpec irb(BlockKind kind, std::int64_t in, std::int64_t out, double exp, int stride = 1) {
  BlockSpec b;
  b.kind = kind;
  b.in_ch = in;
  b.out_ch = out;
  b.expansion = exp;
  b.kernel = 3;
  b.stride = stride;
  b.use_se = kind == BlockKind::IRBv3;
  b.activation = kind == BlockKind::IRBv3 ? Activation::HardSwish : Activation::ReLU6;
  return b;
}

ModelSpec five_blocks() {
  ModelSpec s;
  s.input_shape = {2, 3, 8, 8};
  s.num_classes = 4;
  BlockSpec stem;
  stem.kind = BlockKind::ConvBlock;
  stem.in_ch = 3;
  stem.out_ch = 8;
  stem.kernel = 3;
  stem.activation = Activation::HardSwish;
  s.blocks = {stem, irb(BlockKind::IRBv2, 8, 8, 2), irb(BlockKind::IRBv2, 8, 12, 2, 2),
              irb(BlockKind::IRBv3, 12, 12, 2), irb(BlockKind::IRBv3, 12, 16, 2)};
  return s;
}

ModelSpec single(BlockKind kind, double exp) {
  ModelSpec s;
  s.input_shape = {8, 96, 7, 7};
  auto b = irb(kind, 96, 96, exp);
  b.kernel = 5;
  s.blocks = {b};
  return s;
}

std::int64_t head_params(const ModelSpec& s) {
  return s.blocks.back().out_ch * s.num_classes + s.num_classes;
}

struct Run {
  GradMap grads;
  std::int64_t saved = 0;
  std::size_t nodes = 0;
};

Run forward_backward(PartitionedModel& pm, const Tensor& x, const std::vector<int>& labels) {
  Tape tape;
  ForwardContext ctx{&tape, true, false};
  auto loss = cross_entropy_loss(pm.model.forward(Var::make(x), ctx), labels, ctx);
  Run r;
  r.saved = tape.saved_bytes();
  r.nodes = tape.node_count();
  r.grads = tape.backward(loss);
  return r;
}

}  // namespace

TEST_CASE("policy file parsing") {
  auto p = parse_policy(R"({"preset":"mobiletl_kblks","k_blocks":3,"act_backward":"approx","quantize_frozen":true})");
  CHECK(p.preset == Preset::MobileTL_KBLKs);
  CHECK(p.k_blocks == 3);
  CHECK(p.act_backward == ActBackwardMode::ApproxSigned);
  CHECK(p.quantize_frozen);
  CHECK(parse_policy(policy_to_json(p)).k_blocks == 3);
  CHECK(parse_policy(R"({"preset":"ft_all"})").act_backward == ActBackwardMode::Exact);
  CHECK_THROWS_AS(parse_policy(R"({"preset":"nope"})"), PolicyError);
  CHECK_THROWS_AS(parse_policy(R"({"preset":"ft_all","act_backward":"sideways"})"), PolicyError);
  CHECK_THROWS_AS(parse_policy("[1,2"), PolicyError);
}

TEST_CASE("block configuration per preset") {
  auto all = resolve_block_config(make_policy(Preset::FT_All), 0, 4);
  CHECK_FALSE(all.frozen);
  CHECK(all.conv_trainable);
  CHECK(all.intermediary_bn == BNMode::Full);
  CHECK(all.act == ActBackwardMode::Exact);

  auto tl = make_policy(Preset::MobileTL_KBLKs, 2);
  CHECK(resolve_block_config(tl, 1, 4).frozen);
  CHECK(resolve_block_config(tl, 1, 4).quantize);
  auto top = resolve_block_config(tl, 3, 4);
  CHECK_FALSE(top.frozen);
  CHECK(top.intermediary_bn == BNMode::ShiftOnly);
  CHECK(top.final_bn == BNMode::Full);
  CHECK(top.act == ActBackwardMode::ApproxSigned);

  auto bias = resolve_block_config(make_policy(Preset::FT_Bias), 0, 4);
  CHECK_FALSE(bias.conv_trainable);
  CHECK(bias.final_bn == BNMode::ShiftOnly);
  CHECK(resolve_block_config(make_policy(Preset::FT_Last), 3, 4).frozen);
}

TEST_CASE("int8 quantization") {
  auto q = quantize_per_tensor_i8(Tensor::from_values({2}, {0.5, -1.0}));
  CHECK(q.scale == Approx(1.0 / 127));
  auto codes = q.values.span<std::int8_t>();
  CHECK(codes[0] == 64);
  CHECK(codes[1] == -127);
  auto d = q.dequantize();
  CHECK(d.get(0) == Approx(64.0 / 127));
  CHECK(d.get(1) == Approx(-1.0));

  auto z = quantize_per_tensor_i8(Tensor::zeros({5}));
  CHECK(z.scale == 1.0f);
  for (auto v : z.values.span<std::int8_t>()) CHECK(v == 0);

  auto t = Tensor::rand_normal({4096}, 3, 0, 2);
  auto rq = quantize_per_tensor_i8(t);
  auto back = rq.dequantize();
  double worst = 0;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    CHECK(std::abs(int{rq.values.span<std::int8_t>()[static_cast<std::size_t>(i)]}) <= 127);
    worst = std::max(worst, std::abs(back.get(i) - t.get(i)));
  }
  CHECK(worst <= rq.scale / 2 * (1 + 1e-5));

  auto bad = Tensor::from_values({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(quantize_per_tensor_i8(bad), ValueError);
  bad.set(1, INFINITY);
  CHECK_THROWS_AS(quantize_per_tensor_i8(bad), ValueError);
}

TEST_CASE("trainable parameter counts") {
  auto s = five_blocks();
  CHECK(policy_trainable_param_count(s, make_policy(Preset::FT_All)) == param_count(s));
  CHECK(policy_trainable_param_count(s, make_policy(Preset::MobileTL_KBLKs, 0)) == head_params(s));
  CHECK(policy_trainable_param_count(single(BlockKind::IRBv2, 1), make_policy(Preset::MobileTL_KBLKs, 1)) ==
        21216);
  for (auto preset : {Preset::FT_All, Preset::FT_BN, Preset::FT_Bias, Preset::FT_Last}) {
    auto pm = apply_policy(build_model(s, 1), make_policy(preset));
    CHECK(trainable_param_count(pm.model) == policy_trainable_param_count(s, make_policy(preset)));
  }
  for (int k = 0; k <= 5; ++k) {
    for (auto preset : {Preset::FT_KBLKs, Preset::MobileTL_KBLKs}) {
      auto pm = apply_policy(build_model(s, 1), make_policy(preset, k));
      CHECK(trainable_param_count(pm.model) == policy_trainable_param_count(s, make_policy(preset, k)));
    }
  }
  CHECK_THROWS_AS(apply_policy(build_model(s, 1), make_policy(Preset::MobileTL_KBLKs, 6)), PolicyError);
}

TEST_CASE("MobileTL k=3 on five blocks: bottom two frozen and quantized") {
  auto s = five_blocks();
  auto pm = apply_policy(build_model(s, 2), make_policy(Preset::MobileTL_KBLKs, 3));
  CHECK(pm.first_trainable_block == 2);
  auto body = pm.model.body();
  for (std::size_t i = 0; i < body.size(); ++i) {
    for (auto* layer : body[i]->layers()) {
      if (auto* c = dynamic_cast<Conv2dLayer*>(layer)) {
        CHECK(c->weight().trainable == (i >= 2));
        CHECK((c->weight().value.dtype() == DType::I8) == (i < 2));
      }
      if (auto* bn = dynamic_cast<BatchNormLayer*>(layer)) {
        if (i < 2) CHECK(bn->mode() == BNMode::Frozen);
        CHECK(bn->running_var().value.dtype() == DType::F32);
      }
      if (auto* a = dynamic_cast<ActivationLayer*>(layer); a && i >= 2)
        CHECK(a->mode() == ActBackwardMode::ApproxSigned);
    }
  }
}

TEST_CASE("frozen quantized blocks record nothing and stay unchanged") {
  auto s = five_blocks();
  auto pm = apply_policy(build_model(s, 3), make_policy(Preset::MobileTL_KBLKs, 0));
  auto x = Tensor::rand_normal({2, 3, 8, 8}, 4, 0, 1);
  ForwardContext ctx;
  auto y1 = pm.model.forward(Var::make(x), ctx).value();
  auto y2 = pm.model.forward(Var::make(x), ctx).value();
  CHECK(y1.bitwise_equal(y2));

  std::vector<Tensor> before;
  for (auto* p : pm.model.parameters()) before.push_back(p->value);
  auto run = forward_backward(pm, x, {0, 3});
  // Only the classifier linear layer and the loss are on the tape.
  CHECK(run.nodes == 2);
  // Saved: linear input [2,16] and the softmax probabilities [2,4].
  CHECK(run.saved == (2 * 16 + 2 * 4) * 4);
  for (const auto& [name, g] : run.grads) CHECK(name.rfind("cls.", 0) == 0);
  auto ps = pm.model.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i]->value.bitwise_equal(before[i]));
}

TEST_CASE("MobileTL tape drops intermediary BN maps and activation full maps") {
  for (auto kind : {BlockKind::IRBv2, BlockKind::IRBv3}) {
    for (double exp : {1.0, 6.0}) {
      auto s = single(kind, exp);
      s.input_shape = {2, 96, 7, 7};
      auto x = Tensor::rand_normal(s.input_shape, 5, 0, 1);
      auto measure = [&](const TrainPolicy& p) {
        auto pm = apply_policy(build_model(s, 6), p);
        Tape tape;
        ForwardContext ctx{&tape, true, false};
        pm.model.forward(Var::make(x), ctx);
        CHECK(oracle::walk_saved_bytes(tape) == tape.saved_bytes());
        return tape.saved_bytes_by_layer();
      };
      auto full = measure(make_policy(Preset::FT_All));
      auto tl = measure(make_policy(Preset::MobileTL_KBLKs, 1));
      const std::int64_t h = static_cast<std::int64_t>(96 * exp);
      const std::int64_t map = 2 * h * 49 * 4, mask1 = (2 * h * 49 + 7) / 8;
      CHECK(tl["b0.bn1"] == 0);
      CHECK(tl["b0.bn2"] == 0);
      CHECK(full["b0.bn1"] == map);
      CHECK(full["b0.bn2"] == map);
      CHECK(full["b0.bn3"] == tl["b0.bn3"]);
      CHECK(tl["b0.act1"] == mask1);
      CHECK(tl["b0.act2"] == mask1);
      CHECK(full["b0.act1"] == (kind == BlockKind::IRBv3 ? map : (2 * h * 49 * 2 + 7) / 8));
    }
  }
}

TEST_CASE("approx and exact steps agree inside the equality region") {
  // BN outputs pinned near 5 keep every ReLU6 input <= 6 and every hard-swish input >= 3.
  for (auto kind : {BlockKind::IRBv2, BlockKind::IRBv3}) {
    ModelSpec s;
    s.input_shape = {2, 8, 6, 6};
    s.num_classes = 3;
    s.blocks = {irb(kind, 8, 8, 2)};
    auto make = [&](ActBackwardMode m) {
      auto p = make_policy(Preset::MobileTL_KBLKs, 1);
      p.act_backward = m;
      auto pm = apply_policy(build_model(s, 9), p);
      for (auto* layer : pm.model.body()[0]->layers()) {
        if (auto* bn = dynamic_cast<BatchNormLayer*>(layer)) {
          bn->set_mode(BNMode::Full);
          bn->gamma().value = Tensor::full(bn->gamma().value.shape(), DType::F32, 0.01);
          bn->beta().value = Tensor::full(bn->beta().value.shape(), DType::F32, 5.0);
        }
      }
      return pm;
    };
    auto e = make(ActBackwardMode::Exact), a = make(ActBackwardMode::ApproxSigned);
    auto x = Tensor::rand_normal(s.input_shape, 10, 0, 1);
    auto ge = forward_backward(e, x, {0, 2}).grads;
    auto ga = forward_backward(a, x, {0, 2}).grads;
    REQUIRE(ge.size() == ga.size());
    for (const auto& [name, g] : ge) {
      const auto& h = ga.at(name);
      for (std::int64_t i = 0; i < g.numel(); ++i) CHECK(std::abs(g.get(i) - h.get(i)) <= 1e-6);
    }
  }
}
