#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "mobiletl/layers.hpp"
#include "mobiletl/ops.hpp"
#include "oracles.hpp"

using namespace mobiletl;
using doctest::Approx;

namespace {

constexpr auto F64 = DType::F64;

Tensor t1(std::vector<double> v, DType dt = F64) {
  const auto n = static_cast<std::int64_t>(v.size());
  return Tensor::from_values({n}, v, dt);
}

// Exact and approximate activation backward on the same input and upstream grad.
template <class Fwd, class Bwd>
std::pair<Tensor, Tensor> both_modes(const Tensor& a, const Tensor& gy, Fwd fwd, Bwd bwd) {
  auto e = fwd(a, ActBackwardMode::Exact);
  auto p = fwd(a, ActBackwardMode::ApproxSigned);
  return {bwd(gy, e.saved, e.kind, ActBackwardMode::Exact),
          bwd(gy, p.saved, p.kind, ActBackwardMode::ApproxSigned)};
}

}  // namespace

TEST_CASE("conv2d small cases") {
  auto y = conv2d_forward(Tensor::from_values({1, 1, 1, 1}, {3}, F64),
                          Tensor::from_values({1, 1, 1, 1}, {2}, F64), {});
  CHECK(y.get(0) == 6.0);

  auto dw = conv2d_forward(Tensor::full({1, 1, 3, 3}, F64, 1.0), Tensor::full({1, 1, 3, 3}, F64, 1.0),
                           ConvGeometry{1, 0, 1});
  CHECK(dw.shape() == Shape{1, 1, 1, 1});
  CHECK(dw.get(0) == 9.0);

  const auto x = Tensor::from_values({1, 1, 1, 1}, {3}, F64);
  auto g = conv2d_backward(Tensor::from_values({1, 1, 1, 1}, {1}, F64), &x,
                           Tensor::from_values({1, 1, 1, 1}, {2}, F64), {}, {1, 1, 1, 1}, true, true);
  CHECK(g.grad_x->get(0) == 2.0);
  CHECK(g.grad_w->get(0) == 3.0);
}

TEST_CASE("conv2d matches the nested-loop reference") {
  struct Case {
    Shape xs, ws;
    ConvGeometry geom;
  };
  for (const auto& c : {Case{{2, 3, 9, 9}, {4, 3, 5, 5}, {1, 2, 1}},
                        Case{{2, 3, 9, 8}, {4, 3, 5, 5}, {2, 2, 1}},
                        Case{{1, 6, 7, 7}, {6, 1, 3, 3}, {1, 1, 6}},
                        Case{{1, 6, 8, 8}, {6, 1, 5, 5}, {2, 2, 6}},
                        Case{{2, 4, 5, 5}, {8, 4, 1, 1}, {1, 0, 1}},
                        Case{{1, 4, 6, 6}, {4, 2, 3, 3}, {1, 1, 2}}}) {
    auto x = Tensor::rand_normal(c.xs, 1, 0, 1);
    auto w = Tensor::rand_normal(c.ws, 2, 0, 1);
    auto y = conv2d_forward(x, w, c.geom);
    auto ref = oracle::conv2d(x.to_vector(), c.xs, w.to_vector(), c.ws, c.geom.stride,
                              c.geom.padding, c.geom.groups);
    REQUIRE(static_cast<std::size_t>(y.numel()) == ref.size());
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::abs(y.get(static_cast<std::int64_t>(i)) - ref[i]));
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("conv2d errors") {
  CHECK_THROWS_AS(conv2d_forward(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({2, 2, 3, 3}), {}),
                  ShapeError);
  CHECK_THROWS_AS(conv2d_forward(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({3, 1, 3, 3}),
                                 ConvGeometry{1, 1, 2}),
                  ShapeError);
  CHECK_THROWS_AS(conv2d_backward(Tensor::zeros({1, 1, 4, 4}), nullptr, Tensor::zeros({1, 1, 1, 1}),
                                  {}, {1, 1, 4, 4}, true, true),
                  StateError);
}

TEST_CASE("frozen conv: grad_x flows, no grad_w, nothing saved") {
  Conv2dLayer conv("c", 2, 3, 3, 1, 1, F64);
  conv.weight().value = Tensor::rand_normal({3, 2, 3, 3}, 1, 0, 1, F64);
  conv.weight().trainable = false;
  auto x = Tensor::rand_normal({1, 2, 4, 4}, 2, 0, 1, F64);
  auto run = oracle::run_layer(conv, x, Tensor::rand_normal({1, 3, 4, 4}, 3, 0, 1, F64));
  CHECK(run.grads.empty());
  REQUIRE(run.grad_x);
  CHECK(run.saved_bytes == 0);
}

TEST_CASE("depthwise 2x2 conv matches finite differences") {
  Conv2dLayer conv("dw", 3, 3, 2, 1, 3, F64);
  conv.weight().value = Tensor::rand_normal({3, 1, 2, 2}, 4, 0, 1, F64);
  auto x = Tensor::rand_normal({2, 3, 5, 5}, 5, 0, 1, F64);
  ForwardContext probe;
  const Shape ys = conv.forward(Var::make(x), probe).value().shape();
  auto r = Tensor::rand_normal(ys, 6, 0, 1, F64);
  auto run = oracle::run_layer(conv, x, r);
  auto f = [&] { return oracle::layer_objective(conv, x, r); };
  CHECK(oracle::rel_err(run.grads.at("dw.weight").to_vector(),
                        oracle::numeric_grad(f, conv.weight().value)) <= 1e-5);
  CHECK(oracle::rel_err(run.grad_x->to_vector(), oracle::numeric_grad(f, x)) <= 1e-5);
}

TEST_CASE("batch norm eval forward") {
  const double eps = 1e-5;
  auto y = batch_norm_eval(Tensor::from_values({1, 1, 1, 1}, {2}, F64), t1({3}), t1({0.5}), t1({1}),
                           t1({1 - eps}), eps);
  CHECK(y.get(0) == Approx(3.5).epsilon(1e-12));
  auto x = Tensor::rand_normal({2, 3, 2, 2}, 1, 0, 1, F64);
  auto id = batch_norm_eval(x, t1({1, 1, 1}), t1({0, 0, 0}), t1({0, 0, 0}), t1({1, 1, 1}), 1e-12);
  CHECK(oracle::rel_err(id.to_vector(), x.to_vector()) <= 1e-9);
  CHECK_THROWS_AS(batch_norm_eval(x, t1({1}), t1({0}), t1({0}), t1({1}), eps), ShapeError);
}

TEST_CASE("shift-only batch norm") {
  BatchNormLayer bn("bn", LayerRole::IntermediaryNorm, 1, F64);
  bn.set_mode(BNMode::ShiftOnly);
  bn.gamma().value = t1({2});
  bn.running_var().value = t1({1 - bn.eps()});
  auto x = Tensor::from_values({2, 1, 1, 1}, {0.3, -0.7}, F64);
  auto run = oracle::run_layer(bn, x, Tensor::full({2, 1, 1, 1}, F64, 1.0));
  CHECK(run.saved_bytes == 0);
  CHECK(run.grads.count("bn.gamma") == 0);
  CHECK(run.grads.at("bn.beta").get(0) == Approx(2.0));
  CHECK(run.grad_x->get(0) == Approx(2.0).epsilon(1e-9));
  CHECK(run.grad_x->get(1) == Approx(2.0).epsilon(1e-9));
}

TEST_CASE("frozen batch norm saves nothing and trains nothing") {
  BatchNormLayer bn("bn", LayerRole::IntermediaryNorm, 3, F64);
  bn.set_mode(BNMode::Frozen);
  auto x = Tensor::rand_normal({2, 3, 4, 4}, 1, 0, 1, F64);
  auto run = oracle::run_layer(bn, x, Tensor::rand_normal({2, 3, 4, 4}, 2, 0, 1, F64));
  CHECK(run.saved_bytes == 0);
  CHECK(run.grads.empty());
  REQUIRE(run.grad_x);
}

TEST_CASE("full batch norm matches finite differences and saves one map") {
  BatchNormLayer bn("bn", LayerRole::FinalNorm, 2, F64);
  bn.gamma().value = t1({1.3, 0.7});
  bn.beta().value = t1({0.1, -0.2});
  auto x = Tensor::rand_normal({4, 2, 1, 1}, 3, 0, 1, F64);
  auto r = Tensor::rand_normal({4, 2, 1, 1}, 4, 0, 1, F64);
  auto run = oracle::run_layer(bn, x, r);
  CHECK(run.saved_bytes == 8 * 8);
  auto f = [&] { return oracle::layer_objective(bn, x, r); };
  CHECK(oracle::rel_err(run.grad_x->to_vector(), oracle::numeric_grad(f, x)) <= 1e-5);
  CHECK(oracle::rel_err(run.grads.at("bn.gamma").to_vector(),
                        oracle::numeric_grad(f, bn.gamma().value)) <= 1e-5);
  CHECK(oracle::rel_err(run.grads.at("bn.beta").to_vector(),
                        oracle::numeric_grad(f, bn.beta().value)) <= 1e-5);
}

TEST_CASE("full batch norm updates running statistics") {
  BatchNormLayer bn("bn", LayerRole::FinalNorm, 1, DType::F32);
  ForwardContext ctx{nullptr, true, true};
  bn.forward(Var::make(Tensor::from_values({2, 1, 1, 1}, {1, 3})), ctx);
  CHECK(bn.running_mean().value.get(0) == Approx(0.2));
  ForwardContext eval{nullptr, false, true};
  bn.forward(Var::make(Tensor::from_values({2, 1, 1, 1}, {1, 3})), eval);
  CHECK(bn.running_mean().value.get(0) == Approx(0.2));
}

TEST_CASE("relu6 forward, masks and backward") {
  auto f = relu6_forward(t1({-1, 3, 7, 0, 6}), ActBackwardMode::Exact);
  CHECK(f.y.to_vector() == std::vector<double>{0, 3, 6, 0, 6});
  CHECK(f.kind == SavedKind::Mask2);

  auto a = Tensor::zeros({37632});
  CHECK(relu6_forward(a, ActBackwardMode::Exact).saved.nbytes() == 9408);
  CHECK(relu6_forward(a, ActBackwardMode::ApproxSigned).saved.nbytes() == 4704);

  auto [e, p] = both_modes(t1({7, -2}), t1({5, 5}), relu6_forward, relu6_backward);
  CHECK(e.to_vector() == std::vector<double>{0, 0});
  CHECK(p.to_vector() == std::vector<double>{5, 0});

  auto approx = relu6_forward(t1({1}), ActBackwardMode::ApproxSigned);
  CHECK_THROWS_AS(relu6_backward(t1({1}), approx.saved, approx.kind, ActBackwardMode::Exact),
                  StateError);
}

TEST_CASE("relu6 exact and approx agree whenever max(a) <= 6") {
  std::vector<double> grid;
  for (double v = -8; v <= 6.0001; v += 0.25) grid.push_back(v);
  auto gy = Tensor::rand_normal({static_cast<std::int64_t>(grid.size())}, 1, 0, 1, F64);
  auto [e, p] = both_modes(t1(grid), gy, relu6_forward, relu6_backward);
  CHECK(e.to_vector() == p.to_vector());
}

TEST_CASE("hard-swish forward and backward") {
  auto f = hardswish_forward(t1({0, 3, -3, 1, 5}), ActBackwardMode::Exact);
  CHECK(f.y.get(0) == 0);
  CHECK(f.y.get(1) == Approx(3));
  CHECK(f.y.get(2) == 0);
  CHECK(f.y.get(3) == Approx(4.0 / 6));
  CHECK(f.y.get(4) == Approx(5));

  auto a = Tensor::zeros({37632});
  CHECK(hardswish_forward(a, ActBackwardMode::Exact).saved.nbytes() == 150528);
  CHECK(hardswish_forward(a, ActBackwardMode::ApproxSigned).saved.nbytes() == 4704);

  auto ex = hardswish_forward(t1({1}), ActBackwardMode::Exact);
  CHECK(hardswish_backward(t1({1}), ex.saved, ex.kind, ActBackwardMode::Exact).get(0) ==
        Approx(5.0 / 6));
  auto [e, p] = both_modes(t1({-0.5, 0.5}), t1({2, 2}), hardswish_forward, hardswish_backward);
  CHECK(p.to_vector() == std::vector<double>{0, 2});
  (void)e;
}

TEST_CASE("hard-swish exact and approx agree whenever min|a| >= 3") {
  std::vector<double> grid;
  for (double v = 3; v <= 9; v += 0.125) {
    grid.push_back(v);
    grid.push_back(-v);
  }
  auto gy = Tensor::rand_normal({static_cast<std::int64_t>(grid.size())}, 2, 0, 1, F64);
  auto [e, p] = both_modes(t1(grid), gy, hardswish_forward, hardswish_backward);
  CHECK(oracle::rel_err(e.to_vector(), p.to_vector()) <= 1e-12);
}

TEST_CASE("hard-sigmoid") {
  auto f = hardsigmoid_forward(t1({3, -3, 0}));
  CHECK(f.y.to_vector() == std::vector<double>{1, 0, 0.5});
  auto g = hardsigmoid_forward(t1({0}));
  CHECK(hardsigmoid_backward(t1({6}), g.saved).get(0) == Approx(1));

  HardSigmoidLayer hs("hs");
  auto x = Tensor::rand_uniform({3, 5}, 7, -2.9, 2.9, F64);
  auto r = Tensor::rand_normal({3, 5}, 8, 0, 1, F64);
  auto run = oracle::run_layer(hs, x, r);
  auto obj = [&] { return oracle::layer_objective(hs, x, r); };
  CHECK(oracle::rel_err(run.grad_x->to_vector(), oracle::numeric_grad(obj, x)) <= 1e-5);
}

TEST_CASE("squeeze-excite") {
  SqueezeExciteLayer zero("se", 8, 4, F64);
  auto x = Tensor::rand_normal({2, 8, 3, 3}, 1, 0, 1, F64);
  ForwardContext ctx;
  auto y = zero.forward(Var::make(x), ctx);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.value().get(i) == Approx(x.get(i) / 2));

  std::int64_t n = 0;
  SqueezeExciteLayer se96("se", 96, 4, DType::F32);
  for (auto* p : se96.parameters()) n += p->value.numel();
  CHECK(n == 4728);

  CHECK_THROWS_AS(SqueezeExciteLayer("bad", 6, 4, F64), ShapeError);

  // Random small weights keep the gate and ReLU away from their kinks for this seed.
  SqueezeExciteLayer se("se", 4, 2, F64);
  std::uint64_t seed = 20;
  for (auto* p : se.parameters()) p->value = Tensor::rand_normal(p->value.shape(), seed++, 0, 0.5, F64);
  auto xs = Tensor::rand_normal({2, 4, 3, 3}, 30, 0.3, 1, F64);
  auto r = Tensor::rand_normal({2, 4, 3, 3}, 31, 0, 1, F64);
  auto run = oracle::run_layer(se, xs, r);
  auto obj = [&] { return oracle::layer_objective(se, xs, r); };
  CHECK(oracle::rel_err(run.grad_x->to_vector(), oracle::numeric_grad(obj, xs)) <= 1e-5);
  for (auto* p : se.parameters())
    CHECK(oracle::rel_err(run.grads.at(p->name).to_vector(), oracle::numeric_grad(obj, p->value)) <=
          1e-5);
}

TEST_CASE("linear, pooling, residual and cross entropy") {
  LinearLayer lin("fc", 5, 3, true, F64);
  lin.weight().value = Tensor::rand_normal({3, 5}, 1, 0, 1, F64);
  lin.bias()->value = Tensor::rand_normal({3}, 2, 0, 1, F64);
  auto x = Tensor::rand_normal({4, 5}, 3, 0, 1, F64);
  auto r = Tensor::rand_normal({4, 3}, 4, 0, 1, F64);
  auto run = oracle::run_layer(lin, x, r);
  auto obj = [&] { return oracle::layer_objective(lin, x, r); };
  CHECK(oracle::rel_err(run.grads.at("fc.weight").to_vector(),
                        oracle::numeric_grad(obj, lin.weight().value)) <= 1e-5);
  CHECK(oracle::rel_err(run.grads.at("fc.bias").to_vector(),
                        oracle::numeric_grad(obj, lin.bias()->value)) <= 1e-5);
  CHECK(oracle::rel_err(run.grad_x->to_vector(), oracle::numeric_grad(obj, x)) <= 1e-5);

  GlobalAvgPoolLayer gap("gap");
  auto px = Tensor::rand_normal({2, 3, 4, 4}, 5, 0, 1, F64);
  auto pr = Tensor::rand_normal({2, 3}, 6, 0, 1, F64);
  auto prun = oracle::run_layer(gap, px, pr);
  CHECK(prun.saved_bytes == 0);
  CHECK(prun.grad_x->get(0) == Approx(pr.get(0) / 16));

  for (int k : {2, 5, 10}) {
    auto ce = softmax_cross_entropy(Tensor::zeros({3, k}, F64), {0, 1, 1});
    CHECK(ce.loss.get(0) == Approx(std::log(k)));
  }
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor::zeros({2, 3}, F64), {0, 3}), ValueError);
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor::zeros({2, 3}, F64), {0, -1}), ValueError);

  Tape tape;
  ForwardContext ctx{&tape, true, false};
  auto a = Var::make(Tensor::rand_normal({2, 3}, 7, 0, 1, F64), true);
  auto b = Var::make(Tensor::rand_normal({2, 3}, 8, 0, 1, F64), true);
  auto s = residual_add(a, b, ctx, "add");
  CHECK(tape.saved_bytes() == 0);
  auto seed = Tensor::rand_normal({2, 3}, 9, 0, 1, F64);
  tape.backward(s, seed);
  CHECK(tape.grad_of(a)->bitwise_equal(seed));
  CHECK(tape.grad_of(b)->bitwise_equal(seed));
}

TEST_CASE("activation layers save the documented bytes") {
  auto x = Tensor::rand_normal({8, 96, 7, 7}, 1, 0, 2);
  auto r = Tensor::rand_normal({8, 96, 7, 7}, 2, 0, 1);
  ActivationLayer re("r", ActivationKind::ReLU6, ActBackwardMode::Exact);
  CHECK(oracle::run_layer(re, x, r).saved_bytes == 9408);
  re.set_mode(ActBackwardMode::ApproxSigned);
  CHECK(oracle::run_layer(re, x, r).saved_bytes == 4704);
  ActivationLayer hs("h", ActivationKind::HardSwish, ActBackwardMode::Exact);
  CHECK(oracle::run_layer(hs, x, r).saved_bytes == 150528);
  hs.set_mode(ActBackwardMode::ApproxSigned);
  CHECK(oracle::run_layer(hs, x, r).saved_bytes == 4704);
}
