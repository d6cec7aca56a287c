#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mobiletl/layers.hpp"
#include "mobiletl/tape.hpp"
#include "mobiletl/tensor.hpp"
#include "oracles.hpp"

using namespace mobiletl;

TEST_CASE("full fills every element") {
  auto z = Tensor::full({2, 2}, DType::F32, 0.0);
  CHECK(z.numel() == 4);
  for (auto v : z.to_vector()) CHECK(v == 0.0);
  auto o = Tensor::full({3}, DType::F32, 1.0);
  CHECK(o.to_vector() == std::vector<double>{1, 1, 1});
  auto big = Tensor::full({8, 96, 7, 7}, DType::F32, 0.0);
  CHECK(big.numel() == 37632);
  CHECK(big.nbytes() == 150528);
}

TEST_CASE("full rejects bad shapes and fills") {
  CHECK_THROWS_AS(Tensor::full({2, 0}, DType::F32, 0.0), ShapeError);
  CHECK_THROWS_AS(Tensor::full({-1}, DType::F32, 0.0), ShapeError);
  CHECK_THROWS_AS(Tensor::full({}, DType::F32, 0.0), ShapeError);
  CHECK_THROWS_AS(Tensor::full({4}, DType::Bit1, 2.0), ValueError);
  CHECK_THROWS_AS(Tensor::full({4}, DType::Bit2, 4.0), ValueError);
  CHECK_THROWS_AS(Tensor::full({4}, DType::I8, 300.0), ValueError);
  CHECK(Tensor::full({4}, DType::Bit2, 3.0).get(3) == 3.0);
}

TEST_CASE("packed masks round up to whole bytes") {
  CHECK(Tensor({37632}, DType::Bit1).nbytes() == 4704);
  CHECK(Tensor({37632}, DType::Bit2).nbytes() == 9408);
  CHECK(Tensor({9}, DType::Bit1).nbytes() == 2);
  CHECK(Tensor({5}, DType::Bit2).nbytes() == 2);
  Tensor m({11}, DType::Bit2);
  for (int i = 0; i < 11; ++i) m.set(i, i % 4);
  for (int i = 0; i < 11; ++i) CHECK(m.get(i) == i % 4);
}

TEST_CASE("rand_normal is deterministic and well behaved") {
  auto a = Tensor::rand_normal({64}, 9, 0, 1);
  auto b = Tensor::rand_normal({64}, 9, 0, 1);
  CHECK(a.bitwise_equal(b));
  CHECK_FALSE(a.bitwise_equal(Tensor::rand_normal({64}, 10, 0, 1)));
  auto c = Tensor::rand_normal({16}, 1, 2.5, 0);
  for (auto v : c.to_vector()) CHECK(v == 2.5);
  auto d = Tensor::rand_normal({10000}, 1, 0, 1);
  double mean = 0;
  for (auto v : d.to_vector()) mean += v;
  mean /= 10000;
  CHECK(std::abs(mean) <= 0.05);
  CHECK_THROWS_AS(Tensor::rand_normal({4}, 1, 0, -1), ValueError);
}

TEST_CASE("saved byte widths") {
  CHECK(saved_bytes_for(SavedKind::FullMap, DType::F32, 37632) == 150528);
  CHECK(saved_bytes_for(SavedKind::FullMap, DType::F64, 10) == 80);
  CHECK(saved_bytes_for(SavedKind::Mask1, DType::F32, 37632) == 4704);
  CHECK(saved_bytes_for(SavedKind::Mask2, DType::F32, 37632) == 9408);
  CHECK(saved_bytes_for(SavedKind::SmallVector, DType::F32, 24) == 96);
  CHECK(saved_bytes_for(SavedKind::NormStats, DType::F32, 24) == 96);
  CHECK(saved_bytes_for(SavedKind::Mask1, DType::F32, 1) == 1);
}

TEST_CASE("tape byte accounting and dedup") {
  Tape empty;
  CHECK(empty.saved_bytes() == 0);

  Tape t;
  auto v = Var::make(Tensor::zeros({8, 96, 7, 7}), true);
  t.save(v, SavedKind::FullMap);
  CHECK(t.saved_bytes() == 150528);
  t.save(v, SavedKind::FullMap);
  CHECK(t.saved_bytes() == 150528);
  t.save_new(Tensor({37632}, DType::Bit1), SavedKind::Mask1);
  CHECK(t.saved_bytes() == 150528 + 4704);
  CHECK(oracle::walk_saved_bytes(t) == t.saved_bytes());
}

TEST_CASE("scalar linear: d(w*x)/dw = x") {
  LinearLayer lin("l", 1, 1, false, DType::F64);
  lin.weight().value.set(0, 2.0);
  Tape tape;
  ForwardContext ctx{&tape, true, false};
  auto x = Var::make(Tensor::from_values({1, 1}, {3.0}, DType::F64));
  auto y = lin.forward(x, ctx);
  CHECK(y.value().get(0) == doctest::Approx(6.0));
  auto g = tape.backward(y);
  REQUIRE(g.count("l.weight"));
  CHECK(g.at("l.weight").get(0) == doctest::Approx(3.0));
}

TEST_CASE("backward contract") {
  LinearLayer lin("l", 2, 3, true, DType::F64);
  auto x = Var::make(Tensor::rand_normal({4, 2}, 1, 0, 1, DType::F64));

  SUBCASE("frozen parameters give an empty map") {
    for (auto* p : lin.parameters()) p->trainable = false;
    Tape tape;
    ForwardContext ctx{&tape, true, false};
    auto y = lin.forward(x, ctx);
    CHECK(tape.node_count() == 0);
    CHECK(tape.backward(y, Tensor::full({4, 3}, DType::F64, 1.0)).empty());
  }
  SUBCASE("second backward is a state error") {
    Tape tape;
    ForwardContext ctx{&tape, true, false};
    auto y = lin.forward(x, ctx);
    auto seed = Tensor::full({4, 3}, DType::F64, 1.0);
    tape.backward(y, seed);
    CHECK_THROWS_AS(tape.backward(y, seed), StateError);
  }
  SUBCASE("non-scalar loss is a shape error") {
    Tape tape;
    ForwardContext ctx{&tape, true, false};
    auto y = lin.forward(x, ctx);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
  }
}

TEST_CASE("two-layer linear net matches finite differences") {
  LinearLayer a("a", 3, 4, true, DType::F64), b("b", 4, 2, true, DType::F64);
  a.weight().value = Tensor::rand_normal({4, 3}, 2, 0, 1, DType::F64);
  b.weight().value = Tensor::rand_normal({2, 4}, 3, 0, 1, DType::F64);
  a.bias()->value = Tensor::rand_normal({4}, 4, 0, 1, DType::F64);
  auto xin = Tensor::rand_normal({5, 3}, 5, 0, 1, DType::F64);
  auto r = Tensor::rand_normal({5, 2}, 6, 0, 1, DType::F64);

  auto objective = [&] {
    ForwardContext ctx;
    auto h = a.forward(Var::make(xin), ctx);
    return oracle::dot(b.forward(h, ctx).value(), r);
  };
  Tape tape;
  ForwardContext ctx{&tape, true, false};
  auto xv = Var::make(xin, true);
  auto y = b.forward(a.forward(xv, ctx), ctx);
  auto grads = tape.backward(y, r);
  auto gx = tape.grad_of(xv);
  REQUIRE(gx);

  for (auto* p : {&a.weight(), a.bias(), &b.weight(), b.bias()}) {
    auto num = oracle::numeric_grad(objective, p->value);
    CHECK(oracle::rel_err(grads.at(p->name).to_vector(), num) <= 1e-5);
  }
  auto num_x = oracle::numeric_grad(objective, xin);
  CHECK(oracle::rel_err(gx->to_vector(), num_x) <= 1e-5);
}

TEST_CASE("saved buffers are released by backward") {
  LinearLayer lin("l", 4, 4, false, DType::F32);
  Tape tape;
  ForwardContext ctx{&tape, true, false};
  auto y = lin.forward(Var::make(Tensor::rand_normal({2, 4}, 1, 0, 1)), ctx);
  CHECK(tape.live_bytes() > 0);
  tape.backward(y, Tensor::full({2, 4}, DType::F32, 1.0));
  CHECK(tape.live_bytes() == 0);
  CHECK(tape.saved_bytes() == 2 * 4 * 4);
}

TEST_CASE("identical seeds give bitwise identical gradients") {
  auto run = [] {
    LinearLayer lin("l", 6, 3, true, DType::F32);
    lin.weight().value = Tensor::rand_normal({3, 6}, 11, 0, 1);
    Tape tape;
    ForwardContext ctx{&tape, true, false};
    auto y = lin.forward(Var::make(Tensor::rand_normal({4, 6}, 12, 0, 1)), ctx);
    return tape.backward(y, Tensor::rand_normal({4, 3}, 13, 0, 1)).at("l.weight");
  };
  CHECK(run().bitwise_equal(run()));
}
