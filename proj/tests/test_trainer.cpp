#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mobiletl/profiler.hpp"
#include "mobiletl/trainer.hpp"

using namespace mobiletl;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

ModelSpec toy(std::int64_t classes = 2) {
  ModelSpec s;
  s.input_shape = {8, 3, 16, 16};
  s.num_classes = classes;
  BlockSpec stem;
  stem.kind = BlockKind::ConvBlock;
  stem.in_ch = 3;
  stem.out_ch = 8;
  stem.kernel = 3;
  stem.stride = 2;
  stem.activation = Activation::HardSwish;
  BlockSpec b;
  b.kind = BlockKind::IRBv3;
  b.in_ch = b.out_ch = 8;
  b.expansion = 2;
  b.kernel = 3;
  b.use_se = true;
  b.activation = Activation::HardSwish;
  s.blocks = {stem, b};
  return s;
}

Parameter param(const std::string& name, std::vector<double> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return {name, Tensor::from_values({n}, v, DType::F64), true};
}

TrainConfig quick(std::int64_t steps, double lr, OptimizerKind kind = OptimizerKind::Adam) {
  TrainConfig cfg;
  cfg.opt.kind = kind;
  cfg.opt.lr = lr;
  cfg.steps = steps;
  cfg.batch_size = 8;
  cfg.seed = 4;
  return cfg;
}

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("mtl_trainer_" + name)).string();
}

}  // namespace

TEST_CASE("cosine schedule") {
  OptimizerCfg cfg;
  cfg.lr = 0.1;
  cfg.total_steps = 100;
  CHECK(cosine_lr(0, cfg) == Approx(0.1));
  CHECK(cosine_lr(100, cfg) == Approx(0.0));
  CHECK(cosine_lr(50, cfg) == Approx(0.05));
  cfg.lr_min = 0.02;
  CHECK(cosine_lr(100, cfg) == Approx(0.02));
  CHECK_THROWS_AS(cosine_lr(-1, cfg), ValueError);
  CHECK_THROWS_AS(cosine_lr(101, cfg), ValueError);
  cfg.schedule = LrSchedule::Constant;
  CHECK(scheduled_lr(70, cfg) == Approx(0.1));
}

TEST_CASE("optimizer config validation") {
  OptimizerCfg cfg;
  cfg.lr = -1;
  CHECK_THROWS_AS(validate_optimizer_cfg(cfg), ConfigError);
  cfg = {};
  cfg.beta1 = 1.0;
  CHECK_THROWS_AS(validate_optimizer_cfg(cfg), ConfigError);
  cfg = {};
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(validate_optimizer_cfg(cfg), ConfigError);
}

TEST_CASE("SGD step") {
  OptimizerCfg cfg;
  cfg.kind = OptimizerKind::SGD;
  Optimizer opt(cfg);
  auto w = param("w", {1.0});
  auto frozen = param("f", {1.0});
  frozen.trainable = false;
  GradMap g;
  g.emplace("w", Tensor::from_values({1}, {2.0}, DType::F64));
  g.emplace("f", Tensor::from_values({1}, {2.0}, DType::F64));
  opt.step({&w, &frozen}, g, 0.1);
  CHECK(w.value.get(0) == Approx(0.8));
  CHECK(frozen.value.get(0) == 1.0);
}

TEST_CASE("Adam steps") {
  Optimizer opt(OptimizerCfg{});
  auto w = param("w", {1.0, -2.0});
  GradMap zero;
  zero.emplace("w", Tensor::zeros({2}, DType::F64));
  opt.step({&w}, zero, 0.01);
  CHECK(w.value.get(0) == 1.0);
  CHECK(w.value.get(1) == -2.0);
  CHECK(opt.steps() == 1);

  Optimizer fresh(OptimizerCfg{});
  auto v = param("v", {0.5});
  GradMap one;
  one.emplace("v", Tensor::from_values({1}, {1.0}, DType::F64));
  fresh.step({&v}, one, 0.01);
  // m_hat = 1 and v_hat = 1 after bias correction, so the step is lr / (1 + eps).
  CHECK(0.5 - v.value.get(0) == Approx(0.01 / (1 + 1e-8)).epsilon(1e-12));

  GradMap wrong;
  wrong.emplace("v", Tensor::zeros({3}, DType::F64));
  CHECK_THROWS_AS(fresh.step({&v}, wrong, 0.01), StateError);
}

TEST_CASE("synthetic datasets and the TLDS format") {
  auto a = synthetic_blobs(64, 2, 7), b = synthetic_blobs(64, 2, 7);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  CHECK(synthetic_blobs(64, 2, 8).pixels != a.pixels);
  for (auto l : a.labels) CHECK(l < 2);

  const auto path = tmp_path("a.tlds");
  save_tlds(a, path);
  CHECK(fs::file_size(path) == 28 + 64 * (2 + 3 * 16 * 16 * 4));
  auto back = load_tlds(path);
  CHECK(back.count == 64);
  CHECK(back.pixels == a.pixels);
  CHECK(back.labels == a.labels);
  CHECK(back.num_classes == 2);

  std::vector<char> raw;
  {
    std::ifstream in(path, std::ios::binary);
    raw.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };
  write({raw.begin(), raw.end() - 5});
  CHECK_THROWS_AS(load_tlds(path), FormatError);
  auto magic = raw;
  magic[0] = 'Q';
  write(magic);
  CHECK_THROWS_AS(load_tlds(path), FormatError);
  auto label = raw;
  label[28] = 9;
  write(label);
  CHECK_THROWS_AS(load_tlds(path), FormatError);

  Dataset empty = a;
  empty.count = 0;
  empty.labels.clear();
  empty.pixels.clear();
  save_tlds(empty, path);
  auto e = load_tlds(path);
  CHECK(e.count == 0);
  PartitionedModel pm = apply_policy(build_model(toy(), 1), make_policy(Preset::FT_All));
  CHECK_THROWS_AS(train(pm, e, quick(5, 1e-3)), ValueError);
  fs::remove(path);
  CHECK_THROWS_AS(load_tlds(path), IoError);
}

TEST_CASE("split and batching") {
  auto ds = synthetic_blobs(100, 2, 3);
  auto s = split_dataset(ds, 1);
  CHECK(s.train.size() == 80);
  CHECK(s.eval.size() == 20);
  CHECK(split_dataset(ds, 1).train == s.train);
  auto b = make_batch(ds, {0, 5, 9});
  CHECK(b.x.shape() == Shape{3, 3, 16, 16});
  CHECK(b.labels[1] == ds.labels[5]);
}

TEST_CASE("head-only training separates blobs") {
  auto ds = synthetic_blobs(200, 2, 11);
  auto pm = apply_policy(build_model(toy(), 2), make_policy(Preset::FT_Last));
  auto cfg = quick(200, 0.01);
  auto report = train(pm, ds, cfg);
  CHECK(report.final_accuracy >= 0.95);
  CHECK(report.steps == 200);
}

TEST_CASE("lr = 0 changes nothing") {
  auto ds = synthetic_blobs(64, 2, 1);
  auto pm = apply_policy(build_model(toy(), 3), make_policy(Preset::FT_All));
  std::vector<Tensor> before;
  for (auto* p : pm.model.parameters()) before.push_back(p->value);
  auto cfg = quick(10, 0.0, OptimizerKind::SGD);
  cfg.opt.schedule = LrSchedule::Constant;
  // Full BN keeps running statistics current; compare only parameters.
  auto r = train(pm, ds, cfg);
  auto ps = pm.model.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i]->value.bitwise_equal(before[i]));

  auto fixed = make_batch(ds, {0, 1, 2, 3, 4, 5, 6, 7});
  Optimizer opt(cfg.opt);
  const double l0 = probe_loss(pm.model, fixed);
  train_step(pm.model, opt, fixed, 0.0);
  CHECK(probe_loss(pm.model, fixed) == l0);
  (void)r;
}

TEST_CASE("training is deterministic and leaves frozen weights untouched") {
  auto ds = synthetic_blobs(96, 2, 5);
  auto run = [&] {
    auto pm = apply_policy(build_model(toy(), 6), make_policy(Preset::MobileTL_KBLKs, 1));
    auto r = train(pm, ds, quick(30, 1e-3));
    return std::make_pair(r, std::move(pm));
  };
  auto [r1, m1] = run();
  auto [r2, m2] = run();
  CHECK(r1.step_loss == r2.step_loss);
  CHECK(r1.final_accuracy == r2.final_accuracy);
  CHECK(r1.peak_tape_bytes == r2.peak_tape_bytes);

  auto ref = apply_policy(build_model(toy(), 6), make_policy(Preset::MobileTL_KBLKs, 1));
  auto body = m1.model.body();
  auto ref_body = ref.model.body();
  auto bp = body[0]->parameters(), rp = ref_body[0]->parameters();
  for (std::size_t i = 0; i < bp.size(); ++i) CHECK(bp[i]->value.bitwise_equal(rp[i]->value));
}

TEST_CASE("peak tape bytes match the profiler") {
  auto ds = synthetic_blobs(100, 2, 9);
  for (auto p : {make_policy(Preset::MobileTL_KBLKs, 1), make_policy(Preset::FT_All),
                 make_policy(Preset::FT_Bias)}) {
    auto pm = apply_policy(build_model(toy(), 1), p);
    auto r = train(pm, ds, quick(12, 1e-3));
    CHECK(r.peak_tape_bytes == profile_model(toy(), p).totals.saved_act_bytes);
  }
}

TEST_CASE("small-lr loss on a fixed batch does not increase early on") {
  auto ds = synthetic_blobs(64, 2, 13);
  auto pm = apply_policy(build_model(toy(), 8), make_policy(Preset::FT_Last));
  OptimizerCfg cfg;
  cfg.kind = OptimizerKind::SGD;
  Optimizer opt(cfg);
  auto batch = make_batch(ds, {0, 1, 2, 3, 4, 5, 6, 7});
  double prev = probe_loss(pm.model, batch);
  for (int i = 0; i < 10; ++i) {
    train_step(pm.model, opt, batch, 1e-3);
    const double now = probe_loss(pm.model, batch);
    CHECK(now <= prev + 1e-12);
    prev = now;
  }
}

TEST_CASE("mismatched datasets are rejected") {
  auto pm = apply_policy(build_model(toy(2), 1), make_policy(Preset::FT_All));
  CHECK_THROWS_AS(train(pm, synthetic_blobs(32, 3, 1), quick(2, 1e-3)), ValueError);
  CHECK_THROWS_AS(train(pm, synthetic_blobs(32, 2, 1, 3, 8, 8), quick(2, 1e-3)), ValueError);
}
