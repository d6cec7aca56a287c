#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "json.hpp"
#include "mobiletl/profiler.hpp"
#include "mobiletl/report.hpp"

using namespace mobiletl;

namespace {

BlockSpec table_block(BlockKind kind, double exp = 1) {
  BlockSpec b;
  b.kind = kind;
  b.in_ch = b.out_ch = 96;
  b.expansion = exp;
  b.kernel = 5;
  b.use_se = kind == BlockKind::IRBv3;
  b.activation = kind == BlockKind::IRBv3 ? Activation::HardSwish
                 : kind == BlockKind::IRBv2 ? Activation::ReLU6
                                            : Activation::None;
  return b;
}

ModelSpec table_spec(BlockKind kind, double exp = 1) {
  ModelSpec s;
  s.input_shape = {8, 96, 7, 7};
  s.input_requires_grad = true;
  s.blocks = {table_block(kind, exp)};
  return s;
}

ModelSpec stack(int depth, int classes = 4) {
  ModelSpec s;
  s.input_shape = {2, 8, 10, 10};
  s.num_classes = classes;
  for (int i = 0; i < depth; ++i) {
    BlockSpec b;
    b.kind = i % 2 ? BlockKind::IRBv3 : BlockKind::IRBv2;
    b.in_ch = b.out_ch = 8;
    b.expansion = 3;
    b.kernel = 3;
    b.use_se = b.kind == BlockKind::IRBv3;
    b.activation = b.use_se ? Activation::HardSwish : Activation::ReLU6;
    s.blocks.push_back(b);
  }
  return s;
}

bool within(double got, double want, double tol) { return std::abs(got - want) <= tol * want; }

std::int64_t train_flops(const ProfileReport& r) { return r.totals.fwd_flops + r.totals.bwd_flops; }

}  // namespace

TEST_CASE("reference block costs") {
  struct Row {
    BlockKind kind;
    std::int64_t params;
    double mflops, mb;
  };
  for (const auto& row : {Row{BlockKind::ConvBlock, 230592, 541.67, 0.306},
                          Row{BlockKind::IRBv2, 21408, 51.56, 0.913},
                          Row{BlockKind::IRBv3, 26136, 52.91, 1.362}}) {
    auto r = profile_model(table_spec(row.kind), make_policy(Preset::FT_All));
    CHECK(r.total_params == row.params);
    CHECK(r.trainable_params == row.params);
    CHECK(within(static_cast<double>(train_flops(r)) / 1e6, row.mflops, 0.05));
    CHECK(within(static_cast<double>(r.totals.saved_act_bytes) / 1e6, row.mb, 0.10));
  }
}

TEST_CASE("conv rows follow the MAC formula") {
  auto r = profile_model(table_spec(BlockKind::ConvBlock), make_policy(Preset::FT_All));
  const std::int64_t fwd = 2LL * 25 * 96 * 96 * 7 * 7 * 8;
  CHECK(r.rows.front().layer_id == "b0.conv");
  CHECK(r.rows.front().fwd_flops == fwd);
  CHECK(r.rows.front().bwd_flops == 2 * fwd);
  CHECK(r.rows.front().param_bytes == 230400 * 4);

  // Without an upstream gradient the first conv only computes its weight gradient.
  auto s = table_spec(BlockKind::ConvBlock);
  s.input_requires_grad = false;
  CHECK(profile_model(s, make_policy(Preset::FT_All)).rows.front().bwd_flops == fwd);
}

TEST_CASE("totals are the sum of the rows") {
  for (auto preset : {Preset::FT_All, Preset::FT_BN, Preset::FT_Bias, Preset::FT_Last}) {
    auto r = profile_model(stack(4), make_policy(preset));
    LayerProfile sum;
    std::int64_t temp = 0;
    for (const auto& row : r.rows) {
      sum.fwd_flops += row.fwd_flops;
      sum.bwd_flops += row.bwd_flops;
      sum.param_bytes += row.param_bytes;
      sum.saved_act_bytes += row.saved_act_bytes;
      temp = std::max(temp, row.temp_bytes);
      CHECK(row.fwd_flops >= 0);
      CHECK(row.bwd_flops >= 0);
      CHECK(row.saved_act_bytes >= 0);
    }
    CHECK(r.totals.fwd_flops == sum.fwd_flops);
    CHECK(r.totals.bwd_flops == sum.bwd_flops);
    CHECK(r.totals.param_bytes == sum.param_bytes);
    CHECK(r.totals.saved_act_bytes == sum.saved_act_bytes);
    CHECK(r.totals.temp_bytes == temp);
  }
}

TEST_CASE("frozen body: only the head pays backward cost") {
  auto s = stack(3);
  auto r = profile_model(s, make_policy(Preset::MobileTL_KBLKs, 0));
  for (const auto& row : r.rows) {
    if (row.layer_id.rfind("cls.fc", 0) == 0 || row.layer_id == "loss") continue;
    CAPTURE(row.layer_id);
    CHECK(row.bwd_flops == 0);
    CHECK(row.saved_act_bytes == 0);
  }
  // Linear input [2,8] plus softmax probabilities [2,4].
  CHECK(r.totals.saved_act_bytes == (2 * 8 + 2 * 4) * 4);
}

TEST_CASE("more trainable blocks never cost less") {
  auto s = stack(5);
  for (auto preset : {Preset::FT_KBLKs, Preset::MobileTL_KBLKs}) {
    std::int64_t saved = -1, bwd = -1;
    for (int k = 0; k <= 5; ++k) {
      auto r = profile_model(s, make_policy(preset, k));
      CHECK(r.totals.saved_act_bytes >= saved);
      CHECK(r.totals.bwd_flops >= bwd);
      saved = r.totals.saved_act_bytes;
      bwd = r.totals.bwd_flops;
    }
  }
}

TEST_CASE("backward is about twice forward on a deep conv stack") {
  ModelSpec s;
  s.input_shape = {2, 16, 16, 16};
  for (int i = 0; i < 12; ++i) {
    BlockSpec b;
    b.kind = BlockKind::ConvBlock;
    b.in_ch = b.out_ch = 16;
    b.kernel = 3;
    s.blocks.push_back(b);
  }
  auto r = profile_model(s, make_policy(Preset::FT_All));
  const double ratio = static_cast<double>(r.totals.bwd_flops) / static_cast<double>(r.totals.fwd_flops);
  CHECK(ratio > 1.9);
  CHECK(ratio <= 2.0);
}

TEST_CASE("MobileTL memory reduction at expansion six") {
  auto v2 = profile_reduction(table_spec(BlockKind::IRBv2, 6));
  auto v3 = profile_reduction(table_spec(BlockKind::IRBv3, 6));
  CHECK(std::abs(v2.percent - 46.3) <= 3.0);
  CHECK(std::abs(v3.percent - 53.3) <= 3.0);
  CHECK_THROWS_AS(profile_reduction(table_spec(BlockKind::ConvBlock)), SpecError);
  CHECK_THROWS_AS(profile_reduction(stack(2)), SpecError);

  // A block whose only norm is the final one (always fully trained) and which
  // has no activation leaves MobileTL nothing to remove.
  auto conv = table_spec(BlockKind::ConvBlock);
  const auto a = profile_model(conv, make_policy(Preset::FT_All)).totals.saved_act_bytes;
  const auto b = profile_model(conv, make_policy(Preset::MobileTL_KBLKs, 1)).totals.saved_act_bytes;
  CHECK(a == b);
}

TEST_CASE("audit matches the live tape for every block, preset and expansion") {
  const std::vector<TrainPolicy> policies = {
      make_policy(Preset::FT_All), make_policy(Preset::FT_BN), make_policy(Preset::FT_Bias),
      make_policy(Preset::FT_Last), make_policy(Preset::MobileTL_KBLKs, 1)};
  for (auto kind : {BlockKind::ConvBlock, BlockKind::IRBv2, BlockKind::IRBv3}) {
    for (double exp : {1.0, 6.0}) {
      auto s = table_spec(kind, exp);
      s.input_shape[0] = 2;
      for (const auto& p : policies) {
        auto a = audit_against_tape(s, p, 3);
        CAPTURE(p.label());
        CHECK(a.pass);
        CHECK(a.mismatches.empty());
        CHECK(a.predicted_total == a.measured_total);
      }
    }
  }
  for (int k = 0; k <= 4; ++k) {
    CHECK(audit_against_tape(stack(4), make_policy(Preset::MobileTL_KBLKs, k), 1).pass);
    CHECK(audit_against_tape(stack(4), make_policy(Preset::FT_KBLKs, k), 1).pass);
  }
}

TEST_CASE("audit deltas equal analytical deltas") {
  auto s = table_spec(BlockKind::IRBv3, 1);
  s.input_shape[0] = 2;
  auto full = audit_against_tape(s, make_policy(Preset::FT_All), 1);
  auto tl = audit_against_tape(s, make_policy(Preset::MobileTL_KBLKs, 1), 1);
  auto pf = profile_model(s, make_policy(Preset::FT_All));
  auto pt = profile_model(s, make_policy(Preset::MobileTL_KBLKs, 1));
  CHECK(full.measured_total - tl.measured_total ==
        pf.totals.saved_act_bytes - pt.totals.saved_act_bytes);
  CHECK(full.measured_total > tl.measured_total);
}

TEST_CASE("empty model audits to zero") {
  ModelSpec s;
  s.input_shape = {2, 3, 4, 4};
  auto a = audit_against_tape(s, make_policy(Preset::FT_All), 1);
  CHECK(a.pass);
  CHECK(a.predicted_total == 0);
  CHECK(a.measured_total == 0);
}

TEST_CASE("strategy comparison") {
  auto s = stack(4);
  std::vector<TrainPolicy> ps = {make_policy(Preset::FT_All), make_policy(Preset::FT_BN),
                                 make_policy(Preset::FT_Bias), make_policy(Preset::FT_Last),
                                 make_policy(Preset::FT_KBLKs, 3), make_policy(Preset::MobileTL_KBLKs, 3)};
  auto rows = compare_strategies(s, ps);
  REQUIRE(rows.size() == ps.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].label == ps[i].label());
    CHECK(rows[i].trainable_params <= rows[0].trainable_params);
  }
  CHECK(rows[5].saved_act_bytes < rows[4].saved_act_bytes);
  CHECK(compare_strategies(s, {make_policy(Preset::FT_All)}).size() == 1);
}

TEST_CASE("report rendering") {
  auto r = profile_model(table_spec(BlockKind::IRBv2), make_policy(Preset::FT_All));
  const auto csv = render_profile(r, ReportFormat::Csv);
  CHECK(csv.rfind("layer_id,kind,fwd_flops,bwd_flops,param_bytes,saved_act_bytes,temp_bytes\n", 0) == 0);
  CHECK(csv == render_profile(r, ReportFormat::Csv));

  std::istringstream lines(csv);
  std::string line, last;
  std::int64_t n = 0;
  while (std::getline(lines, line)) {
    last = line;
    ++n;
  }
  CHECK(n == static_cast<std::int64_t>(r.rows.size()) + 2);
  CHECK(last.rfind("total,", 0) == 0);
  CHECK(last.find("," + std::to_string(r.totals.saved_act_bytes) + ",") != std::string::npos);

  auto j = nlohmann::json::parse(render_profile(r, ReportFormat::Json));
  CHECK(j["totals"]["saved_act_bytes"].get<std::int64_t>() == r.totals.saved_act_bytes);
  CHECK(j["rows"].size() == r.rows.size());

  const auto table = render_profile(r, ReportFormat::Table);
  CHECK(table.find(std::to_string(r.totals.fwd_flops)) != std::string::npos);
  CHECK(table.find(std::to_string(r.totals.saved_act_bytes)) != std::string::npos);

  ProfileReport empty;
  CHECK(render_profile(empty, ReportFormat::Csv) ==
        "layer_id,kind,fwd_flops,bwd_flops,param_bytes,saved_act_bytes,temp_bytes\n");

  CHECK(round_sig6(3.14159265) == 3.14159);
  CHECK(round_sig6(123456789.0) == 123457000.0);
  CHECK(round_sig6(0.0) == 0.0);
  CHECK_THROWS_AS(parse_report_format("xml"), ConfigError);
}
