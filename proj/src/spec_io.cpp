// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "mobiletl/model.hpp"

namespace mobiletl {

using nlohmann::json;

namespace {

BlockKind parse_kind(const std::string& s) {
  if (s == "conv" || s == "conv_block") return BlockKind::ConvBlock;
  if (s == "irb_v2") return BlockKind::IRBv2;
  if (s == "irb_v3") return BlockKind::IRBv3;
  if (s == "head") return BlockKind::Head;
  throw SpecError("unknown block kind '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "relu6") return Activation::ReLU6;
  if (s == "hswish" || s == "hardswish") return Activation::HardSwish;
  if (s == "none") return Activation::None;
  throw SpecError("unknown activation '" + s + "'");
}

BlockSpec parse_block(const json& j) {
  BlockSpec b;
  b.kind = parse_kind(j.at("kind").get<std::string>());
  b.in_ch = j.at("in_ch").get<std::int64_t>();
  b.out_ch = j.at("out_ch").get<std::int64_t>();
  b.expansion = j.value("expansion", 1.0);
  b.hidden_ch = j.value("hidden_ch", std::int64_t{0});
  b.expand = j.value("expand", true);
  b.kernel = j.value("kernel", 3);
  b.stride = j.value("stride", 1);
  const std::string default_act = b.kind == BlockKind::IRBv3   ? "hswish"
                                  : b.kind == BlockKind::IRBv2 ? "relu6"
                                                               : "none";
  b.activation = parse_activation(j.value("activation", default_act));
  b.use_se = j.value("use_se", false);
  b.se_ratio = j.value("se_ratio", 4);
  if (j.contains("use_residual")) b.use_residual = j.at("use_residual").get<bool>();
  return b;
}

}  // namespace

ModelSpec parse_model_spec(const std::string& json_text) {
  ModelSpec spec;
  try {
    const json j = json::parse(json_text);
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.num_classes = j.value("num_classes", std::int64_t{0});
    spec.input_requires_grad = j.value("input_requires_grad", false);
    for (const auto& b : j.at("blocks")) spec.blocks.push_back(parse_block(b));
  } catch (const json::exception& e) {
    throw SpecError(std::string("malformed model spec: ") + e.what());
  }
  validate_model_spec(spec);
  return spec;
}

ModelSpec load_model_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_spec(ss.str());
}

std::string model_spec_to_json(const ModelSpec& spec) {
  json j;
  j["input_shape"] = spec.input_shape;
  j["num_classes"] = spec.num_classes;
  j["input_requires_grad"] = spec.input_requires_grad;
  j["blocks"] = json::array();
  for (const auto& b : spec.blocks) {
    json o{{"kind", block_kind_name(b.kind)},
           {"in_ch", b.in_ch},
           {"out_ch", b.out_ch},
           {"expansion", b.expansion},
           {"hidden_ch", b.hidden_ch},
           {"expand", b.expand},
           {"kernel", b.kernel},
           {"stride", b.stride},
           {"activation", activation_name(b.activation)},
           {"use_se", b.use_se},
           {"se_ratio", b.se_ratio}};
    if (b.use_residual) o["use_residual"] = *b.use_residual;
    j["blocks"].push_back(std::move(o));
  }
  return j.dump();
}

}  // namespace mobiletl
