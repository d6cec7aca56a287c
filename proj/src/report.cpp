// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mobiletl/report.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mobiletl {

using nlohmann::json;

namespace {

struct Grid {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string num(std::int64_t v) { return std::to_string(v); }

std::string csv(const Grid& g) {
  std::ostringstream o;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) o << (i ? "," : "") << cells[i];
    o << "\n";
  };
  line(g.header);
  for (const auto& r : g.rows) line(r);
  return o.str();
}

std::string table(const Grid& g, const std::string& preamble = "") {
  std::vector<std::size_t> w(g.header.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = g.header[i].size();
  for (const auto& r : g.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
  }
  std::ostringstream o;
  o << preamble;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      // First column left aligned, numbers right aligned.
      const std::string pad(w[i] - cells[i].size(), ' ');
      o << (i ? "  " : "") << (i == 0 ? cells[i] + pad : pad + cells[i]);
    }
    o << "\n";
  };
  line(g.header);
  std::size_t total = 0;
  for (auto x : w) total += x;
  o << std::string(total + 2 * (w.size() - 1), '-') << "\n";
  for (const auto& r : g.rows) line(r);
  return o.str();
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json layer_json(const LayerProfile& r) {
  return json{{"layer_id", r.layer_id},         {"kind", r.kind},
              {"fwd_flops", r.fwd_flops},       {"bwd_flops", r.bwd_flops},
              {"param_bytes", r.param_bytes},   {"saved_act_bytes", r.saved_act_bytes},
              {"temp_bytes", r.temp_bytes}};
}

std::vector<std::string> layer_cells(const LayerProfile& r) {
  return {r.layer_id,         r.kind,
          num(r.fwd_flops),   num(r.bwd_flops),
          num(r.param_bytes), num(r.saved_act_bytes),
          num(r.temp_bytes)};
}

json policy_json(const TrainPolicy& p) { return json::parse(policy_to_json(p)); }

const char* yes_no(bool b) { return b ? "pass" : "FAIL"; }

}  // namespace

ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  if (s == "table") return ReportFormat::Table;
  throw ConfigError("unknown format '" + s + "' (csv, json, table)");
}

double round_sig6(double v) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::strtod(buf, nullptr);
}

std::string render_profile(const ProfileReport& r, ReportFormat f) {
  if (f == ReportFormat::Json) {
    json j;
    j["input_shape"] = r.input_shape;
    j["policy"] = policy_json(r.policy);
    j["rows"] = json::array();
    for (const auto& row : r.rows) j["rows"].push_back(layer_json(row));
    j["totals"] = layer_json(r.totals);
    j["totals"].erase("kind");
    j["totals"].erase("layer_id");
    j["totals"]["saved_act_mb"] = round_sig6(static_cast<double>(r.totals.saved_act_bytes) / 1e6);
    j["totals"]["train_mflops"] =
        round_sig6(static_cast<double>(r.totals.fwd_flops + r.totals.bwd_flops) / 1e6);
    j["trainable_params"] = r.trainable_params;
    j["total_params"] = r.total_params;
    json coef = json::object();
    for (const auto& [k, v] : flop_coefficients()) coef[k] = round_sig6(v);
    j["flop_coefficients"] = coef;
    return dump(j);
  }
  Grid g{{"layer_id", "kind", "fwd_flops", "bwd_flops", "param_bytes", "saved_act_bytes",
          "temp_bytes"},
         {}};
  for (const auto& row : r.rows) g.rows.push_back(layer_cells(row));
  if (!r.rows.empty()) g.rows.push_back(layer_cells(r.totals));
  if (f == ReportFormat::Csv) return csv(g);

  std::ostringstream pre;
  pre << "policy " << r.policy.label() << ", input " << shape_str(r.input_shape) << "\n";
  pre << "flop coefficients:";
  for (const auto& [k, v] : flop_coefficients()) pre << " " << k << "=" << num(v);
  pre << "\n";
  pre << "params " << r.total_params << " (trainable " << r.trainable_params << "), stored act "
      << num(static_cast<double>(r.totals.saved_act_bytes) / 1e6) << " MB, train "
      << num(static_cast<double>(r.totals.fwd_flops + r.totals.bwd_flops) / 1e6) << " MFLOPs\n\n";
  return table(g, pre.str());
}

std::string render_strategies(const std::vector<StrategyRow>& rows, ReportFormat f) {
  if (f == ReportFormat::Json) {
    json j = json::array();
    for (const auto& r : rows) {
      j.push_back(json{{"label", r.label},
                       {"policy", policy_json(r.policy)},
                       {"saved_act_bytes", r.saved_act_bytes},
                       {"saved_act_mb", round_sig6(static_cast<double>(r.saved_act_bytes) / 1e6)},
                       {"fwd_flops", r.fwd_flops},
                       {"bwd_flops", r.bwd_flops},
                       {"train_mflops",
                        round_sig6(static_cast<double>(r.fwd_flops + r.bwd_flops) / 1e6)},
                       {"trainable_params", r.trainable_params},
                       {"param_bytes", r.param_bytes},
                       {"temp_bytes", r.temp_bytes}});
    }
    return dump(json{{"strategies", j}});
  }
  Grid g{{"strategy", "saved_act_mb", "fwd_mflops", "bwd_mflops", "train_mflops",
          "trainable_params", "saved_act_bytes"},
         {}};
  for (const auto& r : rows) {
    g.rows.push_back({r.label, num(static_cast<double>(r.saved_act_bytes) / 1e6),
                      num(static_cast<double>(r.fwd_flops) / 1e6),
                      num(static_cast<double>(r.bwd_flops) / 1e6),
                      num(static_cast<double>(r.fwd_flops + r.bwd_flops) / 1e6),
                      num(r.trainable_params), num(r.saved_act_bytes)});
  }
  return f == ReportFormat::Csv ? csv(g) : table(g);
}

std::string render_audit(const AuditResult& r, ReportFormat f) {
  if (f == ReportFormat::Json) {
    json m = json::array();
    for (const auto& x : r.mismatches) {
      m.push_back(json{{"layer_id", x.layer_id},
                       {"predicted_saved", x.predicted_saved},
                       {"measured_saved", x.measured_saved},
                       {"predicted_temp", x.predicted_temp},
                       {"measured_temp", x.measured_temp}});
    }
    return dump(json{{"pass", r.pass},
                     {"predicted_total", r.predicted_total},
                     {"measured_total", r.measured_total},
                     {"layers_checked", r.layers_checked},
                     {"mismatches", m}});
  }
  Grid g{{"layer_id", "predicted_saved", "measured_saved", "predicted_temp", "measured_temp"},
         {}};
  for (const auto& x : r.mismatches) {
    g.rows.push_back({x.layer_id, num(x.predicted_saved), num(x.measured_saved),
                      num(x.predicted_temp), num(x.measured_temp)});
  }
  g.rows.push_back({"total", num(r.predicted_total), num(r.measured_total), "", ""});
  if (f == ReportFormat::Csv) return csv(g);
  std::ostringstream pre;
  pre << "audit " << yes_no(r.pass) << ": " << r.layers_checked << " layers, "
      << r.mismatches.size() << " mismatches\n\n";
  return table(g, pre.str());
}

std::string render_train(const TrainReport& r, ReportFormat f) {
  if (f == ReportFormat::Json) {
    json e = json::array();
    for (const auto& x : r.epochs) {
      e.push_back(json{{"epoch", x.epoch},
                       {"mean_loss", round_sig6(x.mean_loss)},
                       {"train_accuracy", round_sig6(x.train_accuracy)},
                       {"eval_accuracy", round_sig6(x.eval_accuracy)}});
    }
    return dump(json{{"epochs", e},
                     {"final_accuracy", round_sig6(r.final_accuracy)},
                     {"steps", r.steps},
                     {"peak_tape_bytes", r.peak_tape_bytes},
                     {"wall_seconds", round_sig6(r.wall_seconds)}});
  }
  Grid g{{"epoch", "mean_loss", "train_accuracy", "eval_accuracy"}, {}};
  for (const auto& x : r.epochs) {
    g.rows.push_back(
        {num(x.epoch), num(x.mean_loss), num(x.train_accuracy), num(x.eval_accuracy)});
  }
  if (f == ReportFormat::Csv) return csv(g);
  std::ostringstream pre;
  pre << "steps " << r.steps << ", final accuracy " << num(r.final_accuracy)
      << ", peak tape bytes " << r.peak_tape_bytes << "\n\n";
  return table(g, pre.str());
}

std::string render_gradcheck(const GradcheckReport& r, ReportFormat f) {
  if (f == ReportFormat::Json) {
    json c = json::array();
    for (const auto& x : r.cases) {
      c.push_back(json{{"name", x.name},
                       {"instances", x.instances},
                       {"max_rel_error", round_sig6(x.max_rel_error)},
                       {"pass", x.pass}});
    }
    return dump(json{{"cases", c}, {"tolerance", round_sig6(r.tolerance)}, {"pass", r.pass}});
  }
  Grid g{{"layer", "instances", "max_rel_error", "result"}, {}};
  for (const auto& x : r.cases) {
    g.rows.push_back({x.name, num(x.instances), num(x.max_rel_error), yes_no(x.pass)});
  }
  return f == ReportFormat::Csv ? csv(g) : table(g);
}

std::string render_divergence(const DivergenceReport& r, ReportFormat f) {
  if (f == ReportFormat::Json) {
    json d = json::array();
    for (double v : r.per_step_distance) d.push_back(round_sig6(v));
    json b = json::array();
    for (double v : r.per_step_bound) b.push_back(round_sig6(v));
    return dump(json{{"per_step_distance", d},
                     {"per_step_bound", b},
                     {"final_output_distance", round_sig6(r.final_output_distance)},
                     {"measured_G", round_sig6(r.measured_G)},
                     {"estimated_M", round_sig6(r.estimated_M)},
                     {"N", r.N},
                     {"L", r.L},
                     {"bound", round_sig6(r.bound)},
                     {"pass", r.pass}});
  }
  Grid g{{"step", "distance", "bound"}, {}};
  for (std::size_t t = 0; t < r.per_step_distance.size(); ++t) {
    g.rows.push_back({num(static_cast<std::int64_t>(t + 1)), num(r.per_step_distance[t]),
                      num(r.per_step_bound[t])});
  }
  if (f == ReportFormat::Csv) return csv(g);
  std::ostringstream pre;
  pre << "final output distance " << num(r.final_output_distance) << " <= bound " << num(r.bound)
      << ": " << yes_no(r.pass) << "\nG " << num(r.measured_G) << ", M " << num(r.estimated_M)
      << ", N " << r.N << ", L " << r.L << "\n\n";
  return table(g, pre.str());
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << content;
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("short write to '" + tmp + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move report into place at '" + path + "'");
  }
}

}  // namespace mobiletl
