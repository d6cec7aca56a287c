// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mobiletl/mobiletl.h"

#include <cstring>
#include <new>
#include <string>
#include <variant>

#include "mobiletl/report.hpp"

struct mtl_spec {
  mobiletl::ModelSpec spec;
};
struct mtl_policy {
  mobiletl::TrainPolicy policy;
};
struct mtl_dataset {
  mobiletl::Dataset ds;
};
struct mtl_report {
  std::variant<mobiletl::ProfileReport, std::vector<mobiletl::StrategyRow>, mobiletl::AuditResult,
               mobiletl::TrainReport, mobiletl::GradcheckReport, mobiletl::DivergenceReport>
      body;
};

namespace {

using namespace mobiletl;

thread_local std::string g_error;

mtl_status code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::Shape: return MTL_ERR_SHAPE;
    case ErrorKind::Value: return MTL_ERR_VALUE;
    case ErrorKind::State: return MTL_ERR_STATE;
    case ErrorKind::Spec: return MTL_ERR_SPEC;
    case ErrorKind::Format: return MTL_ERR_FORMAT;
    case ErrorKind::Policy: return MTL_ERR_POLICY;
    case ErrorKind::Config: return MTL_ERR_CONFIG;
    case ErrorKind::Io: return MTL_ERR_IO;
    case ErrorKind::Audit: return MTL_ERR_AUDIT;
  }
  return MTL_ERR_INTERNAL;
}

template <class F>
mtl_status guard(F&& f) {
  try {
    g_error.clear();
    f();
    return MTL_OK;
  } catch (const Error& e) {
    g_error = e.what();
    return code_for(e.kind());
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return MTL_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_error = e.what();
    return MTL_ERR_INTERNAL;
  }
}

mtl_status bad_arg(const char* what) {
  g_error = std::string("invalid argument: ") + what;
  return MTL_ERR_ARGUMENT;
}

ReportFormat to_format(mtl_format f) {
  switch (f) {
    case MTL_FORMAT_CSV: return ReportFormat::Csv;
    case MTL_FORMAT_JSON: return ReportFormat::Json;
    case MTL_FORMAT_TABLE: return ReportFormat::Table;
  }
  throw ConfigError("unknown report format code " + std::to_string(static_cast<int>(f)));
}

std::string render(const mtl_report& r, ReportFormat f) {
  return std::visit(
      [&](const auto& b) -> std::string {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, ProfileReport>) return render_profile(b, f);
        if constexpr (std::is_same_v<T, std::vector<StrategyRow>>) return render_strategies(b, f);
        if constexpr (std::is_same_v<T, AuditResult>) return render_audit(b, f);
        if constexpr (std::is_same_v<T, TrainReport>) return render_train(b, f);
        if constexpr (std::is_same_v<T, GradcheckReport>) return render_gradcheck(b, f);
        if constexpr (std::is_same_v<T, DivergenceReport>) return render_divergence(b, f);
      },
      r.body);
}

}  // namespace

extern "C" {

const char* mtl_version(void) { return "0.1.0"; }

const char* mtl_last_error(void) { return g_error.c_str(); }

mtl_status mtl_spec_load(const char* path, mtl_spec** out) {
  if (!path || !out) return bad_arg("path and out are required");
  return guard([&] { *out = new mtl_spec{load_model_spec(path)}; });
}

mtl_status mtl_spec_parse(const char* json, mtl_spec** out) {
  if (!json || !out) return bad_arg("json and out are required");
  return guard([&] { *out = new mtl_spec{parse_model_spec(json)}; });
}

mtl_status mtl_spec_param_count(const mtl_spec* spec, int64_t* out) {
  if (!spec || !out) return bad_arg("spec and out are required");
  return guard([&] { *out = param_count(spec->spec); });
}

mtl_status mtl_spec_input_shape(const mtl_spec* spec, int64_t out[4]) {
  if (!spec || !out) return bad_arg("spec and out are required");
  for (int i = 0; i < 4; ++i) out[i] = spec->spec.input_shape[static_cast<std::size_t>(i)];
  return MTL_OK;
}

void mtl_spec_free(mtl_spec* spec) { delete spec; }

mtl_status mtl_policy_load(const char* path, mtl_policy** out) {
  if (!path || !out) return bad_arg("path and out are required");
  return guard([&] { *out = new mtl_policy{load_policy(path)}; });
}

mtl_status mtl_policy_parse(const char* json, mtl_policy** out) {
  if (!json || !out) return bad_arg("json and out are required");
  return guard([&] { *out = new mtl_policy{parse_policy(json)}; });
}

mtl_status mtl_policy_preset(const char* name, int k_blocks, mtl_policy** out) {
  if (!name || !out) return bad_arg("name and out are required");
  return guard([&] {
    if (k_blocks < 0) throw PolicyError("k_blocks must be >= 0");
    *out = new mtl_policy{make_policy(parse_preset(name), k_blocks)};
  });
}

void mtl_policy_free(mtl_policy* policy) { delete policy; }

mtl_status mtl_dataset_load(const char* path, mtl_dataset** out) {
  if (!path || !out) return bad_arg("path and out are required");
  return guard([&] { *out = new mtl_dataset{load_tlds(path)}; });
}

mtl_status mtl_dataset_synthetic(int64_t n, int64_t classes, uint64_t seed, int64_t channels,
                                 int64_t height, int64_t width, mtl_dataset** out) {
  if (!out) return bad_arg("out is required");
  return guard([&] {
    *out = new mtl_dataset{synthetic_blobs(n, classes, seed, channels, height, width)};
  });
}

mtl_status mtl_dataset_save(const mtl_dataset* ds, const char* path) {
  if (!ds || !path) return bad_arg("dataset and path are required");
  return guard([&] { save_tlds(ds->ds, path); });
}

mtl_status mtl_dataset_count(const mtl_dataset* ds, int64_t* out) {
  if (!ds || !out) return bad_arg("dataset and out are required");
  *out = ds->ds.count;
  return MTL_OK;
}

void mtl_dataset_free(mtl_dataset* ds) { delete ds; }

mtl_status mtl_profile(const mtl_spec* spec, const mtl_policy* policy, mtl_report** out) {
  if (!spec || !policy || !out) return bad_arg("spec, policy and out are required");
  return guard([&] { *out = new mtl_report{profile_model(spec->spec, policy->policy)}; });
}

mtl_status mtl_compare(const mtl_spec* spec, const mtl_policy* const* policies,
                       size_t n_policies, mtl_report** out) {
  if (!spec || !out || (!policies && n_policies > 0)) return bad_arg("spec and out are required");
  if (n_policies == 0) return bad_arg("at least one policy is required");
  return guard([&] {
    std::vector<TrainPolicy> ps;
    for (size_t i = 0; i < n_policies; ++i) {
      if (!policies[i]) throw ConfigError("null policy in list");
      ps.push_back(policies[i]->policy);
    }
    *out = new mtl_report{compare_strategies(spec->spec, ps)};
  });
}

mtl_status mtl_audit(const mtl_spec* spec, const mtl_policy* policy, uint64_t seed,
                     mtl_report** out) {
  if (!spec || !policy || !out) return bad_arg("spec, policy and out are required");
  return guard([&] { *out = new mtl_report{audit_against_tape(spec->spec, policy->policy, seed)}; });
}

void mtl_train_options_default(mtl_train_options* opts) {
  if (!opts) return;
  opts->seed = 0;
  opts->epochs = 50;
  opts->steps = 0;
  opts->batch_size = 8;
  opts->lr = 1e-3;
  opts->optimizer = MTL_OPT_ADAM;
  opts->cosine = 1;
}

mtl_status mtl_train(const mtl_spec* spec, const mtl_policy* policy, const mtl_dataset* ds,
                     const mtl_train_options* opts, mtl_report** out) {
  if (!spec || !policy || !ds || !opts || !out) return bad_arg("all arguments are required");
  return guard([&] {
    if (opts->batch_size < 1) throw ConfigError("batch size must be >= 1");
    ModelSpec s = spec->spec;
    s.input_shape[0] = opts->batch_size;
    TrainConfig cfg;
    cfg.opt.kind = opts->optimizer == MTL_OPT_SGD ? OptimizerKind::SGD : OptimizerKind::Adam;
    cfg.opt.lr = opts->lr;
    cfg.opt.schedule = opts->cosine ? LrSchedule::Cosine : LrSchedule::Constant;
    cfg.epochs = opts->epochs;
    cfg.steps = opts->steps;
    cfg.batch_size = opts->batch_size;
    cfg.seed = opts->seed;
    auto pm = apply_policy(build_model(s, opts->seed), policy->policy);
    *out = new mtl_report{train(pm, ds->ds, cfg)};
  });
}

mtl_status mtl_gradcheck(uint64_t seed, mtl_report** out) {
  if (!out) return bad_arg("out is required");
  return guard([&] { *out = new mtl_report{run_gradcheck(seed)}; });
}

mtl_status mtl_verify_bound(const mtl_spec* spec, const mtl_policy* policy, const mtl_dataset* ds,
                            int64_t steps, double lr, uint64_t seed, mtl_report** out) {
  if (!spec || !policy || !ds || !out) return bad_arg("all arguments are required");
  return guard([&] {
    TrainPolicy e = policy->policy, a = policy->policy;
    e.act_backward = ActBackwardMode::Exact;
    a.act_backward = ActBackwardMode::ApproxSigned;
    TwinConfig cfg;
    cfg.steps = steps;
    cfg.lr = lr;
    cfg.seed = seed;
    cfg.batch_size = spec->spec.input_shape[0];
    *out = new mtl_report{twin_divergence(spec->spec, e, a, ds->ds, cfg)};
  });
}

mtl_status mtl_report_summary(const mtl_report* report, mtl_summary* out) {
  if (!report || !out) return bad_arg("report and out are required");
  *out = mtl_summary{0, 0, 0, 0, 0, 0, 1};
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, ProfileReport>) {
          out->fwd_flops = b.totals.fwd_flops;
          out->bwd_flops = b.totals.bwd_flops;
          out->param_bytes = b.totals.param_bytes;
          out->saved_act_bytes = b.totals.saved_act_bytes;
          out->temp_bytes = b.totals.temp_bytes;
          out->trainable_params = b.trainable_params;
        } else if constexpr (std::is_same_v<T, AuditResult>) {
          out->saved_act_bytes = b.measured_total;
          out->passed = b.pass;
        } else if constexpr (std::is_same_v<T, TrainReport>) {
          out->saved_act_bytes = b.peak_tape_bytes;
        } else if constexpr (std::is_same_v<T, GradcheckReport> ||
                             std::is_same_v<T, DivergenceReport>) {
          out->passed = b.pass;
        }
      },
      report->body);
  return MTL_OK;
}

mtl_status mtl_report_render(const mtl_report* report, mtl_format format, char* buf, size_t cap,
                             size_t* needed) {
  if (!report || !needed) return bad_arg("report and needed are required");
  return guard([&] {
    const std::string s = render(*report, to_format(format));
    *needed = s.size() + 1;
    if (buf && cap >= s.size() + 1) std::memcpy(buf, s.c_str(), s.size() + 1);
  });
}

mtl_status mtl_report_write(const mtl_report* report, mtl_format format, const char* path) {
  if (!report || !path) return bad_arg("report and path are required");
  return guard([&] { write_file_atomic(path, render(*report, to_format(format))); });
}

void mtl_report_free(mtl_report* report) { delete report; }

}  // extern "C"
