// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

// mobiletl command line front end. Talks to the library only through the C API.

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mobiletl/mobiletl.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitFailed = 2;

struct Failure {
  int code;
};

void check(mtl_status s, const char* what) {
  if (s == MTL_OK) return;
  std::fprintf(stderr, "mobiletl: %s: %s\n", what, mtl_last_error());
  throw Failure{kExitInvalid};
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& o) noexcept : p(o.p) { o.p = nullptr; }
  ~Handle() {
    if (p) Free(p);
  }
};

using Spec = Handle<mtl_spec, mtl_spec_free>;
using Policy = Handle<mtl_policy, mtl_policy_free>;
using Data = Handle<mtl_dataset, mtl_dataset_free>;
using Report = Handle<mtl_report, mtl_report_free>;

struct Options {
  std::string spec;
  std::vector<std::string> policies;
  std::string dataset;
  std::string synthetic;
  std::string out;
  std::string format;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  std::int64_t epochs = 1;
  double lr = 1e-3;
  std::string optimizer = "adam";
};

mtl_format format_code(const std::string& f) {
  if (f == "csv") return MTL_FORMAT_CSV;
  if (f == "json") return MTL_FORMAT_JSON;
  return MTL_FORMAT_TABLE;
}

Spec load_spec(const Options& o) {
  Spec s;
  check(mtl_spec_load(o.spec.c_str(), &s.p), "loading spec");
  return s;
}

Policy load_policy(const std::string& path) {
  Policy p;
  check(mtl_policy_load(path.c_str(), &p.p), "loading policy");
  return p;
}

Data load_data(const Options& o, const mtl_spec* spec) {
  Data d;
  if (!o.dataset.empty()) {
    check(mtl_dataset_load(o.dataset.c_str(), &d.p), "loading dataset");
    return d;
  }
  std::int64_t n = 0, classes = 0;
  unsigned long long seed = 0;
  if (std::sscanf(o.synthetic.c_str(), "%lld,%lld,%llu", reinterpret_cast<long long*>(&n),
                  reinterpret_cast<long long*>(&classes), &seed) != 3) {
    std::fprintf(stderr, "mobiletl: --synthetic expects n,classes,seed\n");
    throw Failure{kExitInvalid};
  }
  std::int64_t shape[4];
  check(mtl_spec_input_shape(spec, shape), "reading input shape");
  check(mtl_dataset_synthetic(n, classes, seed, shape[1], shape[2], shape[3], &d.p),
        "generating dataset");
  return d;
}

std::string render(const mtl_report* r, mtl_format f) {
  std::size_t need = 0;
  check(mtl_report_render(r, f, nullptr, 0, &need), "rendering report");
  std::string s(need, '\0');
  check(mtl_report_render(r, f, s.data(), s.size(), &need), "rendering report");
  s.resize(need - 1);
  return s;
}

// --out writes the chosen format (csv unless given) and echoes a table on
// stdout; without --out the chosen format (table unless given) goes to stdout.
void emit(const mtl_report* r, const Options& o, const char* default_format = nullptr) {
  if (!o.out.empty()) {
    const std::string f = o.format.empty() ? (default_format ? default_format : "csv") : o.format;
    check(mtl_report_write(r, format_code(f), o.out.c_str()), "writing report");
    std::fputs(render(r, MTL_FORMAT_TABLE).c_str(), stdout);
    return;
  }
  const std::string f = o.format.empty() ? (default_format ? default_format : "table") : o.format;
  std::fputs(render(r, format_code(f)).c_str(), stdout);
}

int passed(const mtl_report* r) {
  mtl_summary s;
  check(mtl_report_summary(r, &s), "summarizing report");
  return s.passed ? kExitOk : kExitFailed;
}

int run_profile(const Options& o) {
  Spec s = load_spec(o);
  if (o.policies.size() != 1) {
    std::fprintf(stderr, "mobiletl: profile takes exactly one --policy\n");
    return kExitInvalid;
  }
  Policy p = load_policy(o.policies.front());
  Report r;
  check(mtl_profile(s.p, p.p, &r.p), "profiling");
  emit(r.p, o);
  return kExitOk;
}

int run_compare(const Options& o) {
  Spec s = load_spec(o);
  std::vector<Policy> ps;
  std::vector<const mtl_policy*> raw;
  for (const auto& path : o.policies) {
    ps.push_back(load_policy(path));
    raw.push_back(ps.back().p);
  }
  Report r;
  check(mtl_compare(s.p, raw.data(), raw.size(), &r.p), "comparing strategies");
  emit(r.p, o);
  return kExitOk;
}

int run_audit(const Options& o) {
  Spec s = load_spec(o);
  int rc = kExitOk;
  for (const auto& path : o.policies) {
    Policy p = load_policy(path);
    Report r;
    check(mtl_audit(s.p, p.p, o.seed, &r.p), "auditing");
    emit(r.p, o);
    if (passed(r.p) != kExitOk) rc = kExitFailed;
  }
  return rc;
}

int run_train(const Options& o) {
  Spec s = load_spec(o);
  if (o.policies.size() != 1) {
    std::fprintf(stderr, "mobiletl: train takes exactly one --policy\n");
    return kExitInvalid;
  }
  Policy p = load_policy(o.policies.front());
  Data d = load_data(o, s.p);
  mtl_train_options opts;
  mtl_train_options_default(&opts);
  std::int64_t shape[4];
  check(mtl_spec_input_shape(s.p, shape), "reading input shape");
  opts.batch_size = shape[0];
  opts.seed = o.seed;
  opts.epochs = o.epochs;
  opts.steps = o.steps;
  opts.lr = o.lr;
  opts.optimizer = o.optimizer == "sgd" ? MTL_OPT_SGD : MTL_OPT_ADAM;
  Report r;
  check(mtl_train(s.p, p.p, d.p, &opts, &r.p), "training");
  emit(r.p, o);
  return kExitOk;
}

int run_gradcheck(const Options& o) {
  Report r;
  check(mtl_gradcheck(o.seed, &r.p), "gradient check");
  emit(r.p, o);
  return passed(r.p);
}

int run_verify(const Options& o) {
  Spec s = load_spec(o);
  if (o.policies.size() != 1) {
    std::fprintf(stderr, "mobiletl: verify-bound takes exactly one --policy\n");
    return kExitInvalid;
  }
  Policy p = load_policy(o.policies.front());
  Data d = load_data(o, s.p);
  Report r;
  check(mtl_verify_bound(s.p, p.p, d.p, o.steps, o.lr, o.seed, &r.p), "bound verification");
  emit(r.p, o, "json");
  return passed(r.p);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mobiletl: memory-efficient transfer learning engine and cost profiler"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--out", o.out, "Report path (written atomically)");
    c->add_option("--format", o.format, "csv, json or table")
        ->check(CLI::IsMember({"csv", "json", "table"}));
    c->add_option("--seed", o.seed, "Random seed");
  };
  auto add_spec = [&](CLI::App* c) {
    c->add_option("--spec", o.spec, "Model spec JSON")->required();
  };
  auto add_policy = [&](CLI::App* c, bool many) {
    auto* opt = c->add_option("--policy", o.policies, many ? "Policy JSON (repeatable)"
                                                           : "Policy JSON");
    opt->required();
    if (!many) opt->expected(1);
  };
  auto add_data = [&](CLI::App* c) {
    auto* ds = c->add_option("--dataset", o.dataset, "TLDS dataset file");
    auto* sy = c->add_option("--synthetic", o.synthetic, "Synthetic blobs: n,classes,seed");
    ds->excludes(sy);
    sy->excludes(ds);
    c->add_option("--steps", o.steps, "Training steps");
    c->add_option("--lr", o.lr, "Learning rate");
  };

  auto* profile = app.add_subcommand("profile", "Analytical FLOPs and memory per layer");
  add_spec(profile);
  add_policy(profile, false);
  add_common(profile);

  auto* compare = app.add_subcommand("compare", "Compare fine-tuning strategies");
  add_spec(compare);
  add_policy(compare, true);
  add_common(compare);

  auto* audit = app.add_subcommand("audit", "Check the profiler against the live tape");
  add_spec(audit);
  add_policy(audit, true);
  add_common(audit);

  auto* trainc = app.add_subcommand("train", "Train under a policy");
  add_spec(trainc);
  add_policy(trainc, false);
  add_data(trainc);
  add_common(trainc);
  trainc->add_option("--epochs", o.epochs, "Epochs (ignored when --steps > 0)");
  trainc->add_option("--optimizer", o.optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}));

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  add_common(grad);

  auto* verify = app.add_subcommand("verify-bound", "Twin-run divergence against the bound");
  add_spec(verify);
  add_policy(verify, false);
  add_data(verify);
  add_common(verify);
  o.steps = 0;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if ((*trainc || *verify) && o.dataset.empty() && o.synthetic.empty()) {
      std::fprintf(stderr, "mobiletl: --dataset or --synthetic is required\n");
      return kExitInvalid;
    }
    if (*profile) return run_profile(o);
    if (*compare) return run_compare(o);
    if (*audit) return run_audit(o);
    if (*trainc) return run_train(o);
    if (*grad) return run_gradcheck(o);
    if (*verify) {
      Options v = o;
      if (v.steps == 0 && !verify->count("--steps")) v.steps = 50;
      if (!verify->count("--lr")) v.lr = 0.01;
      return run_verify(v);
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitInvalid;
}
