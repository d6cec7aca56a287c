// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mobiletl {

struct GradcheckCase {
  std::string name;
  std::int64_t instances = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double tolerance = 1e-5;
  bool pass = false;
};

/// Central finite differences (f64, h = 1e-5) against the tape's analytic
/// gradients for every exact-mode layer. Error per tensor is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||).
GradcheckReport run_gradcheck(std::uint64_t seed, std::int64_t instances = 20,
                              double tolerance = 1e-5);

}  // namespace mobiletl
