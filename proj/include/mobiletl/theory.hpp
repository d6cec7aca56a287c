// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mobiletl/trainer.hpp"

namespace mobiletl {

struct BoundParams {
  double lambda = 0.0;  ///< learning rate
  double M = 0.0;       ///< Lipschitz constant of the loss-composed network
  std::int64_t T = 0;   ///< training steps
  double G = 0.0;       ///< gradient magnitude bound
  std::int64_t N = 1;   ///< per-layer output element bound
  std::int64_t L = 0;   ///< approximated trainable layers
};

/// sum_{i=1..L} psi^i; the degenerate psi == 1 case sums directly.
double geometric_inner(double psi, std::int64_t L);

/// lambda*M*T*G*(inner(1.5*sqrt(N)*G) + inner(sqrt(N)*G)). Throws ValueError
/// for a non-positive lambda or N, or any negative quantity.
double bound_eval(const BoundParams& p);

struct PropositionResult {
  bool pass = false;
  std::int64_t trials = 0;
  double max_ratio_exact = 0.0;   ///< hard-swish derivative against 1.5*sqrt(n1)*G
  double max_ratio_signed = 0.0;  ///< sign indicator against sqrt(n1)*G
  double max_ratio = 0.0;
};

/// Monte-Carlo check of the per-layer backward error bounds:
/// sqrt(sum_{i,j,k} (d(a)_ik w_kj)^2) <= c*sqrt(n1)*G for a in R^{n1 x n2},
/// W in R^{n2 x n3} with ||W||_F <= G.
PropositionResult proposition_check(std::int64_t n1, std::int64_t n2, std::int64_t n3, double G,
                                    std::uint64_t seed, std::int64_t trials);

struct TwinConfig {
  std::int64_t steps = 50;
  double lr = 0.01;
  std::int64_t batch_size = 8;
  std::uint64_t seed = 0;
  std::int64_t lipschitz_samples = 100;
  /// Optional hook applied to the freshly built model before the policies.
  std::function<void(Model&)> init;
};

struct DivergenceReport {
  std::vector<double> per_step_distance;  ///< ||W~t - Wt||_F after step t
  std::vector<double> per_step_bound;     ///< lambda*t*G*(inner(psi) + inner(psi~))
  double final_output_distance = 0.0;     ///< |F(W~T) - F(WT)| on the probe batch
  double measured_G = 0.0;
  double estimated_M = 0.0;
  std::int64_t N = 0;
  std::int64_t L = 0;
  double bound = 0.0;
  bool pass = false;
};

/// Trains an exact-backward copy and an approximate-backward copy in lockstep
/// with plain SGD. Throws ConfigError unless the two policies differ only in
/// act_backward.
DivergenceReport twin_divergence(const ModelSpec& spec, const TrainPolicy& exact,
                                 const TrainPolicy& approx, const Dataset& ds,
                                 const TwinConfig& cfg);

}  // namespace mobiletl
