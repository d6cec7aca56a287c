// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace mobiletl {

/// Intra-op thread cap from MOBILETL_THREADS (default 1).
int intra_op_threads();

/// Runs fn(i) for i in [0, n). Each index must write disjoint memory.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace mobiletl
