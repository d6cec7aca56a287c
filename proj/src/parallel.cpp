// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mobiletl/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace mobiletl {

int intra_op_threads() {
  static const int threads = [] {
    const char* env = std::getenv("MOBILETL_THREADS");
    if (env == nullptr) return 1;
    try {
      return std::max(1, std::stoi(env));
    } catch (...) {
      return 1;
    }
  }();
  return threads;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  const auto threads = std::min<std::int64_t>(intra_op_threads(), n);
  if (threads <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (std::int64_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::int64_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace mobiletl
