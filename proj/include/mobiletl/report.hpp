// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "mobiletl/gradcheck.hpp"
#include "mobiletl/profiler.hpp"
#include "mobiletl/theory.hpp"
#include "mobiletl/trainer.hpp"

namespace mobiletl {

enum class ReportFormat { Csv, Json, Table };

ReportFormat parse_report_format(const std::string& s);

/// Rounds to 6 significant digits so emitted floats are bit-stable.
double round_sig6(double v);

std::string render_profile(const ProfileReport& r, ReportFormat f);
std::string render_strategies(const std::vector<StrategyRow>& rows, ReportFormat f);
std::string render_audit(const AuditResult& r, ReportFormat f);
std::string render_train(const TrainReport& r, ReportFormat f);
std::string render_gradcheck(const GradcheckReport& r, ReportFormat f);
std::string render_divergence(const DivergenceReport& r, ReportFormat f);

/// Writes via a sibling temp file and rename, so readers never see a partial report.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace mobiletl
