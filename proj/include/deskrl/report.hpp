#pragma once

#include <string>
#include <vector>

namespace deskrl {

// Derives plot-ready CSV files from a run directory's metrics log:
// series.csv (per-step scalars) and stability.csv (accuracy-trajectory
// summary). A directory whose subdirectories hold metrics logs is treated as
// a sweep: per-run series files plus comparison.csv. Pure function of the
// logs; re-running is byte-identical. Returns the files written.
std::vector<std::string> emit_report(const std::string& dir);

}  // namespace deskrl
