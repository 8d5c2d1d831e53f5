#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "kits/graph.hpp"
#include "kits/metrics.hpp"
#include "kits/training.hpp"

namespace kits {

/// {mae, mape, mre, rmse, r2, n_points, n_mape_excluded}
std::string metrics_json(const MetricsReport& report);

/// {avg, median, min, max, mean_degree, n_graphs}
std::string degree_stats_json(const DegreeStats& stats);

/// Increment and decrement statistics plus the inference graph's largest
/// degree and each strategy's relative gap.
std::string graph_gap_json(const GraphGapReport& report);

/// One {epoch, train_loss, val_mae, lr} object per line.
std::string history_jsonl(std::span<const EpochRecord> history);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace kits
