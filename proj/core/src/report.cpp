#include "kits/report.hpp"

#include <fstream>

#include "json.hpp"
#include "kits/error.hpp"

namespace kits {

namespace {

using nlohmann::ordered_json;

ordered_json stats_object(const DegreeStats& s) {
  return ordered_json{{"avg", s.avg},       {"median", s.median},
                      {"min", s.min},       {"max", s.max},
                      {"mean_degree", s.mean_degree}, {"n_graphs", s.n_graphs}};
}

}  // namespace

std::string metrics_json(const MetricsReport& r) {
  const ordered_json j{{"mae", r.mae},   {"mape", r.mape},         {"mre", r.mre},
                       {"rmse", r.rmse}, {"r2", r.r2},             {"n_points", r.n_points},
                       {"n_mape_excluded", r.n_mape_excluded}};
  return j.dump(2) + "\n";
}

std::string degree_stats_json(const DegreeStats& stats) { return stats_object(stats).dump(2) + "\n"; }

std::string graph_gap_json(const GraphGapReport& r) {
  const ordered_json j{{"increment", stats_object(r.increment)},
                       {"decrement", stats_object(r.decrement)},
                       {"inference_largest_degree", r.inference_largest_degree},
                       {"increment_relative_gap", r.increment_gap},
                       {"decrement_relative_gap", r.decrement_gap}};
  return j.dump(2) + "\n";
}

std::string history_jsonl(std::span<const EpochRecord> history) {
  std::string out;
  for (const EpochRecord& e : history) {
    const ordered_json j{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_mae", e.val_mae},
                         {"lr", e.lr}};
    out += j.dump() + "\n";
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw ConfigError("cannot write " + path.string());
}

}  // namespace kits
