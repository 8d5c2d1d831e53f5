#pragma once

#include <cstddef>
#include <span>

namespace kits {

/// Error metrics over an evaluation index set. MAPE skips entries whose label
/// is exactly zero and reports how many it skipped.
struct MetricsReport {
  double mae = 0.0;
  double mape = 0.0;
  double mre = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
  std::size_t n_points = 0;
  std::size_t n_mape_excluded = 0;
};

/// Metrics of `predicted` against `truth` restricted to positions `omega`.
///
/// R2 uses the squared total sum of squares; when the labels over omega are
/// constant it is 1 for an exact fit and 0 otherwise.
MetricsReport evaluate(std::span<const double> truth, std::span<const double> predicted,
                       std::span<const std::size_t> omega);

}  // namespace kits
