#include "kits/metrics.hpp"

#include <cmath>
#include <string>

#include "kits/error.hpp"

namespace kits {

MetricsReport evaluate(std::span<const double> truth, std::span<const double> predicted,
                       std::span<const std::size_t> omega) {
  if (truth.size() != predicted.size()) {
    throw DimensionError("evaluate: " + std::to_string(truth.size()) + " labels vs " +
                         std::to_string(predicted.size()) + " predictions");
  }
  if (omega.empty()) throw ContractError("evaluate: empty evaluation index set");

  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double label_abs_sum = 0.0;
  double label_sum = 0.0;
  double ape_sum = 0.0;
  std::size_t ape_count = 0;
  for (std::size_t i : omega) {
    if (i >= truth.size()) throw IndexError("evaluate: index " + std::to_string(i) + " out of range");
    const double y = truth[i];
    const double err = y - predicted[i];
    abs_sum += std::abs(err);
    sq_sum += err * err;
    label_abs_sum += std::abs(y);
    label_sum += y;
    if (y != 0.0) {
      ape_sum += std::abs(err) / std::abs(y);
      ++ape_count;
    }
  }
  const double n = static_cast<double>(omega.size());
  if (label_abs_sum == 0.0) {
    throw NumericalError("evaluate: all labels are zero, MAPE and MRE are undefined");
  }

  const double label_mean = label_sum / n;
  double total_ss = 0.0;
  for (std::size_t i : omega) total_ss += (label_mean - truth[i]) * (label_mean - truth[i]);

  MetricsReport r;
  r.n_points = omega.size();
  r.n_mape_excluded = omega.size() - ape_count;
  r.mae = abs_sum / n;
  r.mape = ape_sum / static_cast<double>(ape_count);
  r.mre = abs_sum / label_abs_sum;
  r.rmse = std::sqrt(sq_sum / n);
  if (total_ss > 0.0) {
    r.r2 = 1.0 - sq_sum / total_ss;
  } else {
    r.r2 = sq_sum == 0.0 ? 1.0 : 0.0;
  }
  return r;
}

}  // namespace kits
