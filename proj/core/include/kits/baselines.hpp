#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "kits/graph.hpp"
#include "kits/tensor.hpp"

namespace kits {

/// Gaussian variogram with a nugget: 0 at h = 0, else
/// nugget + sill * (1 - exp(-h^2 / range^2)).
struct Variogram {
  double range = 1.0;
  double sill = 1.0;
  double nugget = 0.0;

  double operator()(double h) const;
};

enum class BaselineKind { mean, knn, okriging };

struct BaselineSpec {
  BaselineKind kind = BaselineKind::mean;
  std::size_t k = 10;
  /// Unset: sill from the data variance, range = delta / 2, nugget = 1e-6 * sill.
  std::optional<Variogram> variogram;
};

/// Per-interval mean of the observed columns of `x_obs` (t x N_o), repeated for
/// `n_targets` columns.
Tensor mean_impute(const Tensor& x_obs, std::size_t n_targets);

/// Unweighted mean of the k nearest observed nodes. `dists` is N_u x N_o;
/// infinite entries are unreachable. Returns t x N_u.
Tensor knn_krige(const Tensor& x_obs, const Tensor& dists, std::size_t k = 10);

/// Ordinary kriging weights for one target. `obs_dists` is N_o x N_o and
/// `target_dists` has N_o entries. The weights sum to 1.
std::vector<double> okriging_weights(const Tensor& obs_dists, std::span<const double> target_dists,
                                     const Variogram& variogram);

/// Ordinary kriging estimates, t x N_u. `target_dists` is N_u x N_o.
Tensor okriging(const Tensor& x_obs, const Tensor& obs_dists, const Tensor& target_dists,
                const Variogram& variogram);

Variogram default_variogram(const Tensor& x_obs, double delta);

/// Fills the unobserved columns of `readings` (t x N) with the baseline's
/// estimates; observed columns are copied through. `dists` is N x N.
Tensor run_baseline(const BaselineSpec& spec, const Tensor& readings,
                    std::span<const NodeRole> roles, const Tensor& dists, double delta);

}  // namespace kits
