#include "kits/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kits/error.hpp"

namespace kits {

double Variogram::operator()(double h) const {
  if (h == 0.0) return 0.0;
  if (!std::isfinite(h)) return nugget + sill;
  return nugget + sill * (1.0 - std::exp(-(h * h) / (range * range)));
}

namespace {

void check_variogram(const Variogram& v) {
  if (!(v.sill > 0.0) || !(v.nugget >= 0.0) || !(v.range > 0.0)) {
    throw ConfigError("variogram needs sill > 0, range > 0 and nugget >= 0");
  }
}

Tensor select_columns(const Tensor& x, std::span<const std::size_t> cols) {
  Tensor out({x.rows(), cols.size()});
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(t, j) = x(t, cols[j]);
  }
  return out;
}

Tensor select(const Tensor& d, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Tensor out({rows.size(), cols.size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = d(rows[i], cols[j]);
  }
  return out;
}

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix kriging_system(const Tensor& obs_dists, const Variogram& v) {
  const Eigen::Index n = static_cast<Eigen::Index>(obs_dists.dim(0));
  Matrix a(n + 1, n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      a(i, j) = v(obs_dists(static_cast<std::size_t>(i), static_cast<std::size_t>(j)));
    }
    a(i, n) = 1.0;
    a(n, i) = 1.0;
  }
  a(n, n) = 0.0;
  return a;
}

Matrix solve_system(const Matrix& a, const Matrix& rhs) {
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  if (qr.rank() < a.rows()) {
    throw NumericalError("ordinary kriging system is singular (rank " + std::to_string(qr.rank()) +
                         " of " + std::to_string(a.rows()) + ")");
  }
  Matrix w = qr.solve(rhs);
  if (!w.allFinite()) throw NumericalError("ordinary kriging produced non-finite weights");
  return w;
}

}  // namespace

Tensor mean_impute(const Tensor& x_obs, std::size_t n_targets) {
  if (x_obs.cols() == 0 || x_obs.size() == 0) {
    throw DataError("mean imputation needs at least one observed value per interval");
  }
  Tensor out({x_obs.rows(), n_targets});
  for (std::size_t t = 0; t < x_obs.rows(); ++t) {
    const auto row = x_obs.row(t);
    const double m = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
    for (std::size_t j = 0; j < n_targets; ++j) out(t, j) = m;
  }
  return out;
}

Tensor knn_krige(const Tensor& x_obs, const Tensor& dists, std::size_t k) {
  if (k == 0) throw ConfigError("knn needs k >= 1");
  const std::size_t n_obs = x_obs.cols();
  if (dists.rank() != 2 || dists.dim(1) != n_obs) {
    throw DimensionError("knn distances " + to_string(dists.shape()) + " vs readings " +
                         to_string(x_obs.shape()));
  }
  const std::size_t n_targets = dists.dim(0);
  Tensor out({x_obs.rows(), n_targets});
  std::vector<std::size_t> order(n_obs);
  for (std::size_t u = 0; u < n_targets; ++u) {
    order.clear();
    for (std::size_t j = 0; j < n_obs; ++j) {
      if (std::isfinite(dists(u, j))) order.push_back(j);
    }
    if (order.empty()) {
      throw DataError("node " + std::to_string(u) + " has no observed node at finite distance");
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dists(u, a) < dists(u, b); });
    const std::size_t used = std::min(k, order.size());
    for (std::size_t t = 0; t < x_obs.rows(); ++t) {
      double s = 0.0;
      for (std::size_t q = 0; q < used; ++q) s += x_obs(t, order[q]);
      out(t, u) = s / static_cast<double>(used);
    }
  }
  return out;
}

std::vector<double> okriging_weights(const Tensor& obs_dists, std::span<const double> target_dists,
                                     const Variogram& variogram) {
  check_variogram(variogram);
  const std::size_t n = obs_dists.dim(0);
  if (target_dists.size() != n) throw DimensionError("okriging target distances do not match");
  Matrix rhs(n + 1, 1);
  for (std::size_t i = 0; i < n; ++i) rhs(static_cast<Eigen::Index>(i), 0) = variogram(target_dists[i]);
  rhs(static_cast<Eigen::Index>(n), 0) = 1.0;
  const Matrix w = solve_system(kriging_system(obs_dists, variogram), rhs);
  return std::vector<double>(w.data(), w.data() + n);
}

Tensor okriging(const Tensor& x_obs, const Tensor& obs_dists, const Tensor& target_dists,
                const Variogram& variogram) {
  check_variogram(variogram);
  const std::size_t n = obs_dists.dim(0);
  if (x_obs.cols() != n || target_dists.dim(1) != n) {
    throw DimensionError("okriging inputs disagree on the observed node count");
  }
  const std::size_t n_targets = target_dists.dim(0);
  Matrix rhs(n + 1, n_targets);
  for (std::size_t u = 0; u < n_targets; ++u) {
    for (std::size_t i = 0; i < n; ++i) {
      rhs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u)) = variogram(target_dists(u, i));
    }
    rhs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(u)) = 1.0;
  }
  const Matrix w = solve_system(kriging_system(obs_dists, variogram), rhs);
  const auto x = Eigen::Map<const Matrix>(x_obs.raw(), static_cast<Eigen::Index>(x_obs.rows()),
                                          static_cast<Eigen::Index>(n));
  Tensor out({x_obs.rows(), n_targets});
  Eigen::Map<Matrix>(out.raw(), static_cast<Eigen::Index>(x_obs.rows()),
                     static_cast<Eigen::Index>(n_targets)) = x * w.topRows(static_cast<Eigen::Index>(n));
  return out;
}

Variogram default_variogram(const Tensor& x_obs, double delta) {
  const auto data = x_obs.data();
  const double n = static_cast<double>(data.size());
  const double mean = std::accumulate(data.begin(), data.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : data) ss += (v - mean) * (v - mean);
  Variogram v;
  v.sill = ss / n;
  if (!(v.sill > 0.0)) throw DataError("okriging: observed readings have zero variance");
  v.range = delta / 2.0;
  v.nugget = 1e-6 * v.sill;
  return v;
}

Tensor run_baseline(const BaselineSpec& spec, const Tensor& readings,
                    std::span<const NodeRole> roles, const Tensor& dists, double delta) {
  const auto observed = nodes_with_role(roles, NodeRole::observed);
  const auto targets = nodes_with_role(roles, NodeRole::unobserved);
  const Tensor x_obs = select_columns(readings, observed);
  Tensor est;
  switch (spec.kind) {
    case BaselineKind::mean:
      est = mean_impute(x_obs, targets.size());
      break;
    case BaselineKind::knn:
      est = knn_krige(x_obs, select(dists, targets, observed), spec.k);
      break;
    case BaselineKind::okriging: {
      const Variogram v = spec.variogram ? *spec.variogram : default_variogram(x_obs, delta);
      est = okriging(x_obs, select(dists, observed, observed), select(dists, targets, observed), v);
      break;
    }
  }
  Tensor out = readings;
  for (std::size_t t = 0; t < readings.rows(); ++t) {
    for (std::size_t j = 0; j < targets.size(); ++j) out(t, targets[j]) = est(t, j);
  }
  return out;
}

}  // namespace kits
