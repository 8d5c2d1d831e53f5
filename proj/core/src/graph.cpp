#include "kits/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "kits/error.hpp"

namespace kits {

namespace {

void require_square(const Tensor& a, const char* what) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError(std::string(what) + ": expected a square matrix, got " +
                         to_string(a.shape()));
  }
}

double stddev(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double n = static_cast<double>(values.size());
  const double mu = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / n);
}

double kernel_weight(double dist, double gamma, const std::optional<double>& delta) {
  if (delta && dist > *delta) return 0.0;
  return std::exp(-dist * dist / gamma);
}

double resolve_gamma(const KernelOptions& kernel, std::span<const double> distances) {
  if (kernel.gamma) {
    if (!(*kernel.gamma > 0.0)) throw ConfigError("kernel width gamma must be positive");
    return *kernel.gamma;
  }
  const double sd = stddev(distances);
  if (!(sd > 0.0)) throw DataError("cannot derive kernel width: distances have zero spread");
  return sd * sd;
}

void check_delta(const KernelOptions& kernel) {
  if (kernel.delta && !(*kernel.delta > 0.0)) {
    throw ConfigError("distance threshold delta must be positive");
  }
}

// Hilbert curve index of (x, y) on a 2^order grid.
std::uint64_t hilbert_index(std::uint32_t x, std::uint32_t y, unsigned order) {
  std::uint64_t d = 0;
  for (std::uint32_t s = 1u << (order - 1); s > 0; s >>= 1) {
    const std::uint32_t rx = (x & s) ? 1 : 0;
    const std::uint32_t ry = (y & s) ? 1 : 0;
    d += static_cast<std::uint64_t>(s) * s * ((3 * rx) ^ ry);
    if (ry == 0) {
      if (rx == 1) {
        x = s - 1 - x;
        y = s - 1 - y;
      }
      std::swap(x, y);
    }
  }
  return d;
}

std::vector<std::size_t> hilbert_order(std::span<const Coord> coords) {
  constexpr unsigned kOrder = 16;
  double min_x = coords[0].x, max_x = coords[0].x;
  double min_y = coords[0].y, max_y = coords[0].y;
  for (const Coord& c : coords) {
    min_x = std::min(min_x, c.x);
    max_x = std::max(max_x, c.x);
    min_y = std::min(min_y, c.y);
    max_y = std::max(max_y, c.y);
  }
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-12});
  const double cells = static_cast<double>((1u << kOrder) - 1);
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto gx = static_cast<std::uint32_t>((coords[i].x - min_x) / span * cells);
    const auto gy = static_cast<std::uint32_t>((coords[i].y - min_y) / span * cells);
    keyed.emplace_back(hilbert_index(gx, gy, kOrder), i);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> order;
  order.reserve(keyed.size());
  for (const auto& [key, i] : keyed) order.push_back(i);
  return order;
}

std::size_t target_missing_count(std::size_t n, double alpha) {
  return static_cast<std::size_t>(std::llround(alpha * static_cast<double>(n)));
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t SpatialGraph::count(NodeRole role) const {
  return static_cast<std::size_t>(std::count(roles.begin(), roles.end(), role));
}

std::vector<std::vector<std::size_t>> neighbor_map(const Tensor& adjacency) {
  require_square(adjacency, "neighbor_map");
  const std::size_t n = adjacency.dim(0);
  std::vector<std::vector<std::size_t>> map(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && adjacency(i, j) > 0.0) map[i].push_back(j);
    }
  }
  return map;
}

std::vector<std::vector<std::size_t>> SpatialGraph::neighbor_map() const {
  return kits::neighbor_map(weights);
}

SpatialGraph SpatialGraph::subgraph(std::span<const std::size_t> nodes) const {
  SpatialGraph sub;
  const std::size_t k = nodes.size();
  sub.weights = Tensor({k, k});
  sub.metric = metric;
  for (std::size_t a = 0; a < k; ++a) {
    if (nodes[a] >= size()) throw IndexError("subgraph: node index out of range");
    sub.roles.push_back(roles[nodes[a]]);
    for (std::size_t b = 0; b < k; ++b) sub.weights(a, b) = weights(nodes[a], nodes[b]);
  }
  if (coords) {
    std::vector<Coord> c;
    for (std::size_t i : nodes) c.push_back((*coords)[i]);
    sub.coords = std::move(c);
  }
  return sub;
}

double haversine_km(Coord a, Coord b) {
  constexpr double kEarthRadiusKm = 6371.0088;
  const double to_rad = std::numbers::pi / 180.0;
  const double lat1 = a.x * to_rad;
  const double lat2 = b.x * to_rad;
  const double dlat = lat2 - lat1;
  const double dlon = (b.y - a.y) * to_rad;
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1) * std::cos(lat2) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

double distance(Coord a, Coord b, DistanceMetric metric) {
  if (metric == DistanceMetric::haversine) return haversine_km(a, b);
  return std::hypot(a.x - b.x, a.y - b.y);
}

Tensor pairwise_distances(std::span<const Coord> coords, DistanceMetric metric) {
  const std::size_t n = coords.size();
  Tensor d({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = distance(coords[i], coords[j], metric);
    }
  }
  return d;
}

SpatialGraph build_adjacency(std::size_t n_nodes, std::span<const DistanceEdge> edges,
                             const KernelOptions& kernel) {
  if (n_nodes == 0 || edges.empty()) throw DataError("build_adjacency: empty distance list");
  check_delta(kernel);
  std::vector<double> dists;
  dists.reserve(edges.size());
  for (const DistanceEdge& e : edges) {
    if (e.from >= n_nodes || e.to >= n_nodes) {
      throw DataError("build_adjacency: edge endpoint out of range");
    }
    if (!(e.distance >= 0.0) || !std::isfinite(e.distance)) {
      throw DataError("build_adjacency: negative or non-finite distance between nodes " +
                      std::to_string(e.from) + " and " + std::to_string(e.to));
    }
    dists.push_back(e.distance);
  }
  const double gamma = resolve_gamma(kernel, dists);
  SpatialGraph g;
  g.weights = Tensor({n_nodes, n_nodes});
  g.roles.assign(n_nodes, NodeRole::observed);
  for (std::size_t i = 0; i < n_nodes; ++i) g.weights(i, i) = 1.0;
  for (const DistanceEdge& e : edges) {
    g.weights(e.from, e.to) = kernel_weight(e.distance, gamma, kernel.delta);
  }
  return g;
}

SpatialGraph build_adjacency(std::span<const Coord> coords, const KernelOptions& kernel,
                             DistanceMetric metric) {
  if (coords.empty()) throw DataError("build_adjacency: no coordinates");
  check_delta(kernel);
  const std::size_t n = coords.size();
  const Tensor d = pairwise_distances(coords, metric);
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) dists.push_back(d(i, j));
  }
  const double gamma = n > 1 ? resolve_gamma(kernel, dists) : kernel.gamma.value_or(1.0);
  SpatialGraph g;
  g.weights = Tensor({n, n});
  g.roles.assign(n, NodeRole::observed);
  g.coords = std::vector<Coord>(coords.begin(), coords.end());
  g.metric = metric;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g.weights(i, j) = kernel_weight(d(i, j), gamma, kernel.delta);
  }
  return g;
}

// ---------------------------------------------------------------------------

std::vector<NodeRole> apply_missing(const SpatialGraph& graph, const MissingPattern& pattern) {
  if (!(pattern.alpha > 0.0 && pattern.alpha < 1.0)) {
    throw ConfigError("missing ratio alpha must lie in (0, 1)");
  }
  const std::size_t n = graph.size();
  std::vector<NodeRole> roles(n, NodeRole::observed);
  Rng rng(pattern.seed);

  if (pattern.kind == MissingKind::random) {
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.uniform() < pattern.alpha) roles[i] = NodeRole::unobserved;
    }
    return roles;
  }

  const bool has_coords = graph.coords.has_value() && graph.coords->size() == n;
  if (!has_coords && !pattern.index_fallback) {
    throw ConfigError("structured missing pattern needs coordinates or an index fallback");
  }
  const std::size_t missing = target_missing_count(n, pattern.alpha);
  if (missing == 0) return roles;

  if (pattern.kind == MissingKind::fine_to_coarse) {
    std::vector<std::size_t> order(n);
    if (has_coords) {
      order = hilbert_order(*graph.coords);
    } else {
      std::iota(order.begin(), order.end(), 0);
    }
    const double stride = static_cast<double>(n) / static_cast<double>(missing);
    const double offset = rng.uniform() * stride;
    for (std::size_t k = 0; k < missing; ++k) {
      const auto pos = static_cast<std::size_t>(offset + static_cast<double>(k) * stride);
      roles[order[std::min(pos, n - 1)]] = NodeRole::unobserved;
    }
    return roles;
  }

  // Region: observed sensors cluster around a centre; the far nodes are missing.
  std::size_t center = 0;
  std::vector<double> dist(n);
  if (has_coords) {
    const auto& c = *graph.coords;
    if (pattern.region_center_from_seed) {
      center = rng.uniform_index(n);
    } else {
      Coord centroid;
      for (const Coord& p : c) {
        centroid.x += p.x / static_cast<double>(n);
        centroid.y += p.y / static_cast<double>(n);
      }
      double best = 1e300;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = distance(c[i], centroid, graph.metric);
        if (d < best) {
          best = d;
          center = i;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) dist[i] = distance(c[i], c[center], graph.metric);
  } else {
    center = pattern.region_center_from_seed ? rng.uniform_index(n) : n / 2;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::abs(static_cast<double>(i) - static_cast<double>(center));
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  for (std::size_t k = n - missing; k < n; ++k) roles[order[k]] = NodeRole::unobserved;
  return roles;
}

std::vector<std::size_t> nodes_with_role(std::span<const NodeRole> roles, NodeRole role) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == role) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<NodeRole> AugmentedGraph::roles() const {
  std::vector<NodeRole> r(size(), NodeRole::virtual_node);
  std::fill_n(r.begin(), n_observed, NodeRole::observed);
  return r;
}

std::size_t virtual_node_count(std::size_t n_observed, double alpha, double epsilon) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("missing ratio alpha must lie in (0, 1)");
  const double no = static_cast<double>(n_observed);
  const auto total = static_cast<std::size_t>(no / (1.0 - alpha + epsilon));
  return total > n_observed ? total - n_observed : 0;
}

AugmentedGraph insert_virtual_nodes(const Tensor& observed_adjacency,
                                    const AugmentOptions& options, Rng& rng) {
  require_square(observed_adjacency, "insert_virtual_nodes");
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) {
    throw ConfigError("missing ratio alpha must lie in (0, 1)");
  }
  if (options.epsilon_min > options.epsilon_max) throw ConfigError("empty epsilon range");
  const std::size_t n_obs = observed_adjacency.dim(0);
  if (n_obs == 0) throw DataError("insert_virtual_nodes: no observed nodes");

  AugmentedGraph out;
  out.n_observed = n_obs;
  out.epsilon = rng.uniform(options.epsilon_min, options.epsilon_max);
  out.n_virtual = virtual_node_count(n_obs, options.alpha, out.epsilon);
  const std::size_t n = out.size();

  out.adjacency = Tensor({n, n});
  out.edge_mask = Tensor({n, n});
  for (std::size_t i = 0; i < n_obs; ++i) {
    for (std::size_t j = 0; j < n_obs; ++j) {
      out.adjacency(i, j) = observed_adjacency(i, j);
      out.edge_mask(i, j) = 1.0;
    }
  }

  auto neighbors = neighbor_map(observed_adjacency);
  neighbors.reserve(n);
  for (std::size_t e = n_obs; e < n; ++e) {
    const std::size_t picked = rng.uniform_index(neighbors.size());
    std::vector<std::size_t> candidates{picked};
    const double p = rng.uniform();
    for (std::size_t u : neighbors[picked]) {
      if (rng.uniform() < p) candidates.push_back(u);
    }
    for (std::size_t c : candidates) {
      neighbors[c].push_back(e);
      // 0 forward, 1 backward, 2 both.
      const std::size_t status = rng.uniform_index(3);
      if (status == 0 || status == 2) out.edge_mask(c, e) = 1.0;
      if (status == 1 || status == 2) out.edge_mask(e, c) = 1.0;
    }
    neighbors.push_back(std::move(candidates));
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i < n_obs && j < n_obs) continue;
      out.adjacency(i, j) = out.edge_mask(i, j);
    }
  }
  return out;
}

Tensor remove_self_loops(Tensor a) {
  require_square(a, "remove_self_loops");
  for (std::size_t i = 0; i < a.dim(0); ++i) a(i, i) = 0.0;
  return a;
}

std::vector<std::size_t> undirected_degrees(const Tensor& adjacency) {
  require_square(adjacency, "undirected_degrees");
  const std::size_t n = adjacency.dim(0);
  std::vector<std::size_t> deg(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (adjacency(i, j) != 0.0 || adjacency(j, i) != 0.0) {
        ++deg[i];
        ++deg[j];
      }
    }
  }
  return deg;
}

std::size_t largest_degree(const Tensor& adjacency) {
  const auto deg = undirected_degrees(adjacency);
  return deg.empty() ? 0 : *std::max_element(deg.begin(), deg.end());
}

DegreeStats summarize_degrees(std::span<const double> largest, std::span<const double> mean) {
  if (largest.empty()) throw ContractError("degree_stats: empty batch of graphs");
  DegreeStats s;
  s.n_graphs = largest.size();
  std::vector<double> sorted(largest.begin(), largest.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  s.avg = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  s.min = sorted.front();
  s.max = sorted.back();
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  s.mean_degree = mean.empty() ? 0.0 : std::accumulate(mean.begin(), mean.end(), 0.0) /
                                           static_cast<double>(mean.size());
  return s;
}

DegreeStats degree_stats(std::span<const Tensor> graphs) {
  std::vector<double> largest, mean;
  for (const Tensor& g : graphs) {
    const auto deg = undirected_degrees(g);
    largest.push_back(deg.empty() ? 0.0 : static_cast<double>(*std::max_element(deg.begin(), deg.end())));
    mean.push_back(deg.empty() ? 0.0
                               : static_cast<double>(std::accumulate(deg.begin(), deg.end(), std::size_t{0})) /
                                     static_cast<double>(deg.size()));
  }
  return summarize_degrees(largest, mean);
}

}  // namespace kits
