#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kits/rng.hpp"
#include "kits/tensor.hpp"

namespace kits {

enum class NodeRole : std::uint8_t { observed, virtual_node, unobserved };

/// Planar (x, y) or geographic (lat, lon) position.
struct Coord {
  double x = 0.0;
  double y = 0.0;
};

enum class DistanceMetric { euclidean, haversine };

struct DistanceEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  double distance = 0.0;
};

/// Weighted adjacency over nodes with role labels. Weights are in [0, 1];
/// row i lists the nodes i aggregates from.
struct SpatialGraph {
  Tensor weights;
  std::vector<NodeRole> roles;
  std::optional<std::vector<Coord>> coords;
  DistanceMetric metric = DistanceMetric::euclidean;

  std::size_t size() const { return roles.size(); }
  std::size_t count(NodeRole role) const;
  /// neighbor_map()[i] = { j != i : weights(i, j) > 0 }.
  std::vector<std::vector<std::size_t>> neighbor_map() const;
  /// Induced subgraph on `nodes`, in the given order.
  SpatialGraph subgraph(std::span<const std::size_t> nodes) const;
};

std::vector<std::vector<std::size_t>> neighbor_map(const Tensor& adjacency);

/// Gaussian-kernel parameters. `gamma` unset means the squared standard
/// deviation of the distances; `delta` unset means no distance threshold.
struct KernelOptions {
  std::optional<double> gamma;
  std::optional<double> delta;
};

double haversine_km(Coord a, Coord b);
double distance(Coord a, Coord b, DistanceMetric metric);
Tensor pairwise_distances(std::span<const Coord> coords, DistanceMetric metric);

/// A(i,j) = exp(-dist(i,j)^2 / gamma) when dist(i,j) <= delta, else 0.
/// Edges are directed as listed; the diagonal is 1 (distance 0).
SpatialGraph build_adjacency(std::size_t n_nodes, std::span<const DistanceEdge> edges,
                             const KernelOptions& kernel);
SpatialGraph build_adjacency(std::span<const Coord> coords, const KernelOptions& kernel,
                             DistanceMetric metric = DistanceMetric::euclidean);

enum class MissingKind { random, fine_to_coarse, region };

struct MissingPattern {
  MissingKind kind = MissingKind::random;
  double alpha = 0.5;
  std::uint64_t seed = 1;
  /// Use node index order when the graph has no coordinates.
  bool index_fallback = false;
  /// Region pattern: pick the centre node from the seed instead of the node
  /// nearest the coordinate centroid.
  bool region_center_from_seed = false;
};

/// Splits nodes into observed / unobserved roles.
std::vector<NodeRole> apply_missing(const SpatialGraph& graph, const MissingPattern& pattern);

std::vector<std::size_t> nodes_with_role(std::span<const NodeRole> roles, NodeRole role);

struct AugmentOptions {
  double alpha = 0.5;
  double epsilon_min = 0.0;
  double epsilon_max = 0.2;
};

/// Observed graph expanded with virtual nodes. Nodes [0, n_observed) are the
/// observed ones in input order, followed by the virtual ones.
struct AugmentedGraph {
  Tensor adjacency;  ///< (A masked by edge_mask), N x N
  Tensor edge_mask;  ///< 1 where an edge direction is enabled
  std::size_t n_observed = 0;
  std::size_t n_virtual = 0;
  double epsilon = 0.0;

  std::size_t size() const { return n_observed + n_virtual; }
  std::vector<NodeRole> roles() const;
};

/// int(n_observed / (1 - alpha + epsilon)) - n_observed.
std::size_t virtual_node_count(std::size_t n_observed, double alpha, double epsilon);

/// Inserts virtual nodes one at a time. Each picks a random existing node v
/// (observed or previously inserted), links to v, and links to each
/// neighbour of v with a per-node probability p ~ U[0,1]. Every link gets a
/// random direction status {forward, backward, both}. Virtual links carry
/// weight 1.
AugmentedGraph insert_virtual_nodes(const Tensor& observed_adjacency,
                                    const AugmentOptions& options, Rng& rng);

/// Copy of `a` with a zero diagonal.
Tensor remove_self_loops(Tensor a);

/// Per-node count of distinct neighbours, an edge counted if either direction
/// is present. Self-loops are ignored.
std::vector<std::size_t> undirected_degrees(const Tensor& adjacency);
std::size_t largest_degree(const Tensor& adjacency);

struct DegreeStats {
  double avg = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
  double mean_degree = 0.0;
  std::size_t n_graphs = 0;
};

/// Statistics of the per-graph largest degree across a batch of graphs.
DegreeStats degree_stats(std::span<const Tensor> graphs);
/// Same statistics from precomputed per-graph largest and mean degrees.
DegreeStats summarize_degrees(std::span<const double> largest, std::span<const double> mean);

}  // namespace kits
