#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kits/graph.hpp"
#include "kits/tensor.hpp"

namespace kits {

/// Sensor readings (T x N, one column per node) plus the topology needed to
/// build the adjacency: coordinates, a distance edge list, or both.
struct Dataset {
  std::vector<std::string> node_ids;
  Tensor readings;
  /// Optional per-step timestamps and their calendar months (1..12).
  std::vector<std::string> timestamps;
  std::vector<int> months;
  std::optional<std::vector<Coord>> coords;
  DistanceMetric metric = DistanceMetric::euclidean;
  std::vector<DistanceEdge> edges;
  /// Kernel the data was generated or published with, if known.
  KernelOptions kernel;

  std::size_t steps() const { return readings.rank() == 2 ? readings.dim(0) : 0; }
  std::size_t nodes() const { return node_ids.size(); }

  /// Gaussian-kernel adjacency over all nodes. Coordinates win over the edge
  /// list when both exist.
  SpatialGraph graph(const KernelOptions& kernel) const;
  SpatialGraph graph() const { return graph(kernel); }

  /// Node-to-node distances: direct for coordinates, shortest paths over the
  /// edge list otherwise (infinity when unreachable).
  Tensor distances() const;
};

enum class TopologyFormat { auto_detect, edges, coords_planar, coords_latlon };

struct ReadingsTable {
  std::vector<std::string> node_ids;
  std::vector<std::string> timestamps;
  Tensor readings;
};

/// Canonical readings file: a header row of node ids, then one comma-separated
/// row per time step. A leading `timestamp` column is optional.
ReadingsTable read_readings(const std::filesystem::path& path);
void write_readings(const std::filesystem::path& path, const ReadingsTable& table);

/// `from,to,distance` rows with a header; ids refer to readings columns.
std::vector<DistanceEdge> read_edge_list(const std::filesystem::path& path,
                                         std::span<const std::string> node_ids);
/// `id,lat,lon` or `id,x,y` rows with a header; returned in node_ids order.
std::vector<Coord> read_coords(const std::filesystem::path& path,
                               std::span<const std::string> node_ids);
void write_coords(const std::filesystem::path& path, std::span<const std::string> node_ids,
                  std::span<const Coord> coords, DistanceMetric metric);

Dataset load(const std::filesystem::path& readings, const std::filesystem::path& topology,
             TopologyFormat format = TopologyFormat::auto_detect);

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - begin; }
};

struct TemporalSplit {
  std::vector<Segment> train;
  std::vector<Segment> val;
  std::vector<Segment> test;
};

std::size_t total_length(std::span<const Segment> segments);

/// Contiguous 70% / 10% / 20% segments, in time order.
TemporalSplit split_7_1_2(std::size_t steps);

/// Steps in `test_months` form the test set; the last eighth of the remaining
/// steps is validation and the rest is training.
TemporalSplit split_by_months(std::span<const int> months,
                              std::span<const int> test_months = std::vector<int>{3, 6, 9, 12});

enum class Scaling { none, zscore, minmax };

/// Normalisation fitted on the observed nodes of the training segments.
class Normalizer {
 public:
  static Normalizer fit(const Tensor& readings, std::span<const Segment> train,
                        std::span<const std::size_t> observed_nodes, Scaling scheme);

  Scaling scheme() const { return scheme_; }
  /// Column j of a (T x N) table is node j.
  Tensor transform(const Tensor& readings) const;
  Tensor inverse(const Tensor& normalized) const;
  double inverse_value(double v, std::size_t node) const;
  double transform_value(double v, std::size_t node) const;

  double mean() const { return mean_; }
  double stddev() const { return std_; }

 private:
  double offset(std::size_t node) const;
  double width(std::size_t node) const;

  Scaling scheme_ = Scaling::none;
  double mean_ = 0.0;
  double std_ = 1.0;
  double global_min_ = 0.0;
  double global_max_ = 1.0;
  std::vector<double> node_min_;
  std::vector<double> node_max_;
  std::vector<bool> node_fitted_;
};

struct SynthOptions {
  std::size_t n_nodes = 36;
  std::size_t steps = 2000;
  std::uint64_t topology_seed = 1;
  std::uint64_t dynamics_seed = 1;
  double mean_degree = 6.0;
  double coupling = 0.7;
  double season_amplitude = 0.25;
  double noise_amplitude = 0.05;
  std::size_t period = 24;
};

/// Random geometric graph in the unit square with diffusion readings
///   X[t+1] = coupling * rownorm(A) X[t] + season_amplitude * season(t)
///            + noise_amplitude * noise.
/// The connection radius starts at the value giving `mean_degree` and grows
/// until the graph is connected (5 attempts).
Dataset synth_generate(const SynthOptions& options);

}  // namespace kits
