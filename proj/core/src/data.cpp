#include "kits/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "kits/error.hpp"
#include "kits/rng.hpp"

namespace kits {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    start = comma + 1;
  }
  return cells;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string position(const std::filesystem::path& path, std::size_t row, std::size_t col) {
  return path.string() + " row " + std::to_string(row) + " col " + std::to_string(col);
}

double parse_number(const std::string& cell, const std::filesystem::path& path, std::size_t row,
                    std::size_t col) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || cell.empty() || !std::isfinite(value)) {
    throw DataError("non-numeric cell '" + cell + "' at " + position(path, row, col));
  }
  return value;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

bool is_time_column(const std::string& name) {
  const std::string n = lower(name);
  return n == "timestamp" || n == "time" || n == "datetime" || n == "date";
}

int month_of(const std::string& stamp) {
  // Expects YYYY-MM...
  if (stamp.size() < 7 || stamp[4] != '-') return 0;
  int month = 0;
  const auto [ptr, ec] = std::from_chars(stamp.data() + 5, stamp.data() + 7, month);
  if (ec != std::errc() || month < 1 || month > 12) return 0;
  return month;
}

std::unordered_map<std::string, std::size_t> index_of(std::span<const std::string> ids) {
  std::unordered_map<std::string, std::size_t> map;
  for (std::size_t i = 0; i < ids.size(); ++i) map.emplace(ids[i], i);
  return map;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

bool connected(const Tensor& a) {
  const std::size_t n = a.dim(0);
  if (n == 0) return true;
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t visited = 1;
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    for (std::size_t j = 0; j < n; ++j) {
      if (!seen[j] && (a(i, j) > 0.0 || a(j, i) > 0.0)) {
        seen[j] = true;
        ++visited;
        stack.push_back(j);
      }
    }
  }
  return visited == n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Files

ReadingsTable read_readings(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
  std::vector<std::string> header = split_csv(line);
  const bool has_time = !header.empty() && is_time_column(header.front());
  ReadingsTable table;
  table.node_ids.assign(header.begin() + (has_time ? 1 : 0), header.end());
  if (table.node_ids.empty()) throw DataError(path.string() + ": no node columns");
  const std::size_t width = header.size();

  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != width) {
      throw DataError("ragged row at " + path.string() + " row " + std::to_string(line_no) +
                      ": expected " + std::to_string(width) + " cells, got " +
                      std::to_string(cells.size()));
    }
    std::size_t c = 0;
    if (has_time) table.timestamps.push_back(cells[c++]);
    for (; c < width; ++c) values.push_back(parse_number(cells[c], path, line_no, c + 1));
    ++rows;
  }
  if (rows == 0) throw DataError(path.string() + ": no readings rows");
  table.readings = Tensor({rows, table.node_ids.size()}, std::move(values));
  return table;
}

void write_readings(const std::filesystem::path& path, const ReadingsTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const bool has_time = !table.timestamps.empty();
  if (has_time) out << "timestamp,";
  for (std::size_t j = 0; j < table.node_ids.size(); ++j) {
    out << (j ? "," : "") << table.node_ids[j];
  }
  out << '\n';
  const Tensor& r = table.readings;
  for (std::size_t t = 0; t < r.rows(); ++t) {
    if (has_time) out << table.timestamps.at(t) << ',';
    for (std::size_t j = 0; j < r.cols(); ++j) out << (j ? "," : "") << format_double(r(t, j));
    out << '\n';
  }
}

std::vector<DistanceEdge> read_edge_list(const std::filesystem::path& path,
                                         std::span<const std::string> node_ids) {
  std::ifstream in = open_input(path);
  const auto index = index_of(node_ids);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
  std::vector<DistanceEdge> edges;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3) {
      throw DataError("ragged row at " + path.string() + " row " + std::to_string(line_no));
    }
    const auto from = index.find(cells[0]);
    const auto to = index.find(cells[1]);
    if (from == index.end() || to == index.end()) {
      const std::string& bad = from == index.end() ? cells[0] : cells[1];
      throw DataError("unknown node id '" + bad + "' at " +
                      position(path, line_no, from == index.end() ? 1 : 2));
    }
    const double d = parse_number(cells[2], path, line_no, 3);
    if (d < 0.0) throw DataError("negative distance at " + position(path, line_no, 3));
    edges.push_back({from->second, to->second, d});
  }
  if (edges.empty()) throw DataError(path.string() + ": no edges");
  return edges;
}

std::vector<Coord> read_coords(const std::filesystem::path& path,
                               std::span<const std::string> node_ids) {
  std::ifstream in = open_input(path);
  const auto index = index_of(node_ids);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
  std::vector<Coord> coords(node_ids.size());
  std::vector<bool> seen(node_ids.size(), false);
  std::size_t line_no = 1;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3) {
      throw DataError("ragged row at " + path.string() + " row " + std::to_string(line_no));
    }
    const auto it = index.find(cells[0]);
    if (it == index.end()) {
      throw DataError("unknown node id '" + cells[0] + "' at " + position(path, line_no, 1));
    }
    coords[it->second] = {parse_number(cells[1], path, line_no, 2),
                          parse_number(cells[2], path, line_no, 3)};
    seen[it->second] = true;
    ++count;
  }
  if (count != node_ids.size() || std::count(seen.begin(), seen.end(), false) != 0) {
    throw DataError(path.string() + ": " + std::to_string(count) + " coordinate rows for " +
                    std::to_string(node_ids.size()) + " readings columns");
  }
  return coords;
}

void write_coords(const std::filesystem::path& path, std::span<const std::string> node_ids,
                  std::span<const Coord> coords, DistanceMetric metric) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << (metric == DistanceMetric::haversine ? "id,lat,lon\n" : "id,x,y\n");
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    out << node_ids[i] << ',' << format_double(coords[i].x) << ',' << format_double(coords[i].y)
        << '\n';
  }
}

Dataset load(const std::filesystem::path& readings, const std::filesystem::path& topology,
             TopologyFormat format) {
  ReadingsTable table = read_readings(readings);
  Dataset ds;
  ds.node_ids = std::move(table.node_ids);
  ds.readings = std::move(table.readings);
  ds.timestamps = std::move(table.timestamps);
  if (!ds.timestamps.empty()) {
    ds.months.reserve(ds.timestamps.size());
    for (const auto& s : ds.timestamps) ds.months.push_back(month_of(s));
    if (std::count(ds.months.begin(), ds.months.end(), 0) != 0) ds.months.clear();
  }

  if (format == TopologyFormat::auto_detect) {
    std::ifstream in = open_input(topology);
    std::string line;
    std::getline(in, line);
    const auto header = split_csv(lower(line));
    if (header.size() == 3 && (header[1] == "lat" || header[1] == "latitude")) {
      format = TopologyFormat::coords_latlon;
    } else if (header.size() == 3 && header[1] == "x") {
      format = TopologyFormat::coords_planar;
    } else if (header.size() == 3) {
      format = TopologyFormat::edges;
    } else {
      throw DataError(topology.string() + ": unrecognised topology header '" + line + "'");
    }
  }
  if (format == TopologyFormat::edges) {
    ds.edges = read_edge_list(topology, ds.node_ids);
  } else {
    ds.coords = read_coords(topology, ds.node_ids);
    ds.metric = format == TopologyFormat::coords_latlon ? DistanceMetric::haversine
                                                        : DistanceMetric::euclidean;
  }
  return ds;
}

// ---------------------------------------------------------------------------

SpatialGraph Dataset::graph(const KernelOptions& k) const {
  if (coords) return build_adjacency(*coords, k, metric);
  return build_adjacency(nodes(), edges, k);
}

Tensor Dataset::distances() const {
  if (coords) return pairwise_distances(*coords, metric);
  const std::size_t n = nodes();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(n);
  for (const DistanceEdge& e : edges) {
    adj[e.from].emplace_back(e.to, e.distance);
    adj[e.to].emplace_back(e.from, e.distance);
  }
  Tensor d({n, n}, kInf);
  using Item = std::pair<double, std::size_t>;
  for (std::size_t s = 0; s < n; ++s) {
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    d(s, s) = 0.0;
    queue.emplace(0.0, s);
    while (!queue.empty()) {
      const auto [dist, u] = queue.top();
      queue.pop();
      if (dist > d(s, u)) continue;
      for (const auto& [v, w] : adj[u]) {
        if (dist + w < d(s, v)) {
          d(s, v) = dist + w;
          queue.emplace(d(s, v), v);
        }
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Splits

std::size_t total_length(std::span<const Segment> segments) {
  std::size_t n = 0;
  for (const Segment& s : segments) n += s.length();
  return n;
}

TemporalSplit split_7_1_2(std::size_t steps) {
  if (steps < 10) throw DataError("split needs at least 10 time steps, got " + std::to_string(steps));
  const std::size_t n_train = steps * 7 / 10;
  const std::size_t n_val = steps / 10;
  TemporalSplit s;
  s.train.push_back({0, n_train});
  s.val.push_back({n_train, n_train + n_val});
  s.test.push_back({n_train + n_val, steps});
  return s;
}

TemporalSplit split_by_months(std::span<const int> months, std::span<const int> test_months) {
  if (months.empty()) throw DataError("month split requires timestamps");
  auto is_test = [&](std::size_t t) {
    return std::find(test_months.begin(), test_months.end(), months[t]) != test_months.end();
  };
  std::vector<Segment> test, rest;
  for (std::size_t t = 0; t < months.size();) {
    const bool flag = is_test(t);
    std::size_t e = t;
    while (e < months.size() && is_test(e) == flag) ++e;
    (flag ? test : rest).push_back({t, e});
    t = e;
  }
  TemporalSplit s;
  s.test = std::move(test);
  const std::size_t n_rest = total_length(rest);
  std::size_t n_val = n_rest / 8;
  if (n_rest == 0 || s.test.empty()) throw DataError("month split leaves an empty segment");
  // Peel validation off the end of the non-test steps.
  for (auto it = rest.rbegin(); it != rest.rend() && n_val > 0; ++it) {
    const std::size_t take = std::min(n_val, it->length());
    s.val.insert(s.val.begin(), {it->end - take, it->end});
    it->end -= take;
    n_val -= take;
  }
  for (const Segment& seg : rest) {
    if (seg.length() > 0) s.train.push_back(seg);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Normalization

Normalizer Normalizer::fit(const Tensor& readings, std::span<const Segment> train,
                           std::span<const std::size_t> observed_nodes, Scaling scheme) {
  Normalizer n;
  n.scheme_ = scheme;
  if (scheme == Scaling::none) return n;
  if (total_length(train) == 0 || observed_nodes.empty()) {
    throw DataError("normalization needs a nonempty training segment and observed nodes");
  }
  const std::size_t n_nodes = readings.cols();
  if (scheme == Scaling::zscore) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const Segment& seg : train) {
      for (std::size_t t = seg.begin; t < seg.end; ++t) {
        for (std::size_t j : observed_nodes) {
          sum += readings(t, j);
          ++count;
        }
      }
    }
    n.mean_ = sum / static_cast<double>(count);
    double ss = 0.0;
    for (const Segment& seg : train) {
      for (std::size_t t = seg.begin; t < seg.end; ++t) {
        for (std::size_t j : observed_nodes) {
          const double d = readings(t, j) - n.mean_;
          ss += d * d;
        }
      }
    }
    n.std_ = std::sqrt(ss / static_cast<double>(count));
    if (!(n.std_ > 0.0)) throw DataError("zscore: training readings have zero standard deviation");
    return n;
  }

  n.node_min_.assign(n_nodes, 0.0);
  n.node_max_.assign(n_nodes, 1.0);
  n.node_fitted_.assign(n_nodes, false);
  n.global_min_ = std::numeric_limits<double>::infinity();
  n.global_max_ = -std::numeric_limits<double>::infinity();
  for (std::size_t j : observed_nodes) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const Segment& seg : train) {
      for (std::size_t t = seg.begin; t < seg.end; ++t) {
        lo = std::min(lo, readings(t, j));
        hi = std::max(hi, readings(t, j));
      }
    }
    if (!(hi > lo)) {
      throw DataError("minmax: node " + std::to_string(j) + " has a constant training series");
    }
    n.node_min_[j] = lo;
    n.node_max_[j] = hi;
    n.node_fitted_[j] = true;
    n.global_min_ = std::min(n.global_min_, lo);
    n.global_max_ = std::max(n.global_max_, hi);
  }
  return n;
}

double Normalizer::offset(std::size_t node) const {
  switch (scheme_) {
    case Scaling::none: return 0.0;
    case Scaling::zscore: return mean_;
    case Scaling::minmax: return node_fitted_.at(node) ? node_min_[node] : global_min_;
  }
  return 0.0;
}

double Normalizer::width(std::size_t node) const {
  switch (scheme_) {
    case Scaling::none: return 1.0;
    case Scaling::zscore: return std_;
    case Scaling::minmax:
      return node_fitted_.at(node) ? node_max_[node] - node_min_[node] : global_max_ - global_min_;
  }
  return 1.0;
}

double Normalizer::transform_value(double v, std::size_t node) const {
  return (v - offset(node)) / width(node);
}

double Normalizer::inverse_value(double v, std::size_t node) const {
  return v * width(node) + offset(node);
}

Tensor Normalizer::transform(const Tensor& readings) const {
  Tensor out(readings.shape());
  for (std::size_t t = 0; t < readings.rows(); ++t) {
    for (std::size_t j = 0; j < readings.cols(); ++j) out(t, j) = transform_value(readings(t, j), j);
  }
  return out;
}

Tensor Normalizer::inverse(const Tensor& normalized) const {
  Tensor out(normalized.shape());
  for (std::size_t t = 0; t < normalized.rows(); ++t) {
    for (std::size_t j = 0; j < normalized.cols(); ++j) {
      out(t, j) = inverse_value(normalized(t, j), j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

Dataset synth_generate(const SynthOptions& o) {
  if (o.n_nodes < 4) throw ConfigError("synthetic dataset needs at least 4 nodes");
  if (o.steps == 0 || o.period == 0) throw ConfigError("synthetic dataset needs steps and a period");
  Rng topo(o.topology_seed);
  std::vector<Coord> coords(o.n_nodes);
  for (Coord& c : coords) {
    c.x = topo.uniform();
    c.y = topo.uniform();
  }

  const double n = static_cast<double>(o.n_nodes);
  double radius = std::sqrt(o.mean_degree / (std::numbers::pi * (n - 1.0)));
  std::optional<SpatialGraph> graph;
  for (int attempt = 0; attempt < 5; ++attempt) {
    KernelOptions kernel;
    kernel.delta = radius;
    SpatialGraph g = build_adjacency(coords, kernel, DistanceMetric::euclidean);
    if (connected(g.weights)) {
      graph = std::move(g);
      break;
    }
    radius *= 1.25;
  }
  if (!graph) throw DataError("synthetic graph stayed disconnected after 5 radius increases");

  Dataset ds;
  ds.coords = coords;
  ds.metric = DistanceMetric::euclidean;
  ds.kernel.delta = radius;
  for (std::size_t i = 0; i < o.n_nodes; ++i) ds.node_ids.push_back("n" + std::to_string(i));

  // Row-normalised propagation matrix (self weight included).
  const Tensor& a = graph->weights;
  std::vector<std::vector<std::pair<std::size_t, double>>> prop(o.n_nodes);
  for (std::size_t i = 0; i < o.n_nodes; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < o.n_nodes; ++j) row += a(i, j);
    for (std::size_t j = 0; j < o.n_nodes; ++j) {
      if (a(i, j) > 0.0) prop[i].emplace_back(j, a(i, j) / row);
    }
  }
  std::vector<double> phase(o.n_nodes);
  for (std::size_t i = 0; i < o.n_nodes; ++i) {
    phase[i] = std::numbers::pi * (coords[i].x + coords[i].y);
  }

  Rng dyn(o.dynamics_seed);
  ds.readings = Tensor({o.steps, o.n_nodes});
  for (std::size_t i = 0; i < o.n_nodes; ++i) ds.readings(0, i) = dyn.uniform();
  const double omega = 2.0 * std::numbers::pi / static_cast<double>(o.period);
  for (std::size_t t = 0; t + 1 < o.steps; ++t) {
    for (std::size_t i = 0; i < o.n_nodes; ++i) {
      double diffused = 0.0;
      for (const auto& [j, w] : prop[i]) diffused += w * ds.readings(t, j);
      const double season = std::sin(omega * static_cast<double>(t) + phase[i]);
      ds.readings(t + 1, i) = o.coupling * diffused + o.season_amplitude * season +
                              o.noise_amplitude * dyn.normal();
    }
  }
  return ds;
}

}  // namespace kits
