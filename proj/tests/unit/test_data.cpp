#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kits/data.hpp"
#include "kits/error.hpp"
#include "kits/rng.hpp"

using namespace kits;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "kits_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Readings, RoundTripIsExact) {
  ReadingsTable t;
  t.node_ids = {"a", "b", "c"};
  t.timestamps = {"2024-01-01 00:00", "2024-01-01 01:00"};
  t.readings = Tensor::matrix({{0.1, 1.0 / 3.0, -2.5e-7}, {1e10, 0.0, 42.0}});
  const fs::path p = scratch("roundtrip.csv");
  write_readings(p, t);
  const ReadingsTable r = read_readings(p);
  EXPECT_EQ(r.node_ids, t.node_ids);
  EXPECT_EQ(r.timestamps, t.timestamps);
  EXPECT_EQ(r.readings, t.readings);
}

TEST(Readings, ErrorsNameTheCell) {
  const fs::path p = scratch("bad.csv");
  write_file(p, "a,b\n1,2\n3,x\n");
  const std::string msg = error_text([&] { read_readings(p); });
  EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("col 2"), std::string::npos) << msg;

  write_file(p, "a,b\n1,2\n3\n");
  EXPECT_NE(error_text([&] { read_readings(p); }).find("ragged"), std::string::npos);
  write_file(p, "");
  EXPECT_THROW(read_readings(p), DataError);
  EXPECT_THROW(read_readings(scratch("does_not_exist.csv")), DataError);
}

TEST(Topology, EdgeListAndCoords) {
  const std::vector<std::string> ids{"n1", "n2", "n3"};
  const fs::path e = scratch("edges.csv");
  write_file(e, "from,to,distance\nn1,n2,1.5\nn2,n3,2\n");
  const auto edges = read_edge_list(e, ids);
  ASSERT_EQ(edges.size(), 2u);
  EXPECT_EQ(edges[1].from, 1u);
  EXPECT_EQ(edges[1].to, 2u);
  EXPECT_EQ(edges[1].distance, 2.0);

  write_file(e, "from,to,distance\nn1,n9,1.5\n");
  EXPECT_NE(error_text([&] { read_edge_list(e, ids); }).find("n9"), std::string::npos);
  write_file(e, "from,to,distance\nn1,n2,-1\n");
  EXPECT_THROW(read_edge_list(e, ids), DataError);

  const fs::path c = scratch("coords.csv");
  write_file(c, "id,x,y\nn3,2,0\nn1,0,0\nn2,1,0\n");
  const auto coords = read_coords(c, ids);
  EXPECT_EQ(coords[0].x, 0.0);
  EXPECT_EQ(coords[2].x, 2.0);
  write_file(c, "id,x,y\nn1,0,0\nn2,1,0\n");
  EXPECT_THROW(read_coords(c, ids), DataError);
}

TEST(Load, DetectsTopologyAndBuildsDistances) {
  const fs::path r = scratch("load_readings.csv");
  write_file(r, "n1,n2,n3\n1,2,3\n4,5,6\n");
  const fs::path e = scratch("load_edges.csv");
  write_file(e, "from,to,distance\nn1,n2,1\nn2,n3,2\n");
  const Dataset d = load(r, e);
  EXPECT_FALSE(d.coords.has_value());
  const Tensor dist = d.distances();
  EXPECT_EQ(dist(0, 2), 3.0);
  EXPECT_EQ(dist(2, 0), 3.0);
  EXPECT_EQ(dist(1, 1), 0.0);

  const fs::path c = scratch("load_coords.csv");
  write_file(c, "id,x,y\nn1,0,0\nn2,3,4\nn3,0,1\n");
  const Dataset dc = load(r, c);
  ASSERT_TRUE(dc.coords.has_value());
  EXPECT_EQ(dc.distances()(0, 1), 5.0);

  const fs::path bad = scratch("load_bad.csv");
  write_file(bad, "foo,bar\n1,2\n");
  EXPECT_THROW(load(r, bad), DataError);
}

TEST(Load, DisconnectedEdgeListGivesInfiniteDistance) {
  const fs::path r = scratch("disc_readings.csv");
  write_file(r, "a,b,c\n1,2,3\n");
  const fs::path e = scratch("disc_edges.csv");
  write_file(e, "from,to,distance\na,b,1\n");
  const Dataset d = load(r, e);
  EXPECT_TRUE(std::isinf(d.distances()(0, 2)));
}

TEST(Split, SevenOneTwo) {
  const TemporalSplit s = split_7_1_2(100);
  EXPECT_EQ(s.train[0].end, 70u);
  EXPECT_EQ(s.val[0].begin, 70u);
  EXPECT_EQ(s.val[0].end, 80u);
  EXPECT_EQ(s.test[0].end, 100u);
  const TemporalSplit odd = split_7_1_2(33);
  EXPECT_EQ(total_length(odd.train) + total_length(odd.val) + total_length(odd.test), 33u);
  EXPECT_THROW(split_7_1_2(9), DataError);
}

TEST(Split, ByMonthsHoldsOutQuarterEnds) {
  std::vector<int> months;
  for (int m = 1; m <= 12; ++m) months.insert(months.end(), 10, m);
  const TemporalSplit s = split_by_months(months);
  EXPECT_EQ(total_length(s.test), 40u);
  EXPECT_EQ(total_length(s.val), 80u / 8);
  EXPECT_EQ(total_length(s.train), 70u);
  for (const Segment& seg : s.test) {
    for (std::size_t t = seg.begin; t < seg.end; ++t) EXPECT_EQ(months[t] % 3, 0);
  }
  // Validation comes from the end of the non-test steps (November).
  EXPECT_EQ(s.val.back().end, 110u);
  EXPECT_THROW(split_by_months(std::vector<int>{}), DataError);
  EXPECT_THROW(split_by_months(std::vector<int>{1, 2}), DataError);
}

TEST(Normalizer, ZscoreUsesObservedTrainingEntries) {
  const Tensor x = Tensor::matrix({{1, 100}, {3, 100}, {50, 50}});
  const std::vector<Segment> train{{0, 2}};
  const std::vector<std::size_t> observed{0};
  const Normalizer n = Normalizer::fit(x, train, observed, Scaling::zscore);
  EXPECT_EQ(n.mean(), 2.0);
  EXPECT_EQ(n.stddev(), 1.0);
  const Tensor z = n.transform(x);
  EXPECT_EQ(z(0, 0), -1.0);
  EXPECT_EQ(z(1, 1), 98.0);
  EXPECT_EQ(n.inverse(z), x);
  const Tensor flat = Tensor::matrix({{2, 0}, {2, 0}});
  EXPECT_THROW(Normalizer::fit(flat, train, observed, Scaling::zscore), DataError);
}

TEST(Normalizer, MinmaxPerNodeWithGlobalFallback) {
  const Tensor x = Tensor::matrix({{0, 10, 7}, {2, 30, 7}});
  const std::vector<Segment> train{{0, 2}};
  const std::vector<std::size_t> observed{0, 1};
  const Normalizer n = Normalizer::fit(x, train, observed, Scaling::minmax);
  EXPECT_EQ(n.transform_value(1.0, 0), 0.5);
  EXPECT_EQ(n.transform_value(20.0, 1), 0.5);
  EXPECT_EQ(n.transform_value(15.0, 2), 0.5);  // global range [0, 30]
  const Tensor z = n.transform(x);
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(n.inverse_value(z(t, j), j), x(t, j), 1e-12);
  }
}

TEST(Normalizer, RoundTripOnRandomData) {
  Rng rng(4);
  Tensor x({30, 5});
  for (double& v : x.data()) v = rng.uniform(-10, 40);
  const std::vector<Segment> train{{0, 20}};
  const std::vector<std::size_t> observed{0, 2, 3};
  for (Scaling s : {Scaling::none, Scaling::zscore, Scaling::minmax}) {
    const Normalizer n = Normalizer::fit(x, train, observed, s);
    const Tensor back = n.inverse(n.transform(x));
    for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(back[k], x[k], 1e-10);
  }
}

TEST(Synth, DeterministicConnectedAndSeedSensitive) {
  SynthOptions o;
  o.n_nodes = 20;
  o.steps = 100;
  const Dataset a = synth_generate(o);
  const Dataset b = synth_generate(o);
  EXPECT_EQ(a.readings, b.readings);
  ASSERT_TRUE(a.coords.has_value());
  EXPECT_EQ(a.readings.shape(), (Shape{100, 20}));
  EXPECT_TRUE(a.readings.all_finite());
  EXPECT_TRUE(a.kernel.delta.has_value());

  o.dynamics_seed = 2;
  const Dataset c = synth_generate(o);
  EXPECT_NE(a.readings, c.readings);
  EXPECT_EQ(a.coords->front().x, c.coords->front().x);
  o.topology_seed = 2;
  EXPECT_NE(synth_generate(o).coords->front().x, a.coords->front().x);

  const Tensor d = a.distances();
  const auto adj = a.graph().weights;
  // Every node reaches every other through the kernel graph.
  std::vector<bool> seen(20, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    for (std::size_t j = 0; j < 20; ++j) {
      if (!seen[j] && (adj(i, j) > 0 || adj(j, i) > 0)) {
        seen[j] = true;
        stack.push_back(j);
      }
    }
  }
  EXPECT_EQ(std::count(seen.begin(), seen.end(), true), 20);
  EXPECT_EQ(d(3, 3), 0.0);
  EXPECT_THROW(synth_generate({.n_nodes = 2}), ConfigError);
}

TEST(Synth, NeighboursAreMoreCorrelatedThanStrangers) {
  SynthOptions o;
  o.n_nodes = 30;
  o.steps = 600;
  const Dataset d = synth_generate(o);
  const Tensor adj = d.graph().weights;
  auto corr = [&](std::size_t i, std::size_t j) {
    const std::size_t t = d.readings.rows();
    double mi = 0, mj = 0;
    for (std::size_t s = 0; s < t; ++s) {
      mi += d.readings(s, i);
      mj += d.readings(s, j);
    }
    mi /= t;
    mj /= t;
    double c = 0, vi = 0, vj = 0;
    for (std::size_t s = 0; s < t; ++s) {
      const double a = d.readings(s, i) - mi, b = d.readings(s, j) - mj;
      c += a * b;
      vi += a * a;
      vj += b * b;
    }
    return c / std::sqrt(vi * vj);
  };
  double near = 0, far = 0;
  std::size_t n_near = 0, n_far = 0;
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t j = i + 1; j < 30; ++j) {
      if (adj(i, j) > 0) {
        near += corr(i, j);
        ++n_near;
      } else {
        far += corr(i, j);
        ++n_far;
      }
    }
  }
  ASSERT_GT(n_near, 0u);
  ASSERT_GT(n_far, 0u);
  EXPECT_GT(near / n_near, far / n_far);
}
