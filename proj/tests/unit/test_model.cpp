#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kits/error.hpp"
#include "kits/model.hpp"
#include "kits/rng.hpp"
#include "support/grad_case.hpp"

using namespace kits;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_adjacency(std::size_t n, Rng& rng, double density = 0.5) {
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && rng.bernoulli(density)) a(i, j) = rng.uniform(0.1, 1.0);
    }
  }
  return a;
}

ModelParams small_params(std::size_t dim, std::size_t layers, std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = ModelParams::init({dim, m, layers, 1}, rng);
  // Nonzero biases exercise the bias adjoints.
  for (auto& [name, t] : p.named()) {
    if (name.ends_with(".bias")) {
      for (double& v : t->data()) v = rng.uniform(-0.2, 0.2);
    }
  }
  return p;
}

}  // namespace

TEST(Propagator, RowNormalisesAndSkipsEmptyRows) {
  const Tensor a = Tensor::matrix({{0, 1, 3}, {2, 0, 0}, {0, 0, 0}});
  const Propagator p(a);
  EXPECT_EQ(p.weight(0, 1), 0.25);
  EXPECT_EQ(p.weight(0, 2), 0.75);
  EXPECT_EQ(p.weight(1, 0), 1.0);
  EXPECT_EQ(p.row_start[3] - p.row_start[2], 0u);
  EXPECT_THROW(Propagator(Tensor::matrix({{1, 0}, {0, 0}})), ContractError);
  EXPECT_THROW(Propagator(Tensor({2, 3})), DimensionError);
}

TEST(Propagate, ThreeNodePathByHand) {
  const Tensor a = Tensor::matrix({{0, 1, 0}, {1, 0, 3}, {0, 3, 0}});
  const Propagator p(a);
  Tape tape;
  Var z = tape.constant(Tensor::matrix({{1}, {2}, {4}, {10}, {20}, {40}}));
  const Tensor out = propagate(z, p).value();
  EXPECT_EQ(out, Tensor::matrix({{2}, {0.25 * 1 + 0.75 * 4}, {2}, {20}, {32.5}, {20}}));
}

TEST(Propagate, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  const Propagator p(random_adjacency(5, rng));
  const Tensor w = random_tensor({10, 3}, rng);
  const double err = grad_check(
      [&](Tape& t, Var x) { return sum(mul(propagate(x, p), t.constant(w))); },
      random_tensor({10, 3}, rng));
  EXPECT_LT(err, 1e-6);
}

TEST(Stgc, IsolatedNodeSeesOnlyBias) {
  // Node 2 has no neighbours, so its output is relu(b_gc W_fc + b_fc).
  const ModelParams p = small_params(3, 1, 1, 4);
  const Tensor a = Tensor::matrix({{0, 1, 0}, {1, 0, 0}, {0, 0, 0}});
  const Propagator prop(a);
  Rng rng(5);
  Tape tape;
  const BoundModel m = bind(tape, p, false);
  const FeatureLayout layout{2, 4, 3};
  Var z = tape.constant(random_tensor({layout.rows(), 3}, rng));
  const Tensor out = stgc_forward(z, layout, prop, m.layers[0], 1).value();

  const Tensor& bgc = p.layers[0].gc.bias;
  const Tensor& wfc = p.layers[0].fc.weight;
  const Tensor& bfc = p.layers[0].fc.bias;
  for (std::size_t s = 0; s < layout.slices(); ++s) {
    for (std::size_t c = 0; c < 3; ++c) {
      double v = bfc(0, c);
      for (std::size_t k = 0; k < 3; ++k) v += bgc(0, k) * wfc(k, c);
      EXPECT_NEAR(out(s * 3 + 2, c), std::max(0.0, v), 1e-14);
    }
  }
}

TEST(Stgc, NodeOutputIgnoresItsOwnFeatures) {
  const ModelParams p = small_params(4, 1, 1, 6);
  Rng rng(7);
  const Propagator prop(random_adjacency(5, rng, 0.7));
  const FeatureLayout layout{1, 3, 5};
  const Tensor base = random_tensor({layout.rows(), 4}, rng);
  Tensor perturbed = base;
  // Change node 3 in every slice.
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t c = 0; c < 4; ++c) perturbed(s * 5 + 3, c) += rng.uniform(1.0, 2.0);
  }
  Tape tape;
  const BoundModel m = bind(tape, p, false);
  const Tensor a = stgc_forward(tape.constant(base), layout, prop, m.layers[0], 1).value();
  const Tensor b = stgc_forward(tape.constant(perturbed), layout, prop, m.layers[0], 1).value();
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(a(s * 5 + 3, c), b(s * 5 + 3, c));
  }
}

TEST(Stgc, EdgeSlicesAreReplicated) {
  // With m = 1 and one step, every offset sees the same slice, so the output
  // equals a radius-0 block whose gc weight is the sum of the three blocks.
  const ModelParams p = small_params(2, 1, 1, 9);
  ModelParams flat = small_params(2, 1, 0, 9);
  flat.layers[0].fc = p.layers[0].fc;
  flat.layers[0].gc.bias = p.layers[0].gc.bias;
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      const Tensor& w = p.layers[0].gc.weight;
      flat.layers[0].gc.weight(r, c) = w(r, c) + w(2 + r, c) + w(4 + r, c);
    }
  }
  Rng rng(10);
  const Propagator prop(random_adjacency(4, rng, 0.8));
  const FeatureLayout layout{1, 1, 4};
  const Tensor z = random_tensor({4, 2}, rng);
  Tape tape;
  const BoundModel m1 = bind(tape, p, false);
  const BoundModel m0 = bind(tape, flat, false);
  const Tensor a = stgc_forward(tape.constant(z), layout, prop, m1.layers[0], 1).value();
  const Tensor b = stgc_forward(tape.constant(z), layout, prop, m0.layers[0], 0).value();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-14);
}

TEST(RffPairing, MatchesBruteForce) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 6;
    const Tensor z = random_tensor({n, 3}, rng);
    std::vector<std::uint8_t> observed(n, 0);
    for (std::size_t i = 0; i < n; ++i) observed[i] = rng.bernoulli(0.5) ? 1 : 0;
    observed[0] = 1;
    observed[1] = 0;
    const RffPairing p = rff_pairing(z, observed);
    for (std::size_t i = 0; i < n; ++i) {
      double best = -2.0;
      std::size_t arg = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (observed[j] == observed[i]) continue;
        double dot = 0, ni = 0, nj = 0;
        for (std::size_t c = 0; c < 3; ++c) {
          dot += z(i, c) * z(j, c);
          ni += z(i, c) * z(i, c);
          nj += z(j, c) * z(j, c);
        }
        const double cos = dot / std::sqrt(ni * nj);
        if (cos > best) {
          best = cos;
          arg = j;
        }
      }
      EXPECT_EQ(p.partner[i], arg) << "node " << i;
    }
    for (double s : p.similarity.data()) {
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
  }
}

TEST(RffPairing, TiesGoToLowestIndexAndRolesAreChecked) {
  const Tensor z = Tensor::matrix({{1, 0}, {2, 0}, {1, 0}});
  const std::vector<std::uint8_t> observed{1, 1, 0};
  const RffPairing p = rff_pairing(z, observed);
  EXPECT_EQ(p.partner[2], 0u);
  EXPECT_EQ(p.similarity(0, 0), 1.0);
  EXPECT_EQ(p.similarity(1, 0), 1.0);
  // Rounding-level differences still tie.
  const Tensor noisy = Tensor::matrix({{1, 1e-15}, {1, 0}, {1, 0}});
  EXPECT_EQ(rff_pairing(noisy, observed).partner[2], 0u);
  // A clear runner-up sets the margin.
  const Tensor near = Tensor::matrix({{1, 0}, {1, 0.1}, {1, 0}});
  const RffPairing q = rff_pairing(near, observed);
  EXPECT_EQ(q.partner[2], 0u);
  EXPECT_NEAR(q.margin, (1.0 - 1.0 / std::sqrt(1.01)) / 2.0, 1e-15);
  const std::vector<std::uint8_t> all{1, 1, 1};
  EXPECT_THROW(rff_pairing(z, all), ContractError);
}

TEST(RffPairing, InvariantToPositiveRowScaling) {
  Rng rng(12);
  const Tensor z = random_tensor({7, 4}, rng);
  Tensor scaled = z;
  for (std::size_t i = 0; i < 7; ++i) {
    const double c = rng.uniform(0.1, 10.0);
    for (std::size_t k = 0; k < 4; ++k) scaled(i, k) *= c;
  }
  const std::vector<std::uint8_t> observed{1, 0, 1, 1, 0, 0, 1};
  const RffPairing a = rff_pairing(z, observed);
  const RffPairing b = rff_pairing(scaled, observed);
  EXPECT_EQ(a.partner, b.partner);
  for (std::size_t k = 0; k < a.similarity.size(); ++k) {
    EXPECT_NEAR(a.similarity[k], b.similarity[k], 1e-12);
  }
}

TEST(Kriging, ZeroInputGivesReadoutBias) {
  Rng rng(13);
  ModelParams p = ModelParams::init({4, 1, 2, 1}, rng);
  p.readout.bias(0, 0) = 0.7;
  const Propagator prop(random_adjacency(5, rng));
  Tape tape;
  const BoundModel m = bind(tape, p, false);
  const std::vector<std::uint8_t> observed{1, 0, 1, 0, 1};
  const Tensor out = kriging_forward(m, tape.constant(Tensor({2, 3, 5, 1})), prop, observed).value();
  EXPECT_EQ(out.shape(), (Shape{2, 3, 5, 1}));
  for (double v : out.data()) EXPECT_EQ(v, 0.7);
}

TEST(Kriging, ShapeErrors) {
  Rng rng(14);
  const ModelParams p = ModelParams::init({4, 1, 1, 1}, rng);
  const Propagator prop(random_adjacency(3, rng));
  Tape tape;
  const BoundModel m = bind(tape, p, false);
  const std::vector<std::uint8_t> observed{1, 0, 1};
  EXPECT_THROW(kriging_forward(m, tape.constant(Tensor({3, 4, 1})), prop, observed), DimensionError);
  EXPECT_THROW(kriging_forward(m, tape.constant(Tensor({3, 3, 2})), prop, observed), DimensionError);
  EXPECT_THROW(kriging_forward(m, tape.constant(Tensor({3, 3})), prop, observed), DimensionError);
}

TEST(Kriging, NodePermutationEquivariance) {
  // RFF breaks exact similarity ties by index, so instances with a tie (for
  // example two all-zero feature rows) are skipped.
  const std::size_t n = 6, t = 4;
  const std::vector<std::uint8_t> observed{1, 1, 0, 1, 0, 0};
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};  // new i holds old perm[i]
  int checked = 0;
  for (std::uint64_t seed = 15; seed < 45 && checked < 5; ++seed) {
    const ModelParams p = small_params(16, 2, 1, seed);
    Rng rng(seed + 100);
    const Tensor a = random_adjacency(n, rng, 0.6);
    const Tensor x = random_tensor({t, n, 1}, rng);
    Tensor a2({n, n});
    Tensor x2({t, n, 1});
    std::vector<std::uint8_t> obs2(n);
    for (std::size_t i = 0; i < n; ++i) {
      obs2[i] = observed[perm[i]];
      for (std::size_t j = 0; j < n; ++j) a2(i, j) = a(perm[i], perm[j]);
      for (std::size_t s = 0; s < t; ++s) x2[s * n + i] = x[s * n + perm[i]];
    }
    Tape tape;
    const BoundModel m = bind(tape, p, false);
    const Propagator p1(a), p2(a2);
    const Tensor y1 = kriging_forward(m, tape.constant(x), p1, observed).value();
    if (!(tape.kink_margin() > 1e-9)) continue;
    const Tensor y2 = kriging_forward(m, tape.constant(x2), p2, obs2).value();
    for (std::size_t s = 0; s < t; ++s) {
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y2[s * n + i], y1[s * n + perm[i]], 1e-12);
    }
    ++checked;
  }
  EXPECT_EQ(checked, 5);
}

TEST(Ncr, CycleInputIsPredictionOnMaskedComplement) {
  const ModelParams p = small_params(4, 1, 1, 17);
  Rng rng(18);
  const std::size_t n = 4, t = 3;
  const Propagator prop(random_adjacency(n, rng, 0.8));
  Tensor mask({t, n, 1});
  for (std::size_t s = 0; s < t; ++s) {
    mask[s * n + 0] = 1;
    mask[s * n + 2] = 1;
  }
  Tape tape;
  const BoundModel m = bind(tape, p, true);
  const KrigingOutput out = ncr_pass(m, tape.constant(random_tensor({t, n, 1}, rng)), mask, prop);
  const Tensor& xh = out.x_hat.value();
  const Tensor& xc = out.x_cycle.value();
  for (std::size_t k = 0; k < mask.size(); ++k) {
    EXPECT_EQ(xc[k], mask[k] == 1.0 ? 0.0 : xh[k]);
  }
  EXPECT_EQ(out.x_hat_cycle.shape(), xh.shape());

  Tensor bad = mask;
  bad[0] = 0.5;
  EXPECT_THROW(ncr_pass(m, tape.constant(Tensor({t, n, 1})), bad, prop), ContractError);
}

TEST(Loss, HandComputedValueAndDetachedCycleTarget) {
  Tape tape;
  Var xh = tape.leaf(Tensor::vector({1, 2, 3, 4}));
  Var xhc = tape.leaf(Tensor::vector({1, 2, 3, 5}));
  const Tensor target = Tensor::vector({2, 0, 1, 0});
  const Tensor label = Tensor::vector({1, 0, 1, 0});
  Var loss = kits_loss(xh, target, xhc, label, 2.0);
  EXPECT_EQ(loss.value()[0], 1.5 + 2.0 * 0.25);
  tape.backward(loss);
  EXPECT_EQ(xh.grad(), Tensor::vector({-0.5, 0, 0.5, 0}));
  EXPECT_EQ(xhc.grad(), Tensor::vector({0, 0, 0, 0.5}));

  Tape t2;
  Var a = t2.leaf(Tensor::vector({1, 2, 3, 4}));
  Var b = t2.leaf(Tensor::vector({9, 9, 9, 9}));
  EXPECT_EQ(kits_loss(a, target, b, label, 0.0).value()[0], 1.5);
  EXPECT_THROW(kits_loss(a, target, b, Tensor({4}), 1.0), ContractError);
  EXPECT_THROW(kits_loss(a, target, b, label, -1.0), ConfigError);
}

TEST(Loss, PerfectPredictionIsZero) {
  Tape tape;
  Var xh = tape.leaf(Tensor::vector({1, 2, 3}));
  const Tensor label = Tensor::vector({1, 1, 0});
  EXPECT_EQ(kits_loss(xh, Tensor::vector({1, 2, 7}), xh, label, 1.0).value()[0], 0.0);
}

TEST(Checkpoint, BitExactRoundTrip) {
  const ModelParams p = small_params(5, 3, 2, 19);
  const auto path = std::filesystem::temp_directory_path() / "kits_test_roundtrip.ckpt";
  save_checkpoint(path, p);
  const ModelParams q = load_checkpoint(path);
  EXPECT_EQ(q.config.dim, 5u);
  EXPECT_EQ(q.config.layers, 3u);
  EXPECT_EQ(q.config.window_radius, 2u);
  EXPECT_EQ(q.config.input_dim, 1u);
  const auto a = p.named();
  const auto b = q.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].first, b[k].first);
    EXPECT_EQ(*a[k].second, *b[k].second);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFilesAreConfigErrors) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto bad = dir / "kits_test_bad.ckpt";
  {
    std::ofstream out(bad, std::ios::binary);
    out << "NOPE1234";
  }
  EXPECT_THROW(load_checkpoint(bad), ConfigError);
  EXPECT_THROW(load_checkpoint(dir / "kits_test_missing.ckpt"), ConfigError);

  const auto good = dir / "kits_test_truncate.ckpt";
  save_checkpoint(good, small_params(3, 1, 1, 20));
  const auto size = std::filesystem::file_size(good);
  std::filesystem::resize_file(good, size - 12);
  EXPECT_THROW(load_checkpoint(good), ConfigError);
  std::filesystem::remove(bad);
  std::filesystem::remove(good);
}

TEST(GradCheck, FullModelBothStrategies) {
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 40 && checked < 6; ++seed) {
    const bool all_labels = seed % 2 == 0;
    const test_support::GradCase c = test_support::make_grad_case(seed, 5, 4, 4, all_labels);
    const test_support::GradCaseResult r = test_support::check_grad_case(c);
    EXPECT_LT(r.surrogate_gap, 1e-12) << "seed " << seed;
    if (r.screened_out) continue;
    EXPECT_LT(r.fd_error, 1e-4) << "seed " << seed << " margin " << r.margin;
    ++checked;
  }
  EXPECT_EQ(checked, 6);
}
