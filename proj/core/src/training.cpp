#include "kits/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "kits/error.hpp"

namespace kits {

namespace {

Tensor select(const Tensor& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Tensor out({rows.size(), cols.size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = a(rows[i], cols[j]);
  }
  return out;
}

/// First k entries of a seeded partial shuffle of [0, n).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::size_t masked_count(std::size_t n, double fraction) {
  if (n < 2) throw DataError("masking needs at least two observed nodes");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

bool all_finite(std::span<const Tensor> ts) {
  return std::all_of(ts.begin(), ts.end(), [](const Tensor& t) { return t.all_finite(); });
}

double population_stddev(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / n);
}

}  // namespace

void TrainConfig::validate() const {
  if (window == 0 || batch_size == 0 || model.dim == 0 || model.layers == 0) {
    throw ConfigError("window, batch size, dim and layers must be positive");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  if (!(lr > 0.0) || !(grad_clip_norm > 0.0)) throw ConfigError("lr and clip norm must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
  if (!(epsilon_min >= 0.0 && epsilon_min <= epsilon_max)) {
    throw ConfigError("epsilon range must satisfy 0 <= min <= max");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  if (max_batches_per_epoch == 0) throw ConfigError("max_batches_per_epoch must be positive");
}

// ---------------------------------------------------------------------------
// Batches

std::vector<std::size_t> window_starts(std::span<const Segment> segments, std::size_t t) {
  std::vector<std::size_t> starts;
  for (const Segment& s : segments) {
    for (std::size_t b = s.begin; b + t <= s.end; ++b) starts.push_back(b);
  }
  return starts;
}

AugmentedBatch make_batch(const TrainingData& data, const TrainConfig& config, Rng& batching,
                          Rng& augmentation) {
  const std::size_t t = config.window;
  const auto starts = window_starts(data.train, t);
  if (starts.empty()) {
    throw DataError("training segments are shorter than the window of " + std::to_string(t));
  }
  if (data.observed.empty()) throw DataError("no observed nodes to train on");

  AugmentedBatch batch;
  std::vector<bool> hidden;
  switch (config.strategy) {
    case Strategy::increment: {
      const Tensor a_obs = select(data.adjacency, data.observed, data.observed);
      const AugmentedGraph g = insert_virtual_nodes(
          a_obs, {config.alpha, config.epsilon_min, config.epsilon_max}, augmentation);
      batch.adjacency = remove_self_loops(g.adjacency);
      batch.nodes = data.observed;
      batch.nodes.resize(g.size(), AugmentedBatch::kVirtual);
      batch.roles = g.roles();
      batch.n_virtual = g.n_virtual;
      break;
    }
    case Strategy::decrement: {
      batch.adjacency = remove_self_loops(select(data.adjacency, data.observed, data.observed));
      batch.nodes = data.observed;
      batch.roles.assign(batch.nodes.size(), NodeRole::observed);
      const std::size_t n = batch.nodes.size();
      for (std::size_t i : sample_without_replacement(n, masked_count(n, config.alpha), augmentation)) {
        batch.roles[i] = NodeRole::virtual_node;
      }
      break;
    }
    case Strategy::transductive: {
      batch.nodes = data.observed;
      batch.nodes.insert(batch.nodes.end(), data.unobserved.begin(), data.unobserved.end());
      batch.adjacency = remove_self_loops(select(data.adjacency, batch.nodes, batch.nodes));
      batch.roles.assign(data.observed.size(), NodeRole::observed);
      batch.roles.resize(batch.nodes.size(), NodeRole::virtual_node);
      batch.n_virtual = data.unobserved.size();
      break;
    }
  }

  const std::size_t b_size = config.batch_size;
  const std::size_t n = batch.size();
  const Shape shape{b_size, t, n, 1};
  batch.x = Tensor(shape);
  batch.target = Tensor(shape);
  batch.mask = Tensor(shape);
  batch.label_mask = Tensor(shape);
  const bool decrement = config.strategy == Strategy::decrement;
  for (std::size_t b = 0; b < b_size; ++b) {
    const std::size_t start = starts[batching.uniform_index(starts.size())];
    for (std::size_t s = 0; s < t; ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = (b * t + s) * n + i;
        const bool real = batch.roles[i] == NodeRole::observed;
        const bool has_value = real || (decrement && batch.nodes[i] != AugmentedBatch::kVirtual);
        const double v = has_value ? data.readings(start + s, batch.nodes[i]) : 0.0;
        batch.x[k] = real ? v : 0.0;
        batch.mask[k] = real ? 1.0 : 0.0;
        batch.target[k] = has_value ? v : 0.0;
        batch.label_mask[k] = has_value ? 1.0 : 0.0;
      }
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Optimisation

double clip_grad_norm(std::span<Tensor> grads, double max_norm) {
  double ss = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.data()) ss += v * v;
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& v : g.data()) v *= f;
    }
  }
  return norm;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               double lr) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  if (params.size() != grads.size()) throw DimensionError("adam: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    if (g.shape() != p.shape()) throw DimensionError("adam: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      double& m = state.m[k][i];
      double& v = state.v[k][i];
      m = kBeta1 * m + (1.0 - kBeta1) * g[i];
      v = kBeta2 * v + (1.0 - kBeta2) * g[i] * g[i];
      p[i] -= lr * (m / c1) / (std::sqrt(v / c2) + kEps);
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0) return lr0;
  const double frac = static_cast<double>(std::min(step, total_steps)) /
                      static_cast<double>(total_steps);
  return lr0 * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

// ---------------------------------------------------------------------------
// Validation

Predictor model_predictor(const ModelParams& params) {
  return [params](const Tensor& x, const Tensor& a_minus, std::span<const std::uint8_t> observed) {
    Tape tape;
    const BoundModel model = bind(tape, params, false);
    const Propagator prop(a_minus);
    return kriging_forward(model, tape.constant(x), prop, observed).value();
  };
}

std::vector<Segment> evaluation_windows(std::span<const Segment> segments, std::size_t t) {
  std::vector<Segment> out;
  for (const Segment& seg : segments) {
    if (seg.length() == 0) continue;
    if (seg.length() <= t) {
      out.push_back(seg);
      continue;
    }
    std::size_t s = seg.begin;
    for (; s + t <= seg.end; s += t) out.push_back({s, s + t});
    if (s < seg.end) out.push_back({seg.end - t, seg.end});
  }
  return out;
}

ValidationSet make_validation_set(const TrainingData& data, const TrainConfig& config) {
  const auto windows = evaluation_windows(data.val, config.window);
  if (windows.empty()) throw DataError("validation segment is empty");
  const std::size_t n = data.observed.size();
  ValidationSet set;
  Rng rng = stream(config.seed, "validation");
  set.held_out = sample_without_replacement(n, masked_count(n, config.val_fraction), rng);
  set.observed.assign(n, 1);
  for (std::size_t i : set.held_out) set.observed[i] = 0;
  set.a_minus = remove_self_loops(select(data.adjacency, data.observed, data.observed));
  for (const Segment& w : windows) {
    Tensor x({1, w.length(), n, 1});
    Tensor y({1, w.length(), n, 1});
    for (std::size_t s = 0; s < w.length(); ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        const double v = data.readings(w.begin + s, data.observed[i]);
        y[s * n + i] = v;
        x[s * n + i] = set.observed[i] ? v : 0.0;
      }
    }
    set.inputs.push_back(std::move(x));
    set.truth.push_back(std::move(y));
  }
  return set;
}

MetricsReport validate(const Predictor& predictor, const ValidationSet& set) {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  std::size_t count = 0;
  const std::size_t n = set.observed.size();
  for (std::size_t w = 0; w < set.inputs.size(); ++w) {
    const Tensor pred = predictor(set.inputs[w], set.a_minus, set.observed);
    const Tensor& y = set.truth[w];
    if (pred.size() != y.size()) throw DimensionError("predictor returned the wrong shape");
    for (std::size_t s = 0; s < y.size() / n; ++s) {
      for (std::size_t i : set.held_out) {
        const double e = pred[s * n + i] - y[s * n + i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        ++count;
      }
    }
  }
  MetricsReport r;
  r.n_points = count;
  r.mae = abs_sum / static_cast<double>(count);
  r.rmse = std::sqrt(sq_sum / static_cast<double>(count));
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const TrainingData& data, const TrainConfig& config) {
  config.validate();
  ModelConfig mc = config.model;
  mc.input_dim = 1;
  Rng init = stream(config.seed, "init");
  ModelParams params = ModelParams::init(mc, init);
  Rng batching = stream(config.seed, "batching");
  Rng augmentation = stream(config.seed, "augmentation");

  const std::size_t n_windows = window_starts(data.train, config.window).size();
  if (n_windows == 0) throw DataError("training segments are shorter than the window");
  const std::size_t per_epoch =
      std::min(config.max_batches_per_epoch, std::max<std::size_t>(1, n_windows / config.batch_size));
  const std::size_t total_steps = config.max_epochs * per_epoch;
  const ValidationSet val_set = make_validation_set(data, config);

  TrainResult result;
  result.best = params;
  result.best_val_mae = std::numeric_limits<double>::infinity();
  AdamState adam;
  std::vector<Tensor*> slots;
  for (auto& [name, t] : params.named()) slots.push_back(t);
  std::size_t step = 0;
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t used = 0;
    double lr = cosine_lr(step, total_steps, config.lr);
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const AugmentedBatch batch = make_batch(data, config, batching, augmentation);
      Tape tape;
      const BoundModel model = bind(tape, params);
      const Propagator prop(batch.adjacency);
      const KrigingOutput out = ncr_pass(model, tape.constant(batch.x), batch.mask, prop);
      const Var loss = kits_loss(out.x_hat, batch.target, out.x_hat_cycle, batch.label_mask,
                                 config.lambda);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        ++result.skipped_batches;
        continue;
      }
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (Var leaf : model.leaves) grads.push_back(tape.grad(leaf));
      if (!all_finite(grads)) {
        ++result.skipped_batches;
        continue;
      }
      clip_grad_norm(grads, config.grad_clip_norm);
      lr = cosine_lr(step, total_steps, config.lr);
      adam_step(slots, grads, adam, lr);
      loss_sum += value;
      ++used;
    }
    if (used == 0) {
      throw NumericalError("training diverged: every batch of epoch " + std::to_string(epoch + 1) +
                           " had a non-finite loss or gradient");
    }
    const double val_mae = validate(model_predictor(params), val_set).mae;
    if (!std::isfinite(val_mae)) {
      throw NumericalError("validation MAE is non-finite at epoch " + std::to_string(epoch + 1));
    }
    result.history.push_back({epoch + 1, loss_sum / static_cast<double>(used), val_mae, lr});
    if (val_mae < result.best_val_mae) {
      result.best_val_mae = val_mae;
      result.best = params;
      result.best_epoch = epoch + 1;
      stale = 0;
    } else {
      ++stale;
    }
    if (stale >= config.patience) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Experiments

Experiment prepare(Dataset dataset, const ExperimentConfig& config) {
  config.train.validate();
  Experiment e;
  // Without a published threshold, cut the kernel where the weight drops to 0.1.
  if (!dataset.kernel.gamma || !dataset.kernel.delta) {
    std::vector<double> dists;
    if (dataset.coords) {
      const Tensor d = dataset.distances();
      for (std::size_t i = 0; i < d.rows(); ++i) {
        for (std::size_t j = i + 1; j < d.cols(); ++j) dists.push_back(d(i, j));
      }
    } else {
      for (const DistanceEdge& edge : dataset.edges) dists.push_back(edge.distance);
    }
    if (dists.empty()) throw DataError("dataset has no distances to build a graph from");
    if (!dataset.kernel.gamma) {
      const double sd = population_stddev(dists);
      if (!(sd > 0.0)) throw DataError("distances have zero spread");
      dataset.kernel.gamma = sd * sd;
    }
    if (!dataset.kernel.delta && dataset.coords) {
      dataset.kernel.delta = std::sqrt(*dataset.kernel.gamma * std::log(10.0));
    }
  }
  e.graph = dataset.graph();
  MissingPattern pattern = config.pattern;
  pattern.alpha = config.train.alpha;
  pattern.seed = derive_seed(config.train.seed, "mask");
  e.graph.roles = apply_missing(e.graph, pattern);
  e.observed = nodes_with_role(e.graph.roles, NodeRole::observed);
  e.unobserved = nodes_with_role(e.graph.roles, NodeRole::unobserved);
  if (e.observed.size() < 2 || e.unobserved.empty()) {
    throw DataError("missing pattern left " + std::to_string(e.observed.size()) + " observed and " +
                    std::to_string(e.unobserved.size()) + " unobserved nodes");
  }
  e.split = config.month_split ? split_by_months(dataset.months) : split_7_1_2(dataset.steps());
  e.normalizer = Normalizer::fit(dataset.readings, e.split.train, e.observed, config.scaling);
  e.normalized = e.normalizer.transform(dataset.readings);
  e.dataset = std::move(dataset);
  return e;
}

TrainingData training_data(const Experiment& e) {
  TrainingData d;
  d.readings = e.normalized;
  d.adjacency = e.graph.weights;
  d.observed = e.observed;
  d.unobserved = e.unobserved;
  d.train = e.split.train;
  d.val = e.split.val;
  return d;
}

Tensor predict_test(const Predictor& predictor, const Experiment& e, std::size_t window) {
  const std::size_t n = e.graph.size();
  const Tensor a_minus = remove_self_loops(e.graph.weights);
  std::vector<std::uint8_t> observed(n, 0);
  for (std::size_t i : e.observed) observed[i] = 1;
  Tensor out({e.dataset.steps(), n});
  for (const Segment& w : evaluation_windows(e.split.test, window)) {
    Tensor x({1, w.length(), n, 1});
    for (std::size_t s = 0; s < w.length(); ++s) {
      for (std::size_t i : e.observed) x[s * n + i] = e.normalized(w.begin + s, i);
    }
    const Tensor pred = predictor(x, a_minus, observed);
    if (pred.size() != x.size()) throw DimensionError("predictor returned the wrong shape");
    for (std::size_t s = 0; s < w.length(); ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        out(w.begin + s, i) = e.normalizer.inverse_value(pred[s * n + i], i);
      }
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> test_omega(const Experiment& e) {
  const std::size_t n = e.graph.size();
  std::vector<std::size_t> omega;
  for (const Segment& seg : e.split.test) {
    for (std::size_t t = seg.begin; t < seg.end; ++t) {
      for (std::size_t i : e.unobserved) omega.push_back(t * n + i);
    }
  }
  return omega;
}

}  // namespace

MetricsReport evaluate_test(const Tensor& predictions, const Experiment& e) {
  if (!predictions.all_finite()) throw NumericalError("test predictions are not finite");
  return evaluate(e.dataset.readings.data(), predictions.data(), test_omega(e));
}

MetricsReport evaluate_baseline(const BaselineSpec& spec, const Experiment& e) {
  const Tensor& raw = e.dataset.readings;
  const std::size_t n = raw.cols();
  const std::size_t rows = total_length(e.split.test);
  Tensor test({rows, n});
  std::size_t r = 0;
  for (const Segment& seg : e.split.test) {
    for (std::size_t t = seg.begin; t < seg.end; ++t, ++r) {
      std::copy_n(raw.raw() + t * n, n, test.raw() + r * n);
    }
  }
  const Tensor dists = e.dataset.distances();
  double delta = e.dataset.kernel.delta.value_or(0.0);
  if (!(delta > 0.0)) delta = std::sqrt(e.dataset.kernel.gamma.value_or(1.0) * std::log(10.0));
  const Tensor est = run_baseline(spec, test, e.graph.roles, dists, delta);

  Tensor full({raw.rows(), n});
  r = 0;
  for (const Segment& seg : e.split.test) {
    for (std::size_t t = seg.begin; t < seg.end; ++t, ++r) {
      std::copy_n(est.raw() + r * n, n, full.raw() + t * n);
    }
  }
  return evaluate_test(full, e);
}

GraphGapReport graph_gap(const Experiment& e, const TrainConfig& config, std::size_t n_batches) {
  if (n_batches == 0) throw ConfigError("graph-gap needs at least one batch");
  GraphGapReport report;
  report.inference_largest_degree = static_cast<double>(largest_degree(e.graph.weights));
  const Tensor a_obs = select(e.graph.weights, e.observed, e.observed);
  Rng augmentation = stream(config.seed, "augmentation");
  std::vector<double> inc_largest, inc_mean, dec_largest, dec_mean;
  const auto dec_deg = undirected_degrees(a_obs);
  const double dec_max = static_cast<double>(*std::max_element(dec_deg.begin(), dec_deg.end()));
  const double dec_avg = static_cast<double>(std::accumulate(dec_deg.begin(), dec_deg.end(), std::size_t{0})) /
                         static_cast<double>(dec_deg.size());
  for (std::size_t b = 0; b < n_batches; ++b) {
    const AugmentedGraph g = insert_virtual_nodes(
        a_obs, {config.alpha, config.epsilon_min, config.epsilon_max}, augmentation);
    const auto deg = undirected_degrees(g.adjacency);
    inc_largest.push_back(static_cast<double>(*std::max_element(deg.begin(), deg.end())));
    inc_mean.push_back(static_cast<double>(std::accumulate(deg.begin(), deg.end(), std::size_t{0})) /
                       static_cast<double>(deg.size()));
    // The decrement training graph is always the observed subgraph.
    dec_largest.push_back(dec_max);
    dec_mean.push_back(dec_avg);
  }
  report.increment = summarize_degrees(inc_largest, inc_mean);
  report.decrement = summarize_degrees(dec_largest, dec_mean);
  const double inf = report.inference_largest_degree;
  if (inf > 0.0) {
    report.increment_gap = (inf - report.increment.avg) / inf;
    report.decrement_gap = (inf - report.decrement.avg) / inf;
  }
  return report;
}

}  // namespace kits
