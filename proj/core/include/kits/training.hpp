#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "kits/baselines.hpp"
#include "kits/data.hpp"
#include "kits/graph.hpp"
#include "kits/metrics.hpp"
#include "kits/model.hpp"
#include "kits/rng.hpp"

namespace kits {

enum class Strategy { increment, decrement, transductive };

struct TrainConfig {
  std::size_t window = 24;
  std::size_t batch_size = 32;
  ModelConfig model;
  double lambda = 1.0;
  double lr = 2e-4;
  std::size_t max_epochs = 300;
  std::size_t patience = 50;
  double grad_clip_norm = 1.0;
  double epsilon_min = 0.0;
  double epsilon_max = 0.2;
  double alpha = 0.5;
  std::uint64_t seed = 1;
  Strategy strategy = Strategy::increment;
  std::size_t max_batches_per_epoch = 50;
  /// Share of observed nodes held out for validation.
  double val_fraction = 0.2;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Normalised readings and topology the trainer sees.
struct TrainingData {
  Tensor readings;   ///< T x N, all nodes
  Tensor adjacency;  ///< N x N, self-loops included
  std::vector<std::size_t> observed;
  std::vector<std::size_t> unobserved;
  std::vector<Segment> train;
  std::vector<Segment> val;
};

/// One batch over N_b nodes; node i of the batch is `nodes[i]` of the data
/// (virtual nodes are marked with kVirtual).
struct AugmentedBatch {
  static constexpr std::size_t kVirtual = static_cast<std::size_t>(-1);

  Tensor x;           ///< (B, t, N_b, 1), hidden entries zeroed
  Tensor target;      ///< (B, t, N_b, 1)
  Tensor mask;        ///< 1 where x holds a real reading
  Tensor label_mask;  ///< 1 where target is supervised
  Tensor adjacency;   ///< N_b x N_b, zero diagonal
  std::vector<NodeRole> roles;
  std::vector<std::size_t> nodes;
  std::size_t n_virtual = 0;

  std::size_t size() const { return roles.size(); }
};

/// Window starts s with [s, s + t) inside one segment.
std::vector<std::size_t> window_starts(std::span<const Segment> segments, std::size_t t);

AugmentedBatch make_batch(const TrainingData& data, const TrainConfig& config, Rng& batching,
                          Rng& augmentation);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

/// Rescales `grads` in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);

/// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               double lr);

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

/// Maps (B, t, N, 1) inputs on a graph with zero diagonal to estimates.
using Predictor =
    std::function<Tensor(const Tensor& x, const Tensor& a_minus, std::span<const std::uint8_t>)>;

Predictor model_predictor(const ModelParams& params);

/// Fixed held-out split of the observed nodes over the validation segments.
struct ValidationSet {
  std::vector<Tensor> inputs;  ///< one (1, t, N_o, 1) tensor per window
  std::vector<Tensor> truth;
  Tensor a_minus;
  std::vector<std::uint8_t> observed;  ///< over the N_o observed nodes
  std::vector<std::size_t> held_out;   ///< positions into the observed nodes
};

ValidationSet make_validation_set(const TrainingData& data, const TrainConfig& config);

/// MAE over held-out entries, in normalised units.
MetricsReport validate(const Predictor& predictor, const ValidationSet& set);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams best;
  std::vector<EpochRecord> history;
  double best_val_mae = 0.0;
  std::size_t best_epoch = 0;
  std::size_t skipped_batches = 0;
};

TrainResult train(const TrainingData& data, const TrainConfig& config);

/// Non-overlapping windows of length t over each segment plus one window
/// aligned to the segment end; segments shorter than t form one window.
std::vector<Segment> evaluation_windows(std::span<const Segment> segments, std::size_t t);

// ---------------------------------------------------------------------------
// End-to-end experiment plumbing.

struct ExperimentConfig {
  TrainConfig train;
  MissingPattern pattern;
  Scaling scaling = Scaling::zscore;
  bool month_split = false;
};

/// Dataset with roles assigned, split and normalisation fitted.
struct Experiment {
  Dataset dataset;
  SpatialGraph graph;
  TemporalSplit split;
  Normalizer normalizer;
  Tensor normalized;
  std::vector<std::size_t> observed;
  std::vector<std::size_t> unobserved;
};

/// The missing pattern's seed is replaced by the "mask" stream of the root seed.
Experiment prepare(Dataset dataset, const ExperimentConfig& config);

TrainingData training_data(const Experiment& experiment);

/// Test-segment estimates for every node in original units (T x N; rows
/// outside the test segments are zero).
Tensor predict_test(const Predictor& predictor, const Experiment& experiment,
                    std::size_t window);

/// Metrics over unobserved nodes of the test segments, in original units.
MetricsReport evaluate_test(const Tensor& predictions, const Experiment& experiment);

MetricsReport evaluate_baseline(const BaselineSpec& spec, const Experiment& experiment);

struct GraphGapReport {
  DegreeStats increment;
  DegreeStats decrement;
  double inference_largest_degree = 0.0;
  /// (inference - avg) / inference for each strategy.
  double increment_gap = 0.0;
  double decrement_gap = 0.0;
};

/// Largest-degree statistics of `n_batches` training graphs per strategy
/// against the full inference graph.
GraphGapReport graph_gap(const Experiment& experiment, const TrainConfig& config,
                         std::size_t n_batches);

}  // namespace kits
