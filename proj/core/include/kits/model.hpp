#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kits/rng.hpp"
#include "kits/tensor.hpp"

namespace kits {

struct ModelConfig {
  std::size_t dim = 64;
  /// Temporal window radius m: each STGC sees 2m+1 slices.
  std::size_t window_radius = 1;
  std::size_t layers = 2;
  std::size_t input_dim = 1;
};

/// y = x W + b with W (in x out) and b (1 x out).
struct Linear {
  Tensor weight;
  Tensor bias;
};

struct StgcParams {
  Linear gc;  ///< (2m+1)D -> D
  Linear fc;  ///< D -> D
};

struct ModelParams {
  ModelConfig config;
  Linear input_map;
  std::vector<StgcParams> layers;
  Linear rff_fuse;  ///< 2D -> D, shared by every block and both roles
  Linear readout;

  /// Xavier-uniform weights, zero biases.
  static ModelParams init(const ModelConfig& config, Rng& rng);

  /// Stable (name, tensor) listing used by the optimizer and checkpoints.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  bool all_finite() const;
};

struct BoundLinear {
  Var weight;
  Var bias;
};

/// Parameters recorded as leaves on one tape.
struct BoundModel {
  ModelConfig config;
  BoundLinear input_map;
  std::vector<std::pair<BoundLinear, BoundLinear>> layers;
  BoundLinear rff_fuse;
  BoundLinear readout;
  /// Same order as ModelParams::named().
  std::vector<Var> leaves;
};

BoundModel bind(Tape& tape, const ModelParams& params, bool requires_grad = true);

Var apply(const BoundLinear& layer, Var x);

/// Row-normalised adjacency in compressed rows. Rows summing to zero stay
/// empty, so their aggregate is zero.
class Propagator {
 public:
  /// Throws ContractError when the diagonal is not zero.
  explicit Propagator(const Tensor& a_minus);

  std::size_t size() const { return n_; }
  double weight(std::size_t i, std::size_t j) const;

  std::vector<std::size_t> row_start;
  std::vector<std::size_t> col;
  std::vector<double> val;

 private:
  std::size_t n_ = 0;
};

/// Applies the propagator to every block of N consecutive rows of `z`.
Var propagate(Var z, const Propagator& p);

/// Feature maps are (B*t*N) x D matrices with rows ordered (window, step, node).
struct FeatureLayout {
  std::size_t windows = 1;
  std::size_t steps = 1;
  std::size_t nodes = 1;

  std::size_t slices() const { return windows * steps; }
  std::size_t rows() const { return windows * steps * nodes; }
};

/// One STGC block: concatenate the 2m+1 neighbouring time slices (edge slices
/// replicated), aggregate over A- and project, then relu(FC).
Var stgc_forward(Var z, const FeatureLayout& layout, const Propagator& a_minus,
                 const std::pair<BoundLinear, BoundLinear>& layer, std::size_t window_radius);

struct RffPairing {
  std::vector<std::size_t> observed;  ///< node ids with the observed role
  std::vector<std::size_t> targets;   ///< node ids in the virtual role
  /// (cos + 1) / 2, observed x targets.
  Tensor similarity;
  /// partner[i] is the node id node i aligns with, from the opposite role set.
  std::vector<std::size_t> partner;
  /// Smallest gap between the winning similarity of any argmax and a
  /// candidate outside the tie band.
  double margin = 1e300;
};

/// Most-similar partner of every node among the opposite role. Similarities
/// within 1e-12 of the best are tied, and ties go to the lowest index.
/// Throws ContractError when either role set is empty.
RffPairing rff_pairing(const Tensor& z, std::span<const std::uint8_t> observed);

/// z <- FC(z || S* . Align(z)) per time slice.
Var rff_forward(Var z, const FeatureLayout& layout, std::span<const std::uint8_t> observed,
                const BoundLinear& fuse);

/// Input x is (B, t, N, 1) or (t, N, 1). `observed` flags the nodes RFF
/// treats as references; RFF is skipped when all or none are observed.
Var kriging_forward(const BoundModel& model, Var x, const Propagator& a_minus,
                    std::span<const std::uint8_t> observed);

struct KrigingOutput {
  Var x_hat;
  Var x_cycle;
  Var x_hat_cycle;
};

/// Two passes sharing parameters: X^ = KM(X), Xc = (1 - M) . X^, X^c = KM(Xc).
/// `mask` has one entry per element of x and must be binary; the node roles
/// for RFF come from its first time slice and are swapped in the second pass.
KrigingOutput ncr_pass(const BoundModel& model, Var x, const Tensor& mask,
                       const Propagator& a_minus);

/// MAE(X^, Y, label entries) + lambda * MAE(X^c, detach(X^), all entries).
Var kits_loss(Var x_hat, const Tensor& target, Var x_hat_cycle, const Tensor& label_mask,
              double lambda);

std::vector<std::uint8_t> observed_from_mask(const Tensor& mask, std::size_t nodes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace kits
