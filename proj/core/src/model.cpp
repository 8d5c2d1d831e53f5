#include "kits/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "kits/error.hpp"

namespace kits {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O writes host doubles as little-endian");

namespace {

Linear make_linear(std::size_t in, std::size_t out) {
  return {Tensor({in, out}), Tensor({1, out})};
}

void xavier(Tensor& w, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(w.dim(0) + w.dim(1)));
  for (double& v : w.data()) v = rng.uniform(-a, a);
}

BoundLinear bind_linear(Tape& tape, const Linear& l, bool requires_grad, std::vector<Var>& leaves) {
  BoundLinear b{tape.leaf(l.weight, requires_grad), tape.leaf(l.bias, requires_grad)};
  leaves.push_back(b.weight);
  leaves.push_back(b.bias);
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

ModelParams ModelParams::init(const ModelConfig& c, Rng& rng) {
  if (c.dim == 0 || c.layers == 0 || c.input_dim == 0) {
    throw ConfigError("model needs positive dim, layers and input_dim");
  }
  ModelParams p;
  p.config = c;
  p.input_map = make_linear(c.input_dim, c.dim);
  for (std::size_t l = 0; l < c.layers; ++l) {
    p.layers.push_back({make_linear((2 * c.window_radius + 1) * c.dim, c.dim),
                        make_linear(c.dim, c.dim)});
  }
  p.rff_fuse = make_linear(2 * c.dim, c.dim);
  p.readout = make_linear(c.dim, c.input_dim);
  for (auto& [name, t] : p.named()) {
    if (name.ends_with(".weight")) xavier(*t, rng);
  }
  return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add = [&](const std::string& prefix, Linear& l) {
    out.emplace_back(prefix + ".weight", &l.weight);
    out.emplace_back(prefix + ".bias", &l.bias);
  };
  add("input_map", input_map);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    add("layers." + std::to_string(l) + ".gc", layers[l].gc);
    add("layers." + std::to_string(l) + ".fc", layers[l].fc);
  }
  add("rff_fuse", rff_fuse);
  add("readout", readout);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
  return out;
}

bool ModelParams::all_finite() const {
  for (const auto& [name, t] : named()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

BoundModel bind(Tape& tape, const ModelParams& p, bool requires_grad) {
  BoundModel m;
  m.config = p.config;
  m.input_map = bind_linear(tape, p.input_map, requires_grad, m.leaves);
  for (const StgcParams& l : p.layers) {
    BoundLinear gc = bind_linear(tape, l.gc, requires_grad, m.leaves);
    BoundLinear fc = bind_linear(tape, l.fc, requires_grad, m.leaves);
    m.layers.emplace_back(gc, fc);
  }
  m.rff_fuse = bind_linear(tape, p.rff_fuse, requires_grad, m.leaves);
  m.readout = bind_linear(tape, p.readout, requires_grad, m.leaves);
  return m;
}

Var apply(const BoundLinear& layer, Var x) { return add(matmul(x, layer.weight), layer.bias); }

// ---------------------------------------------------------------------------
// Graph convolution

Propagator::Propagator(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError("adjacency must be square, got " + to_string(a.shape()));
  }
  n_ = a.dim(0);
  row_start.assign(n_ + 1, 0);
  for (std::size_t i = 0; i < n_; ++i) {
    if (a(i, i) != 0.0) {
      throw ContractError("adjacency diagonal must be zero (node " + std::to_string(i) +
                          "); remove self-loops first");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n_; ++j) total += a(i, j);
    if (total > 0.0) {
      for (std::size_t j = 0; j < n_; ++j) {
        if (a(i, j) != 0.0) {
          col.push_back(j);
          val.push_back(a(i, j) / total);
        }
      }
    }
    row_start[i + 1] = col.size();
  }
}

double Propagator::weight(std::size_t i, std::size_t j) const {
  for (std::size_t k = row_start[i]; k < row_start[i + 1]; ++k) {
    if (col[k] == j) return val[k];
  }
  return 0.0;
}

Var propagate(Var z, const Propagator& p) {
  const Tensor& zv = z.value();
  const std::size_t n = p.size();
  const std::size_t d = zv.cols();
  if (n == 0 || zv.rows() % n != 0) {
    throw DimensionError("propagate: " + std::to_string(zv.rows()) + " rows are not blocks of " +
                         std::to_string(n) + " nodes");
  }
  const std::size_t blocks = zv.rows() / n;
  Tensor out({zv.rows(), d});
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      double* dst = out.raw() + (b * n + i) * d;
      for (std::size_t k = p.row_start[i]; k < p.row_start[i + 1]; ++k) {
        const double w = p.val[k];
        const double* src = zv.raw() + (b * n + p.col[k]) * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
      }
    }
  }
  const Var inputs[] = {z};
  return z.tape->record(std::move(out), inputs, [z, &p, blocks, n, d](Tape& t, const Tensor& g) {
    Tensor& gz = t.grad_buffer(z);
    for (std::size_t b = 0; b < blocks; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* src = g.raw() + (b * n + i) * d;
        for (std::size_t k = p.row_start[i]; k < p.row_start[i + 1]; ++k) {
          const double w = p.val[k];
          double* dst = gz.raw() + (b * n + p.col[k]) * d;
          for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
        }
      }
    }
  });
}

Var stgc_forward(Var z, const FeatureLayout& layout, const Propagator& a_minus,
                 const std::pair<BoundLinear, BoundLinear>& layer, std::size_t m) {
  if (z.value().rows() != layout.rows() || a_minus.size() != layout.nodes) {
    throw DimensionError("stgc: features " + to_string(z.shape()) + " do not match layout");
  }
  Var windowed = z;
  if (m > 0) {
    std::vector<Var> parts;
    std::vector<std::size_t> idx(layout.rows());
    const auto steps = static_cast<std::ptrdiff_t>(layout.steps);
    for (std::ptrdiff_t o = -static_cast<std::ptrdiff_t>(m); o <= static_cast<std::ptrdiff_t>(m);
         ++o) {
      std::size_t r = 0;
      for (std::size_t w = 0; w < layout.windows; ++w) {
        for (std::ptrdiff_t s = 0; s < steps; ++s) {
          const auto src = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(s + o, 0, steps - 1));
          for (std::size_t i = 0; i < layout.nodes; ++i) {
            idx[r++] = (w * layout.steps + src) * layout.nodes + i;
          }
        }
      }
      parts.push_back(o == 0 ? z : gather_rows(z, idx));
    }
    windowed = concat_last(parts);
  }
  const auto& [gc, fc] = layer;
  Var h = add(propagate(matmul(windowed, gc.weight), a_minus), gc.bias);
  return relu(apply(fc, h));
}

// ---------------------------------------------------------------------------
// Reference-based feature fusion

namespace {

constexpr double kTieTolerance = 1e-12;

}  // namespace

RffPairing rff_pairing(const Tensor& z, std::span<const std::uint8_t> observed) {
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  if (observed.size() != n) throw DimensionError("rff: role vector does not match features");
  RffPairing p;
  for (std::size_t i = 0; i < n; ++i) (observed[i] ? p.observed : p.targets).push_back(i);
  if (p.observed.empty() || p.targets.empty()) {
    throw ContractError("rff needs at least one observed and one virtual node");
  }
  std::vector<double> norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += z(i, c) * z(i, c);
    norm[i] = std::sqrt(s);
  }
  const std::size_t no = p.observed.size();
  const std::size_t nv = p.targets.size();
  p.similarity = Tensor({no, nv});
  for (std::size_t a = 0; a < no; ++a) {
    const std::size_t i = p.observed[a];
    for (std::size_t b = 0; b < nv; ++b) {
      const std::size_t j = p.targets[b];
      double cos = 0.0;
      if (norm[i] > 0.0 && norm[j] > 0.0) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += z(i, c) * z(j, c);
        cos = dot / (norm[i] * norm[j]);
      }
      p.similarity(a, b) = (cos + 1.0) / 2.0;
    }
  }

  p.partner.assign(n, 0);
  auto pick = [&](std::span<const std::size_t> ids, auto&& score) {
    double top = score(0);
    for (std::size_t k = 1; k < ids.size(); ++k) top = std::max(top, score(k));
    std::size_t best = 0;
    while (score(best) < top - kTieTolerance) ++best;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (score(k) < top - kTieTolerance) p.margin = std::min(p.margin, score(best) - score(k));
    }
    return ids[best];
  };
  for (std::size_t b = 0; b < nv; ++b) {
    p.partner[p.targets[b]] = pick(p.observed, [&](std::size_t a) { return p.similarity(a, b); });
  }
  for (std::size_t a = 0; a < no; ++a) {
    p.partner[p.observed[a]] = pick(p.targets, [&](std::size_t b) { return p.similarity(a, b); });
  }
  return p;
}

Var rff_forward(Var z, const FeatureLayout& layout, std::span<const std::uint8_t> observed,
                const BoundLinear& fuse) {
  const Tensor& zv = z.value();
  if (zv.rows() != layout.rows()) throw DimensionError("rff: features do not match layout");
  const std::size_t n = layout.nodes;
  const std::size_t d = zv.cols();
  std::vector<std::size_t> partner_rows(layout.rows());
  for (std::size_t s = 0; s < layout.slices(); ++s) {
    const Tensor slice({n, d}, std::vector<double>(zv.raw() + s * n * d, zv.raw() + (s + 1) * n * d));
    const RffPairing p = rff_pairing(slice, observed);
    z.tape->note_margin(p.margin);
    for (std::size_t i = 0; i < n; ++i) partner_rows[s * n + i] = s * n + p.partner[i];
  }
  Var align = gather_rows(z, partner_rows);
  Var s_star = scale(add_scalar(rowwise_cosine(z, align), 1.0), 0.5);
  return apply(fuse, concat_last({z, mul(align, s_star)}));
}

Var kriging_forward(const BoundModel& model, Var x, const Propagator& a_minus,
                    std::span<const std::uint8_t> observed) {
  const Shape shape = x.shape();
  FeatureLayout layout;
  if (shape.size() == 4) {
    layout = {shape[0], shape[1], shape[2]};
  } else if (shape.size() == 3) {
    layout = {1, shape[0], shape[1]};
  } else {
    throw DimensionError("kriging input must be (B, t, N, 1) or (t, N, 1), got " +
                         to_string(shape));
  }
  if (shape.back() != model.config.input_dim) {
    throw DimensionError("kriging input channel " + std::to_string(shape.back()) +
                         " vs model input_dim " + std::to_string(model.config.input_dim));
  }
  if (layout.nodes != a_minus.size() || observed.size() != layout.nodes) {
    throw DimensionError("kriging input has " + std::to_string(layout.nodes) +
                         " nodes but the graph has " + std::to_string(a_minus.size()));
  }
  const auto n_obs = static_cast<std::size_t>(std::count(observed.begin(), observed.end(), 1));
  const bool use_rff = n_obs > 0 && n_obs < layout.nodes;

  Var z = apply(model.input_map, reshape(x, {layout.rows(), model.config.input_dim}));
  for (const auto& layer : model.layers) {
    z = stgc_forward(z, layout, a_minus, layer, model.config.window_radius);
    if (use_rff) z = rff_forward(z, layout, observed, model.rff_fuse);
  }
  return reshape(apply(model.readout, z), shape);
}

// ---------------------------------------------------------------------------
// Cycle regulation and loss

namespace {

void check_binary(const Tensor& mask, const char* what) {
  for (double v : mask.data()) {
    if (v != 0.0 && v != 1.0) throw ContractError(std::string(what) + " must be binary");
  }
}

}  // namespace

std::vector<std::uint8_t> observed_from_mask(const Tensor& mask, std::size_t nodes) {
  if (mask.size() < nodes) throw DimensionError("mask is smaller than one time slice");
  std::vector<std::uint8_t> out(nodes);
  for (std::size_t i = 0; i < nodes; ++i) out[i] = mask[i] == 1.0 ? 1 : 0;
  return out;
}

KrigingOutput ncr_pass(const BoundModel& model, Var x, const Tensor& mask,
                       const Propagator& a_minus) {
  if (mask.size() != x.value().size()) {
    throw DimensionError("mask " + to_string(mask.shape()) + " vs input " + to_string(x.shape()));
  }
  check_binary(mask, "observation mask");
  const std::size_t n = a_minus.size();
  std::vector<std::uint8_t> roles = observed_from_mask(mask, n);
  KrigingOutput out;
  out.x_hat = kriging_forward(model, x, a_minus, roles);

  Tensor inverse(x.shape());
  for (std::size_t k = 0; k < inverse.size(); ++k) inverse[k] = 1.0 - mask[k];
  out.x_cycle = mul(out.x_hat, x.tape->constant(std::move(inverse)));
  for (auto& r : roles) r = r ? 0 : 1;
  out.x_hat_cycle = kriging_forward(model, out.x_cycle, a_minus, roles);
  return out;
}

Var kits_loss(Var x_hat, const Tensor& target, Var x_hat_cycle, const Tensor& label_mask,
              double lambda) {
  const std::size_t size = x_hat.value().size();
  if (target.size() != size || label_mask.size() != size || x_hat_cycle.value().size() != size) {
    throw DimensionError("loss operands disagree in size");
  }
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  check_binary(label_mask, "label mask");
  std::vector<std::size_t> labelled;
  for (std::size_t k = 0; k < size; ++k) {
    if (label_mask[k] == 1.0) labelled.push_back(k);
  }
  if (labelled.empty()) throw ContractError("loss needs at least one labelled entry");

  Tape& tape = *x_hat.tape;
  Tensor y({labelled.size(), 1});
  for (std::size_t k = 0; k < labelled.size(); ++k) y[k] = target[labelled[k]];
  Var flat = reshape(x_hat, {size, 1});
  Var loss = mean(abs(sub(gather_rows(flat, labelled), tape.constant(std::move(y)))));
  if (lambda > 0.0) {
    Var cycle = mean(abs(sub(reshape(x_hat_cycle, {size, 1}), detach(flat))));
    loss = add(loss, scale(cycle, lambda));
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'K', 'I', 'T', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put(out, kVersion);
  for (const auto& [name, t] : params.named()) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) put(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t->raw()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0 || !get(in, version)) {
    throw ConfigError(path.string() + " is not a KITS checkpoint");
  }
  if (version != kVersion) {
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  }
  std::map<std::string, Tensor> tensors;
  std::uint32_t name_len = 0;
  while (get(in, name_len)) {
    if (name_len > 4096) throw ConfigError("corrupt checkpoint " + path.string());
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!in.read(name.data(), name_len) || !get(in, rank) || rank > 8) {
      throw ConfigError("truncated checkpoint " + path.string());
    }
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      if (!get(in, v) || v > (1ULL << 32)) throw ConfigError("truncated checkpoint " + path.string());
      d = static_cast<std::size_t>(v);
    }
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.raw()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw ConfigError("truncated checkpoint " + path.string());
    }
    tensors.emplace(std::move(name), std::move(t));
  }

  auto find = [&](const std::string& name) -> const Tensor& {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("checkpoint lacks parameter " + name);
    return it->second;
  };
  const Tensor& w_in = find("input_map.weight");
  if (w_in.rank() != 2) throw ConfigError("checkpoint input_map.weight is not a matrix");
  ModelConfig c;
  c.input_dim = w_in.dim(0);
  c.dim = w_in.dim(1);
  c.layers = 0;
  while (tensors.contains("layers." + std::to_string(c.layers) + ".gc.weight")) ++c.layers;
  if (c.layers == 0) throw ConfigError("checkpoint has no STGC layers");
  const std::size_t window = find("layers.0.gc.weight").dim(0) / c.dim;
  if (window % 2 == 0) throw ConfigError("checkpoint STGC window is not odd");
  c.window_radius = (window - 1) / 2;

  Rng unused(0);
  ModelParams p = ModelParams::init(c, unused);
  for (auto& [name, t] : p.named()) {
    const Tensor& stored = find(name);
    if (stored.shape() != t->shape()) {
      throw ConfigError("checkpoint parameter " + name + " has shape " + to_string(stored.shape()) +
                        ", expected " + to_string(t->shape()));
    }
    *t = stored;
  }
  if (tensors.size() != p.named().size()) throw ConfigError("checkpoint has unexpected parameters");
  return p;
}

}  // namespace kits
