#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "spi/core_math.hpp"
#include "spi/detail/format.hpp"
#include "spi/error.hpp"

namespace spi {

/// Fully connected layer, y = W x + b with W stored out × in (row-major).
struct DenseLayer {
  Matrix weight;
  Vec bias;
  bool operator==(const DenseLayer&) const = default;
};

struct ModelShape {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t embedding_dim = 32;
  std::size_t num_classes = 5;
};

/// Feature extractor (ReLU MLP, linear output) and a linear classifier head.
/// The classifier weight is stored C × d so logits = W z + b.
struct ModelParams {
  std::vector<DenseLayer> mlp;
  DenseLayer classifier;

  std::size_t input_dim() const { return mlp.front().weight.cols; }
  std::size_t embedding_dim() const { return mlp.back().weight.rows; }
  std::size_t num_classes() const { return classifier.weight.rows; }

  bool operator==(const ModelParams&) const = default;
};

/// Visits every parameter array in declaration order.
template <class Params, class Fn>
void for_each_array(Params& p, Fn&& fn) {
  for (auto& layer : p.mlp) {
    fn(layer.weight.data);
    fn(layer.bias);
  }
  fn(p.classifier.weight.data);
  fn(p.classifier.bias);
}

/// Same structure, every entry zero. Used for gradients and velocity buffers.
inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for_each_array(z, [](Vec& a) { std::fill(a.begin(), a.end(), 0.0); });
  return z;
}

inline ModelParams make_zero_params(const ModelShape& shape) {
  ModelParams p;
  std::size_t in = shape.input_dim;
  std::vector<std::size_t> outs = shape.hidden;
  outs.push_back(shape.embedding_dim);
  for (std::size_t out : outs) {
    p.mlp.push_back({Matrix(out, in), Vec(out, 0.0)});
    in = out;
  }
  p.classifier = {Matrix(shape.num_classes, shape.embedding_dim), Vec(shape.num_classes, 0.0)};
  return p;
}

/// He-scaled Gaussian weights N(0, 2/fan_in), zero biases.
inline ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  ModelParams p = make_zero_params(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto fill = [&](DenseLayer& layer) {
    const double sd = std::sqrt(2.0 / static_cast<double>(layer.weight.cols));
    for (double& w : layer.weight.data) w = sd * gauss(rng);
  };
  for (auto& layer : p.mlp) fill(layer);
  fill(p.classifier);
  return p;
}

inline Vec dense_forward(const DenseLayer& layer, std::span<const double> x) {
  require_same_size(x.size(), layer.weight.cols, "dense layer input");
  Vec y(layer.weight.rows);
  for (std::size_t r = 0; r < y.size(); ++r) {
    double s = layer.bias[r];
    const auto w = layer.weight.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) s += w[c] * x[c];
    y[r] = s;
  }
  return y;
}

/// Accumulates dL/dW, dL/db into `grad` and returns dL/dx.
inline Vec dense_backward(const DenseLayer& layer, std::span<const double> x, std::span<const double> grad_y,
                          DenseLayer& grad) {
  Vec grad_x(layer.weight.cols, 0.0);
  for (std::size_t r = 0; r < layer.weight.rows; ++r) {
    const double g = grad_y[r];
    if (g == 0.0) continue;
    grad.bias[r] += g;
    auto gw = grad.weight.row(r);
    const auto w = layer.weight.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) {
      gw[c] += g * x[c];
      grad_x[c] += g * w[c];
    }
  }
  return grad_x;
}

/// Inputs to every MLP layer, kept for the backward pass. layer_inputs[0] is x;
/// preactivations[l] is layer l's output before the ReLU.
struct FeatureTrace {
  std::vector<Vec> layer_inputs;
  std::vector<Vec> preactivations;
};

inline Embedding forward_features(const ModelParams& params, std::span<const double> x, FeatureTrace* trace = nullptr) {
  if (x.size() != params.input_dim()) {
    throw Error(ErrorKind::ShapeMismatch, "input has dimension " + std::to_string(x.size()) + ", model expects " +
                                              std::to_string(params.input_dim()));
  }
  Vec h(x.begin(), x.end());
  if (trace) {
    trace->layer_inputs.clear();
    trace->preactivations.clear();
  }
  for (std::size_t l = 0; l < params.mlp.size(); ++l) {
    Vec pre = dense_forward(params.mlp[l], h);
    if (trace) {
      trace->layer_inputs.push_back(std::move(h));
      trace->preactivations.push_back(pre);
    }
    if (l + 1 < params.mlp.size()) {
      for (double& v : pre) v = v > 0.0 ? v : 0.0;
    }
    h = std::move(pre);
  }
  return h;
}

inline void backward_features(const ModelParams& params, const FeatureTrace& trace, std::span<const double> grad_z,
                              ModelParams& grad) {
  Vec g(grad_z.begin(), grad_z.end());
  for (std::size_t l = params.mlp.size(); l-- > 0;) {
    if (l + 1 < params.mlp.size()) {
      const Vec& pre = trace.preactivations[l];
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(pre[i] > 0.0)) g[i] = 0.0;
      }
    }
    g = dense_backward(params.mlp[l], trace.layer_inputs[l], g, grad.mlp[l]);
  }
}

inline Vec forward_logits(const ModelParams& params, std::span<const double> z) {
  if (z.size() != params.embedding_dim()) throw Error(ErrorKind::ShapeMismatch, "embedding dimension mismatch");
  return dense_forward(params.classifier, z);
}

/// h(x) = softmax(W z + b).
inline ProbVector class_probabilities(const ModelParams& params, std::span<const double> z) {
  return softmax(forward_logits(params, z));
}

/// Returns dL/dz and accumulates classifier gradients.
inline Vec backward_logits(const ModelParams& params, std::span<const double> z, std::span<const double> grad_logits,
                           ModelParams& grad) {
  return dense_backward(params.classifier, z, grad_logits, grad.classifier);
}

/// Wᵀ g: gradient reaching the embedding from dL/dlogits.
inline Vec logits_input_grad(const ModelParams& params, std::span<const double> grad_logits) {
  const Matrix& w = params.classifier.weight;
  require_same_size(grad_logits.size(), w.rows, "logits gradient");
  Vec out(w.cols, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += grad_logits[r] * w(r, c);
  }
  return out;
}

inline std::size_t predict(const ModelParams& params, std::span<const double> x) {
  return argmax(forward_logits(params, forward_features(params, x)));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerState {
  ModelParams velocity;
  double lr = 0.0002;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

inline OptimizerState make_optimizer(const ModelParams& params, double lr, double momentum, double weight_decay) {
  return {zeros_like(params), lr, momentum, weight_decay};
}

/// Classic SGD with coupled weight decay:
///   v ← μ·v + g + λ·θ,  θ ← θ − lr·v
inline void sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
  std::vector<Vec*> p_arrays;
  std::vector<const Vec*> g_arrays;
  std::vector<Vec*> v_arrays;
  for_each_array(params, [&](Vec& a) { p_arrays.push_back(&a); });
  for_each_array(grads, [&](const Vec& a) { g_arrays.push_back(&a); });
  for_each_array(state.velocity, [&](Vec& a) { v_arrays.push_back(&a); });
  require_same_size(p_arrays.size(), g_arrays.size(), "sgd_step gradients");
  require_same_size(p_arrays.size(), v_arrays.size(), "sgd_step velocity");
  for (std::size_t k = 0; k < g_arrays.size(); ++k) {
    require_same_size(p_arrays[k]->size(), g_arrays[k]->size(), "sgd_step gradient array");
    require_same_size(p_arrays[k]->size(), v_arrays[k]->size(), "sgd_step velocity array");
    for (double g : *g_arrays[k]) {
      if (!std::isfinite(g)) throw Error(ErrorKind::NonFiniteGradient, "gradient contains a non-finite entry");
    }
  }
  for (std::size_t k = 0; k < p_arrays.size(); ++k) {
    Vec& p = *p_arrays[k];
    Vec& v = *v_arrays[k];
    const Vec& g = *g_arrays[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i] + state.weight_decay * p[i];
      p[i] -= state.lr * v[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// Linear ramp start → peak over `warmup_epochs`, then cosine decay peak → floor
/// over the remaining epochs. Time advances continuously within an epoch.
struct Schedule {
  double start = 0.0;
  double peak = 0.0002;
  double floor = 1e-5;
  int warmup_epochs = 5;
  int total_epochs = 40;

  void validate() const {
    if (!(floor <= peak)) throw Error(ErrorKind::InvalidInput, "schedule floor exceeds peak");
    if (warmup_epochs < 0 || warmup_epochs > total_epochs) {
      throw Error(ErrorKind::InvalidInput, "schedule warmup must lie in [0, total_epochs]");
    }
  }
};

/// Value at time epoch + iter_fraction. iter_fraction = 1 on the last epoch
/// addresses the very end of the schedule.
inline double schedule_value(const Schedule& s, int epoch, double iter_fraction) {
  if (epoch < 0 || epoch >= s.total_epochs) {
    throw Error(ErrorKind::InvalidEpoch,
                "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(s.total_epochs) + ")");
  }
  if (!(iter_fraction >= 0.0 && iter_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidInput, "iteration fraction must lie in [0, 1]");
  }
  const double t = static_cast<double>(epoch) + iter_fraction;
  const double w = static_cast<double>(s.warmup_epochs);
  if (t < w) return s.start + (s.peak - s.start) * (t / w);
  const double span = static_cast<double>(s.total_epochs) - w;
  if (span <= 0.0) return s.peak;
  const double progress = (t - w) / span;
  if (progress >= 1.0) return s.floor;
  return s.floor + 0.5 * (s.peak - s.floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct CheckpointHeader {
  ModelShape shape;
  std::uint64_t seed = 0;
  int epoch = 0;
};

/// Text layout:
///   spi-checkpoint 1
///   input_dim <n>
///   hidden <k> <h1> ... <hk>
///   embedding_dim <d>
///   num_classes <C>
///   seed <s>
///   epoch <e>
///   then one line per parameter array in declaration order (mlp layer 0
///   weight, bias, layer 1 weight, bias, ..., classifier weight, bias):
///   <count> <v0> <v1> ...
/// Values use the shortest round-trip decimal form, so load(save(p)) == p.
inline void save_checkpoint(const std::string& path, const ModelParams& params, const CheckpointHeader& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::StorageError, "cannot open " + path + " for writing");
  out << "spi-checkpoint 1\n";
  out << "input_dim " << params.input_dim() << '\n';
  out << "hidden " << params.mlp.size() - 1;
  for (std::size_t l = 0; l + 1 < params.mlp.size(); ++l) out << ' ' << params.mlp[l].weight.rows;
  out << '\n';
  out << "embedding_dim " << params.embedding_dim() << '\n';
  out << "num_classes " << params.num_classes() << '\n';
  out << "seed " << header.seed << '\n';
  out << "epoch " << header.epoch << '\n';
  for_each_array(params, [&](const Vec& a) {
    out << a.size();
    for (double v : a) out << ' ' << detail::format_double(v);
    out << '\n';
  });
  if (!out) throw Error(ErrorKind::StorageError, "write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path, CheckpointHeader* header_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::StorageError, "cannot open " + path);
  auto fail = [&](const std::string& what) { throw Error(ErrorKind::ParseError, path + ": " + what); };
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "spi-checkpoint" || version != 1) fail("not a version-1 checkpoint");

  CheckpointHeader h;
  auto expect_key = [&](const char* key) {
    std::string k;
    if (!(in >> k) || k != key) fail(std::string("expected key '") + key + "'");
  };
  expect_key("input_dim");
  in >> h.shape.input_dim;
  expect_key("hidden");
  std::size_t nh = 0;
  in >> nh;
  h.shape.hidden.assign(nh, 0);
  for (auto& v : h.shape.hidden) in >> v;
  expect_key("embedding_dim");
  in >> h.shape.embedding_dim;
  expect_key("num_classes");
  in >> h.shape.num_classes;
  expect_key("seed");
  in >> h.seed;
  expect_key("epoch");
  in >> h.epoch;
  if (!in) fail("malformed header");

  ModelParams p = make_zero_params(h.shape);
  std::size_t array_index = 0;
  for_each_array(p, [&](Vec& a) {
    std::size_t count = 0;
    if (!(in >> count) || count != a.size()) fail("array " + std::to_string(array_index) + " has wrong length");
    std::string tok;
    for (double& v : a) {
      if (!(in >> tok)) fail("array " + std::to_string(array_index) + " truncated");
      auto parsed = detail::parse_double(tok);
      if (!parsed) fail("bad number '" + tok + "'");
      v = *parsed;
    }
    ++array_index;
  });
  if (header_out) *header_out = h;
  return p;
}

}  // namespace spi
