#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "spi/error.hpp"

namespace spi {

using Vec = std::vector<double>;

/// A point on the probability simplex (soft labels, classifier outputs).
using ProbVector = Vec;

/// Output of the feature extractor.
using Embedding = Vec;

/// Row-major dense matrix. Only what the losses and the MLP need.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

/// Strictly positive temperature. Construction validates.
class Temperature {
 public:
  explicit Temperature(double value) : value_(value) {
    if (!(value > 0.0) || !std::isfinite(value)) {
      throw Error(ErrorKind::InvalidTemperature, "temperature must be positive, got " + std::to_string(value));
    }
  }
  double value() const noexcept { return value_; }

 private:
  double value_;
};

inline constexpr double kNormEpsilon = 1e-12;
inline constexpr double kLogClamp = 1e-12;

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + ": size " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline double max_value(std::span<const double> v) { return v[argmax(v)]; }

inline bool is_on_simplex(std::span<const double> p, double tol = 1e-9) {
  if (p.empty()) return false;
  double s = 0.0;
  for (double x : p) {
    if (!(x >= -tol && x <= 1.0 + tol)) return false;
    s += x;
  }
  return std::abs(s - 1.0) <= tol;
}

inline ProbVector softmax_tau(std::span<const double> logits, Temperature tau) {
  if (logits.empty()) throw Error(ErrorKind::InvalidInput, "softmax of empty vector");
  for (double x : logits) {
    if (!std::isfinite(x)) throw Error(ErrorKind::InvalidInput, "softmax input is not finite");
  }
  const double t = tau.value();
  const double m = max_value(logits);
  ProbVector out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - m) / t);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

inline ProbVector softmax(std::span<const double> logits) { return softmax_tau(logits, Temperature(1.0)); }

// Vector-Jacobian product of softmax_tau: given p = softmax(x/τ) and dL/dp,
// returns dL/dx = p ⊙ (g − ⟨g, p⟩) / τ.
inline Vec softmax_tau_backward(std::span<const double> p, std::span<const double> grad_p, Temperature tau) {
  require_same_size(p.size(), grad_p.size(), "softmax_tau_backward");
  const double inner = dot(p, grad_p);
  Vec out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (grad_p[i] - inner) / tau.value();
  return out;
}

inline Embedding l2_normalize(std::span<const double> z) {
  const double n = norm2(z);
  if (!(n > kNormEpsilon)) throw Error(ErrorKind::DegenerateEmbedding, "embedding norm below threshold");
  Embedding out(z.begin(), z.end());
  for (double& x : out) x /= n;
  return out;
}

// dL/dz for u = z/‖z‖ given dL/du: (g − ⟨g,u⟩u)/‖z‖.
inline Vec l2_normalize_backward(std::span<const double> z, std::span<const double> grad_u) {
  require_same_size(z.size(), grad_u.size(), "l2_normalize_backward");
  const double n = norm2(z);
  if (!(n > kNormEpsilon)) throw Error(ErrorKind::DegenerateEmbedding, "embedding norm below threshold");
  double inner = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) inner += grad_u[i] * z[i] / n;
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = (grad_u[i] - inner * z[i] / n) / n;
  return out;
}

/// p^(1/τ), renormalized. Computed in log space so tiny entries do not underflow
/// before the maximum is factored out.
inline ProbVector sharpen(std::span<const double> p, Temperature tau) {
  const double inv = 1.0 / tau.value();
  const double pmax = max_value(p);
  ProbVector out(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = p[i] > 0.0 ? std::pow(p[i] / pmax, inv) : 0.0;
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

/// −Σ target_c · log(max(prediction_c, 1e-12)).
inline double cross_entropy(std::span<const double> prediction, std::span<const double> target) {
  require_same_size(prediction.size(), target.size(), "cross_entropy");
  double s = 0.0;
  for (std::size_t c = 0; c < prediction.size(); ++c) {
    if (target[c] != 0.0) s -= target[c] * std::log(std::max(prediction[c], kLogClamp));
  }
  return s;
}

// Gradient with respect to the prediction only; clamped entries get zero.
inline Vec cross_entropy_grad(std::span<const double> prediction, std::span<const double> target) {
  require_same_size(prediction.size(), target.size(), "cross_entropy_grad");
  Vec g(prediction.size(), 0.0);
  for (std::size_t c = 0; c < prediction.size(); ++c) {
    if (prediction[c] > kLogClamp) g[c] = -target[c] / prediction[c];
  }
  return g;
}

inline double entropy(std::span<const double> p) {
  double s = 0.0;
  for (double x : p) {
    if (x > 0.0) s -= x * std::log(x);
  }
  return s;
}

/// Entry (i, j) = ẑ_i · ẑ_j for row-normalized A and B.
inline Matrix cosine_similarity_matrix(const std::vector<Embedding>& a, const std::vector<Embedding>& b) {
  std::vector<Embedding> na;
  std::vector<Embedding> nb;
  na.reserve(a.size());
  nb.reserve(b.size());
  for (const auto& z : a) na.push_back(l2_normalize(z));
  for (const auto& z : b) {
    if (!na.empty()) require_same_size(na.front().size(), z.size(), "cosine_similarity_matrix");
    nb.push_back(l2_normalize(z));
  }
  Matrix out(a.size(), b.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    for (std::size_t j = 0; j < nb.size(); ++j) out(i, j) = dot(na[i], nb[j]);
  }
  return out;
}

/// Indices of the k largest entries, returned in ascending index order.
/// Ties resolve towards the lowest index.
inline std::vector<std::size_t> topk_indices(std::span<const double> z, std::size_t k) {
  if (k < 1 || k > z.size()) {
    throw Error(ErrorKind::InvalidK, "k=" + std::to_string(k) + " outside [1, " + std::to_string(z.size()) + "]");
  }
  std::vector<std::size_t> idx(z.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// (1 − α)·onehot(y) + α/C.
inline ProbVector smooth_label(std::size_t y, double alpha, std::size_t num_classes) {
  if (y >= num_classes) {
    throw Error(ErrorKind::InvalidClass, "label " + std::to_string(y) + " not in [0, " + std::to_string(num_classes) + ")");
  }
  if (!(alpha >= 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidInput, "smoothing alpha must lie in [0, 1)");
  ProbVector out(num_classes, alpha / static_cast<double>(num_classes));
  out[y] += 1.0 - alpha;
  return out;
}

inline ProbVector one_hot(std::size_t y, std::size_t num_classes) { return smooth_label(y, 0.0, num_classes); }

}  // namespace spi
