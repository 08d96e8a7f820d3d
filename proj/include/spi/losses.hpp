#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "spi/core_math.hpp"

namespace spi {

enum class Domain : std::uint8_t { Source, Target };

/// Class-balanced labeled batch drawn from both domains.
struct SupportBatch {
  std::vector<Embedding> embeddings;
  std::vector<std::size_t> labels;
  std::vector<Domain> domains;
  std::size_t num_classes = 0;
};

struct LossWeights {
  double con = 4.0;
  double ils = 1.0;
  double ida = 1.0;
  double cls = 1.0;
};

/// Loss value plus its gradient with respect to the differentiated argument.
template <class Grad>
struct LossValueWithGrad {
  double value = 0.0;
  Grad grad{};
};

using RowGrads = std::vector<Vec>;

/// Denominator anchoring for the supervised contrastive loss.
///  as_written: Σ_{a≠i} exp(z_a·z_p/τ)   (anchored on the positive p)
///  standard:   Σ_{a≠i} exp(z_i·z_a/τ)   (anchored on i, SupCon convention)
enum class AnchorMode : std::uint8_t { AsWritten, Standard };

namespace detail {

inline double log_sum_exp(std::span<const double> x) {
  const double m = max_value(x);
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline RowGrads zeros_like(const std::vector<Vec>& rows) {
  RowGrads g;
  g.reserve(rows.size());
  for (const auto& r : rows) g.emplace_back(r.size(), 0.0);
  return g;
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace detail

inline void scale(Vec& v, double w) {
  for (double& x : v) x *= w;
}

inline void scale(RowGrads& rows, double w) {
  for (auto& r : rows) scale(r, w);
}

inline void accumulate(Vec& dst, const Vec& src, double w) {
  require_same_size(dst.size(), src.size(), "accumulate");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
}

inline void accumulate(RowGrads& dst, const RowGrads& src, double w) {
  require_same_size(dst.size(), src.size(), "accumulate");
  for (std::size_t i = 0; i < dst.size(); ++i) accumulate(dst[i], src[i], w);
}

/// Supervised contrastive loss over the support batch. Positives P_i are the
/// other members of the batch sharing i's label, regardless of domain.
///
/// L = Σ_i −1/|P_i| Σ_{p∈P_i} log( exp(s_ip/τ) / D_ip )
///
/// with s the (optionally cosine) similarity and D_ip chosen by `mode`.
/// Returns the gradient with respect to every raw embedding.
inline LossValueWithGrad<RowGrads> supervised_contrastive(const SupportBatch& batch, Temperature tau,
                                                           bool normalize = true,
                                                           AnchorMode mode = AnchorMode::AsWritten) {
  const auto& z = batch.embeddings;
  const std::size_t n = z.size();
  require_same_size(n, batch.labels.size(), "supervised_contrastive labels");
  if (n < 2) throw Error(ErrorKind::DegenerateBatch, "contrastive batch needs at least two samples");

  std::vector<Vec> u;
  u.reserve(n);
  for (const auto& row : z) {
    require_same_size(row.size(), z.front().size(), "supervised_contrastive embedding");
    u.push_back(normalize ? l2_normalize(row) : row);
  }

  Matrix s(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) s(a, b) = dot(u[a], u[b]);
  }

  const double t = tau.value();
  // dL/ds, not symmetrised: s(a, b) depends on u_a and u_b separately.
  Matrix gs(n, n);
  double loss = 0.0;
  Vec logits(n - 1);

  for (std::size_t i = 0; i < n; ++i) {
    std::size_t num_pos = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p != i && batch.labels[p] == batch.labels[i]) ++num_pos;
    }
    if (num_pos == 0) {
      throw Error(ErrorKind::DegenerateBatch, "anchor " + std::to_string(i) + " has no positives");
    }
    const double w = -1.0 / static_cast<double>(num_pos);

    // The standard denominator does not depend on p; compute it once.
    double std_lse = 0.0;
    if (mode == AnchorMode::Standard) {
      std::size_t k = 0;
      for (std::size_t a = 0; a < n; ++a) {
        if (a != i) logits[k++] = s(i, a) / t;
      }
      std_lse = detail::log_sum_exp(logits);
    }

    for (std::size_t p = 0; p < n; ++p) {
      if (p == i || batch.labels[p] != batch.labels[i]) continue;
      double lse = std_lse;
      if (mode == AnchorMode::AsWritten) {
        std::size_t k = 0;
        for (std::size_t a = 0; a < n; ++a) {
          if (a != i) logits[k++] = s(a, p) / t;
        }
        lse = detail::log_sum_exp(logits);
      }
      loss += w * (s(i, p) / t - lse);
      gs(i, p) += w / t;
      for (std::size_t a = 0; a < n; ++a) {
        if (a == i) continue;
        if (mode == AnchorMode::AsWritten) {
          gs(a, p) -= w * std::exp(s(a, p) / t - lse) / t;
        } else {
          gs(i, a) -= w * std::exp(s(i, a) / t - lse) / t;
        }
      }
    }
  }

  RowGrads gu = detail::zeros_like(u);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const double g = gs(a, b);
      if (g == 0.0) continue;
      accumulate(gu[a], u[b], g);
      accumulate(gu[b], u[a], g);
    }
  }

  LossValueWithGrad<RowGrads> out;
  out.value = loss;
  if (normalize) {
    out.grad.reserve(n);
    for (std::size_t a = 0; a < n; ++a) out.grad.push_back(l2_normalize_backward(z[a], gu[a]));
  } else {
    out.grad = std::move(gu);
  }
  return out;
}

/// Sharpened global targets for the instance-level similarity loss. They are
/// treated as constants when differentiating.
struct IlsTargets {
  std::vector<std::array<ProbVector, 2>> sharpened;  // π^{g1}, π^{g2} per sample
  std::vector<ProbVector> mean;                       // (π^{g1} + π^{g2}) / 2
};

struct IlsGrad {
  std::vector<std::array<Vec, 2>> global;
  std::vector<std::vector<Vec>> local;
};

inline IlsTargets ils_targets(const std::vector<std::vector<ProbVector>>& global, Temperature tau_sharp) {
  IlsTargets t;
  t.sharpened.reserve(global.size());
  t.mean.reserve(global.size());
  for (const auto& g : global) {
    if (g.size() != 2) {
      throw Error(ErrorKind::InvalidViewCount, "expected 2 global views, got " + std::to_string(g.size()));
    }
    std::array<ProbVector, 2> pi{sharpen(g[0], tau_sharp), sharpen(g[1], tau_sharp)};
    ProbVector m(pi[0].size());
    for (std::size_t c = 0; c < m.size(); ++c) m[c] = 0.5 * (pi[0][c] + pi[1][c]);
    t.sharpened.push_back(std::move(pi));
    t.mean.push_back(std::move(m));
  }
  return t;
}

/// Σ_i [ H(ỹ^{g1}, π^{g2}) + H(ỹ^{g2}, π^{g1}) + Σ_j H(ỹ^{l_j}, π^{g}) ] with fixed targets.
inline LossValueWithGrad<IlsGrad> instance_similarity_loss(const std::vector<std::vector<ProbVector>>& global,
                                                          const std::vector<std::vector<ProbVector>>& local,
                                                          const IlsTargets& targets) {
  require_same_size(global.size(), local.size(), "instance_similarity_loss samples");
  require_same_size(global.size(), targets.mean.size(), "instance_similarity_loss targets");
  LossValueWithGrad<IlsGrad> out;
  out.grad.global.resize(global.size());
  out.grad.local.resize(global.size());
  for (std::size_t i = 0; i < global.size(); ++i) {
    if (global[i].size() != 2) {
      throw Error(ErrorKind::InvalidViewCount, "expected 2 global views, got " + std::to_string(global[i].size()));
    }
    const auto& pi = targets.sharpened[i];
    out.value += cross_entropy(global[i][0], pi[1]);
    out.value += cross_entropy(global[i][1], pi[0]);
    out.grad.global[i][0] = cross_entropy_grad(global[i][0], pi[1]);
    out.grad.global[i][1] = cross_entropy_grad(global[i][1], pi[0]);
    out.grad.local[i].reserve(local[i].size());
    for (const auto& yl : local[i]) {
      out.value += cross_entropy(yl, targets.mean[i]);
      out.grad.local[i].push_back(cross_entropy_grad(yl, targets.mean[i]));
    }
  }
  return out;
}

inline LossValueWithGrad<IlsGrad> instance_similarity_loss(const std::vector<std::vector<ProbVector>>& global,
                                                          const std::vector<std::vector<ProbVector>>& local,
                                                          Temperature tau_sharp) {
  return instance_similarity_loss(global, local, ils_targets(global, tau_sharp));
}

using BinaryMatrix = std::vector<std::vector<std::uint8_t>>;

/// M_ij = 1 iff z_i and z_j share the same set of top-k activated dimensions.
inline BinaryMatrix build_similarity_mask(const std::vector<Embedding>& z, std::size_t k) {
  std::vector<std::vector<std::size_t>> sets;
  sets.reserve(z.size());
  for (const auto& row : z) sets.push_back(topk_indices(row, k));
  BinaryMatrix m(z.size(), std::vector<std::uint8_t>(z.size(), 0));
  for (std::size_t i = 0; i < z.size(); ++i) {
    m[i][i] = 1;
    for (std::size_t j = i + 1; j < z.size(); ++j) {
      const std::uint8_t same = sets[i] == sets[j] ? 1 : 0;
      m[i][j] = same;
      m[j][i] = same;
    }
  }
  return m;
}

/// (1/B²) Σ_i Σ_j M_ij ‖z_i − z_j‖₂, subgradient 0 where z_i = z_j.
inline LossValueWithGrad<RowGrads> intra_domain_alignment(const std::vector<Embedding>& z, const BinaryMatrix& m) {
  const std::size_t n = z.size();
  require_same_size(m.size(), n, "intra_domain_alignment mask rows");
  LossValueWithGrad<RowGrads> out;
  out.grad = detail::zeros_like(z);
  if (n == 0) return out;
  const double scale = 1.0 / static_cast<double>(n * n);
  Vec diff;
  for (std::size_t i = 0; i < n; ++i) {
    require_same_size(m[i].size(), n, "intra_domain_alignment mask cols");
    for (std::size_t j = 0; j < n; ++j) {
      if (!m[i][j]) continue;
      require_same_size(z[i].size(), z[j].size(), "intra_domain_alignment embedding");
      diff.assign(z[i].size(), 0.0);
      for (std::size_t c = 0; c < diff.size(); ++c) diff[c] = z[i][c] - z[j][c];
      const double dist = norm2(diff);
      out.value += scale * dist;
      if (dist > 0.0) {
        accumulate(out.grad[i], diff, scale / dist);
        accumulate(out.grad[j], diff, -scale / dist);
      }
    }
  }
  return out;
}

/// Σ_i H(softmax(h_i), ŷ_i) with label-smoothed targets. Gradient is w.r.t. logits.
inline LossValueWithGrad<RowGrads> classification_loss(const std::vector<Vec>& logits,
                                                       const std::vector<std::size_t>& labels, double alpha,
                                                       std::size_t num_classes) {
  require_same_size(logits.size(), labels.size(), "classification_loss");
  LossValueWithGrad<RowGrads> out;
  out.grad.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    require_same_size(logits[i].size(), num_classes, "classification_loss logits");
    const ProbVector target = smooth_label(labels[i], alpha, num_classes);
    const ProbVector h = softmax(logits[i]);
    // log-softmax directly so confident rows do not hit the clamp.
    const double lse = detail::log_sum_exp(logits[i]);
    Vec g(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
      out.value -= target[c] * (logits[i][c] - lse);
      g[c] = h[c] - target[c];
    }
    out.grad.push_back(std::move(g));
  }
  return out;
}

/// λ₁L_con + λ₂L_ils + λ₃L_ida + λ₄L_cls, with gradients expressed on a common argument.
template <class Grad>
LossValueWithGrad<Grad> total_loss(const LossValueWithGrad<Grad>& con, const LossValueWithGrad<Grad>& ils,
                                   const LossValueWithGrad<Grad>& ida, const LossValueWithGrad<Grad>& cls,
                                   const LossWeights& w) {
  for (double v : {con.value, ils.value, ida.value, cls.value}) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteLoss, "loss component is not finite");
  }
  LossValueWithGrad<Grad> out;
  out.value = w.con * con.value + w.ils * ils.value + w.ida * ida.value + w.cls * cls.value;
  out.grad = con.grad;
  scale(out.grad, w.con);
  accumulate(out.grad, ils.grad, w.ils);
  accumulate(out.grad, ida.grad, w.ida);
  accumulate(out.grad, cls.grad, w.cls);
  return out;
}

}  // namespace spi
