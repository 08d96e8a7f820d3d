#pragma once

#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "spi/core_math.hpp"
#include "spi/detail/format.hpp"
#include "spi/losses.hpp"
#include "spi/types.hpp"

namespace spi {

// ---------------------------------------------------------------------------
// Similarity-based soft pseudo-labels
// ---------------------------------------------------------------------------

/// Soft pseudo-labels for a batch together with what the backward pass needs.
struct SoftPseudoLabels {
  std::vector<ProbVector> labels;   // ỹ_i, one per query
  std::vector<Vec> weights;         // softmax weights over the support set, one row per query
  std::vector<Vec> query_unit;      // ẑ_i
  std::vector<Vec> support_unit;    // ẑ_sup
};

/// ỹ_i = softmax_τ(ẑ_i · ẑ_supᵀ) · Y_sup, with Y_sup the one-hot support labels.
inline SoftPseudoLabels compute_soft_pseudo_labels(const std::vector<Embedding>& queries, const SupportBatch& support,
                                                   Temperature tau) {
  const std::size_t num_classes = support.num_classes;
  require_same_size(support.embeddings.size(), support.labels.size(), "support labels");
  if (support.embeddings.empty()) throw Error(ErrorKind::ShapeMismatch, "empty support set");
  for (std::size_t y : support.labels) {
    if (y >= num_classes) throw Error(ErrorKind::InvalidClass, "support label out of range");
  }

  SoftPseudoLabels out;
  out.support_unit.reserve(support.embeddings.size());
  for (const auto& v : support.embeddings) {
    require_same_size(v.size(), support.embeddings.front().size(), "support embedding");
    out.support_unit.push_back(l2_normalize(v));
  }
  out.labels.reserve(queries.size());
  out.weights.reserve(queries.size());
  out.query_unit.reserve(queries.size());

  Vec sims(support.embeddings.size());
  for (const auto& q : queries) {
    require_same_size(q.size(), support.embeddings.front().size(), "query embedding");
    Vec u = l2_normalize(q);
    for (std::size_t j = 0; j < sims.size(); ++j) sims[j] = dot(u, out.support_unit[j]);
    Vec w = softmax_tau(sims, tau);
    ProbVector y(num_classes, 0.0);
    for (std::size_t j = 0; j < w.size(); ++j) y[support.labels[j]] += w[j];
    out.labels.push_back(std::move(y));
    out.weights.push_back(std::move(w));
    out.query_unit.push_back(std::move(u));
  }
  return out;
}

struct PseudoLabelGrads {
  RowGrads queries;
  RowGrads support;
};

/// Back-propagates dL/dỹ into the raw query and support embeddings.
inline PseudoLabelGrads soft_pseudo_labels_backward(const std::vector<Embedding>& queries,
                                                    const SupportBatch& support, const SoftPseudoLabels& fwd,
                                                    const std::vector<Vec>& grad_labels, Temperature tau) {
  require_same_size(queries.size(), grad_labels.size(), "pseudo-label gradient rows");
  const std::size_t ns = support.embeddings.size();
  const std::size_t d = support.embeddings.front().size();
  RowGrads grad_support_unit(ns, Vec(d, 0.0));
  PseudoLabelGrads out;
  out.queries.reserve(queries.size());

  Vec grad_w(ns);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (std::size_t j = 0; j < ns; ++j) grad_w[j] = grad_labels[i][support.labels[j]];
    const Vec grad_sims = softmax_tau_backward(fwd.weights[i], grad_w, tau);
    Vec grad_u(d, 0.0);
    for (std::size_t j = 0; j < ns; ++j) {
      if (grad_sims[j] == 0.0) continue;
      accumulate(grad_u, fwd.support_unit[j], grad_sims[j]);
      accumulate(grad_support_unit[j], fwd.query_unit[i], grad_sims[j]);
    }
    out.queries.push_back(l2_normalize_backward(queries[i], grad_u));
  }
  out.support.reserve(ns);
  for (std::size_t j = 0; j < ns; ++j) {
    out.support.push_back(l2_normalize_backward(support.embeddings[j], grad_support_unit[j]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// EMA confidence store
// ---------------------------------------------------------------------------

/// Per-sample exponential moving average of sharpened soft pseudo-labels.
class PseudoLabelStore {
 public:
  explicit PseudoLabelStore(double rho = 0.7) : rho_(rho) {
    if (!(rho > 0.0 && rho <= 1.0)) throw Error(ErrorKind::InvalidInput, "EMA momentum must lie in (0, 1]");
  }

  double rho() const noexcept { return rho_; }

  /// First visit stores `sharpened` as is; afterwards ρ·new + (1−ρ)·old.
  const ProbVector& update(SampleId id, const ProbVector& sharpened) {
    auto [it, inserted] = entries_.try_emplace(id, sharpened);
    if (!inserted) {
      ProbVector& old = it->second;
      require_same_size(old.size(), sharpened.size(), "ema_update");
      for (std::size_t c = 0; c < old.size(); ++c) old[c] = rho_ * sharpened[c] + (1.0 - rho_) * old[c];
    }
    return it->second;
  }

  /// Replaces the entry with the latest value (EMA disabled).
  const ProbVector& overwrite(SampleId id, const ProbVector& sharpened) {
    return entries_.insert_or_assign(id, sharpened).first->second;
  }

  const ProbVector* find(SampleId id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::map<SampleId, ProbVector>& entries() const noexcept { return entries_; }

 private:
  double rho_;
  std::map<SampleId, ProbVector> entries_;
};

inline const ProbVector& ema_update(PseudoLabelStore& store, SampleId id, const ProbVector& sharpened) {
  return store.update(id, sharpened);
}

// ---------------------------------------------------------------------------
// Labeled-target membership and the injection/removal state machine
// ---------------------------------------------------------------------------

/// Membership of the labeled target set: the frozen originals plus the
/// currently injected unlabeled samples with their assigned pseudo-labels.
class LabeledTargetSet {
 public:
  LabeledTargetSet() = default;
  explicit LabeledTargetSet(const LabeledSet& originals) {
    for (const auto& s : originals) originals_.emplace(s.id, s.label);
  }

  bool contains(SampleId id) const { return originals_.contains(id) || injected_.contains(id); }
  bool is_original(SampleId id) const { return originals_.contains(id); }
  bool is_injected(SampleId id) const { return injected_.contains(id); }

  std::size_t size() const noexcept { return originals_.size() + injected_.size(); }
  std::size_t num_injected() const noexcept { return injected_.size(); }

  const std::map<SampleId, std::size_t>& originals() const noexcept { return originals_; }
  const std::map<SampleId, std::size_t>& injected() const noexcept { return injected_; }

  /// Every (id, label) pair currently in the set, ordered by id.
  std::map<SampleId, std::size_t> members() const {
    auto all = originals_;
    all.insert(injected_.begin(), injected_.end());
    return all;
  }

  /// Marks `id` as injected with `label`. Returns 1 if newly added, 2 if the
  /// assigned label changed, 0 if nothing changed.
  int assign_injected(SampleId id, std::size_t label) {
    if (is_original(id)) {
      throw Error(ErrorKind::InconsistentState, "original labeled sample " + std::to_string(id.value) + " cannot be injected");
    }
    auto [it, inserted] = injected_.try_emplace(id, label);
    if (inserted) return 1;
    if (it->second == label) return 0;
    it->second = label;
    return 2;
  }

  bool erase_injected(SampleId id) {
    if (is_original(id)) {
      throw Error(ErrorKind::InconsistentState, "original labeled sample " + std::to_string(id.value) + " cannot be removed");
    }
    return injected_.erase(id) > 0;
  }

  bool operator==(const LabeledTargetSet&) const = default;

 private:
  std::map<SampleId, std::size_t> originals_;
  std::map<SampleId, std::size_t> injected_;
};

struct InjectionDecision {
  std::vector<Assignment> inject;
  std::vector<Assignment> remove;
  int epoch = 0;
};

struct UpdateCounts {
  std::size_t added = 0;      // newly injected
  std::size_t relabeled = 0;  // already injected, assigned class changed
  std::size_t removed = 0;
  bool applied = false;
};

inline void check_threshold(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw Error(ErrorKind::InvalidThreshold, "gamma must lie in (0, 1], got " + std::to_string(gamma));
  }
}

/// {(x, argmax P(x)) : x ∈ T, max P(x) ≥ γ}. Samples without a store entry are skipped.
inline std::vector<Assignment> select_injections(const PseudoLabelStore& store, const UnlabeledSet& unlabeled,
                                                 double gamma) {
  check_threshold(gamma);
  std::vector<Assignment> out;
  for (const auto& s : unlabeled) {
    const ProbVector* p = store.find(s.id);
    if (p == nullptr) continue;
    const std::size_t c = argmax(*p);
    if ((*p)[c] >= gamma) out.push_back({s.id, c});
  }
  return out;
}

/// Injected members whose confidence fell strictly below γ, paired with the
/// label they were injected with. Originals are never candidates.
inline std::vector<Assignment> select_removals(const LabeledTargetSet& t_hat, const PseudoLabelStore& store,
                                               double gamma) {
  check_threshold(gamma);
  std::vector<Assignment> out;
  for (const auto& [id, label] : t_hat.injected()) {
    const ProbVector* p = store.find(id);
    if (p == nullptr) {
      throw Error(ErrorKind::InconsistentState,
                  "injected sample " + std::to_string(id.value) + " has no pseudo-label entry");
    }
    if (max_value(*p) < gamma) out.push_back({id, label});
  }
  return out;
}

/// T̂ ← (T̂ \ R) ∪ I when epoch ≥ warmup, otherwise unchanged. An injection of an
/// already-injected sample updates its assigned class.
inline UpdateCounts apply_update(LabeledTargetSet& t_hat, const InjectionDecision& decision, int epoch,
                                 int warmup) {
  UpdateCounts counts;
  if (epoch < warmup) return counts;
  counts.applied = true;
  for (const auto& r : decision.remove) {
    if (t_hat.erase_injected(r.id)) ++counts.removed;
  }
  for (const auto& a : decision.inject) {
    switch (t_hat.assign_injected(a.id, a.label)) {
      case 1: ++counts.added; break;
      case 2: ++counts.relabeled; break;
      default: break;
    }
  }
  return counts;
}

/// Writes one row per stored sample: id, p_0..p_{C-1}, injected, assigned_label
/// (−1 when not injected).
inline void write_store_snapshot(std::ostream& out, const PseudoLabelStore& store, const LabeledTargetSet& t_hat,
                                 std::size_t num_classes) {
  out << "id";
  for (std::size_t c = 0; c < num_classes; ++c) out << ",p" << c;
  out << ",injected,assigned_label\n";
  for (const auto& [id, p] : store.entries()) {
    require_same_size(p.size(), num_classes, "store snapshot");
    out << id.value;
    for (double v : p) out << ',' << detail::format_double(v);
    const auto it = t_hat.injected().find(id);
    if (it != t_hat.injected().end()) {
      out << ",1," << it->second << '\n';
    } else {
      out << ",0,-1\n";
    }
  }
}

}  // namespace spi
