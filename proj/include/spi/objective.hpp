#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "spi/core_math.hpp"
#include "spi/losses.hpp"
#include "spi/model.hpp"
#include "spi/pseudo_label.hpp"
#include "spi/sampling.hpp"

namespace spi {

struct LossMask {
  bool con = true;
  bool ils = true;
  bool ida = true;
  bool cls = true;
  bool operator==(const LossMask&) const = default;
};

struct IterationLosses {
  double con = 0.0;
  double ils = 0.0;
  double ida = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

struct ObjectiveSettings {
  LossMask mask{};
  LossWeights weights{};
  double tau_con = 0.1;
  double tau_pl = 0.7;
  double tau_sharp = 0.3;
  double alpha = 0.1;
  std::size_t topk = 5;
  bool normalize_con = true;
  AnchorMode anchor_mode = AnchorMode::AsWritten;
  std::size_t num_classes = 0;
};

/// Piecewise-constant pieces of the objective. Passing them back in pins the
/// function for finite-difference checks.
struct FrozenParts {
  std::optional<BinaryMatrix> mask;
  std::optional<IlsTargets> targets;
};

struct ObjectiveResult {
  IterationLosses losses;
  ModelParams grads;
  std::vector<ProbVector> first_view_labels;  // ỹ^{g1} per unlabeled sample
  FrozenParts frozen;
};

/// Full per-iteration objective λ₁L_con + λ₂L_ils + λ₃L_ida + λ₄L_cls and its
/// gradient with respect to every model parameter. Masked-out terms contribute
/// neither value nor gradient. `views` may be empty (labeled data only).
inline ObjectiveResult spi_objective(const ModelParams& params, const SupportDraw& draw,
                                     const std::vector<ViewSet>& views, const ObjectiveSettings& s,
                                     const FrozenParts* frozen = nullptr, bool with_grad = true) {
  ObjectiveResult res;
  const std::size_t ns = draw.inputs.size();
  const std::size_t nu = views.size();
  const std::size_t n_local = nu > 0 ? views.front().local_views.size() : 0;
  const std::size_t per_sample = 2 + n_local;

  // Rows: support first, then per unlabeled sample g1, g2, l1..lη.
  std::vector<const Vec*> inputs;
  inputs.reserve(ns + nu * per_sample);
  for (const auto& x : draw.inputs) inputs.push_back(&x);
  for (const auto& v : views) {
    if (v.global_views.size() != 2) throw Error(ErrorKind::InvalidViewCount, "expected 2 global views");
    require_same_size(v.local_views.size(), n_local, "local view count");
    for (const auto& x : v.global_views) inputs.push_back(&x);
    for (const auto& x : v.local_views) inputs.push_back(&x);
  }
  std::vector<FeatureTrace> traces(with_grad ? inputs.size() : 0);
  std::vector<Embedding> z(inputs.size());
  for (std::size_t r = 0; r < inputs.size(); ++r) {
    z[r] = forward_features(params, *inputs[r], with_grad ? &traces[r] : nullptr);
    if (!detail::all_finite(z[r])) {
      throw Error(ErrorKind::NonFiniteLoss, "embedding of batch row " + std::to_string(r) + " is not finite");
    }
  }

  SupportBatch support;
  support.embeddings.assign(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(ns));
  support.labels = draw.labels;
  support.domains = draw.domains;
  support.num_classes = s.num_classes;
  auto view_row = [&](std::size_t i, std::size_t v) { return ns + i * per_sample + v; };

  LossValueWithGrad<RowGrads> con{0.0, detail::zeros_like(z)};
  LossValueWithGrad<RowGrads> ils{0.0, detail::zeros_like(z)};
  LossValueWithGrad<RowGrads> ida{0.0, detail::zeros_like(z)};
  LossValueWithGrad<RowGrads> cls{0.0, detail::zeros_like(z)};

  if (nu > 0) {
    const Temperature tau(s.tau_pl);
    const std::vector<Embedding> queries(z.begin() + static_cast<std::ptrdiff_t>(ns), z.end());
    const SoftPseudoLabels pl = compute_soft_pseudo_labels(queries, support, tau);
    res.first_view_labels.reserve(nu);
    for (std::size_t i = 0; i < nu; ++i) res.first_view_labels.push_back(pl.labels[i * per_sample]);

    if (s.mask.ils) {
      std::vector<std::vector<ProbVector>> global(nu);
      std::vector<std::vector<ProbVector>> local(nu);
      for (std::size_t i = 0; i < nu; ++i) {
        const auto first = pl.labels.begin() + static_cast<std::ptrdiff_t>(i * per_sample);
        global[i].assign(first, first + 2);
        local[i].assign(first + 2, first + static_cast<std::ptrdiff_t>(per_sample));
      }
      IlsTargets targets = frozen && frozen->targets ? *frozen->targets : ils_targets(global, Temperature(s.tau_sharp));
      const auto part = instance_similarity_loss(global, local, targets);
      ils.value = part.value;
      if (with_grad) {
        std::vector<Vec> grad_labels;
        grad_labels.reserve(queries.size());
        for (std::size_t i = 0; i < nu; ++i) {
          grad_labels.push_back(part.grad.global[i][0]);
          grad_labels.push_back(part.grad.global[i][1]);
          for (const auto& g : part.grad.local[i]) grad_labels.push_back(g);
        }
        const auto back = soft_pseudo_labels_backward(queries, support, pl, grad_labels, tau);
        for (std::size_t j = 0; j < ns; ++j) ils.grad[j] = back.support[j];
        for (std::size_t q = 0; q < queries.size(); ++q) ils.grad[ns + q] = back.queries[q];
      }
      res.frozen.targets = std::move(targets);
    }

    if (s.mask.ida) {
      std::vector<Embedding> zg(nu);
      for (std::size_t i = 0; i < nu; ++i) zg[i] = z[view_row(i, 0)];
      BinaryMatrix m = frozen && frozen->mask ? *frozen->mask : build_similarity_mask(zg, s.topk);
      const auto part = intra_domain_alignment(zg, m);
      ida.value = part.value;
      for (std::size_t i = 0; i < nu; ++i) ida.grad[view_row(i, 0)] = part.grad[i];
      res.frozen.mask = std::move(m);
    }
  }

  if (s.mask.con) {
    const auto part = supervised_contrastive(support, Temperature(s.tau_con), s.normalize_con, s.anchor_mode);
    con.value = part.value;
    for (std::size_t j = 0; j < ns; ++j) con.grad[j] = part.grad[j];
  }

  ModelParams grads = with_grad ? zeros_like(params) : ModelParams{};
  std::vector<Vec> logits(ns);
  for (std::size_t j = 0; j < ns; ++j) {
    logits[j] = forward_logits(params, support.embeddings[j]);
    if (!detail::all_finite(logits[j])) {
      throw Error(ErrorKind::NonFiniteLoss, "logits of support row " + std::to_string(j) + " are not finite");
    }
  }
  const auto cls_part = classification_loss(logits, support.labels, s.alpha, s.num_classes);
  cls.value = cls_part.value;
  if (with_grad) {
    for (std::size_t j = 0; j < ns; ++j) {
      cls.grad[j] = logits_input_grad(params, cls_part.grad[j]);
      Vec weighted = cls_part.grad[j];
      scale(weighted, s.weights.cls);
      backward_logits(params, support.embeddings[j], weighted, grads);
    }
  }

  const LossWeights w{s.mask.con ? s.weights.con : 0.0, s.mask.ils ? s.weights.ils : 0.0,
                      s.mask.ida ? s.weights.ida : 0.0, s.weights.cls};
  const auto total = total_loss(con, ils, ida, cls, w);

  if (with_grad) {
    for (std::size_t r = 0; r < z.size(); ++r) {
      const auto& g = total.grad[r];
      if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
      backward_features(params, traces[r], g, grads);
    }
    res.grads = std::move(grads);
  }
  res.losses = {con.value, ils.value, ida.value, cls.value, total.value};
  return res;
}

}  // namespace spi
