#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "spi/core_math.hpp"
#include "spi/losses.hpp"
#include "spi/model.hpp"
#include "spi/objective.hpp"
#include "spi/pseudo_label.hpp"
#include "spi/sampling.hpp"

namespace spi {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t configs = 20;
  double step = 1e-5;
  double tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
  /// Name of a loss ("con", "ils", "ida", "cls") whose analytic gradient is
  /// negated before comparison. Used to prove the harness can fail.
  std::string mutate;
};

struct GradcheckResult {
  std::string name;
  std::size_t configs = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::size_t worst_config = 0;      // config index with the largest error
  std::size_t worst_coordinate = 0;  // flattened coordinate of the largest deviation there

  void record(std::size_t config, std::pair<double, std::size_t> err) {
    if (config != 0 && err.first <= max_rel_error) return;
    max_rel_error = err.first;
    worst_config = config;
    worst_coordinate = err.second;
  }
};

namespace detail {

/// ‖a − n‖∞ / max(‖a‖∞, ‖n‖∞) and the coordinate attaining the numerator.
/// The error is the plain difference when both vectors are zero.
inline std::pair<double, std::size_t> relative_error(const std::vector<double>& analytic,
                                                     const std::vector<double>& numeric) {
  require_same_size(analytic.size(), numeric.size(), "gradient check");
  double diff = 0.0;
  double scale = 0.0;
  std::size_t worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = std::abs(analytic[i] - numeric[i]);
    if (d > diff) {
      diff = d;
      worst = i;
    }
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return {scale > 0.0 ? diff / scale : diff, worst};
}

inline std::vector<double> flatten(const std::vector<Vec>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

/// Central differences of f over every coordinate of `rows`.
inline std::vector<double> numeric_rows(std::vector<Vec> rows, const std::function<double(const std::vector<Vec>&)>& f,
                                        double h) {
  std::vector<double> out;
  for (auto& row : rows) {
    for (double& v : row) {
      const double keep = v;
      v = keep + h;
      const double up = f(rows);
      v = keep - h;
      const double down = f(rows);
      v = keep;
      out.push_back((up - down) / (2.0 * h));
    }
  }
  return out;
}

inline std::vector<Vec> gaussian_rows(std::size_t n, std::size_t d, double sigma, Rng& rng) {
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<Vec> rows(n, Vec(d));
  for (auto& r : rows) {
    for (double& v : r) v = g(rng);
  }
  return rows;
}

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Support with `per_class` rows of each class in each domain, labels c-major.
inline SupportBatch random_support(std::size_t classes, std::size_t per_class, std::size_t d, Rng& rng) {
  SupportBatch b;
  b.num_classes = classes;
  for (Domain dom : {Domain::Source, Domain::Target}) {
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t k = 0; k < per_class; ++k) {
        b.labels.push_back(c);
        b.domains.push_back(dom);
      }
    }
  }
  b.embeddings = gaussian_rows(b.labels.size(), d, 1.0, rng);
  return b;
}

/// View-major layout used throughout: per sample g1, g2, l1..lη.
struct IlsProblem {
  SupportBatch support;
  std::vector<Embedding> queries;
  std::size_t samples = 0;
  std::size_t n_local = 0;
  double tau_pl = 0.7;

  std::vector<std::vector<ProbVector>> split(const std::vector<ProbVector>& labels, bool global) const {
    std::vector<std::vector<ProbVector>> out(samples);
    const std::size_t per = 2 + n_local;
    for (std::size_t i = 0; i < samples; ++i) {
      const auto first = labels.begin() + static_cast<std::ptrdiff_t>(i * per);
      if (global) {
        out[i].assign(first, first + 2);
      } else {
        out[i].assign(first + 2, first + static_cast<std::ptrdiff_t>(per));
      }
    }
    return out;
  }
};

inline IlsProblem random_ils_problem(Rng& rng) {
  IlsProblem p;
  const std::size_t classes = uniform(rng, 2, 4);
  const std::size_t d = uniform(rng, 2, 5);
  p.support = random_support(classes, uniform(rng, 1, 2), d, rng);
  p.samples = uniform(rng, 1, 3);
  p.n_local = uniform(rng, 1, 3);
  p.tau_pl = std::uniform_real_distribution<double>(0.25, 0.7)(rng);
  p.queries = gaussian_rows(p.samples * (2 + p.n_local), d, 1.0, rng);
  return p;
}

/// Value and embedding gradient of the ILS term through the pseudo-label map.
/// Rows are support followed by queries.
inline LossValueWithGrad<RowGrads> ils_through_pseudo_labels(const IlsProblem& p, const IlsTargets& targets,
                                                             bool with_grad) {
  const Temperature tau(p.tau_pl);
  const auto pl = compute_soft_pseudo_labels(p.queries, p.support, tau);
  const auto global = p.split(pl.labels, true);
  const auto local = p.split(pl.labels, false);
  const auto part = instance_similarity_loss(global, local, targets);
  LossValueWithGrad<RowGrads> out{part.value, {}};
  if (!with_grad) return out;
  std::vector<Vec> grad_labels;
  for (std::size_t i = 0; i < p.samples; ++i) {
    grad_labels.push_back(part.grad.global[i][0]);
    grad_labels.push_back(part.grad.global[i][1]);
    for (const auto& g : part.grad.local[i]) grad_labels.push_back(g);
  }
  const auto back = soft_pseudo_labels_backward(p.queries, p.support, pl, grad_labels, tau);
  out.grad = back.support;
  out.grad.insert(out.grad.end(), back.queries.begin(), back.queries.end());
  return out;
}

inline IlsTargets ils_problem_targets(const IlsProblem& p, double tau_sharp) {
  const auto pl = compute_soft_pseudo_labels(p.queries, p.support, Temperature(p.tau_pl));
  return ils_targets(p.split(pl.labels, true), Temperature(tau_sharp));
}

inline double sign_for(const GradcheckOptions& o, const char* name) { return o.mutate == name ? -1.0 : 1.0; }

}  // namespace detail

/// Supervised contrastive loss. Alternates anchor conventions and, every fourth
/// config, disables embedding normalization.
inline GradcheckResult gradcheck_contrastive(const GradcheckOptions& o) {
  Rng rng(o.seed ^ 0x636f6eULL);
  GradcheckResult r{"con", o.configs, 0.0, o.tolerance, false};
  for (std::size_t k = 0; k < o.configs; ++k) {
    const std::size_t classes = detail::uniform(rng, 2, 3);
    const std::size_t d = detail::uniform(rng, 2, 6);
    SupportBatch b = detail::random_support(classes, detail::uniform(rng, 1, 2), d, rng);
    const AnchorMode mode = k % 2 == 0 ? AnchorMode::AsWritten : AnchorMode::Standard;
    const bool normalize = k % 4 != 3;
    const Temperature tau(normalize ? 0.1 : 1.0);
    auto analytic = supervised_contrastive(b, tau, normalize, mode).grad;
    scale(analytic, detail::sign_for(o, "con"));
    const auto numeric = detail::numeric_rows(
        b.embeddings,
        [&](const std::vector<Vec>& z) {
          SupportBatch c = b;
          c.embeddings = z;
          return supervised_contrastive(c, tau, normalize, mode).value;
        },
        o.step);
    r.record(k, detail::relative_error(detail::flatten(analytic), numeric));
  }
  r.pass = r.max_rel_error <= r.tolerance;
  return r;
}

/// Instance similarity loss differentiated through the soft pseudo-labels,
/// with respect to both query and support embeddings. Targets are frozen.
inline GradcheckResult gradcheck_ils(const GradcheckOptions& o) {
  Rng rng(o.seed ^ 0x696c73ULL);
  GradcheckResult r{"ils", o.configs, 0.0, o.tolerance, false};
  for (std::size_t k = 0; k < o.configs; ++k) {
    detail::IlsProblem p = detail::random_ils_problem(rng);
    const IlsTargets targets = detail::ils_problem_targets(p, 0.3);
    auto analytic = detail::ils_through_pseudo_labels(p, targets, true).grad;
    scale(analytic, detail::sign_for(o, "ils"));
    std::vector<Vec> rows = p.support.embeddings;
    rows.insert(rows.end(), p.queries.begin(), p.queries.end());
    const std::size_t ns = p.support.embeddings.size();
    const auto numeric = detail::numeric_rows(
        rows,
        [&](const std::vector<Vec>& z) {
          detail::IlsProblem q = p;
          std::copy(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(ns), q.support.embeddings.begin());
          std::copy(z.begin() + static_cast<std::ptrdiff_t>(ns), z.end(), q.queries.begin());
          return detail::ils_through_pseudo_labels(q, targets, false).value;
        },
        o.step);
    r.record(k, detail::relative_error(detail::flatten(analytic), numeric));
  }
  r.pass = r.max_rel_error <= r.tolerance;
  return r;
}

/// Intra-domain alignment with the mask frozen at the base point.
inline GradcheckResult gradcheck_ida(const GradcheckOptions& o) {
  Rng rng(o.seed ^ 0x696461ULL);
  GradcheckResult r{"ida", o.configs, 0.0, o.tolerance, false};
  for (std::size_t k = 0; k < o.configs; ++k) {
    const std::size_t d = detail::uniform(rng, 2, 5);
    const auto z = detail::gaussian_rows(detail::uniform(rng, 3, 8), d, 1.0, rng);
    const BinaryMatrix m = build_similarity_mask(z, detail::uniform(rng, 1, 2));
    auto analytic = intra_domain_alignment(z, m).grad;
    scale(analytic, detail::sign_for(o, "ida"));
    const auto numeric = detail::numeric_rows(
        z, [&](const std::vector<Vec>& x) { return intra_domain_alignment(x, m).value; }, o.step);
    r.record(k, detail::relative_error(detail::flatten(analytic), numeric));
  }
  r.pass = r.max_rel_error <= r.tolerance;
  return r;
}

/// Label-smoothed classification loss with respect to the logits.
inline GradcheckResult gradcheck_cls(const GradcheckOptions& o) {
  Rng rng(o.seed ^ 0x636c73ULL);
  GradcheckResult r{"cls", o.configs, 0.0, o.tolerance, false};
  const double alphas[] = {0.0, 0.1, 0.3};
  for (std::size_t k = 0; k < o.configs; ++k) {
    const std::size_t classes = detail::uniform(rng, 2, 5);
    const std::size_t n = detail::uniform(rng, 2, 6);
    const auto logits = detail::gaussian_rows(n, classes, 2.0, rng);
    std::vector<std::size_t> labels(n);
    for (auto& y : labels) y = detail::uniform(rng, 0, classes - 1);
    const double alpha = alphas[k % 3];
    auto analytic = classification_loss(logits, labels, alpha, classes).grad;
    scale(analytic, detail::sign_for(o, "cls"));
    const auto numeric = detail::numeric_rows(
        logits, [&](const std::vector<Vec>& x) { return classification_loss(x, labels, alpha, classes).value; },
        o.step);
    r.record(k, detail::relative_error(detail::flatten(analytic), numeric));
  }
  r.pass = r.max_rel_error <= r.tolerance;
  return r;
}

/// Weighted sum of all four terms over a shared set of embedding rows, with a
/// fixed linear classifier on the support rows.
inline GradcheckResult gradcheck_total(const GradcheckOptions& o) {
  Rng rng(o.seed ^ 0x746f74ULL);
  GradcheckResult r{"total", o.configs, 0.0, o.tolerance, false};
  const LossWeights w{};
  for (std::size_t k = 0; k < o.configs; ++k) {
    detail::IlsProblem p = detail::random_ils_problem(rng);
    const std::size_t ns = p.support.embeddings.size();
    const std::size_t d = p.support.embeddings.front().size();
    const std::size_t classes = p.support.num_classes;
    const std::size_t per = 2 + p.n_local;
    DenseLayer head{Matrix(classes, d), detail::gaussian_rows(1, classes, 0.1, rng).front()};
    head.weight.data = detail::flatten(detail::gaussian_rows(classes, d, 0.5, rng));
    const IlsTargets targets = detail::ils_problem_targets(p, 0.3);
    std::vector<Embedding> g1(p.samples);
    for (std::size_t i = 0; i < p.samples; ++i) g1[i] = p.queries[i * per];
    const BinaryMatrix mask = build_similarity_mask(g1, 1);

    auto evaluate = [&](const detail::IlsProblem& q, bool with_grad) {
      const std::size_t rows = ns + q.queries.size();
      LossValueWithGrad<RowGrads> con{0.0, RowGrads(rows, Vec(d, 0.0))};
      LossValueWithGrad<RowGrads> ils{0.0, RowGrads(rows, Vec(d, 0.0))};
      LossValueWithGrad<RowGrads> ida{0.0, RowGrads(rows, Vec(d, 0.0))};
      LossValueWithGrad<RowGrads> cls{0.0, RowGrads(rows, Vec(d, 0.0))};
      const auto c = supervised_contrastive(q.support, Temperature(0.1));
      con.value = c.value;
      std::copy(c.grad.begin(), c.grad.end(), con.grad.begin());
      const auto s = detail::ils_through_pseudo_labels(q, targets, with_grad);
      ils.value = s.value;
      if (with_grad) ils.grad = s.grad;
      std::vector<Embedding> zg(q.samples);
      for (std::size_t i = 0; i < q.samples; ++i) zg[i] = q.queries[i * per];
      const auto a = intra_domain_alignment(zg, mask);
      ida.value = a.value;
      for (std::size_t i = 0; i < q.samples; ++i) ida.grad[ns + i * per] = a.grad[i];
      std::vector<Vec> logits(ns);
      for (std::size_t j = 0; j < ns; ++j) logits[j] = dense_forward(head, q.support.embeddings[j]);
      const auto h = classification_loss(logits, q.support.labels, 0.1, classes);
      cls.value = h.value;
      for (std::size_t j = 0; j < ns; ++j) {
        Vec gz(d, 0.0);
        for (std::size_t cidx = 0; cidx < classes; ++cidx) {
          for (std::size_t t = 0; t < d; ++t) gz[t] += head.weight(cidx, t) * h.grad[j][cidx];
        }
        cls.grad[j] = gz;
      }
      scale(con.grad, detail::sign_for(o, "con"));
      scale(ils.grad, detail::sign_for(o, "ils"));
      scale(ida.grad, detail::sign_for(o, "ida"));
      scale(cls.grad, detail::sign_for(o, "cls"));
      return total_loss(con, ils, ida, cls, w);
    };

    const auto analytic = evaluate(p, true).grad;
    std::vector<Vec> rows = p.support.embeddings;
    rows.insert(rows.end(), p.queries.begin(), p.queries.end());
    const auto numeric = detail::numeric_rows(
        rows,
        [&](const std::vector<Vec>& z) {
          detail::IlsProblem q = p;
          std::copy(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(ns), q.support.embeddings.begin());
          std::copy(z.begin() + static_cast<std::ptrdiff_t>(ns), z.end(), q.queries.begin());
          return evaluate(q, false).value;
        },
        o.step);
    r.record(k, detail::relative_error(detail::flatten(analytic), numeric));
  }
  r.pass = r.max_rel_error <= r.tolerance;
  return r;
}

/// Full objective through a small MLP with respect to every model parameter.
/// Configurations with a hidden preactivation within 1e-3 of the ReLU kink, or a
/// near-zero embedding, are redrawn so finite differences stay on one linear piece.
inline GradcheckResult gradcheck_end_to_end(const GradcheckOptions& o) {
  Rng rng(o.seed ^ 0x653265ULL);
  GradcheckResult r{"end_to_end", o.configs, 0.0, o.end_to_end_tolerance, false};
  const ModelShape shape{2, {5}, 4, 3};
  ObjectiveSettings s;
  s.num_classes = shape.num_classes;
  s.topk = 2;
  ViewConfig views;
  views.n_local = 2;
  views.global_noise_sigma = 0.3;
  views.local_noise_sigma = 0.3;

  std::size_t done = 0;
  std::size_t attempts = 0;
  while (done < o.configs) {
    if (++attempts > 100 * o.configs) throw Error(ErrorKind::InvalidInput, "could not draw kink-free configurations");
    const ModelParams params = init_params(shape, rng());
    SupportDraw draw;
    for (Domain dom : {Domain::Source, Domain::Target}) {
      for (std::size_t c = 0; c < shape.num_classes; ++c) {
        draw.ids.push_back(SampleId{static_cast<std::int64_t>(draw.ids.size())});
        draw.inputs.push_back(detail::gaussian_rows(1, shape.input_dim, 1.0, rng).front());
        draw.labels.push_back(c);
        draw.domains.push_back(dom);
      }
    }
    std::vector<ViewSet> vs;
    const std::size_t nu = detail::uniform(rng, 2, 4);
    for (std::size_t i = 0; i < nu; ++i) {
      vs.push_back(generate_views(detail::gaussian_rows(1, shape.input_dim, 1.0, rng).front(), views, rng));
    }
    s.tau_pl = std::uniform_real_distribution<double>(0.25, 0.7)(rng);
    s.anchor_mode = done % 2 == 0 ? AnchorMode::AsWritten : AnchorMode::Standard;

    bool near_kink = false;
    auto check_rows = [&](const Vec& x) {
      FeatureTrace t;
      // A fully dead hidden layer gives a zero embedding, which cannot be normalized.
      near_kink = near_kink || norm2(forward_features(params, x, &t)) < 1e-2;
      for (std::size_t l = 0; l + 1 < t.preactivations.size(); ++l) {
        for (double v : t.preactivations[l]) near_kink = near_kink || std::abs(v) < 1e-3;
      }
    };
    for (const auto& x : draw.inputs) check_rows(x);
    for (const auto& v : vs) {
      for (const auto& x : v.global_views) check_rows(x);
      for (const auto& x : v.local_views) check_rows(x);
    }
    if (near_kink) continue;

    const ObjectiveResult base = spi_objective(params, draw, vs, s);
    std::vector<double> analytic;
    for_each_array(base.grads, [&](const Vec& a) { analytic.insert(analytic.end(), a.begin(), a.end()); });
    if (!o.mutate.empty()) {
      // Rebuild the analytic gradient with the named term's sign flipped.
      ObjectiveSettings only = s;
      only.mask = {o.mutate == "con", o.mutate == "ils", o.mutate == "ida", true};
      ObjectiveSettings rest = only;
      rest.weights = {s.weights.con, s.weights.ils, s.weights.ida, o.mutate == "cls" ? s.weights.cls : 0.0};
      const ObjectiveResult part = spi_objective(params, draw, vs, rest, &base.frozen);
      std::vector<double> flip;
      for_each_array(part.grads, [&](const Vec& a) { flip.insert(flip.end(), a.begin(), a.end()); });
      for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] -= 2.0 * flip[i];
    }

    ModelParams probe = params;
    std::vector<Vec*> arrays;
    for_each_array(probe, [&](Vec& a) { arrays.push_back(&a); });
    std::vector<double> numeric;
    for (Vec* a : arrays) {
      for (double& v : *a) {
        const double keep = v;
        v = keep + o.step;
        const double up = spi_objective(probe, draw, vs, s, &base.frozen, false).losses.total;
        v = keep - o.step;
        const double down = spi_objective(probe, draw, vs, s, &base.frozen, false).losses.total;
        v = keep;
        numeric.push_back((up - down) / (2.0 * o.step));
      }
    }
    r.record(done, detail::relative_error(analytic, numeric));
    ++done;
  }
  r.pass = r.max_rel_error <= r.tolerance;
  return r;
}

/// The four per-loss checks.
inline std::vector<GradcheckResult> gradcheck_losses(const GradcheckOptions& o) {
  return {gradcheck_contrastive(o), gradcheck_ils(o), gradcheck_ida(o), gradcheck_cls(o)};
}

/// Per-loss checks plus the combined objective and the end-to-end model check.
inline std::vector<GradcheckResult> gradcheck_all(const GradcheckOptions& o) {
  auto out = gradcheck_losses(o);
  out.push_back(gradcheck_total(o));
  out.push_back(gradcheck_end_to_end(o));
  return out;
}

}  // namespace spi
