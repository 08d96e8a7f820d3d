#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "spi/error.hpp"
#include "spi/losses.hpp"
#include "spi/types.hpp"

namespace spi {

using Rng = std::mt19937_64;

/// Labeled inputs for one support batch, ordered (domain, class, draw).
struct SupportDraw {
  std::vector<SampleId> ids;
  std::vector<Vec> inputs;
  std::vector<std::size_t> labels;
  std::vector<Domain> domains;
};

/// Per-class positions into a LabeledSet.
using ClassPools = std::vector<std::vector<std::size_t>>;

inline ClassPools build_class_pools(const LabeledSet& set, std::size_t num_classes, const char* name) {
  ClassPools pools(num_classes);
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i].label >= num_classes) throw Error(ErrorKind::InvalidClass, std::string(name) + ": label out of range");
    pools[set[i].label].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (pools[c].empty()) {
      throw Error(ErrorKind::MissingClass, std::string(name) + " has no sample of class " + std::to_string(c));
    }
  }
  return pools;
}

inline void draw_from_pools(const LabeledSet& set, const ClassPools& pools, std::size_t per_class, Domain domain,
                            Rng& rng, SupportDraw& out) {
  for (std::size_t c = 0; c < pools.size(); ++c) {
    std::uniform_int_distribution<std::size_t> pick(0, pools[c].size() - 1);
    for (std::size_t k = 0; k < per_class; ++k) {
      const LabeledSample& s = set[pools[c][pick(rng)]];
      out.ids.push_back(s.id);
      out.inputs.push_back(s.x);
      out.labels.push_back(s.label);
      out.domains.push_back(domain);
    }
  }
}

/// η_sup samples per class from each labeled set, with replacement.
inline SupportDraw sample_support(const LabeledSet& source, const ClassPools& source_pools,
                                  const LabeledSet& target, const ClassPools& target_pools, std::size_t eta_sup,
                                  Rng& rng) {
  SupportDraw out;
  const std::size_t n = 2 * eta_sup * source_pools.size();
  out.ids.reserve(n);
  out.inputs.reserve(n);
  out.labels.reserve(n);
  out.domains.reserve(n);
  draw_from_pools(source, source_pools, eta_sup, Domain::Source, rng, out);
  draw_from_pools(target, target_pools, eta_sup, Domain::Target, rng, out);
  return out;
}

inline SupportDraw sample_support(const LabeledSet& source, const LabeledSet& target, std::size_t eta_sup,
                                  std::size_t num_classes, Rng& rng) {
  return sample_support(source, build_class_pools(source, num_classes, "source set"), target,
                        build_class_pools(target, num_classes, "labeled target set"), eta_sup, rng);
}

/// B_u samples drawn uniformly: without replacement when |T| ≥ B_u, otherwise with.
inline UnlabeledSet sample_unlabeled(const UnlabeledSet& unlabeled, std::size_t batch_size, Rng& rng) {
  if (unlabeled.empty()) throw Error(ErrorKind::EmptyUnlabeledSet, "no unlabeled samples to draw from");
  UnlabeledSet out;
  out.reserve(batch_size);
  if (unlabeled.size() >= batch_size) {
    std::vector<std::size_t> idx(unlabeled.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t k = 0; k < batch_size; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
      std::swap(idx[k], idx[pick(rng)]);
      out.push_back(unlabeled[idx[k]]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, unlabeled.size() - 1);
    for (std::size_t k = 0; k < batch_size; ++k) out.push_back(unlabeled[pick(rng)]);
  }
  return out;
}

struct ViewConfig {
  std::size_t n_global = 2;
  std::size_t n_local = 4;
  double global_noise_sigma = 0.05;
  double local_mask_fraction = 0.5;
  double local_noise_sigma = 0.05;

  void validate() const {
    if (n_global != 2) throw Error(ErrorKind::InvalidViewCount, "exactly 2 global views are required");
    if (!(global_noise_sigma >= 0.0) || !(local_noise_sigma >= 0.0)) {
      throw Error(ErrorKind::InvalidInput, "view noise sigma must be non-negative");
    }
    if (!(local_mask_fraction >= 0.0 && local_mask_fraction < 1.0)) {
      throw Error(ErrorKind::InvalidInput, "local mask fraction must lie in [0, 1)");
    }
  }
};

struct ViewSet {
  std::vector<Vec> global_views;
  std::vector<Vec> local_views;
};

/// Global views: x plus Gaussian noise. Local views: a random subset of
/// ⌈fraction·d⌉ coordinates zeroed, then Gaussian noise. The input is not modified.
inline ViewSet generate_views(const Vec& x, const ViewConfig& cfg, Rng& rng) {
  cfg.validate();
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t d = x.size();
  const auto num_masked =
      static_cast<std::size_t>(std::ceil(cfg.local_mask_fraction * static_cast<double>(d) - 1e-9));

  ViewSet views;
  views.global_views.reserve(cfg.n_global);
  views.local_views.reserve(cfg.n_local);
  for (std::size_t g = 0; g < cfg.n_global; ++g) {
    Vec v = x;
    for (double& e : v) e += cfg.global_noise_sigma * gauss(rng);
    views.global_views.push_back(std::move(v));
  }
  std::vector<std::size_t> coords(d);
  for (std::size_t l = 0; l < cfg.n_local; ++l) {
    Vec v = x;
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    for (std::size_t k = 0; k < num_masked; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, d - 1);
      std::swap(coords[k], coords[pick(rng)]);
      v[coords[k]] = 0.0;
    }
    for (double& e : v) e += cfg.local_noise_sigma * gauss(rng);
    views.local_views.push_back(std::move(v));
  }
  return views;
}

}  // namespace spi
