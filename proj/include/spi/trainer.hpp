#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "spi/core_math.hpp"
#include "spi/datasets.hpp"
#include "spi/detail/format.hpp"
#include "spi/losses.hpp"
#include "spi/model.hpp"
#include "spi/objective.hpp"
#include "spi/pseudo_label.hpp"
#include "spi/sampling.hpp"
#include "spi/types.hpp"

namespace spi {

enum class InjectionInterval : std::uint8_t { Epoch, Iteration };

/// Every knob of a training run. Defaults are the reference hyperparameters
/// except where a desk-scale value is noted.
struct TrainConfig {
  int epochs = 80;
  std::size_t iters_per_epoch = 0;  // 0: ⌈|T| / B_u⌉

  std::vector<std::size_t> hidden{64, 64};
  std::size_t embedding_dim = 32;

  double tau_con = 0.1;
  double tau_sharp = 0.3;
  double tau_pl_start = 0.7;
  double tau_pl_end = 0.25;

  LossWeights weights{};
  double rho = 0.7;
  double gamma = 0.8;
  int warmup = 5;
  std::size_t eta_sup = 4;
  ViewConfig views{};
  std::size_t batch_unlabeled = 32;  // desk scale; 128 on the large benchmarks
  std::size_t topk = 5;
  double alpha = 0.1;

  double lr_start = 0.0;
  double lr_peak = 0.0002;
  double lr_floor = 1e-5;
  double momentum = 0.9;
  double weight_decay = 0.0005;

  bool normalize_con = true;
  AnchorMode anchor_mode = AnchorMode::AsWritten;

  bool injection_enabled = true;
  bool removal_enabled = true;
  InjectionInterval injection_interval = InjectionInterval::Epoch;
  LossMask loss_mask{};
  bool use_ema = true;

  std::uint64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorKind::ConfigError, what); };
    if (epochs < 0) bad("epochs must be non-negative");
    if (!loss_mask.cls) bad("loss_mask must include cls");
    if (warmup < 0) bad("warmup must be non-negative");
    if (eta_sup < 1) bad("eta_sup must be at least 1");
    if (batch_unlabeled < 1) bad("batch_unlabeled must be at least 1");
    if (topk < 1 || topk > embedding_dim) bad("topk must lie in [1, embedding_dim]");
    if (!(alpha >= 0.0 && alpha < 1.0)) bad("alpha must lie in [0, 1)");
    if (!(rho > 0.0 && rho <= 1.0)) bad("rho must lie in (0, 1]");
    if (!(gamma > 0.0 && gamma <= 1.0)) bad("gamma must lie in (0, 1]");
    for (double t : {tau_con, tau_sharp, tau_pl_start, tau_pl_end}) {
      if (!(t > 0.0)) bad("temperatures must be positive");
    }
    if (tau_pl_end > tau_pl_start) bad("tau_pl_end must not exceed tau_pl_start");
    for (double w : {weights.con, weights.ils, weights.ida, weights.cls}) {
      if (!(w >= 0.0) || !std::isfinite(w)) bad("loss weights must be finite and non-negative");
    }
    if (!(lr_floor <= lr_peak)) bad("lr_floor must not exceed lr_peak");
    if (embedding_dim < 1) bad("embedding_dim must be positive");
    views.validate();
  }

  /// The unlabeled target data enters training at all.
  bool uses_unlabeled() const { return injection_enabled || loss_mask.ils || loss_mask.ida; }
};

struct EpochReport {
  int epoch = 0;
  IterationLosses mean_losses;
  double test_acc = 0.0;
  std::size_t n_inject = 0;
  std::size_t n_remove = 0;
  std::size_t n_relabel = 0;
  std::size_t n_labeled_target = 0;
  std::size_t n_false_positive = 0;
  double lr = 0.0;
  double tau_pl = 0.0;
};

/// Everything one iteration consumes: the class-balanced support draw and the
/// unlabeled batch with its augmented views.
struct IterationBatch {
  SupportDraw support;
  UnlabeledSet unlabeled;
  std::vector<ViewSet> views;
};

/// Top-1 accuracy of argmax h(x) against the true labels.
inline double evaluate(const ModelParams& params, const LabeledSet& test) {
  if (test.empty()) throw Error(ErrorKind::EmptyTestSet, "cannot evaluate on an empty test set");
  std::size_t correct = 0;
  for (const auto& s : test) {
    if (predict(params, s.x) == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

struct Neighbor {
  SampleId id;
  double similarity = 0.0;
};

/// k most cosine-similar gallery items, descending; ties resolve to the lower id.
inline std::vector<Neighbor> nearest_neighbors(const Embedding& query,
                                               const std::vector<std::pair<SampleId, Embedding>>& gallery,
                                               std::size_t k) {
  if (gallery.empty() || k < 1 || k > gallery.size()) {
    throw Error(ErrorKind::InvalidK, "k=" + std::to_string(k) + " with gallery of " + std::to_string(gallery.size()));
  }
  const Embedding q = l2_normalize(query);
  std::vector<Neighbor> all;
  all.reserve(gallery.size());
  for (const auto& [id, z] : gallery) all.push_back({id, dot(q, l2_normalize(z))});
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      if (a.similarity != b.similarity) return a.similarity > b.similarity;
                      return a.id < b.id;
                    });
  all.resize(k);
  return all;
}

/// Injected members whose assigned class differs from the audit label.
inline std::size_t count_false_positives(const LabeledTargetSet& t_hat, const AuditLabels& audit) {
  std::size_t n = 0;
  for (const auto& [id, label] : t_hat.injected()) {
    auto it = audit.labels.find(id);
    if (it == audit.labels.end() || it->second != label) ++n;
  }
  return n;
}

/// Stateful training loop. Holds the model, optimizer, pseudo-label store and
/// labeled-target membership. Never sees the audit labels of T.
class Trainer {
 public:
  using StoreObserver = std::function<void(const std::vector<SampleId>&, const std::vector<ProbVector>&)>;

  Trainer(TrainConfig cfg, const LabeledSet& source, const UnlabeledSet& unlabeled, const LabeledSet& target_labeled,
          const LabeledSet& test, std::size_t num_classes)
      : cfg_(validated(std::move(cfg))),
        source_(source),
        unlabeled_(unlabeled),
        target_originals_(target_labeled),
        test_(test),
        num_classes_(num_classes),
        store_(cfg_.rho),
        t_hat_(target_labeled),
        rng_(cfg_.seed) {
    if (source.empty()) throw Error(ErrorKind::MissingClass, "empty source set");
    ModelShape shape{source.front().x.size(), cfg_.hidden, cfg_.embedding_dim, num_classes_};
    params_ = init_params(shape, cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    optimizer_ = make_optimizer(params_, cfg_.lr_start, cfg_.momentum, cfg_.weight_decay);
    for (std::size_t i = 0; i < unlabeled_.size(); ++i) unlabeled_index_.emplace(unlabeled_[i].id, i);
    for (const auto& s : source_) source_ids_.insert(s.id);
    source_pools_ = build_class_pools(source_, num_classes_, "source set");
    rebuild_target_view();
    if (cfg_.uses_unlabeled() && unlabeled_.empty()) {
      throw Error(ErrorKind::EmptyUnlabeledSet, "configuration needs unlabeled target samples");
    }
    iters_per_epoch_ = cfg_.iters_per_epoch;
    if (iters_per_epoch_ == 0) {
      iters_per_epoch_ = std::max<std::size_t>(1, (unlabeled_.size() + cfg_.batch_unlabeled - 1) / cfg_.batch_unlabeled);
    }
    lr_schedule_ = {cfg_.lr_start, cfg_.lr_peak, cfg_.lr_floor, std::min(cfg_.warmup, cfg_.epochs), cfg_.epochs};
    tau_schedule_ = {cfg_.tau_pl_start, cfg_.tau_pl_start, cfg_.tau_pl_end, 0, cfg_.epochs};
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  const ModelParams& params() const noexcept { return params_; }
  ModelParams& mutable_params() noexcept { return params_; }
  const OptimizerState& optimizer() const noexcept { return optimizer_; }
  const PseudoLabelStore& store() const noexcept { return store_; }
  const LabeledTargetSet& labeled_target() const noexcept { return t_hat_; }
  const LabeledSet& labeled_target_samples() const noexcept { return target_current_; }
  std::size_t iters_per_epoch() const noexcept { return iters_per_epoch_; }
  int epoch() const noexcept { return epoch_; }
  std::size_t iteration() const noexcept { return iteration_; }
  std::size_t num_classes() const noexcept { return num_classes_; }

  void set_store_observer(StoreObserver obs) { observer_ = std::move(obs); }

  /// Learning rate and pseudo-label temperature for the current iteration.
  double current_lr() const { return schedule_value(lr_schedule_, epoch_, fraction()); }
  double current_tau_pl() const { return schedule_value(tau_schedule_, epoch_, fraction()); }

  IterationBatch draw_batch() {
    IterationBatch b;
    b.support = sample_support(source_, source_pools_, target_current_, target_pools_, cfg_.eta_sup, rng_);
    if (cfg_.uses_unlabeled()) {
      b.unlabeled = sample_unlabeled(unlabeled_, cfg_.batch_unlabeled, rng_);
      b.views.reserve(b.unlabeled.size());
      for (const auto& s : b.unlabeled) b.views.push_back(generate_views(s.x, cfg_.views, rng_));
    }
    return b;
  }

  /// Objective settings in force at the current iteration.
  ObjectiveSettings objective_settings() const {
    ObjectiveSettings s;
    s.mask = cfg_.loss_mask;
    s.weights = cfg_.weights;
    s.tau_con = cfg_.tau_con;
    s.tau_pl = current_tau_pl();
    s.tau_sharp = cfg_.tau_sharp;
    s.alpha = cfg_.alpha;
    s.topk = cfg_.topk;
    s.normalize_con = cfg_.normalize_con;
    s.anchor_mode = cfg_.anchor_mode;
    s.num_classes = num_classes_;
    return s;
  }

  /// One optimisation step on a drawn batch.
  IterationLosses train_iteration(const IterationBatch& batch) {
    if (epoch_ >= cfg_.epochs) throw Error(ErrorKind::InvalidEpoch, "training already finished");
    check_support_membership(batch.support);
    const double lr = current_lr();
    const auto where = [&] { return "epoch " + std::to_string(epoch_) + " iteration " + std::to_string(iteration_); };

    ObjectiveResult obj;
    try {
      obj = spi_objective(params_, batch.support, batch.views, objective_settings());
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NonFiniteLoss) throw;
      throw Error(ErrorKind::NonFiniteLoss, where() + ": " + e.what());
    }

    // Store update from the first global view.
    const std::size_t nu = batch.unlabeled.size();
    if (nu > 0) {
      std::vector<SampleId> ids;
      std::vector<ProbVector> sharpened;
      ids.reserve(nu);
      sharpened.reserve(nu);
      const Temperature tau_sharp(cfg_.tau_sharp);
      for (std::size_t i = 0; i < nu; ++i) {
        ProbVector p = sharpen(obj.first_view_labels[i], tau_sharp);
        if (cfg_.use_ema) {
          store_.update(batch.unlabeled[i].id, p);
        } else {
          store_.overwrite(batch.unlabeled[i].id, p);
        }
        ids.push_back(batch.unlabeled[i].id);
        sharpened.push_back(std::move(p));
      }
      if (observer_) observer_(ids, sharpened);
    }

    optimizer_.lr = lr;
    try {
      sgd_step(params_, obj.grads, optimizer_);
    } catch (const Error& e) {
      throw Error(ErrorKind::NonFiniteLoss, where() + ": " + e.what());
    }
    for_each_array(params_, [&](const Vec& a) {
      if (!detail::all_finite(a)) throw Error(ErrorKind::NonFiniteLoss, where() + ": parameters diverged");
    });

    ++iteration_;
    if (cfg_.injection_interval == InjectionInterval::Iteration) update_labeled_target(pending_);
    return obj.losses;
  }

  IterationLosses train_iteration() { return train_iteration(draw_batch()); }

  /// Runs every iteration of the current epoch, then the epoch tail.
  EpochReport train_epoch() {
    EpochReport report;
    report.epoch = epoch_;
    report.lr = current_lr();
    report.tau_pl = current_tau_pl();
    IterationLosses sum;
    for (std::size_t j = 0; j < iters_per_epoch_; ++j) {
      const IterationLosses l = train_iteration();
      sum.con += l.con;
      sum.ils += l.ils;
      sum.ida += l.ida;
      sum.cls += l.cls;
      sum.total += l.total;
    }
    const double n = static_cast<double>(iters_per_epoch_);
    report.mean_losses = {sum.con / n, sum.ils / n, sum.ida / n, sum.cls / n, sum.total / n};
    end_of_epoch(report);
    return report;
  }

  /// Epoch tail: select I_t and R_t, apply them when past warmup, evaluate.
  /// With per-iteration injection the membership was already updated and this
  /// only reports.
  void end_of_epoch(EpochReport& report) {
    if (cfg_.injection_interval == InjectionInterval::Epoch) update_labeled_target(pending_);
    report.epoch = epoch_;
    report.n_inject = pending_.added;
    report.n_remove = pending_.removed;
    report.n_relabel = pending_.relabeled;
    report.n_labeled_target = t_hat_.size();
    report.test_acc = evaluate(params_, test_);
    pending_ = {};
    ++epoch_;
    iteration_ = 0;
  }

  /// Injection and removal sets chosen from the current store.
  InjectionDecision decide() const {
    InjectionDecision d;
    d.epoch = epoch_;
    if (!cfg_.injection_enabled) return d;
    d.inject = select_injections(store_, unlabeled_, cfg_.gamma);
    if (cfg_.removal_enabled) d.remove = select_removals(t_hat_, store_, cfg_.gamma);
    return d;
  }

 private:
  static TrainConfig validated(TrainConfig cfg) {
    cfg.validate();
    return cfg;
  }

  double fraction() const {
    return static_cast<double>(iteration_) / static_cast<double>(iters_per_epoch_);
  }

  void update_labeled_target(UpdateCounts& acc) {
    if (!cfg_.injection_enabled) return;
    const UpdateCounts c = apply_update(t_hat_, decide(), epoch_, cfg_.warmup);
    acc.added += c.added;
    acc.removed += c.removed;
    acc.relabeled += c.relabeled;
    acc.applied = acc.applied || c.applied;
    if (c.added + c.removed + c.relabeled > 0) rebuild_target_view();
  }

  void rebuild_target_view() {
    target_current_ = target_originals_;
    for (const auto& [id, label] : t_hat_.injected()) {
      const auto it = unlabeled_index_.find(id);
      if (it == unlabeled_index_.end()) {
        throw Error(ErrorKind::InconsistentState, "injected id " + std::to_string(id.value) + " is not in T");
      }
      target_current_.push_back({id, unlabeled_[it->second].x, label});
    }
    target_pools_ = build_class_pools(target_current_, num_classes_, "labeled target set");
  }

  void check_support_membership(const SupportDraw& support) const {
    for (std::size_t j = 0; j < support.ids.size(); ++j) {
      const SampleId id = support.ids[j];
      const bool ok = support.domains[j] == Domain::Source ? source_ids_.contains(id) : t_hat_.contains(id);
      if (!ok) {
        throw Error(ErrorKind::InconsistentState,
                    "classifier input " + std::to_string(id.value) + " is not a member of S or the labeled target set");
      }
    }
  }

  TrainConfig cfg_;
  const LabeledSet& source_;
  const UnlabeledSet& unlabeled_;
  LabeledSet target_originals_;
  const LabeledSet& test_;
  std::size_t num_classes_;

  ModelParams params_;
  OptimizerState optimizer_;
  PseudoLabelStore store_;
  LabeledTargetSet t_hat_;
  Rng rng_;

  std::unordered_map<SampleId, std::size_t> unlabeled_index_;
  std::unordered_set<SampleId> source_ids_;
  ClassPools source_pools_;
  LabeledSet target_current_;
  ClassPools target_pools_;

  std::size_t iters_per_epoch_ = 1;
  Schedule lr_schedule_;
  Schedule tau_schedule_;
  int epoch_ = 0;
  std::size_t iteration_ = 0;
  UpdateCounts pending_;
  StoreObserver observer_;
};

inline constexpr const char* kMetricsHeader =
    "epoch,loss_con,loss_ils,loss_ida,loss_cls,loss_total,test_acc,n_inject,n_remove,n_labeled_target,"
    "n_false_positive,lr,tau_pl";

inline void write_metrics_row(std::ostream& out, const EpochReport& r) {
  using detail::format_double;
  out << r.epoch << ',' << format_double(r.mean_losses.con) << ',' << format_double(r.mean_losses.ils) << ','
      << format_double(r.mean_losses.ida) << ',' << format_double(r.mean_losses.cls) << ','
      << format_double(r.mean_losses.total) << ',' << format_double(r.test_acc) << ',' << r.n_inject << ','
      << r.n_remove << ',' << r.n_labeled_target << ',' << r.n_false_positive << ',' << format_double(r.lr) << ','
      << format_double(r.tau_pl) << '\n';
}

struct RunResult {
  std::vector<EpochReport> reports;
  ModelParams params;
  ModelParams initial_params;
};

/// Full training run. The audit labels are consulted only to count false
/// positive injections after each epoch. When `metrics` is given, the header
/// and one row per epoch are written as epochs complete.
inline RunResult run(const TrainConfig& cfg, const DatasetBundle& bundle, std::ostream* metrics = nullptr,
                     const std::function<void(const Trainer&)>& after_epoch = {}) {
  Trainer trainer(cfg, bundle.source, bundle.target_unlabeled, bundle.target_labeled, bundle.test,
                  bundle.num_classes);
  RunResult result;
  result.initial_params = trainer.params();
  if (metrics) *metrics << kMetricsHeader << '\n';
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochReport r = trainer.train_epoch();
    r.n_false_positive = count_false_positives(trainer.labeled_target(), bundle.audit);
    if (metrics) {
      write_metrics_row(*metrics, r);
      metrics->flush();
    }
    if (after_epoch) after_epoch(trainer);
    result.reports.push_back(r);
  }
  result.params = trainer.params();
  return result;
}

}  // namespace spi
