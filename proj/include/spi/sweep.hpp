#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "spi/config.hpp"
#include "spi/datasets.hpp"
#include "spi/detail/format.hpp"
#include "spi/error.hpp"
#include "spi/trainer.hpp"

namespace spi {

/// One point of a grid: a set of config overrides with a printable key.
struct SweepCell {
  std::string key;
  std::vector<std::pair<std::string, std::string>> overrides;
};

struct SweepGrid {
  std::string name;
  std::vector<SweepCell> cells;
};

struct CellResult {
  std::string grid;
  std::string cell;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single seed
};

inline const std::vector<std::string>& sweep_presets() {
  static const std::vector<std::string> names{"rho", "gamma", "losses", "removal", "interval", "ema"};
  return names;
}

/// Single-parameter grid. Values are validated against the config schema.
inline SweepGrid param_grid(const std::string& param, const std::vector<std::string>& values) {
  if (!find_config_key(param)) throw Error(ErrorKind::ConfigError, param + ": unknown sweep parameter");
  if (values.empty()) throw Error(ErrorKind::ConfigError, param + ": empty value list");
  SweepGrid g{param, {}};
  RunConfig probe;
  for (const auto& v : values) {
    set_config_value(probe, param, v);
    g.cells.push_back({param + "=" + find_config_key(param)->get(probe), {{param, v}}});
  }
  return g;
}

/// Named ablation grids.
inline SweepGrid preset_grid(const std::string& name) {
  if (name == "rho") return param_grid("rho", {"1.0", "0.9", "0.7", "0.5", "0.3", "0.1"});
  if (name == "gamma") return param_grid("gamma", {"0.7", "0.8", "0.9"});
  if (name == "removal") return param_grid("removal", {"true", "false"});
  if (name == "interval") return param_grid("injection_interval", {"epoch", "iteration"});
  if (name == "ema") return param_grid("use_ema", {"true", "false"});
  if (name == "losses") {
    return param_grid("loss_mask", {"cls", "con+cls", "con+ils+cls", "con+ida+cls", "con+ils+ida+cls"});
  }
  throw Error(ErrorKind::ConfigError, name + ": unknown sweep preset");
}

inline void finish_cell(CellResult& r) {
  const double n = static_cast<double>(r.accuracies.size());
  double sum = 0.0;
  for (double a : r.accuracies) sum += a;
  r.mean = n > 0 ? sum / n : 0.0;
  double ss = 0.0;
  for (double a : r.accuracies) ss += (a - r.mean) * (a - r.mean);
  r.stddev = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

/// Runs every cell of every grid for every seed. For seed s both the dataset
/// seed and the training seed are set to s. Identical resolved configurations
/// are trained once and shared between grids. `progress` is called after each
/// new training run.
class SweepRunner {
 public:
  using Progress = std::function<void(const std::string& grid, const std::string& cell, std::uint64_t seed, double acc)>;

  explicit SweepRunner(RunConfig base) : base_(std::move(base)) {}

  void set_progress(Progress p) { progress_ = std::move(p); }

  /// Final test accuracy of one configuration.
  double final_accuracy(const RunConfig& cfg) {
    validate(cfg);
    const std::string key = resolved_config_text(cfg);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const DomainShiftSpec spec = cfg.dataset_spec();
    const std::string data_key = resolved_config_text(data_only(cfg));
    auto bit = bundles_.find(data_key);
    if (bit == bundles_.end()) bit = bundles_.emplace(data_key, generate(spec)).first;
    const RunResult res = run(cfg.resolved_train(), bit->second);
    const double acc = res.reports.empty() ? evaluate(res.params, bit->second.test) : res.reports.back().test_acc;
    cache_.emplace(key, acc);
    ++runs_;
    return acc;
  }

  std::vector<CellResult> run_grids(const std::vector<SweepGrid>& grids, const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw Error(ErrorKind::ConfigError, "seeds: empty seed list");
    std::vector<CellResult> out;
    for (const auto& g : grids) {
      if (g.cells.empty()) throw Error(ErrorKind::ConfigError, g.name + ": empty grid");
      for (const auto& cell : g.cells) {
        CellResult r{g.name, cell.key, seeds, {}, 0.0, 0.0};
        for (std::uint64_t s : seeds) {
          RunConfig cfg = base_;
          for (const auto& [k, v] : cell.overrides) set_config_value(cfg, k, v);
          cfg.data.seed = s;
          cfg.train.seed = s;
          const std::size_t before = runs_;
          const double acc = final_accuracy(cfg);
          if (progress_ && runs_ != before) progress_(g.name, cell.key, s, acc);
          r.accuracies.push_back(acc);
        }
        finish_cell(r);
        out.push_back(std::move(r));
      }
    }
    std::sort(out.begin(), out.end(), [](const CellResult& a, const CellResult& b) {
      return std::tie(a.grid, a.cell) < std::tie(b.grid, b.cell);
    });
    return out;
  }

  std::size_t training_runs() const noexcept { return runs_; }

 private:
  /// Copy with every training field reset, so the text identifies the dataset only.
  static RunConfig data_only(const RunConfig& cfg) {
    RunConfig d;
    d.data = cfg.data;
    d.rotation_deg = cfg.rotation_deg;
    return d;
  }

  RunConfig base_;
  Progress progress_;
  std::map<std::string, double> cache_;
  std::map<std::string, DatasetBundle> bundles_;
  std::size_t runs_ = 0;
};

inline constexpr const char* kSweepHeader = "grid,cell,n_seeds,mean_acc,std_acc,seeds,accuracies";

/// Rows in the order given; run_grids already sorts by (grid, cell).
inline void write_sweep_csv(std::ostream& out, const std::vector<CellResult>& cells) {
  using detail::format_double;
  out << kSweepHeader << '\n';
  for (const auto& c : cells) {
    out << c.grid << ',' << c.cell << ',' << c.accuracies.size() << ',' << format_double(c.mean) << ','
        << format_double(c.stddev) << ',';
    for (std::size_t i = 0; i < c.seeds.size(); ++i) out << (i ? ";" : "") << c.seeds[i];
    out << ',';
    for (std::size_t i = 0; i < c.accuracies.size(); ++i) out << (i ? ";" : "") << format_double(c.accuracies[i]);
    out << '\n';
  }
}

inline const CellResult* find_cell(const std::vector<CellResult>& cells, const std::string& grid,
                                   const std::string& cell) {
  for (const auto& c : cells) {
    if (c.grid == grid && c.cell == cell) return &c;
  }
  return nullptr;
}

}  // namespace spi
