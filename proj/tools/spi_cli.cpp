// spi: command-line front end for dataset generation, training, evaluation,
// gradient checking, ablation sweeps and nearest-neighbour retrieval.
//
// Exit codes: 0 success, 2 config or user error, 3 numerical failure,
// 4 verification failure, 1 internal error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spi/spi.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUser = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitVerification = 4;

/// Raised for command-line misuse that the library cannot see.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string flag_name(const std::string& key) {
  std::string f = key;
  for (char& c : f) {
    if (c == '_') c = '-';
  }
  return "--" + f;
}

/// Config file, --set overrides and one flag per config key.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value configuration file");
    app->add_option("--set", sets, "override KEY=VALUE (repeatable, applied after --config)");
    for (const auto& k : spi::config_keys()) {
      options[k.name] = app->add_option(flag_name(k.name), values[k.name], k.help)->group("Configuration");
    }
  }

  /// Defaults, then the file, then --set, then individual flags.
  spi::RunConfig resolve() const {
    spi::RunConfig cfg;
    if (!file.empty()) spi::apply_config_file(cfg, file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects KEY=VALUE, got '" + s + "'");
      spi::set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [name, opt] : options) {
      if (opt->count() > 0) spi::set_config_value(cfg, name, values.at(name));
    }
    spi::validate(cfg);
    return cfg;
  }
};

json resolved_config_json(const spi::RunConfig& cfg) {
  json j = json::object();
  for (const auto& k : spi::config_keys()) j[k.name] = k.get(cfg);
  return j;
}

/// Written before any computation. A manifest without a summary marks a run
/// that did not finish.
void write_manifest(const fs::path& dir, const std::string& command, const std::string& config_path,
                    const spi::RunConfig& cfg, const std::map<std::string, std::string>& artifacts) {
  json m;
  m["command"] = command;
  m["config_path"] = config_path;
  m["resolved_config"] = resolved_config_json(cfg);
  m["seed"] = cfg.train.seed;
  m["data_seed"] = cfg.data.seed;
  m["output_dir"] = dir.string();
  m["artifacts"] = json::object();
  for (const auto& [k, v] : artifacts) m["artifacts"][k] = v;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw spi::Error(spi::ErrorKind::StorageError, "cannot write " + (dir / "manifest.json").string());
  out << m.dump(2) << '\n';
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw spi::Error(spi::ErrorKind::StorageError, "cannot create " + dir + ": " + ec.message());
  return fs::path(dir);
}

spi::DatasetBundle load_snapshot(const std::string& path) {
  if (path.empty()) throw UsageError("--data is required");
  if (!fs::exists(path)) throw UsageError("snapshot not found: " + path);
  return spi::load(path);
}

void print_stats(const spi::DatasetBundle& b) {
  const auto st = spi::bundle_stats(b);
  std::cout << "classes " << b.num_classes << ", input_dim " << b.input_dim << '\n';
  std::cout << std::left << std::setw(18) << "split" << std::setw(8) << "total";
  for (std::size_t c = 0; c < b.num_classes; ++c) std::cout << std::setw(6) << ("c" + std::to_string(c));
  std::cout << '\n';
  for (const auto& name : {spi::kSplitSource, spi::kSplitUnlabeled, spi::kSplitLabeled, spi::kSplitTest}) {
    const auto& v = st.per_class.at(std::string(name));
    std::size_t total = 0;
    for (auto n : v) total += n;
    std::cout << std::setw(18) << name << std::setw(8) << total;
    for (auto n : v) std::cout << std::setw(6) << n;
    std::cout << '\n';
  }
}

// ---------------------------------------------------------------------------

int cmd_generate(const ConfigFlags& flags, const std::string& out_dir) {
  const spi::RunConfig cfg = flags.resolve();
  const fs::path dir = prepare_dir(out_dir);
  const fs::path snapshot = dir / "dataset.csv";
  const fs::path echo = dir / "dataset.config";
  write_manifest(dir, "generate", flags.file, cfg, {{"snapshot", snapshot.string()}, {"dataset_config", echo.string()}});
  const spi::DatasetBundle b = spi::generate(cfg.dataset_spec());
  spi::snapshot(b, snapshot.string());
  {
    std::ofstream out(echo);
    spi::write_resolved_config(out, cfg);
  }
  print_stats(b);
  std::cout << "wrote " << snapshot.string() << '\n';
  return kExitOk;
}

int cmd_train(const ConfigFlags& flags, const std::string& data, const std::string& out_dir, bool quiet) {
  const spi::RunConfig cfg = flags.resolve();
  const spi::DatasetBundle bundle = load_snapshot(data);
  const fs::path dir = prepare_dir(out_dir);
  const fs::path metrics = dir / "metrics.csv";
  const fs::path summary = dir / "summary.json";
  const fs::path ckpt = dir / "model.ckpt";
  const fs::path store = dir / "store.csv";
  write_manifest(dir, "train", flags.file, cfg,
                 {{"snapshot", data},
                  {"metrics", metrics.string()},
                  {"summary", summary.string()},
                  {"checkpoint", ckpt.string()},
                  {"store", store.string()}});

  const spi::TrainConfig tc = cfg.resolved_train();
  std::ofstream metrics_out(metrics, std::ios::binary);
  if (!metrics_out) throw spi::Error(spi::ErrorKind::StorageError, "cannot write " + metrics.string());
  std::string store_text;
  const spi::RunResult res = spi::run(tc, bundle, &metrics_out, [&](const spi::Trainer& t) {
    if (!quiet) {
      std::cerr << "epoch " << t.epoch() - 1 << " |T_hat| " << t.labeled_target().size() << '\n';
    }
    if (t.epoch() == tc.epochs) {
      std::ostringstream s;
      spi::write_store_snapshot(s, t.store(), t.labeled_target(), bundle.num_classes);
      store_text = s.str();
    }
  });
  metrics_out.close();
  {
    std::ofstream out(store, std::ios::binary);
    out << store_text;
  }
  spi::save_checkpoint(ckpt.string(), res.params,
                       {{bundle.input_dim, tc.hidden, tc.embedding_dim, bundle.num_classes}, tc.seed, tc.epochs});

  json s;
  s["config"] = resolved_config_json(cfg);
  s["snapshot"] = data;
  s["epochs_completed"] = res.reports.size();
  if (!res.reports.empty()) {
    const auto& r = res.reports.back();
    s["final"] = {{"epoch", r.epoch},
                  {"loss_con", r.mean_losses.con},
                  {"loss_ils", r.mean_losses.ils},
                  {"loss_ida", r.mean_losses.ida},
                  {"loss_cls", r.mean_losses.cls},
                  {"loss_total", r.mean_losses.total},
                  {"test_acc", r.test_acc},
                  {"n_labeled_target", r.n_labeled_target},
                  {"n_false_positive", r.n_false_positive},
                  {"lr", r.lr},
                  {"tau_pl", r.tau_pl}};
    std::cout << "final test accuracy " << spi::detail::format_double(r.test_acc) << '\n';
  }
  std::ofstream(summary) << s.dump(2) << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& data, const std::string& checkpoint) {
  const spi::DatasetBundle b = load_snapshot(data);
  if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
  const spi::ModelParams p = spi::load_checkpoint(checkpoint);
  if (p.input_dim() != b.input_dim || p.num_classes() != b.num_classes) {
    throw UsageError("checkpoint shape does not match the snapshot");
  }
  json j;
  j["test_acc"] = spi::evaluate(p, b.test);
  j["source_acc"] = spi::evaluate(p, b.source);
  j["target_labeled_acc"] = spi::evaluate(p, b.target_labeled);
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

int cmd_gradcheck(const spi::GradcheckOptions& opts, bool full) {
  const auto results = full ? spi::gradcheck_all(opts) : spi::gradcheck_losses(opts);
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << std::left << std::setw(11) << r.name
              << " max_rel_err=" << spi::detail::format_double(r.max_rel_error)
              << " tol=" << spi::detail::format_double(r.tolerance) << " configs=" << r.configs;
    if (!r.pass) std::cout << " worst_config=" << r.worst_config << " worst_coordinate=" << r.worst_coordinate;
    std::cout << '\n';
    ok = ok && r.pass;
  }
  if (!ok) {
    for (const auto& r : results) {
      if (!r.pass) {
        std::cerr << "gradient check failed for " << r.name << " at config " << r.worst_config << ", coordinate "
                  << r.worst_coordinate << '\n';
      }
    }
    return kExitVerification;
  }
  return kExitOk;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  if (spi::detail::trim(s).empty()) return out;
  for (auto& v : spi::detail::split_list(s, ',')) {
    if (!v.empty()) out.push_back(v);
  }
  return out;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& param, const std::string& values,
              const std::vector<std::string>& presets, const std::string& seeds_text, const std::string& out_dir) {
  const spi::RunConfig base = flags.resolve();
  std::vector<spi::SweepGrid> grids;
  if (!param.empty()) {
    grids.push_back(spi::param_grid(param, split_commas(values)));
  } else if (!values.empty()) {
    throw UsageError("--values needs --param");
  }
  for (const auto& p : presets) {
    if (p == "all") {
      for (const auto& name : spi::sweep_presets()) grids.push_back(spi::preset_grid(name));
    } else {
      grids.push_back(spi::preset_grid(p));
    }
  }
  if (grids.empty()) throw UsageError("empty grid: give --param with --values, or --preset");
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_commas(seeds_text)) {
    const auto v = spi::detail::parse_int<std::uint64_t>(s);
    if (!v) throw UsageError("--seeds: not an integer: " + s);
    seeds.push_back(*v);
  }
  if (seeds.empty()) throw UsageError("--seeds: empty seed list");

  const fs::path dir = prepare_dir(out_dir);
  const fs::path csv = dir / "sweep.csv";
  write_manifest(dir, "sweep", flags.file, base, {{"sweep", csv.string()}});
  spi::SweepRunner runner(base);
  runner.set_progress([](const std::string& g, const std::string& c, std::uint64_t s, double acc) {
    std::cerr << g << ' ' << c << " seed " << s << " acc " << spi::detail::format_double(acc) << '\n';
  });
  const auto cells = runner.run_grids(grids, seeds);
  std::ofstream out(csv, std::ios::binary);
  spi::write_sweep_csv(out, cells);
  for (const auto& c : cells) {
    std::cout << std::left << std::setw(10) << c.grid << std::setw(32) << c.cell << std::fixed << std::setprecision(4)
              << c.mean << " +- " << c.stddev << '\n';
  }
  std::cout << "wrote " << csv.string() << '\n';
  return kExitOk;
}

int cmd_nn_retrieve(const std::string& data, const std::string& checkpoint, std::size_t k, std::size_t queries) {
  const spi::DatasetBundle b = load_snapshot(data);
  if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
  const spi::ModelParams p = spi::load_checkpoint(checkpoint);
  if (p.input_dim() != b.input_dim) throw UsageError("checkpoint input_dim does not match the snapshot");
  std::vector<std::pair<spi::SampleId, spi::Embedding>> gallery;
  std::map<spi::SampleId, std::size_t> labels;
  for (const auto& s : b.source) {
    gallery.emplace_back(s.id, spi::forward_features(p, s.x));
    labels[s.id] = s.label;
  }
  std::size_t hits = 0;
  std::size_t total = 0;
  const std::size_t n = std::min(queries, b.test.size());
  for (std::size_t q = 0; q < n; ++q) {
    const auto& s = b.test[q];
    const auto nn = spi::nearest_neighbors(spi::forward_features(p, s.x), gallery, k);
    std::cout << "query " << s.id.value << " label " << s.label << ':';
    for (const auto& m : nn) {
      const std::size_t y = labels.at(m.id);
      std::cout << ' ' << m.id.value << "(y=" << y << ",s=" << std::fixed << std::setprecision(3) << m.similarity
                << ')';
      hits += y == s.label ? 1 : 0;
      ++total;
    }
    std::cout << '\n';
  }
  std::cout << "label agreement " << std::fixed << std::setprecision(4)
            << (total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Similarity-based pseudo-label injection for semi-supervised domain adaptation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  ConfigFlags gen_flags;
  std::string gen_dir = "data";
  auto* gen = app.add_subcommand("generate", "Generate a synthetic domain-shift dataset snapshot");
  gen_flags.attach(gen);
  gen->add_option("--out-dir", gen_dir, "Output directory")->capture_default_str();

  ConfigFlags train_flags;
  std::string train_data;
  std::string train_dir = "run";
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train on a dataset snapshot");
  train_flags.attach(train);
  train->add_option("--data", train_data, "Dataset snapshot CSV")->required();
  train->add_option("--out-dir", train_dir, "Output directory")->capture_default_str();
  train->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  std::string eval_data;
  std::string eval_ckpt;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a snapshot");
  eval->add_option("--data", eval_data, "Dataset snapshot CSV")->required();
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();

  spi::GradcheckOptions gc;
  bool gc_full = false;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  grad->add_option("--seed", gc.seed, "Seed for the random test points")->capture_default_str();
  grad->add_option("--configs", gc.configs, "Random configurations per loss")->capture_default_str();
  grad->add_option("--step", gc.step, "Central-difference step")->capture_default_str();
  grad->add_option("--tolerance", gc.tolerance, "Relative error tolerance")->capture_default_str();
  grad->add_flag("--full", gc_full, "Also check the combined objective and the end-to-end model gradient");
  grad->add_option("--mutate", gc.mutate)->group("");  // negates one loss gradient

  ConfigFlags sweep_flags;
  std::string sweep_param;
  std::string sweep_values;
  std::vector<std::string> sweep_presets;
  std::string sweep_seeds = "0,1,2,3,4";
  std::string sweep_dir = "sweep";
  auto* sweep = app.add_subcommand("sweep", "Train over a parameter grid and aggregate final accuracy");
  sweep_flags.attach(sweep);
  sweep->add_option("--param", sweep_param, "Config key to vary");
  sweep->add_option("--values", sweep_values, "Comma-separated values for --param");
  sweep->add_option("--preset", sweep_presets, "rho | gamma | losses | removal | interval | ema | all (repeatable)");
  sweep->add_option("--seeds", sweep_seeds, "Comma-separated seeds")->capture_default_str();
  sweep->add_option("--out-dir", sweep_dir, "Output directory")->capture_default_str();

  std::string nn_data;
  std::string nn_ckpt;
  std::size_t nn_k = 5;
  std::size_t nn_queries = 5;
  auto* nn = app.add_subcommand("nn-retrieve", "Nearest source neighbours of target test samples in embedding space");
  nn->add_option("--data", nn_data, "Dataset snapshot CSV")->required();
  nn->add_option("--checkpoint", nn_ckpt, "Model checkpoint")->required();
  nn->add_option("--k", nn_k, "Neighbours per query")->capture_default_str();
  nn->add_option("--queries", nn_queries, "Number of test queries")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUser;
  }

  try {
    if (*gen) return cmd_generate(gen_flags, gen_dir);
    if (*train) return cmd_train(train_flags, train_data, train_dir, quiet);
    if (*eval) return cmd_eval(eval_data, eval_ckpt);
    if (*grad) return cmd_gradcheck(gc, gc_full);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_param, sweep_values, sweep_presets, sweep_seeds, sweep_dir);
    if (*nn) return cmd_nn_retrieve(nn_data, nn_ckpt, nn_k, nn_queries);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUser;
  } catch (const spi::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case spi::ErrorKind::NonFiniteLoss:
      case spi::ErrorKind::NonFiniteGradient:
        return kExitNumerical;
      case spi::ErrorKind::InconsistentState:
        return kExitInternal;
      default:
        return kExitUser;
    }
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUser;
}
