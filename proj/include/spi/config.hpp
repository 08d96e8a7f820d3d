#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spi/datasets.hpp"
#include "spi/detail/format.hpp"
#include "spi/error.hpp"
#include "spi/trainer.hpp"

namespace spi {

/// Three-valued switch. `Auto` resolves from other settings.
enum class Toggle : std::uint8_t { Auto, On, Off };

/// Flat run configuration: dataset generator settings plus training settings.
/// Every field is reachable as a `key = value` line or a command-line flag.
struct RunConfig {
  DomainShiftSpec data{};
  double rotation_deg = 50.0;
  TrainConfig train{};
  /// Auto: on unless the loss mask is classification only.
  Toggle injection = Toggle::Auto;

  DomainShiftSpec dataset_spec() const {
    DomainShiftSpec s = data;
    s.rotation = rotation_deg * std::numbers::pi / 180.0;
    return s;
  }

  bool injection_resolved() const {
    if (injection == Toggle::Auto) return !(train.loss_mask == LossMask{false, false, false, true});
    return injection == Toggle::On;
  }

  TrainConfig resolved_train() const {
    TrainConfig t = train;
    t.injection_enabled = injection_resolved();
    return t;
  }
};

namespace detail {

[[noreturn]] inline void config_fail(std::string_view key, const std::string& why) {
  throw Error(ErrorKind::ConfigError, std::string(key) + ": " + why);
}

inline std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double config_double(std::string_view key, std::string_view v) {
  const auto d = parse_double(trim(v));
  if (!d || !std::isfinite(*d)) config_fail(key, "expected a number, got '" + std::string(v) + "'");
  return *d;
}

template <class Int>
Int config_int(std::string_view key, std::string_view v) {
  const auto i = parse_int<Int>(trim(v));
  if (!i) config_fail(key, "expected an integer, got '" + std::string(v) + "'");
  return *i;
}

inline bool config_bool(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  config_fail(key, "expected true or false, got '" + std::string(v) + "'");
}

inline std::string bool_text(bool b) { return b ? "true" : "false"; }

inline std::string loss_mask_text(const LossMask& m) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(m.con, "con");
  add(m.ils, "ils");
  add(m.ida, "ida");
  add(m.cls, "cls");
  return out.empty() ? "none" : out;
}

inline LossMask parse_loss_mask(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "all") return {};
  LossMask m{false, false, false, false};
  const char sep = v.find(',') != std::string_view::npos ? ',' : '+';
  for (const auto& term : split_list(v, sep)) {
    if (term == "con") {
      m.con = true;
    } else if (term == "ils") {
      m.ils = true;
    } else if (term == "ida") {
      m.ida = true;
    } else if (term == "cls") {
      m.cls = true;
    } else {
      config_fail(key, "unknown loss term '" + term + "' (expected con, ils, ida, cls)");
    }
  }
  return m;
}

template <class Int>
std::string int_list_text(const std::vector<Int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string double_list_text(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every recognised key, in dump order.
inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto num = [&k](std::string name, std::string help, auto member) {
      k.push_back({name, std::move(help),
                   [member, name](RunConfig& c, std::string_view v) { member(c) = config_double(name, v); },
                   [member](const RunConfig& c) { return format_double(member(c)); }});
    };
    auto count = [&k](std::string name, std::string help, auto member) {
      k.push_back({name, std::move(help),
                   [member, name](RunConfig& c, std::string_view v) {
                     using T = std::remove_reference_t<decltype(member(c))>;
                     member(c) = config_int<T>(name, v);
                   },
                   [member](const RunConfig& c) { return std::to_string(member(c)); }});
    };
    auto flag = [&k](std::string name, std::string help, auto member) {
      k.push_back({name, std::move(help),
                   [member, name](RunConfig& c, std::string_view v) { member(c) = config_bool(name, v); },
                   [member](const RunConfig& c) { return bool_text(member(c)); }});
    };

    // Dataset.
    k.push_back({"kind", "gaussian | moons",
                 [](RunConfig& c, std::string_view v) {
                   v = trim(v);
                   if (v == "gaussian") {
                     c.data.kind = ShiftKind::GaussianShift;
                   } else if (v == "moons") {
                     c.data.kind = ShiftKind::MoonsShift;
                   } else {
                     config_fail("kind", "expected gaussian or moons, got '" + std::string(v) + "'");
                   }
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.data.kind)); }});
    count("num_classes", "number of classes C", [](auto& c) -> auto& { return c.data.num_classes; });
    count("input_dim", "input dimension", [](auto& c) -> auto& { return c.data.input_dim; });
    count("n_source", "labeled source samples", [](auto& c) -> auto& { return c.data.n_source; });
    count("n_target_unlabeled", "unlabeled target samples", [](auto& c) -> auto& { return c.data.n_target_unlabeled; });
    count("n_target_test", "target test samples", [](auto& c) -> auto& { return c.data.n_target_test; });
    count("shots", "labeled target samples per class", [](auto& c) -> auto& { return c.data.shots; });
    num("rotation_deg", "target rotation in degrees", [](auto& c) -> auto& { return c.rotation_deg; });
    k.push_back({"translation", "target translation, comma separated",
                 [](RunConfig& c, std::string_view v) {
                   Vec t;
                   for (const auto& part : split_list(v, ',')) t.push_back(config_double("translation", part));
                   c.data.translation = std::move(t);
                 },
                 [](const RunConfig& c) { return double_list_text(c.data.translation); }});
    num("scale", "target scale factor", [](auto& c) -> auto& { return c.data.scale; });
    num("noise_sigma", "within-class noise", [](auto& c) -> auto& { return c.data.noise_sigma; });
    num("class_radius", "radius of the gaussian class means", [](auto& c) -> auto& { return c.data.class_radius; });
    count("data_seed", "dataset generator seed", [](auto& c) -> auto& { return c.data.seed; });

    // Model and losses.
    count("epochs", "training epochs", [](auto& c) -> auto& { return c.train.epochs; });
    count("iters_per_epoch", "iterations per epoch, 0 for ceil(|T|/batch_unlabeled)",
          [](auto& c) -> auto& { return c.train.iters_per_epoch; });
    k.push_back({"hidden", "hidden layer widths, comma separated",
                 [](RunConfig& c, std::string_view v) {
                   std::vector<std::size_t> h;
                   if (!trim(v).empty()) {
                     for (const auto& part : split_list(v, ',')) h.push_back(config_int<std::size_t>("hidden", part));
                   }
                   c.train.hidden = std::move(h);
                 },
                 [](const RunConfig& c) { return int_list_text(c.train.hidden); }});
    count("embedding_dim", "embedding dimension d", [](auto& c) -> auto& { return c.train.embedding_dim; });
    num("tau_con", "contrastive temperature", [](auto& c) -> auto& { return c.train.tau_con; });
    num("tau_sharp", "sharpening temperature", [](auto& c) -> auto& { return c.train.tau_sharp; });
    num("tau_pl_start", "pseudo-label temperature at the start", [](auto& c) -> auto& { return c.train.tau_pl_start; });
    num("tau_pl_end", "pseudo-label temperature at the end", [](auto& c) -> auto& { return c.train.tau_pl_end; });
    num("lambda_con", "weight of the contrastive term", [](auto& c) -> auto& { return c.train.weights.con; });
    num("lambda_ils", "weight of the instance similarity term", [](auto& c) -> auto& { return c.train.weights.ils; });
    num("lambda_ida", "weight of the alignment term", [](auto& c) -> auto& { return c.train.weights.ida; });
    num("lambda_cls", "weight of the classification term", [](auto& c) -> auto& { return c.train.weights.cls; });
    k.push_back({"loss_mask", "enabled terms, e.g. con+ils+ida+cls or cls",
                 [](RunConfig& c, std::string_view v) { c.train.loss_mask = parse_loss_mask("loss_mask", v); },
                 [](const RunConfig& c) { return loss_mask_text(c.train.loss_mask); }});
    flag("normalize_con", "L2-normalize embeddings in the contrastive term",
         [](auto& c) -> auto& { return c.train.normalize_con; });
    k.push_back({"anchor_mode", "as_written | standard",
                 [](RunConfig& c, std::string_view v) {
                   v = trim(v);
                   if (v == "as_written") {
                     c.train.anchor_mode = AnchorMode::AsWritten;
                   } else if (v == "standard") {
                     c.train.anchor_mode = AnchorMode::Standard;
                   } else {
                     config_fail("anchor_mode", "expected as_written or standard, got '" + std::string(v) + "'");
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.anchor_mode == AnchorMode::AsWritten ? "as_written" : "standard");
                 }});
    num("alpha", "label smoothing", [](auto& c) -> auto& { return c.train.alpha; });
    count("topk", "k of the similarity mask", [](auto& c) -> auto& { return c.train.topk; });

    // Pseudo-labels and injection.
    num("rho", "EMA momentum", [](auto& c) -> auto& { return c.train.rho; });
    num("gamma", "injection threshold", [](auto& c) -> auto& { return c.train.gamma; });
    count("warmup", "epochs before injections apply", [](auto& c) -> auto& { return c.train.warmup; });
    k.push_back({"injection", "auto | true | false",
                 [](RunConfig& c, std::string_view v) {
                   if (trim(v) == "auto") {
                     c.injection = Toggle::Auto;
                   } else {
                     c.injection = config_bool("injection", v) ? Toggle::On : Toggle::Off;
                   }
                 },
                 [](const RunConfig& c) { return bool_text(c.injection_resolved()); }});
    flag("removal", "remove injected samples that fall below the threshold",
         [](auto& c) -> auto& { return c.train.removal_enabled; });
    k.push_back({"injection_interval", "epoch | iteration",
                 [](RunConfig& c, std::string_view v) {
                   v = trim(v);
                   if (v == "epoch") {
                     c.train.injection_interval = InjectionInterval::Epoch;
                   } else if (v == "iteration") {
                     c.train.injection_interval = InjectionInterval::Iteration;
                   } else {
                     config_fail("injection_interval", "expected epoch or iteration, got '" + std::string(v) + "'");
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.injection_interval == InjectionInterval::Epoch ? "epoch" : "iteration");
                 }});
    flag("use_ema", "average stored pseudo-labels; false overwrites",
         [](auto& c) -> auto& { return c.train.use_ema; });

    // Sampling and views.
    count("eta_sup", "support samples per class per domain", [](auto& c) -> auto& { return c.train.eta_sup; });
    count("batch_unlabeled", "unlabeled batch size", [](auto& c) -> auto& { return c.train.batch_unlabeled; });
    count("n_local", "local views per sample", [](auto& c) -> auto& { return c.train.views.n_local; });
    num("global_noise_sigma", "noise of the global views", [](auto& c) -> auto& { return c.train.views.global_noise_sigma; });
    num("local_mask_fraction", "fraction of coordinates zeroed in local views",
        [](auto& c) -> auto& { return c.train.views.local_mask_fraction; });
    num("local_noise_sigma", "noise of the local views", [](auto& c) -> auto& { return c.train.views.local_noise_sigma; });

    // Optimizer.
    num("lr_start", "learning rate at the start of warmup", [](auto& c) -> auto& { return c.train.lr_start; });
    num("lr_peak", "learning rate after warmup", [](auto& c) -> auto& { return c.train.lr_peak; });
    num("lr_floor", "final learning rate", [](auto& c) -> auto& { return c.train.lr_floor; });
    num("momentum", "SGD momentum", [](auto& c) -> auto& { return c.train.momentum; });
    num("weight_decay", "L2 weight decay", [](auto& c) -> auto& { return c.train.weight_decay; });
    count("seed", "training seed", [](auto& c) -> auto& { return c.train.seed; });
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

inline void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const ConfigKey* k = find_config_key(detail::trim(key));
  if (!k) throw Error(ErrorKind::ConfigError, std::string(detail::trim(key)) + ": unknown key");
  k->set(cfg, value);
}

/// Applies `key = value` lines. Blank lines and lines starting with '#' are ignored.
inline void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& name = "config") {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::ConfigError, name + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set_config_value(cfg, t.substr(0, eq), t.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, name + ":" + std::to_string(line_no) + ": " + e.detail());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "config: cannot open '" + path + "'");
  apply_config_text(cfg, in, path);
}

/// Validates both halves. Errors name the offending key.
inline void validate(const RunConfig& cfg) {
  try {
    cfg.dataset_spec().validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, e.detail());
  }
  cfg.resolved_train().validate();
}

/// Every key with its resolved value, one `key = value` per line. Reading the
/// output back yields the same configuration.
inline void write_resolved_config(std::ostream& out, const RunConfig& cfg) {
  for (const auto& k : config_keys()) out << k.name << " = " << k.get(cfg) << '\n';
}

inline std::string resolved_config_text(const RunConfig& cfg) {
  std::ostringstream s;
  write_resolved_config(s, cfg);
  return s.str();
}

}  // namespace spi
