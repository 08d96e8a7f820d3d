#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spi/detail/format.hpp"
#include "spi/error.hpp"
#include "spi/types.hpp"

namespace spi {

enum class ShiftKind : std::uint8_t { GaussianShift, MoonsShift };

inline std::string_view to_string(ShiftKind k) { return k == ShiftKind::GaussianShift ? "gaussian" : "moons"; }

/// Synthetic source/target generator settings. The target domain is the
/// source class structure pushed through x ↦ scale·R(rotation)·x + translation
/// (rotation acts on the first two coordinates).
struct DomainShiftSpec {
  ShiftKind kind = ShiftKind::GaussianShift;
  std::size_t num_classes = 5;
  std::size_t input_dim = 2;
  std::size_t n_source = 500;
  std::size_t n_target_unlabeled = 500;
  std::size_t n_target_test = 500;
  std::size_t shots = 3;
  double rotation = 50.0 * std::numbers::pi / 180.0;
  Vec translation{8.0, 0.0};
  double scale = 1.0;
  double noise_sigma = 0.6;
  double class_radius = 3.0;  // gaussian kind: class means lie on a circle of this radius
  std::uint64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& key, const std::string& why) {
      throw Error(ErrorKind::InvalidSpec, key + ": " + why);
    };
    if (num_classes < 2) bad("num_classes", "need at least 2 classes");
    if (kind == ShiftKind::MoonsShift && num_classes != 2) bad("num_classes", "moons generator is binary");
    if (input_dim < 2) bad("input_dim", "need at least 2 input dimensions");
    if (shots < 1) bad("shots", "need at least one labeled target sample per class");
    if (n_source < num_classes) bad("n_source", "must be at least num_classes");
    if (n_target_unlabeled < num_classes) bad("n_target_unlabeled", "must be at least num_classes");
    if (n_target_test < num_classes) bad("n_target_test", "must be at least num_classes");
    if (translation.size() != input_dim) bad("translation", "length must equal input_dim");
    if (!(scale > 0.0) || !std::isfinite(scale)) bad("scale", "must be positive");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) bad("noise_sigma", "must be non-negative");
    if (!std::isfinite(rotation)) bad("rotation", "must be finite");
    if (!(class_radius > 0.0)) bad("class_radius", "must be positive");
  }
};

/// True labels of the unlabeled target samples. Only the metrics auditor reads these.
struct AuditLabels {
  std::map<SampleId, std::size_t> labels;
  bool operator==(const AuditLabels&) const = default;
};

struct DatasetBundle {
  std::size_t num_classes = 0;
  std::size_t input_dim = 0;
  LabeledSet source;
  UnlabeledSet target_unlabeled;
  LabeledSet target_labeled;
  LabeledSet test;
  AuditLabels audit;

  bool operator==(const DatasetBundle&) const = default;
};

namespace detail {

[[noreturn]] inline void parse_fail(const std::string& name, std::size_t line_no, const std::string& what) {
  throw Error(ErrorKind::ParseError, name + ":" + std::to_string(line_no) + ": " + what);
}

class DomainSampler {
 public:
  DomainSampler(const DomainShiftSpec& spec, std::mt19937_64& rng) : spec_(spec), rng_(rng) {}

  Vec source_point(std::size_t label) {
    Vec x(spec_.input_dim, 0.0);
    if (spec_.kind == ShiftKind::GaussianShift) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(spec_.num_classes);
      x[0] = spec_.class_radius * std::cos(angle);
      x[1] = spec_.class_radius * std::sin(angle);
    } else {
      std::uniform_real_distribution<double> arc(0.0, std::numbers::pi);
      const double t = arc(rng_);
      // Two interleaved half circles, centred on the origin.
      if (label == 0) {
        x[0] = std::cos(t) - 0.5;
        x[1] = std::sin(t) - 0.25;
      } else {
        x[0] = 1.0 - std::cos(t) - 0.5;
        x[1] = 0.5 - std::sin(t) - 0.25;
      }
    }
    for (double& v : x) v += spec_.noise_sigma * gauss_(rng_);
    return x;
  }

  Vec target_point(std::size_t label) {
    Vec x = source_point(label);
    const double c = std::cos(spec_.rotation);
    const double s = std::sin(spec_.rotation);
    const double x0 = c * x[0] - s * x[1];
    const double x1 = s * x[0] + c * x[1];
    x[0] = x0;
    x[1] = x1;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = spec_.scale * x[i] + spec_.translation[i];
    return x;
  }

 private:
  const DomainShiftSpec& spec_;
  std::mt19937_64& rng_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

}  // namespace detail

/// Deterministic given spec.seed. Labels cycle 0..C−1 so every split is
/// class-balanced; ids are assigned sequentially across splits.
inline DatasetBundle generate(const DomainShiftSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  detail::DomainSampler sampler(spec, rng);
  DatasetBundle b;
  b.num_classes = spec.num_classes;
  b.input_dim = spec.input_dim;
  std::int64_t next_id = 0;
  const std::size_t C = spec.num_classes;

  for (std::size_t i = 0; i < spec.n_source; ++i) {
    b.source.push_back({SampleId{next_id++}, sampler.source_point(i % C), i % C});
  }
  for (std::size_t i = 0; i < spec.n_target_unlabeled; ++i) {
    const SampleId id{next_id++};
    b.target_unlabeled.push_back({id, sampler.target_point(i % C)});
    b.audit.labels.emplace(id, i % C);
  }
  for (std::size_t i = 0; i < spec.shots * C; ++i) {
    b.target_labeled.push_back({SampleId{next_id++}, sampler.target_point(i % C), i % C});
  }
  for (std::size_t i = 0; i < spec.n_target_test; ++i) {
    b.test.push_back({SampleId{next_id++}, sampler.target_point(i % C), i % C});
  }
  return b;
}

inline constexpr std::string_view kSplitSource = "source";
inline constexpr std::string_view kSplitUnlabeled = "target_unlabeled";
inline constexpr std::string_view kSplitLabeled = "target_labeled";
inline constexpr std::string_view kSplitTest = "test";

/// CSV layout, header first:
///   split,id,label,x0,...,x{d-1}
/// split ∈ {source, target_unlabeled, target_labeled, test}. The label column
/// of target_unlabeled rows is the audit label.
inline void write_snapshot(std::ostream& out, const DatasetBundle& b) {
  out << "split,id,label";
  for (std::size_t k = 0; k < b.input_dim; ++k) out << ",x" << k;
  out << '\n';
  auto row = [&](std::string_view split, SampleId id, std::size_t label, const Vec& x) {
    out << split << ',' << id.value << ',' << label;
    for (double v : x) out << ',' << detail::format_double(v);
    out << '\n';
  };
  for (const auto& s : b.source) row(kSplitSource, s.id, s.label, s.x);
  for (const auto& s : b.target_unlabeled) row(kSplitUnlabeled, s.id, b.audit.labels.at(s.id), s.x);
  for (const auto& s : b.target_labeled) row(kSplitLabeled, s.id, s.label, s.x);
  for (const auto& s : b.test) row(kSplitTest, s.id, s.label, s.x);
}

inline void snapshot(const DatasetBundle& b, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::StorageError, "cannot open " + path + " for writing");
  write_snapshot(out, b);
  if (!out) throw Error(ErrorKind::StorageError, "write failed for " + path);
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cols.push_back(detail::trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cols;
}

inline DatasetBundle read_snapshot(std::istream& in, const std::string& name = "<stream>") {
  auto fail = [&](std::size_t line_no, const std::string& what) { detail::parse_fail(name, line_no, what); };
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) fail(1, "empty file, expected header");
  const auto header = split_csv(line);
  const char* fixed[] = {"split", "id", "label"};
  if (header.size() < 4) fail(1, "header needs split,id,label and at least one feature column");
  for (std::size_t k = 0; k < 3; ++k) {
    if (header[k] != fixed[k]) {
      fail(1, "column " + std::to_string(k + 1) + " should be '" + fixed[k] + "', found '" + std::string(header[k]) + "'");
    }
  }
  DatasetBundle b;
  b.input_dim = header.size() - 3;
  for (std::size_t k = 0; k < b.input_dim; ++k) {
    if (header[3 + k] != "x" + std::to_string(k)) {
      fail(1, "column " + std::to_string(4 + k) + " should be 'x" + std::to_string(k) + "', found '" +
                  std::string(header[3 + k]) + "'");
    }
  }

  std::size_t line_no = 1;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cols = split_csv(line);
    if (cols.size() < header.size()) {
      fail(line_no, "missing column '" + std::string(header[cols.size()]) + "'");
    }
    if (cols.size() > header.size()) {
      fail(line_no, "unexpected extra column " + std::to_string(header.size() + 1) + " (header has " +
                        std::to_string(header.size()) + ")");
    }
    const auto id = detail::parse_int<std::int64_t>(cols[1]);
    if (!id) fail(line_no, "column 'id': bad integer '" + std::string(cols[1]) + "'");
    const auto label = detail::parse_int<std::size_t>(cols[2]);
    if (!label) fail(line_no, "column 'label': bad integer '" + std::string(cols[2]) + "'");
    Vec x(b.input_dim);
    for (std::size_t k = 0; k < b.input_dim; ++k) {
      const auto v = detail::parse_double(cols[3 + k]);
      if (!v) fail(line_no, "column '" + std::string(header[3 + k]) + "': bad number '" + std::string(cols[3 + k]) + "'");
      x[k] = *v;
    }
    max_label = std::max(max_label, *label);
    const SampleId sid{*id};
    if (cols[0] == kSplitSource) {
      b.source.push_back({sid, std::move(x), *label});
    } else if (cols[0] == kSplitUnlabeled) {
      b.target_unlabeled.push_back({sid, std::move(x)});
      b.audit.labels.emplace(sid, *label);
    } else if (cols[0] == kSplitLabeled) {
      b.target_labeled.push_back({sid, std::move(x), *label});
    } else if (cols[0] == kSplitTest) {
      b.test.push_back({sid, std::move(x), *label});
    } else {
      fail(line_no, "column 'split': unknown split '" + std::string(cols[0]) + "'");
    }
  }
  if (line_no == 1) fail(1, "no sample rows");
  b.num_classes = max_label + 1;
  return b;
}

inline DatasetBundle load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::StorageError, "cannot open " + path);
  return read_snapshot(in, path);
}

/// Per-split, per-class sample counts.
struct BundleStats {
  std::map<std::string, std::vector<std::size_t>> per_class;
};

inline BundleStats bundle_stats(const DatasetBundle& b) {
  BundleStats st;
  auto count = [&](const std::string& name, auto&& labels_of) {
    auto& v = st.per_class[name];
    v.assign(b.num_classes, 0);
    labels_of([&](std::size_t y) { ++v.at(y); });
  };
  count(std::string(kSplitSource), [&](auto add) { for (const auto& s : b.source) add(s.label); });
  count(std::string(kSplitUnlabeled), [&](auto add) { for (const auto& [id, y] : b.audit.labels) add(y); });
  count(std::string(kSplitLabeled), [&](auto add) { for (const auto& s : b.target_labeled) add(s.label); });
  count(std::string(kSplitTest), [&](auto add) { for (const auto& s : b.test) add(s.label); });
  return st;
}

}  // namespace spi
