#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "spi/core_math.hpp"

namespace spi {

/// Stable identifier of a sample. Unique across every split of a bundle.
struct SampleId {
  std::int64_t value = 0;
  auto operator<=>(const SampleId&) const = default;
};

struct LabeledSample {
  SampleId id;
  Vec x;
  std::size_t label = 0;
  bool operator==(const LabeledSample&) const = default;
};

struct UnlabeledSample {
  SampleId id;
  Vec x;
  bool operator==(const UnlabeledSample&) const = default;
};

using LabeledSet = std::vector<LabeledSample>;
using UnlabeledSet = std::vector<UnlabeledSample>;

/// A pseudo-label assignment (sample, class).
struct Assignment {
  SampleId id;
  std::size_t label = 0;
  bool operator==(const Assignment&) const = default;
};

}  // namespace spi

template <>
struct std::hash<spi::SampleId> {
  std::size_t operator()(const spi::SampleId& id) const noexcept { return std::hash<std::int64_t>{}(id.value); }
};
