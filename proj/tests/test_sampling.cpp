#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "spi/sampling.hpp"
#include "support.hpp"

using namespace spi;

namespace {

LabeledSet labeled(std::size_t classes, std::size_t per_class, std::int64_t first_id) {
  LabeledSet out;
  std::int64_t id = first_id;
  for (std::size_t k = 0; k < per_class; ++k) {
    for (std::size_t c = 0; c < classes; ++c) {
      out.push_back({SampleId{id}, Vec{static_cast<double>(id)}, c});
      ++id;
    }
  }
  return out;
}

UnlabeledSet unlabeled(std::size_t n) {
  UnlabeledSet out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({SampleId{static_cast<std::int64_t>(i)}, Vec{static_cast<double>(i)}});
  return out;
}

}  // namespace

// --- sample_support -----------------------------------------------------------

TEST(SampleSupport, CountsPerClassAndDomain) {
  Rng rng(1);
  const auto s = sample_support(labeled(3, 10, 0), labeled(3, 3, 1000), 1, 3, rng);
  ASSERT_EQ(s.ids.size(), 6u);
  std::map<std::pair<int, std::size_t>, int> counts;
  for (std::size_t i = 0; i < s.ids.size(); ++i) ++counts[{static_cast<int>(s.domains[i]), s.labels[i]}];
  for (int d = 0; d < 2; ++d) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ((counts[{d, c}]), 1);
  }
}

TEST(SampleSupport, OrderedByDomainThenClass) {
  Rng rng(2);
  const auto s = sample_support(labeled(4, 5, 0), labeled(4, 2, 1000), 4, 4, rng);
  ASSERT_EQ(s.ids.size(), 32u);
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    EXPECT_EQ(s.domains[i], i < 16 ? Domain::Source : Domain::Target);
    EXPECT_EQ(s.labels[i], (i % 16) / 4);
    EXPECT_EQ(s.inputs[i][0], static_cast<double>(s.ids[i].value));
  }
}

TEST(SampleSupport, OneShotTargetRepeatsWithReplacement) {
  Rng rng(3);
  const auto target = labeled(3, 1, 1000);
  const auto s = sample_support(labeled(3, 20, 0), target, 4, 3, rng);
  for (std::size_t i = 12; i < 24; ++i) {
    EXPECT_EQ(s.ids[i], target[s.labels[i]].id);
  }
}

TEST(SampleSupport, SameSeedSameBatch) {
  const auto src = labeled(5, 20, 0);
  const auto tgt = labeled(5, 3, 1000);
  Rng a(42), b(42);
  const auto x = sample_support(src, tgt, 4, 5, a);
  const auto y = sample_support(src, tgt, 4, 5, b);
  EXPECT_EQ(x.ids, y.ids);
  EXPECT_EQ(x.inputs, y.inputs);
}

TEST(SampleSupport, Errors) {
  Rng rng(4);
  EXPECT_SPI_ERROR(sample_support(labeled(2, 3, 0), labeled(3, 1, 100), 1, 3, rng), ErrorKind::MissingClass);
  EXPECT_SPI_ERROR(sample_support(labeled(4, 3, 0), labeled(3, 1, 100), 1, 3, rng), ErrorKind::InvalidClass);
}

TEST(SampleSupport, PropertyUniformWithinClass) {
  // Each of the 5 class-0 source samples should appear about 1/5 of the time.
  Rng rng(5);
  const auto src = labeled(2, 5, 0);
  const auto tgt = labeled(2, 1, 1000);
  std::map<std::int64_t, int> hits;
  const int draws = 20000;
  for (int t = 0; t < draws; ++t) hits[sample_support(src, tgt, 1, 2, rng).ids[0].value]++;
  ASSERT_EQ(hits.size(), 5u);
  const double p = 0.2, sigma = std::sqrt(draws * p * (1 - p));
  for (const auto& [id, n] : hits) {
    EXPECT_EQ(src[static_cast<std::size_t>(id)].label, 0u);
    EXPECT_LE(std::abs(n - draws * p), 4 * sigma) << "id " << id;
  }
}

// --- sample_unlabeled -----------------------------------------------------------

TEST(SampleUnlabeled, FullBatchIsPermutation) {
  Rng rng(6);
  const auto pool = unlabeled(17);
  const auto b = sample_unlabeled(pool, 17, rng);
  std::set<std::int64_t> seen;
  for (const auto& s : b) seen.insert(s.id.value);
  EXPECT_EQ(seen.size(), 17u);
}

TEST(SampleUnlabeled, WithoutReplacementWhenPoolLarger) {
  Rng rng(7);
  const auto pool = unlabeled(100);
  for (int t = 0; t < 100; ++t) {
    const auto b = sample_unlabeled(pool, 32, rng);
    std::set<std::int64_t> seen;
    for (const auto& s : b) seen.insert(s.id.value);
    ASSERT_EQ(seen.size(), 32u);
  }
}

TEST(SampleUnlabeled, WithReplacementWhenPoolSmaller) {
  Rng rng(8);
  const auto b = sample_unlabeled(unlabeled(3), 10, rng);
  EXPECT_EQ(b.size(), 10u);
  for (const auto& s : b) EXPECT_LT(s.id.value, 3);
}

TEST(SampleUnlabeled, Determinism) {
  Rng a(9), b(9);
  const auto pool = unlabeled(50);
  EXPECT_EQ(sample_unlabeled(pool, 20, a), sample_unlabeled(pool, 20, b));
}

TEST(SampleUnlabeled, EmptyPool) {
  Rng rng(10);
  EXPECT_SPI_ERROR(sample_unlabeled(UnlabeledSet{}, 4, rng), ErrorKind::EmptyUnlabeledSet);
}

TEST(SampleUnlabeled, PropertyUniformFrequency) {
  Rng rng(11);
  const auto pool = unlabeled(10);
  std::vector<int> hits(10, 0);
  const int rounds = 20000;
  for (int t = 0; t < rounds; ++t) {
    for (const auto& s : sample_unlabeled(pool, 3, rng)) hits[static_cast<std::size_t>(s.id.value)]++;
  }
  const double expected = rounds * 0.3;
  const double sigma = std::sqrt(rounds * 0.3 * 0.7);
  for (int h : hits) EXPECT_LE(std::abs(h - expected), 4 * sigma);
}

// --- generate_views ---------------------------------------------------------------

TEST(GenerateViews, IdentityConfiguration) {
  Rng rng(12);
  ViewConfig cfg{2, 4, 0.0, 0.0, 0.0};
  const Vec x{0.5, -1.0, 2.0};
  const auto v = generate_views(x, cfg, rng);
  ASSERT_EQ(v.global_views.size(), 2u);
  ASSERT_EQ(v.local_views.size(), 4u);
  for (const auto& g : v.global_views) EXPECT_EQ(g, x);
  for (const auto& l : v.local_views) EXPECT_EQ(l, x);
}

TEST(GenerateViews, HalfMaskZeroesTwoOfFour) {
  Rng rng(13);
  ViewConfig cfg{2, 6, 0.0, 0.5, 0.0};
  const Vec x{1, 2, 3, 4};
  const auto v = generate_views(x, cfg, rng);
  for (const auto& l : v.local_views) {
    EXPECT_EQ(std::count(l.begin(), l.end(), 0.0), 2);
    for (std::size_t i = 0; i < 4; ++i) {
      if (l[i] != 0.0) {
        EXPECT_EQ(l[i], x[i]);
      }
    }
  }
}

TEST(GenerateViews, Determinism) {
  Rng a(14), b(14);
  const Vec x{0.3, 0.7};
  const ViewConfig cfg;
  const auto va = generate_views(x, cfg, a);
  const auto vb = generate_views(x, cfg, b);
  EXPECT_EQ(va.global_views, vb.global_views);
  EXPECT_EQ(va.local_views, vb.local_views);
}

TEST(GenerateViews, InputUntouchedAndNoiseScale) {
  Rng rng(15);
  ViewConfig cfg{2, 0, 0.1, 0.0, 0.0};
  const Vec x(1, 0.0);
  double ss = 0.0;
  const int n = 5000;
  for (int t = 0; t < n; ++t) {
    const auto v = generate_views(x, cfg, rng);
    for (const auto& g : v.global_views) ss += g[0] * g[0];
  }
  EXPECT_EQ(x[0], 0.0);
  EXPECT_NEAR(std::sqrt(ss / (2 * n)), 0.1, 0.005);
}

TEST(GenerateViews, Errors) {
  Rng rng(16);
  EXPECT_SPI_ERROR(generate_views(Vec{1, 2}, ViewConfig{3, 4, 0.05, 0.5, 0.05}, rng), ErrorKind::InvalidViewCount);
  EXPECT_SPI_ERROR(generate_views(Vec{1, 2}, ViewConfig{2, 4, -1.0, 0.5, 0.05}, rng), ErrorKind::InvalidInput);
  EXPECT_SPI_ERROR(generate_views(Vec{1, 2}, ViewConfig{2, 4, 0.05, 1.0, 0.05}, rng), ErrorKind::InvalidInput);
}
