#pragma once

// Helpers shared by the unit tests. Nothing here calls the code under test.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace spi_test {

using Rng = std::mt19937_64;

inline std::vector<double> gaussian_vec(std::size_t n, Rng& rng, double sigma = 1.0) {
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

inline std::vector<std::vector<double>> gaussian_rows(std::size_t n, std::size_t d, Rng& rng, double sigma = 1.0) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(gaussian_vec(d, rng, sigma));
  return rows;
}

/// Dirichlet(1, ..., 1) sample built from exponentials.
inline std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (double& x : p) {
    x = e(rng) + 1e-300;
    s += x;
  }
  for (double& x : p) x /= s;
  return p;
}

inline std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

/// Naive reference softmax with temperature: exp(x/τ)/Σexp without max shift.
inline std::vector<double> ref_softmax(const std::vector<double>& x, double tau) {
  std::vector<double> e(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i] / tau);
    s += e[i];
  }
  for (double& v : e) v /= s;
  return e;
}

inline double ref_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double ref_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s / (ref_norm(a) * ref_norm(b));
}

/// Central difference of a scalar function of one vector.
template <class F>
std::vector<double> central_diff(std::vector<double> x, F&& f, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace spi_test

#define EXPECT_SPI_ERROR(stmt, expected_kind)                         \
  do {                                                                \
    try {                                                             \
      stmt;                                                           \
      ADD_FAILURE() << "expected spi::Error from " #stmt;             \
    } catch (const spi::Error& e) {                                   \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                 \
    }                                                                 \
  } while (0)
