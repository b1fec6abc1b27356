#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "hyperadapt/ops.hpp"
#include "hyperadapt/params.hpp"

namespace testing_support {

using hyperadapt::Shape;
using hyperadapt::Tensor;

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline Tensor random_param(std::mt19937_64& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  return Tensor::parameter(shape, uniform(rng, hyperadapt::shape_numel(shape), lo, hi));
}

inline Tensor random_input(std::mt19937_64& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  return Tensor::from(shape, uniform(rng, hyperadapt::shape_numel(shape), lo, hi));
}

// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero
// up to rounding from dominating the ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  std::size_t checked = 0;
  double max_rel = 0.0;
  double max_abs = 0.0;
};

/// Central differences of `loss_fn` with respect to `coords` (leaf, index)
/// against backward(). `loss_fn` must rebuild the graph from the leaves.
inline GradCheck check_gradients(const std::function<Tensor()>& loss_fn,
                                 const std::vector<std::pair<Tensor, std::size_t>>& coords, double h = 1e-5,
                                 double floor = 1e-6) {
  for (const auto& [t, i] : coords) {
    Tensor leaf = t;
    leaf.zero_grad();
  }
  hyperadapt::backward(loss_fn());
  GradCheck out;
  for (const auto& [t, i] : coords) {
    Tensor leaf = t;
    const double analytic = leaf.grad()[i];
    auto data = leaf.mutable_data();
    const double saved = data[i];
    data[i] = saved + h;
    double plus, minus;
    {
      hyperadapt::NoGradGuard guard;
      plus = loss_fn().item();
      data[i] = saved - h;
      minus = loss_fn().item();
    }
    data[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    out.max_rel = std::max(out.max_rel, relative_error(analytic, numeric, floor));
    out.max_abs = std::max(out.max_abs, std::abs(analytic - numeric));
    ++out.checked;
  }
  return out;
}

/// Every coordinate of every leaf.
inline std::vector<std::pair<Tensor, std::size_t>> all_coords(const std::vector<Tensor>& leaves) {
  std::vector<std::pair<Tensor, std::size_t>> coords;
  for (const auto& t : leaves)
    for (std::size_t i = 0; i < t.numel(); ++i) coords.emplace_back(t, i);
  return coords;
}

/// `count` coordinates drawn uniformly (with replacement across leaves).
inline std::vector<std::pair<Tensor, std::size_t>> sample_coords(const std::vector<Tensor>& leaves, std::size_t count,
                                                                 std::mt19937_64& rng) {
  std::size_t total = 0;
  for (const auto& t : leaves) total += t.numel();
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<std::pair<Tensor, std::size_t>> coords;
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t flat = pick(rng);
    for (const auto& t : leaves) {
      if (flat < t.numel()) {
        coords.emplace_back(t, flat);
        break;
      }
      flat -= t.numel();
    }
  }
  return coords;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
           return std::memcmp(&x, &y, sizeof(double)) == 0;
         });
}

// Plain row-major triple loop, independent of the library's GEMM.
inline std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t m,
                                        std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0.0L;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<double>(s);
    }
  return c;
}

}  // namespace testing_support
