#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

/// Insertion-ordered registry of named trainable leaves.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor add(std::string name, Shape shape, std::vector<double> values);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  // Scalars in parameters whose name starts with `prefix`.
  std::size_t scalar_count(std::string_view prefix) const;

  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// 64-bit FNV-1a over a byte range.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);

/// Generator for one named stream under a run seed, so a parameter's
/// initial value does not depend on construction order.
std::mt19937_64 named_rng(std::uint64_t seed, std::string_view name);

std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n, double stddev);

}  // namespace hyperadapt
