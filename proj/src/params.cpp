#include "hyperadapt/params.hpp"

#include <stdexcept>

namespace hyperadapt {

Tensor ParameterStore::add(std::string name, Shape shape, std::vector<double> values) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  Tensor t = Tensor::parameter(std::move(shape), std::move(values));
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), t});
  return t;
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

const Tensor& ParameterStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

Tensor& ParameterStore::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t ParameterStore::scalar_count() const { return scalar_count(""); }

std::size_t ParameterStore::scalar_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.name.starts_with(prefix)) n += e.tensor.numel();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::mt19937_64 named_rng(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(n);
  for (auto& v : out) v = stddev == 0.0 ? 0.0 : dist(rng);
  return out;
}

}  // namespace hyperadapt
