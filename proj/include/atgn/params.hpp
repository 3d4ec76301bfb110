#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "atgn/error.hpp"
#include "atgn/tensor.hpp"

namespace atgn {

// Named parameter tensors plus a trainable flag per entry. Insertion order is
// the canonical order for checkpoints and optimizer state.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  Tensor& add(const std::string& name, Tensor value, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("parameter '" + name + "' registered twice");
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(value), trainable});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const { return entries_[locate(name)].value; }
  Tensor& get(const std::string& name) { return entries_[locate(name)].value; }

  bool trainable(const std::string& name) const { return entries_[locate(name)].trainable; }
  void set_trainable(const std::string& name, bool on) { entries_[locate(name)].trainable = on; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<bool> trainable_mask() const {
    std::vector<bool> mask;
    for (const auto& e : entries_) mask.push_back(e.trainable);
    return mask;
  }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.numel();
    return n;
  }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  // Deep copy. With `track`, trainable entries become gradient-tracked leaves.
  ParamStore clone(bool track = false) const {
    ParamStore out;
    out.index_ = index_;
    out.entries_.reserve(entries_.size());
    for (const auto& e : entries_) out.entries_.push_back({e.name, e.value.clone(track && e.trainable), e.trainable});
    return out;
  }

 private:
  std::size_t locate(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Seeded parameter initializer.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng_);
    return Tensor::from(std::move(shape), std::move(v));
  }

  // N(0, gain²/fan_in)
  Tensor fan_in(Shape shape, std::size_t fan, double gain = 1.0) {
    return normal(std::move(shape), gain / std::sqrt(static_cast<double>(std::max<std::size_t>(fan, 1))));
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Per-forward options shared by all modules.
struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  // Names of executed stages, appended in order when non-null.
  std::vector<std::string>* trace = nullptr;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001B3ULL;
  return h;
}

}  // namespace atgn
