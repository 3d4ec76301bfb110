#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "atgn/tensor.hpp"

namespace testing_support {

inline atgn::Tensor randn(atgn::Shape shape, std::mt19937_64& rng, bool track = false, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<double> v(atgn::shape_numel(shape));
  for (double& x : v) x = nd(rng);
  return atgn::Tensor::from(std::move(shape), std::move(v), track);
}

// Central differences, written independently of the library's checker.
inline std::vector<double> numeric_grad(const std::function<double()>& f, atgn::Tensor& leaf, double h = 1e-5) {
  auto d = leaf.mutable_data();
  std::vector<double> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = d[i];
    d[i] = x + h;
    const double up = f();
    d[i] = x - h;
    const double dn = f();
    d[i] = x;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

// |a-n| <= floor or |a-n| <= rel * max(|a|,|n|)
inline double worst_violation(const std::vector<double>& a, const std::vector<double>& n, double rel = 1e-4,
                              double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a[i] - n[i]);
    if (diff <= floor) continue;
    worst = std::max(worst, diff / std::max(std::abs(a[i]), std::abs(n[i])) / rel);
  }
  return worst;  // <= 1 means every element passes
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("atgn_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support
