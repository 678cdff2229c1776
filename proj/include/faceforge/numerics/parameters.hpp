#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "faceforge/numerics/rng.hpp"
#include "faceforge/numerics/tensor.hpp"

namespace faceforge {

// Named learnable tensors. Iteration order is lexicographic by name, which
// fixes the order of optimizer updates and checkpoint records.
class Parameters {
 public:
  using Map = std::map<std::string, Tensor>;

  Tensor& add(const std::string& name, Tensor value) {
    value.set_requires_grad(true);
    auto [it, inserted] = params_.insert_or_assign(name, std::move(value));
    return it->second;
  }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : params_) out.push_back(n);
    return out;
  }

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

 private:
  Map params_;
};

// Glorot-uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(Shape{fan_in, fan_out});
  for (double& v : t.values()) v = rng.uniform(-a, a);
  return t;
}

inline Tensor normal_init(Shape shape, double sigma, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = sigma * rng.normal();
  return t;
}

}  // namespace faceforge
