#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "geodp/numerics/rng.hpp"
#include "geodp/numerics/tensor.hpp"

namespace geodp {

// Named trainable parameters. Slots are stable indices handed out by add().
template <class T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    require(!index_.contains(name), ErrorKind::usage, "duplicate parameter " + name);
    index_.emplace(name, values_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual linear/conv default.
  std::size_t add_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    return add(std::move(name), std::move(t));
  }

  std::size_t add_normal(std::string name, Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(stddev * rng.normal());
    return add(std::move(name), std::move(t));
  }

  std::size_t add_constant(std::string name, Shape shape, T value) {
    return add(std::move(name), Tensor<T>::full(std::move(shape), value));
  }

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(std::size_t slot) const { return names_.at(slot); }
  Tensor<T>& value(std::size_t slot) { return values_.at(slot); }
  const Tensor<T>& value(std::size_t slot) const { return values_.at(slot); }
  std::vector<Tensor<T>>& values() noexcept { return values_; }
  const std::vector<Tensor<T>>& values() const noexcept { return values_; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < values_.size(); ++i)
      out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace geodp
