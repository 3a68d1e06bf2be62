#pragma once

#include <map>
#include <string>

#include "sdcnet/tensor.hpp"

namespace sdcnet {

// Named model state. std::map keeps iteration lexicographic, which the
// optimizer, checkpoints and gradient checks all rely on for determinism.
class ParamStore {
 public:
  TensorPtr add(const std::string& path, TensorPtr t) {
    t->requires_grad = true;
    auto [it, inserted] = params_.emplace(path, std::move(t));
    if (!inserted) throw ConfigError("duplicate parameter path: " + path);
    return it->second;
  }

  // Non-trainable state carried alongside parameters (running stats etc.).
  TensorPtr add_buffer(const std::string& path, TensorPtr t) {
    t->requires_grad = false;
    auto [it, inserted] = buffers_.emplace(path, std::move(t));
    if (!inserted) throw ConfigError("duplicate buffer path: " + path);
    return it->second;
  }

  const TensorPtr& at(const std::string& path) const {
    auto it = params_.find(path);
    if (it == params_.end()) throw ConfigError("unknown parameter path: " + path);
    return it->second;
  }

  bool contains(const std::string& path) const { return params_.count(path) > 0; }

  const std::map<std::string, TensorPtr>& params() const { return params_; }
  const std::map<std::string, TensorPtr>& buffers() const { return buffers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t->size();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : params_) t->zero_grad();
  }

 private:
  std::map<std::string, TensorPtr> params_;
  std::map<std::string, TensorPtr> buffers_;
};

}  // namespace sdcnet
