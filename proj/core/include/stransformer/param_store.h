#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>

#include "stransformer/tensor.h"

namespace stf {

// Named trainable leaves in registration order. The order is the contract:
// the optimizer, checkpoints and gradient checks all iterate it.
class ParamStore {
 public:
  Tensor add(std::string name, Tensor t) {
    if (index_.count(name)) {
      throw StructureError("ParamStore: duplicate parameter '" + name + "'");
    }
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.emplace_back(std::move(name), t);
    return t;
  }

  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  Tensor* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace stf
