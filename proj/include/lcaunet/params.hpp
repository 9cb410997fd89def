#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lcaunet/autograd.hpp"

namespace lcaunet::ag {

// Ordered, named registry of trainable tensors. Registration order is the
// optimizer/checkpoint order, so construction must be deterministic.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
  };

  Var<T> add(std::string name, Array<T> init) {
    LCAUNET_CHECK_CONFIG(!by_name_.count(name), "duplicate parameter ", name);
    Var<T> v = Var<T>::param(std::move(init));
    by_name_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), v});
    return v;
  }

  const Var<T>& at(const std::string& name) const {
    auto it = by_name_.find(name);
    LCAUNET_CHECK_CONFIG(it != by_name_.end(), "unknown parameter ", name);
    return entries_[it->second].var;
  }
  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }

  std::size_t count() const { return entries_.size(); }
  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.var.size();
    return n;
  }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grad() {
    for (auto& e : entries_) e.var.node().zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

}  // namespace lcaunet::ag
