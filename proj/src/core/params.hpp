#pragma once

#include <cstring>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace m3pt {

// Ordered name -> tensor map. Insertion order is the canonical order for
// archives, checksums and optimizer state, so it must be deterministic.
template <typename S>
class ParamStore {
 public:
  Tensor<S>& add(const std::string& name, std::vector<int64_t> shape) {
    if (index_.count(name)) fail(ErrorKind::Shape, "duplicate parameter " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.emplace_back(std::move(shape));
    return tensors_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<S>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::Shape, "unknown parameter " + name);
    return tensors_[it->second];
  }
  const Tensor<S>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::Shape, "unknown parameter " + name);
    return tensors_[it->second];
  }

  size_t count() const { return names_.size(); }
  size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::Shape, "unknown parameter " + name);
    return it->second;
  }
  const std::string& name(size_t i) const { return names_[i]; }
  Tensor<S>& tensor(size_t i) { return tensors_[i]; }
  const Tensor<S>& tensor(size_t i) const { return tensors_[i]; }

  int64_t total_elems() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<S>> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

// FNV-1a over the float32 little-endian image of all parameters, in store
// order. Used by the freeze contract and the training manifest.
template <typename S>
uint64_t param_checksum(const ParamStore<S>& store) {
  uint64_t h = 0xCBF29CE484222325ULL;
  auto eat = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (size_t i = 0; i < store.count(); ++i) {
    const auto& t = store.tensor(i);
    for (int64_t k = 0; k < t.numel(); ++k) {
      float f = static_cast<float>(t[k]);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      unsigned char le[4] = {static_cast<unsigned char>(bits & 0xFF),
                             static_cast<unsigned char>((bits >> 8) & 0xFF),
                             static_cast<unsigned char>((bits >> 16) & 0xFF),
                             static_cast<unsigned char>((bits >> 24) & 0xFF)};
      eat(le, 4);
    }
  }
  return h;
}

// Shape-only enumeration callback: name + shape, no storage. The single source
// of truth shared by allocation and the parameter budget.
using ParamSpecFn =
    std::function<void(const std::string&, const std::vector<int64_t>&)>;

}  // namespace m3pt
