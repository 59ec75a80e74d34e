#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace m3pt {

// Dense row-major tensor, rank 0..4. Small and owning; all the heavy math in
// this project runs on toy shapes, so clarity beats cleverness.
template <typename S>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shp) : shape(std::move(shp)) {
    data.assign(static_cast<size_t>(numel_of(shape)), S(0));
  }
  Tensor(std::vector<int64_t> shp, std::vector<S> values)
      : shape(std::move(shp)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      fail(ErrorKind::Shape, "tensor data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  S& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const S& at(int64_t i, int64_t j) const {
    return data[static_cast<size_t>(i * shape[1] + j)];
  }
  S& at(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const S& at(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  S& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }
  const S& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << "]";
  return os.str();
}

template <typename S>
void require_shape(const Tensor<S>& t, const std::vector<int64_t>& want,
                   const std::string& what) {
  if (t.shape != want)
    fail(ErrorKind::Shape, what + ": expected shape " + shape_str(want) +
                               ", got " + shape_str(t.shape));
}

}  // namespace m3pt
