#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace boxrec {

// Dense row-major matrix. Scalars are 1x1, row vectors 1xN. Everything the
// model manipulates is rank <= 2, so a fixed 2-D layout keeps indexing cheap
// and checkpoints simple.
template <typename T>
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, T(0)) {}
  Tensor(std::size_t r, std::size_t c, std::vector<T> data) : rows(r), cols(c), v(std::move(data)) {
    if (v.size() != rows * cols) throw std::invalid_argument("tensor: data size does not match shape");
  }

  std::size_t size() const { return rows * cols; }
  T& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  void fill(T value) { std::fill(v.begin(), v.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows, cols);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }

  static Tensor row(std::vector<T> data) {
    const std::size_t n = data.size();
    return Tensor(1, n, std::move(data));
  }
  static Tensor scalar(T x) { return Tensor(1, 1, {x}); }
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

}  // namespace boxrec
