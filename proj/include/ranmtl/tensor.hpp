#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ranmtl {

// Dense row-major f64 tensor, rank 1 or 2. Rank-1 tensors behave as a single
// row where a matrix view is needed.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::initializer_list<std::size_t> s) { resize(std::vector<std::size_t>(s)); }

  static Tensor zeros(const std::vector<std::size_t>& s) {
    Tensor t;
    t.resize(s);
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.shape = {1};
    t.data = {v};
    return t;
  }

  static Tensor row(const std::vector<double>& v) {
    Tensor t;
    t.shape = {v.size()};
    t.data = v;
    return t;
  }

  static Tensor matrix(std::size_t r, std::size_t c, const std::vector<double>& v) {
    if (v.size() != r * c) throw std::invalid_argument("tensor: data size does not match shape");
    Tensor t;
    t.shape = {r, c};
    t.data = v;
    return t;
  }

  void resize(const std::vector<std::size_t>& s) {
    shape = s;
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    data.assign(n, 0.0);
  }

  // Reshape preserving capacity; used by workspaces on batch-size changes.
  void resize_rows(std::size_t r) {
    if (shape.size() != 2) throw std::logic_error("resize_rows on non-matrix tensor");
    shape[0] = r;
    data.resize(r * shape[1]);
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // Matrix-view dims: rank-1 tensors are a 1 x n row.
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.size() == 2 ? shape[1] : (shape.empty() ? 0 : shape[0]); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) {
    for (double& x : data) x = v;
  }
};

using NamedTensors = std::map<std::string, Tensor>;

// Little-endian wire format for named tensor sets; exact sizes feed the
// transfer byte accounting in the distributed runs.
std::vector<std::uint8_t> encode_named(
    const std::vector<std::pair<std::string, const Tensor*>>& tensors);
std::vector<std::pair<std::string, Tensor>> decode_named(const std::vector<std::uint8_t>& buf);

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

}  // namespace ranmtl
