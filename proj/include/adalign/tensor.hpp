#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adalign/error.hpp"
#include "adalign/rng.hpp"

namespace adalign {

// Dense row-major matrix of doubles. Everything in this codebase is rank 2;
// scalars are [1,1], row vectors [1,n], batches [B,d]. Keeping one rank makes
// the backward rules short and leaves no ambiguity in broadcasting.
struct Tensor {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int64_t r, int64_t c) : rows(r), cols(c), data(r * c, 0.0) {
    if (r < 0 || c < 0) throw ShapeError("Tensor: negative dimension");
  }

  int64_t numel() const { return rows * cols; }
  double& at(int64_t i, int64_t j) { return data[i * cols + j]; }
  double at(int64_t i, int64_t j) const { return data[i * cols + j]; }

  bool same_shape(const Tensor& o) const {
    return rows == o.rows && cols == o.cols;
  }

  static Tensor zeros(int64_t r, int64_t c) { return Tensor(r, c); }

  static Tensor full(int64_t r, int64_t c, double v) {
    Tensor t(r, c);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return full(1, 1, v); }

  static Tensor from(std::initializer_list<std::initializer_list<double>> rs) {
    Tensor t(static_cast<int64_t>(rs.size()),
             static_cast<int64_t>(rs.begin()->size()));
    int64_t i = 0;
    for (const auto& row : rs) {
      if (static_cast<int64_t>(row.size()) != t.cols)
        throw ShapeError("Tensor::from: ragged rows");
      for (double v : row) t.data[i++] = v;
    }
    return t;
  }

  static Tensor randn(int64_t r, int64_t c, RngStream& rng, double scale = 1.0) {
    Tensor t(r, c);
    for (auto& v : t.data) v = scale * rng.normal();
    return t;
  }

  std::string shape_str() const {
    return "[" + std::to_string(rows) + "," + std::to_string(cols) + "]";
  }
};

}  // namespace adalign
