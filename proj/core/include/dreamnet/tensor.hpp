#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dreamnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major double tensor. Graph code treats every tensor as a matrix;
// rank-1 tensors are not used inside the graph (vectors are 1 x n).
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, std::vector<double> values);

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor filled(std::size_t rows, std::size_t cols, double value);
  static Tensor identity(std::size_t n);
  static Tensor row(std::vector<double> values);

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  void zero_grad();
  bool all_finite() const;
};

bool operator==(const Tensor& a, const Tensor& b);

// Plain kernels on raw matrices, shared by the graph ops.
namespace kernels {

// C(m x n) += A(m x k) * B(k x n)
void matmul_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                std::size_t m, std::size_t k, std::size_t n);
// C(m x n) += A(m x k) * B(n x k)^T
void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
// C(k x n) += A(m x k)^T * B(m x n)
void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);

// In-place stable softmax of each row of an m x n matrix over its first
// `valid` columns; the remaining columns are set to zero.
void softmax_rows_inplace(std::span<double> x, std::size_t m, std::size_t n, std::size_t valid);

}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);

}  // namespace dreamnet
