#include "dreamnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "dreamnet/errors.hpp"

namespace dreamnet {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
  return Tensor({rows, cols}, std::vector<double>(rows * cols, value));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape.size() == 2) return shape[0];
  if (shape.size() == 1) return 1;
  throw ShapeError("expected a matrix, got shape " + shape_str(shape));
}

std::size_t Tensor::cols() const {
  if (shape.size() == 2) return shape[1];
  if (shape.size() == 1) return shape[0];
  throw ShapeError("expected a matrix, got shape " + shape_str(shape));
}

void Tensor::zero_grad() { grad.emplace(data.size(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

bool operator==(const Tensor& a, const Tensor& b) { return a.shape == b.shape && a.data == b.data; }

namespace kernels {

void matmul_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      // Four independent partial sums let the loop vectorize without
      // reassociation flags; the summation order is still fixed.
      double acc[4] = {0.0, 0.0, 0.0, 0.0};
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        for (std::size_t u = 0; u < 4; ++u) acc[u] += arow[p + u] * brow[p + u];
      }
      for (; p < k; ++p) acc[0] += arow[p] * brow[p];
      c[i * n + j] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
  }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r) {
    const double* arow = a.data() + r * k;
    const double* brow = b.data() + r * n;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void softmax_rows_inplace(std::span<double> x, std::size_t m, std::size_t n, std::size_t valid) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = x.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < valid; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < valid; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < valid; ++j) row[j] *= inv;
    for (std::size_t j = valid; j < n; ++j) row[j] = 0.0;
  }
}

}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  }
  Tensor c = Tensor::zeros(a.rows(), b.cols());
  kernels::matmul_acc(a.data, b.data, c.data, a.rows(), a.cols(), b.cols());
  return c;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  if (x.cols() == 0) return out;
  kernels::softmax_rows_inplace(out.data, x.rows(), x.cols(), x.cols());
  return out;
}

}  // namespace dreamnet
