#pragma once

#include <cstddef>
#include <vector>

#include "g2s/tensor.hpp"

namespace g2s {

// Elementwise binary ops broadcast numpy-style (trailing axes aligned).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);

/// (n x k) @ (k x m) -> (n x m)
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the two axes of a 2-D tensor.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t dim, bool keepdim = false);
Tensor mean(const Tensor& a, std::size_t dim, bool keepdim = false);
/// Gradient routes to the first extremal index along dim.
Tensor max(const Tensor& a, std::size_t dim, bool keepdim = false);
Tensor min(const Tensor& a, std::size_t dim, bool keepdim = false);

/// Softmax along the last axis.
Tensor softmax(const Tensor& a);
/// Normalizes the last axis to zero mean / unit variance (no affine).
Tensor layer_norm(const Tensor& a, double eps = 1e-5);

/// Selects rows (slices along axis 0) by index; indices may repeat.
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index);
/// Inverse of gather_rows: places row i of a at row index[i] of a zero
/// tensor with `rows` rows; duplicate targets add.
Tensor scatter_rows(const Tensor& a, const std::vector<std::size_t>& index,
                    std::size_t rows);

Tensor concat(const std::vector<Tensor>& parts, std::size_t dim);
Tensor slice(const Tensor& a, std::size_t dim, std::size_t start,
             std::size_t length);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }

}  // namespace g2s
