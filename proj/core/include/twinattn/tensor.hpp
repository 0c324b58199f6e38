#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace twinattn {

// Error categories surfaced by the library. The CLI maps each to a
// categorized exit line; tests match on the type.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PartitionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles. The only tensor shape in the project;
// vectors are 1xN or Nx1, scalars 1x1.
struct Tensor2 {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor2() = default;
  Tensor2(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
  Tensor2(int r, int c, std::vector<double> d);

  static Tensor2 scalar(double v);
  static Tensor2 identity(int n);
  static Tensor2 from_rows(const std::vector<std::vector<double>>& rows);

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  double* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return data.size(); }
  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;

  bool all_finite() const;
  double max_abs_diff(const Tensor2& o) const;
};

// Throws DimensionError naming both shapes when a binary op disagrees.
void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op);
void require_inner_match(const Tensor2& a, const Tensor2& b, const char* op);

// Dense kernels. Accumulation order over the inner dimension is ascending,
// matching a naive triple loop, so results are reproducible bit for bit.
void mm(const Tensor2& a, const Tensor2& b, Tensor2& out);     // a * b
void mm_nt(const Tensor2& a, const Tensor2& b, Tensor2& out);  // a * b^T
void mm_tn(const Tensor2& a, const Tensor2& b, Tensor2& out);  // a^T * b

Tensor2 matmul(const Tensor2& a, const Tensor2& b);
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);

// Row-wise softmax with optional additive bias applied before normalization.
// Bias entries are 0 or -inf; a -inf entry yields an exactly-zero weight.
// A row whose every entry is -inf throws NumericError.
void softmax_rows_kernel(const double* logits, const double* bias_or_null, double* out, int cols);
Tensor2 row_softmax(const Tensor2& x);
Tensor2 row_softmax_bias(const Tensor2& x, const Tensor2& bias);

// Per-row standardization followed by gain/bias. gain and bias are 1 x cols.
Tensor2 layer_norm(const Tensor2& x, const Tensor2& gain, const Tensor2& bias, double eps);

constexpr double kDefaultLayerNormEps = 1e-12;

inline double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace twinattn
