#include "twinattn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace twinattn {

Tensor2::Tensor2(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
  if (data.size() != static_cast<size_t>(r) * c) {
    throw DimensionError("Tensor2: data length " + std::to_string(data.size()) + " != " +
                         std::to_string(r) + "x" + std::to_string(c));
  }
}

Tensor2 Tensor2::scalar(double v) {
  Tensor2 t(1, 1);
  t.data[0] = v;
  return t;
}

Tensor2 Tensor2::identity(int n) {
  Tensor2 t(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor2 Tensor2::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Tensor2();
  Tensor2 t(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int i = 0; i < t.rows; ++i) {
    if (static_cast<int>(rows[i].size()) != t.cols) {
      throw DimensionError("from_rows: ragged row " + std::to_string(i));
    }
    std::copy(rows[i].begin(), rows[i].end(), t.row_ptr(i));
  }
  return t;
}

std::string Tensor2::shape_str() const {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

bool Tensor2::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor2::max_abs_diff(const Tensor2& o) const {
  require_same_shape(*this, o, "max_abs_diff");
  double m = 0.0;
  for (size_t i = 0; i < data.size(); ++i) m = std::max(m, std::fabs(data[i] - o.data[i]));
  return m;
}

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

void require_inner_match(const Tensor2& a, const Tensor2& b, const char* op) {
  if (a.cols != b.rows) {
    throw DimensionError(std::string(op) + ": inner dimensions disagree " + a.shape_str() + " vs " + b.shape_str());
  }
}

// out = a * b, accumulated over k ascending for every output entry (same
// order as the naive i,j,k loop, so results match it bit for bit).
void mm(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  require_inner_match(a, b, "matmul");
  out.rows = a.rows;
  out.cols = b.cols;
  out.data.assign(static_cast<size_t>(a.rows) * b.cols, 0.0);
  const int n = b.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* __restrict__ arow = a.row_ptr(i);
    double* __restrict__ orow = out.row_ptr(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* __restrict__ brow = b.row_ptr(k);
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
}

void mm_nt(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  if (a.cols != b.cols) {
    throw DimensionError(std::string("matmul_nt: inner dimensions disagree ") + a.shape_str() + " vs " +
                         b.shape_str() + "^T");
  }
  out.rows = a.rows;
  out.cols = b.rows;
  out.data.resize(static_cast<size_t>(a.rows) * b.rows);
  const int k = a.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* __restrict__ arow = a.row_ptr(i);
    double* __restrict__ orow = out.row_ptr(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* __restrict__ brow = b.row_ptr(j);
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
      orow[j] = acc;
    }
  }
}

void mm_tn(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  if (a.rows != b.rows) {
    throw DimensionError(std::string("matmul_tn: inner dimensions disagree ") + a.shape_str() + "^T vs " +
                         b.shape_str());
  }
  out.rows = a.cols;
  out.cols = b.cols;
  out.data.assign(static_cast<size_t>(a.cols) * b.cols, 0.0);
  const int n = b.cols;
  for (int k = 0; k < a.rows; ++k) {
    const double* __restrict__ arow = a.row_ptr(k);
    const double* __restrict__ brow = b.row_ptr(k);
    for (int i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* __restrict__ orow = out.row_ptr(i);
      for (int j = 0; j < n; ++j) orow[j] += aki * brow[j];
    }
  }
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  Tensor2 out;
  mm(a, b, out);
  return out;
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  Tensor2 out;
  mm_nt(a, b, out);
  return out;
}

void softmax_rows_kernel(const double* logits, const double* bias_or_null, double* out, int cols) {
  double maxv = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < cols; ++j) {
    const double v = logits[j] + (bias_or_null ? bias_or_null[j] : 0.0);
    if (v > maxv) maxv = v;
  }
  if (maxv == -std::numeric_limits<double>::infinity()) {
    throw NumericError("row_softmax: row is entirely -inf");
  }
  double sum = 0.0;
  for (int j = 0; j < cols; ++j) {
    const double v = logits[j] + (bias_or_null ? bias_or_null[j] : 0.0);
    // exp(-inf - finite max) is exactly 0, so masked entries contribute nothing.
    const double e = std::exp(v - maxv);
    out[j] = e;
    sum += e;
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < cols; ++j) out[j] *= inv;
}

Tensor2 row_softmax(const Tensor2& x) {
  Tensor2 out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) softmax_rows_kernel(x.row_ptr(i), nullptr, out.row_ptr(i), x.cols);
  return out;
}

Tensor2 row_softmax_bias(const Tensor2& x, const Tensor2& bias) {
  require_same_shape(x, bias, "row_softmax_bias");
  Tensor2 out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) softmax_rows_kernel(x.row_ptr(i), bias.row_ptr(i), out.row_ptr(i), x.cols);
  return out;
}

Tensor2 layer_norm(const Tensor2& x, const Tensor2& gain, const Tensor2& bias, double eps) {
  if (gain.rows != 1 || gain.cols != x.cols || bias.rows != 1 || bias.cols != x.cols) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(x.cols) + ", got " +
                         gain.shape_str() + " and " + bias.shape_str());
  }
  if (eps <= 0.0) throw NumericError("layer_norm: eps must be > 0");
  Tensor2 out(x.rows, x.cols);
  const int d = x.cols;
  for (int i = 0; i < x.rows; ++i) {
    const double* xr = x.row_ptr(i);
    double* orow = out.row_ptr(i);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) orow[j] = (xr[j] - mean) * inv * gain.data[j] + bias.data[j];
  }
  return out;
}

}  // namespace twinattn
