#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace annodist {

// Dense row-major matrix of doubles. Scalars are 1x1, vectors are n x 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols)
      : rows_(rows), cols_(cols),
        data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative shape");
  }

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data_[0] = v;
    return t;
  }

  static Tensor column(std::vector<double> v) {
    Tensor t;
    t.rows_ = static_cast<int>(v.size());
    t.cols_ = 1;
    t.data_ = std::move(v);
    return t;
  }

  static Tensor full(int rows, int cols, double v) {
    Tensor t(rows, cols);
    for (double& x : t.data_) x = v;
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double item() const {
    if (!is_scalar()) throw std::invalid_argument("Tensor::item: not a scalar");
    return data_[0];
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor transposed() const {
    Tensor out(cols_, rows_);
    for (int r = 0; r < rows_; ++r)
      for (int c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    return out;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

namespace detail {
inline void require_shape(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}
}  // namespace detail

// out = a * b, or out += a * b when accumulate is set.
inline void matmul_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false) {
  detail::require_shape(a.cols() == b.rows(), "matmul inner dimension");
  detail::require_shape(out.rows() == a.rows() && out.cols() == b.cols(), "matmul output");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (!accumulate) out.fill(0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = a.data() + static_cast<std::size_t>(i) * k;
    double* orow = out.data() + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  matmul_into(a, b, out);
  return out;
}

// out (+)= a * b^T
inline void matmul_nt_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false) {
  detail::require_shape(a.cols() == b.cols(), "matmul_nt inner dimension");
  detail::require_shape(out.rows() == a.rows() && out.cols() == b.rows(), "matmul_nt output");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  for (int i = 0; i < m; ++i) {
    const double* arow = a.data() + static_cast<std::size_t>(i) * k;
    double* orow = out.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b.data() + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      if (accumulate)
        orow[j] += s;
      else
        orow[j] = s;
    }
  }
}

// out (+)= a^T * b
inline void matmul_tn_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false) {
  detail::require_shape(a.rows() == b.rows(), "matmul_tn inner dimension");
  detail::require_shape(out.rows() == a.cols() && out.cols() == b.cols(), "matmul_tn output");
  const int m = a.cols(), k = a.rows(), n = b.cols();
  if (!accumulate) out.fill(0.0);
  for (int p = 0; p < k; ++p) {
    const double* arow = a.data() + static_cast<std::size_t>(p) * m;
    const double* brow = b.data() + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace annodist
