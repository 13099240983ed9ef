#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "annodist/errors.hpp"
#include "annodist/tensor.hpp"

namespace annodist {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

namespace detail {

constexpr double kPi = 3.14159265358979323846;

// Iterative radix-2 FFT. Length must be a power of two.
inline void fft_pow2(std::vector<std::complex<double>>& a, bool invert) {
  const int n = static_cast<int>(a.size());
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / len * (invert ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (invert)
    for (auto& x : a) x /= static_cast<double>(n);
}

// DCT-II without normalization: X_k = sum_j x_j cos(pi k (2j+1) / (2N)).
// Even-index elements ascend, odd-index elements descend into one FFT.
inline void dct2_halfcos(std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n == 1) return;
  std::vector<std::complex<double>> v(n);
  for (int j = 0; j < n / 2; ++j) {
    v[j] = x[2 * j];
    v[n - 1 - j] = x[2 * j + 1];
  }
  fft_pow2(v, false);
  for (int k = 0; k < n; ++k) {
    const double ang = -kPi * k / (2.0 * n);
    x[k] = std::cos(ang) * v[k].real() - std::sin(ang) * v[k].imag();
  }
}

// Exact inverse of dct2_halfcos.
inline void dct3_halfcos(std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n == 1) return;
  std::vector<std::complex<double>> v(n);
  for (int k = 0; k < n; ++k) {
    const double xk = x[k];
    const double xnk = k == 0 ? 0.0 : x[n - k];
    const double ang = kPi * k / (2.0 * n);
    v[k] = std::complex<double>(std::cos(ang), std::sin(ang)) * std::complex<double>(xk, -xnk);
  }
  fft_pow2(v, true);
  for (int j = 0; j < n / 2; ++j) {
    x[2 * j] = v[j].real();
    x[2 * j + 1] = v[n - 1 - j].real();
  }
}

// Orthonormal scaling factors: alpha_0 = sqrt(1/N), alpha_k = sqrt(2/N).
inline void dct2_ortho(std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  dct2_halfcos(x);
  const double a0 = std::sqrt(1.0 / n), ak = std::sqrt(2.0 / n);
  x[0] *= a0;
  for (int k = 1; k < n; ++k) x[k] *= ak;
}

inline void dct3_ortho(std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  const double a0 = std::sqrt(1.0 / n), ak = std::sqrt(2.0 / n);
  x[0] /= a0;
  for (int k = 1; k < n; ++k) x[k] /= ak;
  dct3_halfcos(x);
}

template <typename Fn>
inline void transform_rows(Tensor& grid, Fn fn) {
  std::vector<double> buf(grid.cols());
  for (int r = 0; r < grid.rows(); ++r) {
    double* row = grid.data() + static_cast<std::size_t>(r) * grid.cols();
    buf.assign(row, row + grid.cols());
    fn(buf);
    for (int c = 0; c < grid.cols(); ++c) row[c] = buf[c];
  }
}

template <typename Fn>
inline void transform_cols(Tensor& grid, Fn fn) {
  std::vector<double> buf(grid.rows());
  for (int c = 0; c < grid.cols(); ++c) {
    for (int r = 0; r < grid.rows(); ++r) buf[r] = grid(r, c);
    fn(buf);
    for (int r = 0; r < grid.rows(); ++r) grid(r, c) = buf[r];
  }
}

inline void require_square_pow2(const Tensor& grid, const char* what) {
  if (grid.rows() != grid.cols())
    throw NumericError(std::string(what) + ": grid must be square");
  if (!is_pow2(grid.rows()))
    throw NumericError(std::string(what) + ": grid size must be a power of two");
}

}  // namespace detail

// Separable orthonormal 2D DCT-II. Rows index is transformed along columns
// and vice versa, so coefficient (k_r, k_c) pairs row frequency k_r with
// column frequency k_c.
inline Tensor dct2_forward(const Tensor& grid) {
  detail::require_square_pow2(grid, "dct2_forward");
  Tensor out = grid;
  detail::transform_rows(out, [](std::vector<double>& v) { detail::dct2_ortho(v); });
  detail::transform_cols(out, [](std::vector<double>& v) { detail::dct2_ortho(v); });
  return out;
}

// Inverse of dct2_forward (orthonormal 2D DCT-III).
inline Tensor dct2_inverse(const Tensor& coeffs) {
  detail::require_square_pow2(coeffs, "dct2_inverse");
  Tensor out = coeffs;
  detail::transform_cols(out, [](std::vector<double>& v) { detail::dct3_ortho(v); });
  detail::transform_rows(out, [](std::vector<double>& v) { detail::dct3_ortho(v); });
  return out;
}

// Orthonormal DCT-II matrix C (C * x applies the transform to a column).
inline Tensor dct2_matrix(int n) {
  Tensor c(n, n);
  const double a0 = std::sqrt(1.0 / n), ak = std::sqrt(2.0 / n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      c(k, j) = (k == 0 ? a0 : ak) * std::cos(detail::kPi * k * (2.0 * j + 1.0) / (2.0 * n));
  return c;
}

}  // namespace annodist
