#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>

namespace dobs {

// Stack-allocated dense matrix/vector for small state dimensions.
inline constexpr int kMaxDim = 6;

struct Vec {
  int n = 0;
  std::array<double, kMaxDim> a{};

  explicit Vec(int n_ = 0) : n(n_) {}
  double& operator[](int i) { return a[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return a[static_cast<std::size_t>(i)]; }

  double norm() const {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * a[i];
    return std::sqrt(s);
  }
};

struct Mat {
  int n = 0;
  std::array<double, kMaxDim * kMaxDim> a{};

  explicit Mat(int n_ = 0) : n(n_) {}
  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i * n + j)]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i * n + j)]; }

  static Mat identity(int n) {
    Mat m(n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double frobenius() const {
    double s = 0.0;
    for (int i = 0; i < n * n; ++i) s += a[i] * a[i];
    return std::sqrt(s);
  }
};

inline Vec matvec(const Mat& m, const Vec& v) {
  Vec r(m.n);
  for (int i = 0; i < m.n; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.n; ++j) s += m(i, j) * v[j];
    r[i] = s;
  }
  return r;
}

inline double quad_form(const Mat& m, const Vec& v) {
  double s = 0.0;
  for (int i = 0; i < m.n; ++i)
    for (int j = 0; j < m.n; ++j) s += v[i] * m(i, j) * v[j];
  return s;
}

// First-row Laplace expansion. Intentional choice for the determinant
// identity checks: the bordered structure cancels term by term, while
// pivoted elimination loses ~1e-7 to cancellation at large gains.
inline double det_laplace(const Mat& m) {
  if (m.n == 1) return m(0, 0);
  if (m.n == 2) return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  double det = 0.0;
  double sign = 1.0;
  for (int c = 0; c < m.n; ++c) {
    if (m(0, c) != 0.0) {
      Mat sub(m.n - 1);
      for (int i = 1; i < m.n; ++i) {
        int jj = 0;
        for (int j = 0; j < m.n; ++j) {
          if (j == c) continue;
          sub(i - 1, jj++) = m(i, j);
        }
      }
      det += sign * m(0, c) * det_laplace(sub);
    }
    sign = -sign;
  }
  return det;
}

// Solve m x = b by Gaussian elimination with partial pivoting.
inline Vec solve(Mat m, Vec b) {
  const int n = m.n;
  for (int k = 0; k < n; ++k) {
    int p = k;
    for (int i = k + 1; i < n; ++i)
      if (std::fabs(m(i, k)) > std::fabs(m(p, k))) p = i;
    if (p != k) {
      for (int j = 0; j < n; ++j) std::swap(m(k, j), m(p, j));
      std::swap(b[k], b[p]);
    }
    const double piv = m(k, k);
    for (int i = k + 1; i < n; ++i) {
      const double f = m(i, k) / piv;
      for (int j = k; j < n; ++j) m(i, j) -= f * m(k, j);
      b[i] -= f * b[k];
    }
  }
  Vec x(n);
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int j = i + 1; j < n; ++j) s -= m(i, j) * x[j];
    x[i] = s / m(i, i);
  }
  return x;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
// Deterministic sweep order; plenty for n <= 6.
inline std::array<double, kMaxDim> sym_eigenvalues(Mat m) {
  const int n = m.n;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::fabs(m(p, q)) < 1e-300) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (int k = 0; k < n; ++k) {
          const double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
      }
    }
  }
  std::array<double, kMaxDim> ev{};
  for (int i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = m(i, i);
  return ev;
}

inline double min_eigenvalue(const Mat& m) {
  auto ev = sym_eigenvalues(m);
  double mn = ev[0];
  for (int i = 1; i < m.n; ++i) mn = std::min(mn, ev[static_cast<std::size_t>(i)]);
  return mn;
}

inline double spectral_norm_sym(const Mat& m) {
  auto ev = sym_eigenvalues(m);
  double mx = 0.0;
  for (int i = 0; i < m.n; ++i) mx = std::max(mx, std::fabs(ev[static_cast<std::size_t>(i)]));
  return mx;
}

}  // namespace dobs
