#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "dobs/errors.hpp"
#include "dobs/linalg.hpp"

namespace dobs {

// Piecewise function on contiguous intervals. Segment kinds:
//   Constant       exact value and integral
//   Cubic          polynomial about the segment start, exact integral
//   Analytic       closures for value and derivative, Gauss quadrature
struct ConstantSeg {
  double c = 0.0;
};

// Cubic in Hermite form: endpoint values plus width-scaled endpoint
// slopes. A monomial cubic rounds its two leading coefficients
// independently, so the endpoint slope of a steep bridge only comes out
// as a cancellation of terms of size height/width; the basis form
// reproduces both endpoint values and slopes to the last ulp no matter
// how steep the bridge is.
struct CubicSeg {
  double t0 = 0.0, w = 1.0;   // lower endpoint and width
  double v0 = 0.0, v1 = 0.0;  // endpoint values
  double g0 = 0.0, g1 = 0.0;  // endpoint slopes times the width

  double value(double t) const {
    const double th = (t - t0) / w, om = 1.0 - th;
    return om * om * ((1.0 + 2.0 * th) * v0 + th * g0) +
           th * th * ((3.0 - 2.0 * th) * v1 + (th - 1.0) * g1);
  }
  double deriv(double t) const {
    const double th = (t - t0) / w, om = 1.0 - th;
    return (6.0 * th * om * (v1 - v0) + om * (1.0 - 3.0 * th) * g0 +
            th * (3.0 * th - 2.0) * g1) / w;
  }
  double integral(double a, double b) const {
    auto anti = [this](double t) {
      const double th = (t - t0) / w;
      return w * th *
             (v0 + th * (0.5 * g0 +
                         th * ((v1 - v0) - (2.0 * g0 + g1) / 3.0 +
                               th * (0.5 * (v0 - v1) + 0.25 * (g0 + g1)))));
    };
    return anti(b) - anti(a);
  }
};

struct AnalyticSeg {
  std::function<double(double)> f;
  std::function<double(double)> df;
};

using Segment = std::variant<ConstantSeg, CubicSeg, AnalyticSeg>;

// Cubic Hermite bridge matching value and slope at both ends.
inline CubicSeg bridge(double t0, double v0, double s0, double t1, double v1, double s1) {
  if (t1 <= t0) throw SynthesisError("bridge endpoints out of order");
  CubicSeg c;
  c.t0 = t0;
  c.w = t1 - t0;
  c.v0 = v0;
  c.v1 = v1;
  c.g0 = c.w * s0;
  c.g1 = c.w * s1;
  return c;
}

namespace detail {
// 16 point Gauss-Legendre rule on [-1, 1].
inline constexpr double kGaussX[8] = {
    0.0950125098376374, 0.2816035507792589, 0.4580167776572274, 0.6178762444026438,
    0.7554044083550030, 0.8656312023878318, 0.9445750230732326, 0.9894009349916499};
inline constexpr double kGaussW[8] = {
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

inline double gauss16(const std::function<double(double)>& f, double a, double b) {
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < 8; ++i) {
    s += kGaussW[i] * (f(mid - half * kGaussX[i]) + f(mid + half * kGaussX[i]));
  }
  return s * half;
}
}  // namespace detail

class PiecewiseFn {
 public:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  PiecewiseFn() = default;

  // Builder interface: segments are appended left to right.
  void start_at(double lo) {
    bk_.clear();
    segs_.clear();
    cum_.clear();
    bk_.push_back(lo);
  }
  void append(double hi, Segment seg) {
    if (bk_.empty()) throw SynthesisError("piecewise append before start_at");
    if (hi <= bk_.back()) throw SynthesisError("piecewise breakpoints must increase");
    segs_.push_back(std::move(seg));
    bk_.push_back(hi);
  }
  void finalize() {
    cum_.assign(segs_.size() + 1, 0.0);
    for (std::size_t i = 0; i < segs_.size(); ++i)
      cum_[i + 1] = cum_[i] + seg_integral(i, bk_[i], bk_[i + 1]);
  }

  bool empty() const { return segs_.empty(); }
  double lo() const { return bk_.front(); }
  double hi() const { return bk_.back(); }
  std::size_t segment_count() const { return segs_.size(); }
  double breakpoint(std::size_t i) const { return bk_[i]; }
  const Segment& segment_at(std::size_t i) const { return segs_[i]; }

  double value(double t) const { return seg_value(locate(t), t); }
  double deriv(double t) const { return seg_deriv(locate(t), t); }

  // Antiderivative anchored at lo(); differences of it give integrals,
  // which makes integral additivity exact by construction.
  double anti(double t) const {
    const std::size_t i = locate(t);
    return cum_[i] + seg_integral(i, bk_[i], t);
  }
  double integral(double a, double b) const { return anti(b) - anti(a); }

  // Largest jump in value (and in derivative if check_deriv) across the
  // interior breakpoints, both scaled by max(1, |value|) over the two
  // sides. The value scale governs the derivative check too: a steep
  // bridge's endpoint slope is a cancellation of terms of size
  // value/width², so its roundoff residue is proportional to the value,
  // not to the (vanishing) endpoint slope, and the steep side may meet
  // a small-valued neighbor at the joint.
  double max_joint_gap(bool check_deriv, double* where = nullptr) const {
    double worst = 0.0;
    for (std::size_t i = 1; i < segs_.size(); ++i) {
      const double t = bk_[i];
      const double vl = seg_value(i - 1, t), vr = seg_value(i, t);
      const double scale = std::max(1.0, std::max(std::fabs(vl), std::fabs(vr)));
      double gap = std::fabs(vl - vr) / scale;
      if (check_deriv) {
        const double dl = seg_deriv(i - 1, t), dr = seg_deriv(i, t);
        gap = std::max(gap, std::fabs(dl - dr) / scale);
      }
      if (gap > worst) {
        worst = gap;
        if (where) *where = t;
      }
    }
    return worst;
  }

 private:
  std::size_t locate(double t) const {
    if (segs_.empty()) throw SynthesisError("piecewise function is empty");
    const double tol = 1e-9 * std::max(1.0, std::fabs(bk_.back()) + std::fabs(bk_.front()));
    if (t < bk_.front() - tol || t > bk_.back() + tol)
      throw SynthesisError("piecewise evaluation at " + std::to_string(t) +
                           " outside [" + std::to_string(bk_.front()) + ", " +
                           std::to_string(bk_.back()) + "]");
    auto it = std::upper_bound(bk_.begin(), bk_.end(), t);
    std::size_t i = static_cast<std::size_t>(it - bk_.begin());
    if (i == 0) return 0;
    --i;
    return std::min(i, segs_.size() - 1);
  }

  double seg_value(std::size_t i, double t) const {
    return std::visit(
        [&](const auto& s) -> double {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, ConstantSeg>) return s.c;
          else if constexpr (std::is_same_v<T, CubicSeg>) return s.value(t);
          else return s.f(t);
        },
        segs_[i]);
  }

  double seg_deriv(std::size_t i, double t) const {
    return std::visit(
        [&](const auto& s) -> double {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, ConstantSeg>) return 0.0;
          else if constexpr (std::is_same_v<T, CubicSeg>) return s.deriv(t);
          else return s.df(t);
        },
        segs_[i]);
  }

  double seg_integral(std::size_t i, double a, double b) const {
    return std::visit(
        [&](const auto& s) -> double {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, ConstantSeg>) return s.c * (b - a);
          else if constexpr (std::is_same_v<T, CubicSeg>) return s.integral(a, b);
          else {
            // Composite Gauss on spans up to 0.25 keeps smooth segments
            // near machine accuracy.
            const int pieces = std::max(1, static_cast<int>(std::ceil((b - a) / 0.25)));
            double acc = 0.0;
            for (int k = 0; k < pieces; ++k) {
              const double x0 = a + (b - a) * k / pieces;
              const double x1 = a + (b - a) * (k + 1) / pieces;
              acc += detail::gauss16(s.f, x0, x1);
            }
            return acc;
          }
        },
        segs_[i]);
  }

  std::vector<double> bk_;
  std::vector<Segment> segs_;
  std::vector<double> cum_;
};

inline PiecewiseFn constant_fn(double lo, double hi, double c) {
  PiecewiseFn f;
  f.start_at(lo);
  f.append(hi, ConstantSeg{c});
  f.finalize();
  return f;
}

// Copy of f on [lo, hi]; both bounds must already be breakpoints of f.
inline PiecewiseFn restrict_fn(const PiecewiseFn& f, double lo, double hi) {
  const double tol = 1e-9 * std::max(1.0, std::fabs(f.hi()) + std::fabs(f.lo()));
  std::size_t i0 = PiecewiseFn::kNone, i1 = PiecewiseFn::kNone;
  for (std::size_t i = 0; i + 1 <= f.segment_count(); ++i) {
    if (std::fabs(f.breakpoint(i) - lo) <= tol) i0 = i;
    if (std::fabs(f.breakpoint(i + 1) - hi) <= tol) i1 = i + 1;
  }
  if (i0 == PiecewiseFn::kNone || i1 == PiecewiseFn::kNone || i1 <= i0)
    throw SynthesisError("restriction bounds are not breakpoints");
  PiecewiseFn out;
  out.start_at(f.breakpoint(i0));
  for (std::size_t i = i0; i < i1; ++i)
    out.append(f.breakpoint(i + 1), f.segment_at(i));
  out.finalize();
  return out;
}

// Symmetric matrix valued piecewise function: one scalar function per
// upper-triangle entry, all sharing the domain.
struct SymMatrixFn {
  int n = 0;
  std::vector<PiecewiseFn> entries;  // row major upper triangle, size n(n+1)/2

  static std::size_t tri_index(int n, int i, int j) {
    if (i > j) std::swap(i, j);
    return static_cast<std::size_t>(i * n - i * (i - 1) / 2 + (j - i));
  }

  const PiecewiseFn& entry(int i, int j) const { return entries[tri_index(n, i, j)]; }
  PiecewiseFn& entry(int i, int j) { return entries[tri_index(n, i, j)]; }

  Mat value(double t) const {
    Mat m(n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) m(i, j) = m(j, i) = entry(i, j).value(t);
    return m;
  }
  Mat deriv(double t) const {
    Mat m(n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) m(i, j) = m(j, i) = entry(i, j).deriv(t);
    return m;
  }
};

}  // namespace dobs
