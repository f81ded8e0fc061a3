#pragma once

#include <cmath>
#include <limits>

namespace cplrnn {

// Closed interval [lo, hi] with outward-rounded endpoints.  The empty set is
// encoded as [+inf, -inf] (lo > hi); infinite endpoints are legal and mean the
// set is unbounded on that side.  All operations return supersets of the true
// image; NaNs arising from indeterminate endpoint arithmetic (inf - inf and
// friends) widen to the safe enclosure instead of escaping.
struct Interval {
  double lo;
  double hi;

  Interval() : lo(0.0), hi(0.0) {}
  Interval(double a, double b) : lo(a), hi(b) {}

  static Interval empty() {
    return Interval(std::numeric_limits<double>::infinity(),
                    -std::numeric_limits<double>::infinity());
  }
  static Interval whole() {
    return Interval(-std::numeric_limits<double>::infinity(),
                    std::numeric_limits<double>::infinity());
  }
  static Interval point(double x) { return Interval(x, x); }

  bool is_empty() const { return !(lo <= hi); }
  double width() const { return is_empty() ? 0.0 : hi - lo; }
  double mid() const {
    // midpoint clamped to a finite representative for half-unbounded sets
    if (std::isinf(lo) && std::isinf(hi)) return 0.0;
    if (std::isinf(lo)) return hi - 1.0;
    if (std::isinf(hi)) return lo + 1.0;
    double m = 0.5 * (lo + hi);
    if (!std::isfinite(m)) m = 0.5 * lo + 0.5 * hi;
    return m;
  }
  bool contains(double x) const { return lo <= x && x <= hi; }
  bool contains_zero() const { return lo <= 0.0 && 0.0 <= hi; }
  // strict subset of the interior, the interval-Newton uniqueness test
  bool inside_interior_of(const Interval& o) const {
    if (is_empty()) return true;
    return o.lo < lo && hi < o.hi;
  }
};

// one representable step outward per endpoint; infinities stay put
inline double step_down(double x) {
  if (std::isnan(x)) return -std::numeric_limits<double>::infinity();
  if (std::isinf(x)) return x;
  return std::nextafter(x, -std::numeric_limits<double>::infinity());
}
inline double step_up(double x) {
  if (std::isnan(x)) return std::numeric_limits<double>::infinity();
  if (std::isinf(x)) return x;
  return std::nextafter(x, std::numeric_limits<double>::infinity());
}
// two steps, for libm results whose error can reach 1 ulp
inline double step_down2(double x) { return step_down(step_down(x)); }
inline double step_up2(double x) { return step_up(step_up(x)); }

inline Interval outward(double lo, double hi) {
  if (std::isnan(lo) || std::isnan(hi)) return Interval::whole();
  return Interval(step_down(lo), step_up(hi));
}

inline Interval hull(const Interval& a, const Interval& b) {
  if (a.is_empty()) return b;
  if (b.is_empty()) return a;
  return Interval(std::fmin(a.lo, b.lo), std::fmax(a.hi, b.hi));
}

inline Interval intersect(const Interval& a, const Interval& b) {
  if (a.is_empty() || b.is_empty()) return Interval::empty();
  double lo = std::fmax(a.lo, b.lo);
  double hi = std::fmin(a.hi, b.hi);
  if (lo > hi) return Interval::empty();
  return Interval(lo, hi);
}

inline Interval add(const Interval& a, const Interval& b) {
  if (a.is_empty() || b.is_empty()) return Interval::empty();
  return outward(a.lo + b.lo, a.hi + b.hi);
}

inline Interval sub(const Interval& a, const Interval& b) {
  if (a.is_empty() || b.is_empty()) return Interval::empty();
  return outward(a.lo - b.hi, a.hi - b.lo);
}

inline Interval neg(const Interval& a) {
  if (a.is_empty()) return a;
  return Interval(-a.hi, -a.lo);
}

namespace detail {
// endpoint product with the interval convention 0 * inf = 0
inline double iprod(double a, double b) {
  if (a == 0.0 || b == 0.0) return 0.0;
  return a * b;
}
}  // namespace detail

inline Interval mul(const Interval& a, const Interval& b) {
  if (a.is_empty() || b.is_empty()) return Interval::empty();
  double p1 = detail::iprod(a.lo, b.lo);
  double p2 = detail::iprod(a.lo, b.hi);
  double p3 = detail::iprod(a.hi, b.lo);
  double p4 = detail::iprod(a.hi, b.hi);
  return outward(std::fmin(std::fmin(p1, p2), std::fmin(p3, p4)),
                 std::fmax(std::fmax(p1, p2), std::fmax(p3, p4)));
}

// X * c for scalar c
inline Interval scale(const Interval& a, double c) {
  if (a.is_empty()) return a;
  if (c == 0.0) return Interval(0.0, 0.0);
  if (c > 0.0) return outward(detail::iprod(a.lo, c), detail::iprod(a.hi, c));
  return outward(detail::iprod(a.hi, c), detail::iprod(a.lo, c));
}

// X + c
inline Interval shift(const Interval& a, double c) {
  if (a.is_empty()) return a;
  return outward(a.lo + c, a.hi + c);
}

enum class IntervalError {
  none,
  division_by_zero_interval,  // divisor is exactly [0,0]
  too_wide,                   // solution-bound request wider than the cap
};

// Result of extended division: one or two intervals (second empty when the
// quotient set is connected).  A divisor straddling zero yields the two
// unbounded pieces.
struct IntervalPair {
  Interval first;
  Interval second;
  IntervalPair() : first(Interval::empty()), second(Interval::empty()) {}
  IntervalPair(const Interval& a) : first(a), second(Interval::empty()) {}
  IntervalPair(const Interval& a, const Interval& b) : first(a), second(b) {}
};

inline IntervalPair divide(const Interval& x, const Interval& y,
                           IntervalError* err = nullptr) {
  if (err) *err = IntervalError::none;
  if (x.is_empty() || y.is_empty()) return IntervalPair();
  const double inf = std::numeric_limits<double>::infinity();
  if (y.lo == 0.0 && y.hi == 0.0) {
    if (err) *err = IntervalError::division_by_zero_interval;
    return IntervalPair();
  }
  if (y.lo > 0.0 || y.hi < 0.0) {  // 0 not in Y: ordinary quotient
    double q1 = x.lo / y.lo, q2 = x.lo / y.hi, q3 = x.hi / y.lo, q4 = x.hi / y.hi;
    return IntervalPair(outward(std::fmin(std::fmin(q1, q2), std::fmin(q3, q4)),
                                std::fmax(std::fmax(q1, q2), std::fmax(q3, q4))));
  }
  // 0 in Y
  if (x.contains_zero()) return IntervalPair(Interval::whole());
  if (y.lo == 0.0) {  // Y = [0, d], d > 0
    if (x.lo > 0.0) return IntervalPair(Interval(step_down(x.lo / y.hi), inf));
    return IntervalPair(Interval(-inf, step_up(x.hi / y.hi)));
  }
  if (y.hi == 0.0) {  // Y = [c, 0], c < 0
    if (x.lo > 0.0) return IntervalPair(Interval(-inf, step_up(x.lo / y.lo)));
    return IntervalPair(Interval(step_down(x.hi / y.lo), inf));
  }
  // c < 0 < d: two unbounded pieces, ordered low piece first
  if (x.lo > 0.0)
    return IntervalPair(Interval(-inf, step_up(x.lo / y.lo)),
                        Interval(step_down(x.lo / y.hi), inf));
  return IntervalPair(Interval(-inf, step_up(x.hi / y.hi)),
                      Interval(step_down(x.hi / y.lo), inf));
}

// exp is monotone: endpoints only; overflow saturates to +inf, never wraps
inline Interval interval_exp(const Interval& x) {
  if (x.is_empty()) return x;
  double lo = std::isinf(x.lo) && x.lo < 0 ? 0.0 : step_down2(std::exp(x.lo));
  if (lo < 0.0) lo = 0.0;
  double hi;
  if (std::isinf(x.hi))
    hi = std::numeric_limits<double>::infinity();
  else {
    hi = std::exp(x.hi);
    hi = std::isinf(hi) ? hi : step_up2(hi);
  }
  return Interval(lo, hi);
}

namespace detail {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 6.28318530717958647692;
// beyond this magnitude the critical-point enumeration is not trusted and the
// safe enclosure [-1,1] is returned
constexpr double kTrigArgLimit = 1e8;

// Shared four-case range analysis for sin/cos.  Critical points sit at
// offset + k*pi; even k gives a maximum (+1), odd k a minimum (-1).
template <typename F>
inline Interval trig_range(const Interval& x, double offset, F&& fn) {
  if (x.is_empty()) return x;
  if (std::isinf(x.lo) || std::isinf(x.hi) ||
      std::fabs(x.lo) > kTrigArgLimit || std::fabs(x.hi) > kTrigArgLimit)
    return Interval(-1.0, 1.0);
  if (x.width() >= kTwoPi) return Interval(-1.0, 1.0);  // full period: case 1

  // enumerate candidate critical indices, widened by one on each side and
  // accepted with slack so representation error can only widen the result
  double slack = 64.0 * std::numeric_limits<double>::epsilon() *
                 std::fmax(1.0, std::fmax(std::fabs(x.lo), std::fabs(x.hi)));
  long k_min = (long)std::ceil((x.lo - offset) / kPi) - 1;
  long k_max = (long)std::floor((x.hi - offset) / kPi) + 1;
  bool has_max = false, has_min = false;
  for (long k = k_min; k <= k_max; ++k) {
    double xk = offset + (double)k * kPi;
    if (xk >= x.lo - slack && xk <= x.hi + slack) {
      if ((k % 2 + 2) % 2 == 0)
        has_max = true;
      else
        has_min = true;
    }
  }
  if (has_max && has_min) return Interval(-1.0, 1.0);  // case 2

  double f_lo = fn(x.lo), f_hi = fn(x.hi);
  double lo = std::fmin(f_lo, f_hi), hi = std::fmax(f_lo, f_hi);
  if (has_max) hi = 1.0;  // case 3: one extremum joins the endpoint values
  if (has_min) lo = -1.0;
  lo = has_min ? lo : step_down2(lo);  // exact +-1 needs no rounding guard
  hi = has_max ? hi : step_up2(hi);
  return Interval(std::fmax(lo, -1.0), std::fmin(hi, 1.0));  // case 4 result
}

}  // namespace detail

inline Interval interval_sin(const Interval& x) {
  return detail::trig_range(x, detail::kPi / 2.0,
                            [](double t) { return std::sin(t); });
}

inline Interval interval_cos(const Interval& x) {
  return detail::trig_range(x, 0.0, [](double t) { return std::cos(t); });
}

}  // namespace cplrnn
