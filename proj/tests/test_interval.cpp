#include <doctest.h>

#include <cmath>
#include <random>

#include "cplrnn/interval.hpp"

using namespace cplrnn;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// interval sampler mixing scales, widths, sign placements and point intervals
Interval sample_interval(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  double mag = std::pow(10.0, std::uniform_real_distribution<double>(-3, 3)(rng));
  double c = g(rng) * mag;
  double roll = u01(rng);
  if (roll < 0.1) return Interval::point(c);
  double w = mag * std::pow(10.0, std::uniform_real_distribution<double>(-6, 0.5)(rng));
  if (roll < 0.25) return Interval(-0.3 * w, 0.7 * w);  // straddles zero
  return Interval(c - 0.5 * w, c + 0.5 * w);
}

double sample_in(std::mt19937_64& rng, const Interval& x) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double v = x.lo + u01(rng) * (x.hi - x.lo);
  return std::fmin(std::fmax(v, x.lo), x.hi);
}

}  // namespace

TEST_CASE("basic op endpoint examples") {
  Interval r = add(Interval(1, 2), Interval(3, 4));
  CHECK(r.lo == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(r.hi == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(r.lo <= 4.0);
  CHECK(r.hi >= 6.0);

  Interval m = mul(Interval(-1, 2), Interval(3, 4));
  CHECK(m.lo <= -4.0);
  CHECK(m.hi >= 8.0);
  CHECK(m.lo == doctest::Approx(-4.0));
  CHECK(m.hi == doctest::Approx(8.0));
}

TEST_CASE("extended division splits around an interior zero") {
  // 1 / [-1, 2] -> (-inf, -1] u [0.5, inf)
  IntervalPair q = divide(Interval::point(1.0), Interval(-1.0, 2.0));
  CHECK(!q.first.is_empty());
  CHECK(!q.second.is_empty());
  CHECK(q.first.lo == -kInf);
  CHECK(q.first.hi == doctest::Approx(-1.0));
  CHECK(q.second.lo == doctest::Approx(0.5));
  CHECK(q.second.hi == kInf);
}

TEST_CASE("division by the degenerate zero interval is an error") {
  IntervalError err = IntervalError::none;
  IntervalPair q = divide(Interval(1, 2), Interval::point(0.0), &err);
  CHECK(err == IntervalError::division_by_zero_interval);
  CHECK(q.first.is_empty());
  CHECK(q.second.is_empty());
}

TEST_CASE("EMPTY propagates through every op") {
  Interval e = Interval::empty();
  CHECK(add(e, Interval(1, 2)).is_empty());
  CHECK(sub(Interval(1, 2), e).is_empty());
  CHECK(mul(e, e).is_empty());
  CHECK(interval_exp(e).is_empty());
  CHECK(interval_sin(e).is_empty());
  CHECK(divide(e, Interval(1, 2)).first.is_empty());
}

TEST_CASE("exp endpoints, saturation, and limits") {
  Interval r = interval_exp(Interval(0, 1));
  CHECK(r.lo <= 1.0);
  CHECK(r.hi >= 2.718281828459045);
  CHECK(r.hi == doctest::Approx(2.718281828459045).epsilon(1e-12));

  // reference value from an extended-precision evaluation of exp(700)
  const double exp700 = 1.0142320547350045e304;
  Interval s = interval_exp(Interval(700, 800));
  CHECK(s.lo <= exp700);
  CHECK(s.lo >= exp700 * (1.0 - 1e-12));
  CHECK(s.hi == kInf);

  Interval l = interval_exp(Interval(-kInf, 0.0));
  CHECK(l.lo == 0.0);
  CHECK(l.hi >= 1.0);
  CHECK(l.hi == doctest::Approx(1.0));
}

TEST_CASE("trig four-case behavior") {
  Interval full = interval_sin(Interval(0, 7));  // width past one period
  CHECK(full.lo == -1.0);
  CHECK(full.hi == 1.0);

  Interval mono = interval_sin(Interval(0, 3.14159265358979323846 / 4));
  CHECK(mono.lo <= 0.0);
  CHECK(mono.hi >= 0.7071067811865476);
  CHECK(mono.hi == doctest::Approx(0.7071067811865476).epsilon(1e-12));

  Interval both = interval_cos(Interval(0, 3.14159265358979323846));
  CHECK(both.hi == 1.0);   // max attained at the left endpoint (critical point)
  CHECK(both.lo == -1.0);  // min attained at pi

  // one extremum: sin over [pi/4, 3pi/4] peaks at pi/2
  Interval one = interval_sin(Interval(0.7853981633974483, 2.356194490192345));
  CHECK(one.hi == 1.0);
  CHECK(one.lo <= 0.7071067811865475);
  CHECK(one.lo >= 0.70710678118654);

  // far argument: falls back to the safe enclosure
  Interval far = interval_sin(Interval(2e8, 2e8 + 0.1));
  CHECK(far.lo == -1.0);
  CHECK(far.hi == 1.0);

  // unbounded input
  CHECK(interval_cos(Interval(0, kInf)).lo == -1.0);
}

TEST_CASE("randomized inclusion: add/sub/mul/div") {
  std::mt19937_64 rng(20240811);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  int checks = 2000;
  for (int it = 0; it < checks; ++it) {
    Interval X = sample_interval(rng);
    Interval Y = sample_interval(rng);
    Interval s = add(X, Y), d = sub(X, Y), m = mul(X, Y);
    IntervalPair q = divide(X, Y);
    for (int k = 0; k < 50; ++k) {
      double x = sample_in(rng, X), y = sample_in(rng, Y);
      CHECK(s.contains(x + y));
      CHECK(d.contains(x - y));
      CHECK(m.contains(x * y));
      double quot = x / y;
      if (!std::isnan(quot))
        CHECK((q.first.contains(quot) || q.second.contains(quot)));
    }
  }
}

TEST_CASE("randomized inclusion: exp") {
  std::mt19937_64 rng(20240812);
  for (int it = 0; it < 2000; ++it) {
    Interval X = sample_interval(rng);
    Interval r = interval_exp(X);
    for (int k = 0; k < 50; ++k) {
      double x = sample_in(rng, X);
      CHECK(r.contains(std::exp(x)));
    }
  }
}

TEST_CASE("randomized inclusion and range tightness: trig") {
  std::mt19937_64 rng(20240813);
  std::uniform_real_distribution<double> uc(-20.0, 20.0);
  std::uniform_real_distribution<double> uw(0.0, 4.0 * 3.14159265358979323846);
  for (int it = 0; it < 1500; ++it) {
    double c = uc(rng), w = uw(rng);
    Interval X(c - 0.5 * w, c + 0.5 * w);
    Interval s = interval_sin(X), co = interval_cos(X);
    double smax = -2, smin = 2, cmax = -2, cmin = 2;
    for (int k = 0; k <= 2000; ++k) {
      double x = X.lo + (X.hi - X.lo) * k / 2000.0;
      x = std::fmin(std::fmax(x, X.lo), X.hi);
      double sv = std::sin(x), cv = std::cos(x);
      smax = std::fmax(smax, sv);
      smin = std::fmin(smin, sv);
      cmax = std::fmax(cmax, cv);
      cmin = std::fmin(cmin, cv);
      CHECK(s.contains(sv));
      CHECK(co.contains(cv));
    }
    // enclosure of the dense-sampled range, and never wider than [-1,1]
    CHECK(s.lo <= smin);
    CHECK(s.hi >= smax);
    CHECK(s.lo >= -1.0);
    CHECK(s.hi <= 1.0);
    CHECK(co.lo <= cmin);
    CHECK(co.hi >= cmax);
  }
}

TEST_CASE("interval helpers: hull, intersect, interiority") {
  Interval a(0, 1), b(2, 3);
  CHECK(hull(a, b).lo == 0.0);
  CHECK(hull(a, b).hi == 3.0);
  CHECK(intersect(a, b).is_empty());
  CHECK(intersect(Interval(0, 2), Interval(1, 3)).lo == 1.0);
  CHECK(Interval(0.2, 0.8).inside_interior_of(Interval(0, 1)));
  CHECK(!Interval(0.0, 0.8).inside_interior_of(Interval(0, 1)));
  CHECK(Interval::empty().inside_interior_of(Interval(0, 1)));
}
