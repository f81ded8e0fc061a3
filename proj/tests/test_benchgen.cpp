#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "cplrnn/benchgen.hpp"

using namespace cplrnn;
using Eigen::Vector3d;

namespace {

constexpr double kSqrt72 = 8.48528137423857;
constexpr double kLifIsi = 0.0080471895621705;  // tau * ln 5 at defaults

Dataset ramp_series(int n) {
  Dataset ds;
  ds.times.setLinSpaced(n, 0.0, n - 1.0);
  ds.values.resize(n, 1);
  for (int i = 0; i < n; ++i) ds.values(i, 0) = i + 1.0;
  ds.meta.regular = true;
  return ds;
}

}  // namespace

TEST_CASE("convection field vanishes exactly at its equilibria") {
  const double s = 10.0, r = 28.0, b = 8.0 / 3.0;
  CHECK(lorenz_rhs(Vector3d::Zero(), s, r, b).norm() == 0.0);
  for (double sign : {1.0, -1.0}) {
    const Vector3d eq(sign * kSqrt72, sign * kSqrt72, 27.0);
    CHECK(lorenz_rhs(eq, s, r, b).norm() <= 1e-12);
  }
}

TEST_CASE("one integrator step matches an externally computed value") {
  // Frozen from an independent fourth-order Runge-Kutta implementation.
  const Vector3d z =
      lorenz_step(Vector3d(1.0, 1.0, 1.0), 0.01, 10.0, 28.0, 8.0 / 3.0);
  CHECK(z(0) == doctest::Approx(1.0125671910736112).epsilon(1e-14));
  CHECK(z(1) == doctest::Approx(1.2599177989452743).epsilon(1e-14));
  CHECK(z(2) == doctest::Approx(0.9848909717916053).epsilon(1e-14));
}

TEST_CASE("integrator converges at fourth order") {
  const double s = 10.0, r = 28.0, b = 8.0 / 3.0;
  const Vector3d z0(1.0, 1.0, 1.0);

  // One unit of time at internal steps 1e-3 and 5e-4.
  Vector3d a = z0, c = z0;
  for (int i = 0; i < 1000; ++i) a = lorenz_step(a, 1e-3, s, r, b);
  for (int i = 0; i < 2000; ++i) c = lorenz_step(c, 5e-4, s, r, b);
  CHECK((a - c).norm() / c.norm() < 1e-6);

  // Error against a near-exact reference shrinks ~16x when h halves.
  Vector3d ref = z0;
  for (int i = 0; i < 3200; ++i) ref = lorenz_step(ref, 0.04 / 3200, s, r, b);
  Vector3d full = lorenz_step(z0, 0.04, s, r, b);
  Vector3d halves = lorenz_step(z0, 0.02, s, r, b);
  halves = lorenz_step(halves, 0.02, s, r, b);
  const double e1 = (full - ref).norm();
  const double e2 = (halves - ref).norm();
  CHECK(e1 / e2 > 10.0);
  CHECK(e1 / e2 < 24.0);
}

TEST_CASE("subcritical drive collapses to the origin") {
  LorenzParams p;
  p.rho = 0.5;
  p.samples = 2001;  // 20 time units
  p.transient = 0;
  const Dataset ds = gen_lorenz(p);
  CHECK(ds.values.bottomRows(1).norm() < 1e-3);
}

TEST_CASE("emitted samples compose the internal steps exactly") {
  LorenzParams p;
  p.samples = 3;
  p.transient = 0;
  const Dataset ds = gen_lorenz(p);

  Vector3d z(1.0, 1.0, 1.0);
  CHECK(ds.values.row(0).transpose() == z);
  for (int n = 1; n < 3; ++n) {
    for (int s = 0; s < 10; ++s)
      z = lorenz_step(z, 1e-3, p.sigma, p.rho, p.beta);
    CHECK(ds.values.row(n).transpose() == z);
  }
  // Sampling step times the default rescaling gives unit spacing.
  CHECK(ds.times(0) == 0.0);
  CHECK(ds.times(1) == 1.0);
  CHECK(ds.times(2) == 2.0);
  CHECK(ds.meta.regular);
  CHECK(ds.meta.generator == "lorenz63");
}

TEST_CASE("default chaotic run stays inside the expected envelope") {
  const Dataset ds = gen_lorenz();
  REQUIRE(ds.T() == 100000);
  CHECK(ds.values.col(2).cwiseAbs().maxCoeff() < 60.0);
  CHECK(ds.values.col(2).maxCoeff() > 25.0);  // genuinely on the attractor
  CHECK(ds.values.col(0).cwiseAbs().maxCoeff() < 25.0);
  ds.validate();
}

TEST_CASE("integrator blowup is reported, not emitted") {
  LorenzParams p;
  p.dt = 10.0;  // far past the stability limit
  p.samples = 50;
  p.transient = 0;
  CHECK_THROWS_AS(gen_lorenz(p), Error);
  LorenzParams bad;
  bad.dt = -1.0;
  CHECK_THROWS_AS(gen_lorenz(bad), Error);
}

TEST_CASE("neuron spikes at the analytic interval") {
  const Dataset ds = gen_lif();
  REQUIRE(ds.meta.events.size() > 10);
  CHECK(ds.meta.events.front() == doctest::Approx(kLifIsi).epsilon(1e-14));
  for (std::size_t k = 1; k < ds.meta.events.size(); ++k)
    CHECK(ds.meta.events[k] - ds.meta.events[k - 1] ==
          doctest::Approx(kLifIsi).epsilon(1e-12));

  // Samples never exceed threshold, and hit it exactly once per spike.
  int markers = 0;
  for (int n = 0; n < ds.T(); ++n) {
    CHECK(ds.values(n, 0) <= 1.0);
    if (ds.values(n, 0) == 1.0) ++markers;
  }
  CHECK(markers == static_cast<int>(ds.meta.events.size()));

  // The sample after each marker shows the reset.
  for (int n = 1; n + 1 < ds.T(); ++n)
    if (ds.values(n, 0) == 1.0) CHECK(ds.values(n + 1, 0) < 0.1);

  CHECK(ds.meta.params.at("dt") == 1.6e-4);
  CHECK(ds.meta.params.count("subthreshold") == 0);
  ds.validate();
}

TEST_CASE("membrane potential follows the closed form exactly") {
  LifParams p;
  p.dt = 1e-3;
  p.samples = 5;
  const Dataset ds = gen_lif(p);
  // Frozen from an independent evaluation of R*I*(1 - e^{-t/tau}).
  CHECK(ds.values(1, 0) == doctest::Approx(0.22658655865252272).epsilon(1e-15));
  CHECK(ds.values(0, 0) == 0.0);
}

TEST_CASE("subthreshold drive decays to its asymptote without spiking") {
  LifParams p;
  p.I = 0.1;  // R*I = 0.5 below threshold
  const Dataset ds = gen_lif(p);
  CHECK(ds.meta.events.empty());
  CHECK(ds.meta.params.count("subthreshold") == 1);
  CHECK(ds.values(ds.T() - 1, 0) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(ds.values.maxCoeff() < 0.6);
  for (int n = 1; n < ds.T(); ++n)
    CHECK(ds.values(n, 0) > ds.values(n - 1, 0));  // monotone approach
}

TEST_CASE("degenerate neuron configurations are refused") {
  LifParams same;
  same.V_reset = 1.0;  // equals threshold
  CHECK_THROWS_AS(gen_lif(same), Error);
  LifParams coarse;
  coarse.dt = 0.01;  // longer than the inter-spike interval
  CHECK_THROWS_AS(gen_lif(coarse), Error);
  LifParams bad;
  bad.R = 0.0;
  CHECK_THROWS_AS(gen_lif(bad), Error);
}

TEST_CASE("irregular subsampling keeps endpoints and order") {
  LorenzParams p;
  p.samples = 1000;
  p.transient = 100;
  const Dataset full = gen_lorenz(p);

  std::mt19937_64 rng(42);
  const Dataset sub = subsample_irregular(full, 0.1, rng);
  REQUIRE(sub.T() == 100);
  CHECK(sub.times(0) == full.times(0));
  CHECK(sub.times(99) == full.times(999));
  CHECK_FALSE(sub.meta.regular);
  CHECK(sub.meta.params.at("subsample_fraction") == 0.1);
  sub.validate();  // strictly increasing times

  // Every kept sample is one of the originals, values included.
  std::set<double> original(full.times.data(),
                            full.times.data() + full.times.size());
  for (int r = 0; r < sub.T(); ++r)
    CHECK(original.count(sub.times(r)) == 1);

  // Same seed reproduces the subset; a different seed (almost surely) not.
  std::mt19937_64 rng_b(42), rng_c(7);
  const Dataset again = subsample_irregular(full, 0.1, rng_b);
  CHECK(again.times == sub.times);
  const Dataset other = subsample_irregular(full, 0.1, rng_c);
  CHECK(other.times != sub.times);
}

TEST_CASE("subsampling edge fractions") {
  const Dataset ds = ramp_series(50);
  std::mt19937_64 rng(1);

  const Dataset all = subsample_irregular(ds, 1.0, rng);
  CHECK(all.T() == 50);
  CHECK(all.meta.regular);  // identity keeps the flag
  CHECK(all.values == ds.values);

  const Dataset two = subsample_irregular(ds, 0.001, rng);
  CHECK(two.T() == 2);
  CHECK(two.values(0, 0) == 1.0);
  CHECK(two.values(1, 0) == 50.0);

  CHECK_THROWS_AS(subsample_irregular(ds, 0.0, rng), Error);
  CHECK_THROWS_AS(subsample_irregular(ds, 1.2, rng), Error);
}

TEST_CASE("delay embedding matches the hand construction") {
  const Dataset ds = ramp_series(4);  // values 1,2,3,4
  const Dataset emb = delay_embed(ds, 2, 1);
  REQUIRE(emb.T() == 3);
  REQUIRE(emb.N() == 2);
  CHECK(emb.values(0, 0) == 2.0);
  CHECK(emb.values(0, 1) == 1.0);
  CHECK(emb.values(1, 0) == 3.0);
  CHECK(emb.values(1, 1) == 2.0);
  CHECK(emb.values(2, 0) == 4.0);
  CHECK(emb.values(2, 1) == 3.0);
  CHECK(emb.times(0) == ds.times(1));
  CHECK(emb.times(2) == ds.times(3));
}

TEST_CASE("delay embedding defaults and identity") {
  const Dataset ds = ramp_series(100);
  const Dataset emb = delay_embed(ds);  // dim 6, lag 13
  REQUIRE(emb.T() == 35);
  REQUIRE(emb.N() == 6);
  // Row 0 reaches back through the full history: x_65, x_52, ..., x_0.
  for (int j = 0; j < 6; ++j)
    CHECK(emb.values(0, j) == ds.values(65 - 13 * j, 0));
  CHECK(emb.meta.params.at("embed_dim") == 6.0);

  const Dataset same = delay_embed(ds, 1, 13);
  CHECK(same.T() == 100);
  CHECK(same.values.col(0) == ds.values.col(0));
}

TEST_CASE("delay embedding input guards") {
  Dataset irregular = ramp_series(100);
  irregular.meta.regular = false;
  CHECK_THROWS_AS(delay_embed(irregular, 2, 1), Error);

  const Dataset short_series = ramp_series(65);
  CHECK_THROWS_AS(delay_embed(short_series, 6, 13), Error);  // needs > 65

  Dataset wide = ramp_series(100);
  wide.values = Eigen::MatrixXd::Zero(100, 2);
  CHECK_THROWS_AS(delay_embed(wide, 2, 1), Error);

  CHECK_THROWS_AS(delay_embed(ramp_series(10), 0, 1), Error);
}
