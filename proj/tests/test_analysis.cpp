#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "cplrnn/analysis.hpp"
#include "cplrnn/event_solver.hpp"
#include "doctest.h"

using namespace cplrnn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Planar relu oscillator: the active region (z2 > 0) is an unstable focus,
// the inactive side pairs a slow expansion with a strong contraction; the two
// glue into a stable limit cycle crossing z2 = 0 twice per turn.
ModelParams planar_oscillator() {
  ModelParams p;
  p.M = 2;
  p.P = 1;
  p.N = 2;
  p.A = (VectorXd(2) << -0.3, -3.0).finished();
  p.W = (MatrixXd(2, 2) << 0.5, -2.0, 2.0, 3.2).finished();
  p.h = (VectorXd(2) << 2.0, -0.2).finished();
  p.version = 1;
  return p;
}

ModelParams scalar_model(double a, double w, double h) {
  ModelParams p;
  p.M = 1;
  p.P = 0;
  p.N = 1;
  p.A = VectorXd::Constant(1, a);
  p.W = MatrixXd::Constant(1, 1, w);
  p.h = VectorXd::Constant(1, h);
  p.version = 2;
  return p;
}

bool contains_point(const std::vector<FixedPoint>& fps, RegionIndex region,
                    const VectorXd& z, double tol) {
  for (const FixedPoint& fp : fps)
    if (fp.region == region && (fp.z_star - z).lpNorm<Eigen::Infinity>() < tol) return true;
  return false;
}

}  // namespace

TEST_CASE("scalar model equilibrium is the direct solve") {
  ModelParams p = scalar_model(-1.0, 0.0, 2.0);
  FixedPoint fp = candidate_fixed_point(p, 0);
  CHECK(fp.z_star(0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(fp.is_real);
  CHECK(fp.kind == FixedPointKind::stable_node);
  REQUIRE(fp.eigenvalues.size() == 1);
  CHECK(fp.eigenvalues(0).real() == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(fp.eigenvalues(0).imag() == 0.0);

  std::mt19937_64 rng(3);
  auto found = find_fixed_points(p, {}, rng);
  REQUIRE(found.size() == 1);
  CHECK(found[0].z_star(0) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("virtual candidate's sign pattern names the real region") {
  // Off region: z* = 3 > 0, contradicting the off sign pattern -> virtual.
  // On region: (-1 - 2) z = -3 -> z* = 1 > 0, consistent -> real.
  ModelParams p = scalar_model(-1.0, -2.0, 3.0);
  p.P = 1;
  p.version = 3;

  FixedPoint off = candidate_fixed_point(p, 0);
  CHECK_FALSE(off.is_real);
  CHECK(off.z_star(0) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(region_of(p, off.z_star) == 1);

  FixedPoint on = candidate_fixed_point(p, 1);
  CHECK(on.is_real);
  CHECK(on.z_star(0) == doctest::Approx(1.0).epsilon(1e-14));

  std::mt19937_64 rng(4);
  auto found = find_fixed_points(p, {}, rng);
  REQUIRE(found.size() == 1);
  CHECK(found[0].region == 1);

  // One hop suffices even when every chain gets a single solve per restart.
  std::mt19937_64 rng2(5);
  SearchBudget tight;
  tight.max_iters = 1;
  tight.restarts = 50;
  auto direct = find_fixed_points(p, tight, rng2);
  REQUIRE(direct.size() == 1);
  CHECK(direct[0].region == 1);
}

TEST_CASE("fully rectified two-unit model: one real point among four candidates") {
  ModelParams p;
  p.M = 2;
  p.P = 2;
  p.N = 1;
  p.A = (VectorXd(2) << -1.0, -1.0).finished();
  p.W = (MatrixXd(2, 2) << -0.5, 0.2, 0.1, -0.4).finished();
  p.h = (VectorXd(2) << 1.2, 0.9).finished();
  p.version = 4;

  // Independent enumeration: per region solve (diag(A) + W D) z = -h with a
  // different factorization and check the sign pattern by hand.
  int real_count = 0;
  RegionIndex real_region = 0;
  VectorXd real_z;
  for (RegionIndex k = 0; k < 4; ++k) {
    MatrixXd D = MatrixXd::Zero(2, 2);
    D(0, 0) = (k & 1u) ? 1.0 : 0.0;
    D(1, 1) = (k & 2u) ? 1.0 : 0.0;
    MatrixXd Wr = p.A.asDiagonal().toDenseMatrix() + p.W * D;
    VectorXd z = Wr.colPivHouseholderQr().solve(-p.h);
    bool real = ((z(0) > 0.0) == bool(k & 1u)) && ((z(1) > 0.0) == bool(k & 2u));
    if (real) {
      ++real_count;
      real_region = k;
      real_z = z;
    }
  }
  REQUIRE(real_count == 1);
  CHECK(real_region == 3);
  CHECK(real_z(0) == doctest::Approx(1.86 / 2.08).epsilon(1e-12));
  CHECK(real_z(1) == doctest::Approx(1.47 / 2.08).epsilon(1e-12));

  for (RegionIndex k = 0; k < 4; ++k)
    CHECK(candidate_fixed_point(p, k).is_real == (k == real_region));

  std::mt19937_64 rng(6);
  auto found = find_fixed_points(p, {}, rng);
  REQUIRE(found.size() == 1);
  CHECK(found[0].region == real_region);
  CHECK((found[0].z_star - real_z).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(found[0].kind == FixedPointKind::stable_node);
}

TEST_CASE("heuristic search matches exhaustive enumeration on random models") {
  std::mt19937_64 rng(77);
  int total_real = 0;
  for (int t = 0; t < 60; ++t) {
    int M = 3 + (int)(rng() % 4);
    int P = (int)(rng() % (std::uint64_t)(std::min(M, 4) + 1));
    ModelParams p = init_params(M, P, 1, rng);
    std::normal_distribution<double> nh(0.0, 1.0);
    for (int i = 0; i < M; ++i) p.h(i) = nh(rng);
    p.version = 100 + t;

    auto exhaustive = enumerate_fixed_points(p);
    auto heuristic = find_fixed_points(p, {}, rng);
    REQUIRE(heuristic.size() == exhaustive.size());
    for (const FixedPoint& fp : exhaustive) {
      CHECK(contains_point(heuristic, fp.region, fp.z_star,
                           1e-9 * (1.0 + fp.z_star.lpNorm<Eigen::Infinity>())));
      // Independent residual check through the activation form of the field.
      double res = vector_field(p, fp.z_star).norm();
      CHECK(res < 1e-8 * (1.0 + fp.z_star.norm()));
      ++total_real;
    }
  }
  CHECK(total_real > 30);  // the sweep actually exercised real points
}

TEST_CASE("fixed point kinds classify by spectrum") {
  ModelParams p = planar_oscillator();
  FixedPoint saddle = candidate_fixed_point(p, 0);
  CHECK(saddle.is_real);
  CHECK(saddle.kind == FixedPointKind::saddle);
  CHECK(saddle.z_star(0) == doctest::Approx(-10.0).epsilon(1e-12));
  CHECK(saddle.z_star(1) == doctest::Approx(-101.0 / 15.0).epsilon(1e-12));

  FixedPoint spiral = candidate_fixed_point(p, 1);
  CHECK(spiral.is_real);
  CHECK(spiral.kind == FixedPointKind::unstable_spiral);
  CHECK(std::abs(spiral.z_star(0)) < 1e-12);
  CHECK(spiral.z_star(1) == doctest::Approx(1.0).epsilon(1e-12));

  // Pure rotation plus offset: eigenvalues +-i, marginal center.
  ModelParams c;
  c.M = 2;
  c.P = 0;
  c.N = 1;
  c.A = VectorXd::Zero(2);
  c.W = (MatrixXd(2, 2) << 0.0, -1.0, 1.0, 0.0).finished();
  c.h = (VectorXd(2) << 1.0, 1.0).finished();
  c.version = 7;
  FixedPoint center = candidate_fixed_point(c, 0);
  CHECK(center.kind == FixedPointKind::center_marginal);
  CHECK(center.z_star(0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(center.z_star(1) == doctest::Approx(1.0).epsilon(1e-12));

  // Damped rotation: stable spiral.
  c.A = VectorXd::Constant(2, -0.1);
  c.version = 8;
  CHECK(candidate_fixed_point(c, 0).kind == FixedPointKind::stable_spiral);

  // Positive diagonal, no rotation: unstable node.
  ModelParams u = scalar_model(0.5, 0.0, -1.0);
  u.version = 9;
  CHECK(candidate_fixed_point(u, 0).kind == FixedPointKind::unstable_node);

  // Zero dynamics matrix cannot host an equilibrium solve.
  ModelParams s = scalar_model(0.0, 0.0, 1.0);
  s.version = 10;
  CHECK_THROWS_AS(candidate_fixed_point(s, 0), Error);
  CHECK_THROWS_AS(candidate_fixed_point(p, 2), Error);  // region out of range
}

TEST_CASE("crossing dims derive from the region sequence") {
  ModelParams p = planar_oscillator();
  auto dims = crossing_dims(p, {0u, 1u});
  REQUIRE(dims.size() == 2);
  CHECK(dims[0] == 2);
  CHECK(dims[1] == 2);

  CHECK_THROWS_AS(crossing_dims(p, {0u}), Error);  // self-pair: no flipped bit

  ModelParams q;
  q.M = 2;
  q.P = 2;
  q.N = 1;
  q.A = VectorXd::Constant(2, -1.0);
  q.W = MatrixXd::Zero(2, 2);
  q.h = VectorXd::Zero(2);
  q.version = 11;
  CHECK_THROWS_AS(crossing_dims(q, {0u, 3u}), Error);  // two bits flip at once
  auto gray = crossing_dims(q, {0u, 1u, 3u, 2u});
  REQUIRE(gray.size() == 4);
  CHECK(gray[0] == 1);
  CHECK(gray[1] == 2);
  CHECK(gray[2] == 1);
  CHECK(gray[3] == 2);
}

TEST_CASE("anchor embeds the free coordinates around the pinned one") {
  CycleSolution cyc;
  cyc.dims = {4, 3};  // closing crossing pins coordinate 3
  cyc.y = (VectorXd(3) << 7.0, 8.0, 9.0).finished();
  VectorXd z = cyc.anchor(4);
  CHECK(z(0) == 7.0);
  CHECK(z(1) == 8.0);
  CHECK(z(2) == 0.0);
  CHECK(z(3) == 9.0);
}

TEST_CASE("planar oscillator limit cycle against simulation oracles") {
  ModelParams p = planar_oscillator();
  VectorXd z0 = (VectorXd(2) << 0.5, 1.5).finished();
  std::vector<double> times;
  for (int i = 0; i <= 1600; ++i) times.push_back(i * 0.05);
  SolveLimits lim;
  lim.record_segments = false;
  Trajectory tr = solve_trajectory(p, z0, times, lim);
  REQUIRE_FALSE(tr.truncated);
  REQUIRE(tr.events.size() > 10);

  // Independent period oracle: successive section returns of the long run.
  std::vector<double> ups;
  for (const SwitchEvent& e : tr.events)
    if (e.region_after == 1) ups.push_back(e.t_abs);
  REQUIRE(ups.size() >= 4);
  const double period_oracle = ups[ups.size() - 1] - ups[ups.size() - 2];
  const double period_prev = ups[ups.size() - 2] - ups[ups.size() - 3];
  CHECK(std::abs(period_oracle - period_prev) < 1e-9);  // transient fully decayed

  // The repeated down/up pattern must yield exactly one deduplicated guess.
  auto guesses = propose_itineraries(p, tr);
  REQUIRE(guesses.size() == 1);
  REQUIRE(guesses[0].regions.size() == 2);
  CHECK(guesses[0].T0.size() == 2);

  ErrorCode why = ErrorCode::bad_config;
  auto cyc = find_limit_cycle(p, guesses[0].regions, guesses[0].y0, guesses[0].T0, {}, nullptr,
                              &why);
  REQUIRE(cyc.has_value());

  CHECK(std::abs(cyc->period - period_oracle) <= 1e-6 * period_oracle);
  CHECK(cyc->flight_times.size() == 2);
  CHECK(cyc->flight_times[0] > 0.0);
  CHECK(cyc->flight_times[1] > 0.0);
  CHECK(cyc->period ==
        doctest::Approx(cyc->flight_times[0] + cyc->flight_times[1]).epsilon(1e-14));
  CHECK(cyc->dims == std::vector<int>{2, 2});

  // Flow-direction multiplier within 1e-6 of one; the other strictly inside.
  REQUIRE(cyc->multipliers.size() == 2);
  int trivial = std::abs(cyc->multipliers(0) - std::complex<double>(1.0, 0.0)) <
                        std::abs(cyc->multipliers(1) - std::complex<double>(1.0, 0.0))
                    ? 0
                    : 1;
  const double mu = cyc->multipliers(1 - trivial).real();
  CHECK(std::abs(cyc->multipliers(trivial) - std::complex<double>(1.0, 0.0)) <= 1e-6);
  CHECK(std::abs(cyc->multipliers(1 - trivial)) < 1.0);
  CHECK(cyc->stable);

  // Liouville identity: the multiplier product equals the exponential of the
  // time-integrated divergence along the itinerary.
  double div_integral = 0.0;
  for (std::size_t i = 0; i < cyc->regions.size(); ++i)
    div_integral += region_matrix(p, cyc->regions[i]).trace() * cyc->flight_times[i];
  std::complex<double> mu_prod = cyc->multipliers(0) * cyc->multipliers(1);
  CHECK(std::abs(mu_prod - std::exp(div_integral)) <= 1e-9 * std::exp(div_integral));

  // Closure recomputed by the event-driven solver, independent of the
  // boundary-value residual.  The start is nudged off the section along the
  // (region-independent) field so the region is unambiguous.
  VectorXd anchor = cyc->anchor(2);
  CHECK(anchor(1) == 0.0);
  VectorXd f = vector_field(p, anchor);
  VectorXd start = anchor + (1e-9 / std::max(1.0, f.norm())) * f;
  REQUIRE(region_of(p, start) == cyc->regions[0]);
  Trajectory one = solve_trajectory(p, start, {cyc->period}, lim);
  const double scale = 1.0 + anchor.lpNorm<Eigen::Infinity>();
  CHECK((one.states.back() - start).norm() < 1e-7 * scale);

  // Independent multiplier oracle: central difference of the simulated
  // section return map (differencing two runs cancels the solver's constant
  // section bias).
  auto first_return = [&](double y) {
    VectorXd z = (VectorXd(2) << y, 0.0).finished();
    Trajectory t2 = solve_trajectory(p, z, {3.0 * cyc->period}, lim);
    for (const SwitchEvent& e : t2.events)
      if (e.region_after == cyc->regions[0] && e.t_abs > 0.5 * cyc->period)
        return e.z_at_switch(0);
    return std::numeric_limits<double>::quiet_NaN();
  };
  const double delta = 1e-5;
  const double slope =
      (first_return(anchor(0) + delta) - first_return(anchor(0) - delta)) / (2.0 * delta);
  CHECK(std::abs(slope - mu) <= 1e-6);

  // Stability concordance: perturbed starts fall back onto the cycle.
  std::vector<VectorXd> samples;
  {
    VectorXd cur = anchor;
    SolutionCache cache;
    for (std::size_t i = 0; i < cyc->regions.size(); ++i) {
      RegionSolution sol = region_solution_in(p, cyc->regions[i], cur, &cache);
      for (int k = 0; k < 400; ++k)
        samples.push_back(eval_point(sol, cyc->flight_times[i] * k / 400.0));
      cur = eval_point(sol, cyc->flight_times[i]);
    }
  }
  auto dist_to_cycle = [&](const VectorXd& z) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const VectorXd& a = samples[i];
      const VectorXd& b = samples[(i + 1) % samples.size()];
      VectorXd ab = b - a;
      double len2 = ab.squaredNorm();
      double t = len2 > 0.0 ? std::clamp((z - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      best = std::min(best, (z - a - t * ab).norm());
    }
    return best;
  };
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int k = 0; k < 3; ++k) {
    VectorXd dir(2);
    dir << nd(rng), nd(rng);
    dir *= 1e-3 / dir.norm();
    Trajectory pert = solve_trajectory(p, anchor + dir, {5.0 * cyc->period}, lim);
    CHECK(dist_to_cycle(pert.states.back()) < 1e-4);
  }
}

TEST_CASE("two stable regions admit no cycle") {
  ModelParams p;
  p.M = 2;
  p.P = 1;
  p.N = 1;
  p.A = (VectorXd(2) << -1.0, -2.0).finished();
  p.W = (MatrixXd(2, 2) << 0.0, 0.3, 0.2, 0.0).finished();
  p.h = (VectorXd(2) << 0.5, -0.3).finished();
  p.version = 13;

  for (double t0 : {0.5, 1.0, 2.0}) {
    ErrorCode why = ErrorCode::bad_config;
    VectorXd y0 = VectorXd::Constant(1, 0.4);
    auto cyc = find_limit_cycle(p, {1u, 0u}, y0, {t0, t0}, {}, nullptr, &why);
    CHECK_FALSE(cyc.has_value());
    CHECK((why == ErrorCode::no_convergence || why == ErrorCode::invalid_itinerary));
  }

  // Single-region itinerary is structurally rejected.
  ErrorCode why = ErrorCode::bad_config;
  auto cyc = find_limit_cycle(p, {1u}, VectorXd::Constant(1, 0.4), {1.0}, {}, nullptr, &why);
  CHECK_FALSE(cyc.has_value());
  CHECK(why == ErrorCode::invalid_itinerary);

  // Malformed inputs are configuration errors, not search outcomes.
  CHECK_THROWS_AS(
      find_limit_cycle(p, {1u, 0u}, VectorXd::Constant(1, 0.4), {1.0}, {}, nullptr, nullptr),
      Error);
  CHECK_THROWS_AS(
      find_limit_cycle(p, {1u, 0u}, VectorXd::Constant(1, 0.4), {1.0, -1.0}, {}, nullptr,
                       nullptr),
      Error);
}

TEST_CASE("itinerary proposals need events and repeats") {
  // Globally contracting model: trajectories never cross a boundary.
  ModelParams p = planar_oscillator();
  VectorXd z0 = (VectorXd(2) << -9.0, -6.0).finished();  // near the saddle, off side
  SolveLimits lim;
  lim.record_segments = false;
  Trajectory quiet = solve_trajectory(p, z0, {0.01, 0.02}, lim);
  REQUIRE(quiet.events.empty());
  CHECK(propose_itineraries(p, quiet).empty());

  // The oscillator's alternating events collapse to one proposal; the cap is
  // honored.
  std::vector<double> times;
  for (int i = 0; i <= 800; ++i) times.push_back(i * 0.05);
  VectorXd in_basin = (VectorXd(2) << 0.5, 1.5).finished();
  Trajectory tr = solve_trajectory(p, in_basin, times, lim);
  REQUIRE(tr.events.size() >= 4);
  CHECK(propose_itineraries(p, tr).size() == 1);
  CHECK(propose_itineraries(p, tr, 0).empty());
}

TEST_CASE("floquet multipliers of a single linear segment") {
  // One region, no crossings: the monodromy is exp(W T) and the multiplier of
  // a scalar model is e^{lambda T} exactly.
  ModelParams p = scalar_model(-0.7, 0.2, 0.0);
  p.version = 14;
  VectorXcd mus = floquet_multipliers(p, {0u}, {2.0});
  REQUIRE(mus.size() == 1);
  CHECK(mus(0).real() == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK(mus(0).imag() == 0.0);

  CHECK_THROWS_AS(floquet_multipliers(p, {0u}, {1.0, 2.0}), Error);
  CHECK_THROWS_AS(floquet_multipliers(p, {0u}, {-1.0}), Error);
  CHECK_THROWS_AS(floquet_multipliers(p, {}, {}), Error);
}
