#include <doctest.h>

#include <cmath>
#include <random>

#include "cplrnn/model.hpp"
#include "test_util.hpp"

using namespace cplrnn;

namespace {

ModelParams scalar_decay_model() {
  // dz/dt = -z + 1, no rectified units
  ModelParams p;
  p.M = 1;
  p.P = 0;
  p.N = 1;
  p.A = VectorXd::Constant(1, -1.0);
  p.W = MatrixXd::Zero(1, 1);
  p.h = VectorXd::Constant(1, 1.0);
  return p;
}

ModelParams rotation_model() {
  // dz/dt = [[0,-1],[1,0]] z: circular motion, eigenvalues +-i
  ModelParams p;
  p.M = 2;
  p.P = 0;
  p.N = 2;
  p.A = VectorXd::Zero(2);
  p.W.resize(2, 2);
  p.W << 0, -1, 1, 0;
  p.h = VectorXd::Zero(2);
  return p;
}

}  // namespace

TEST_CASE("region mask convention: zero sits on the off side") {
  std::mt19937_64 rng(1);
  ModelParams p = testutil::random_model(rng, 4, 2, 2);
  VectorXd z(4);
  z << 1.0, -1.0, 0.0, 2.0;       // rectified coords are z3, z4
  RegionIndex r = region_of(p, z);
  CHECK((r & 1u) == 0u);          // exactly zero -> bit clear
  CHECK((r & 2u) != 0u);
  z(2) = 1e-300;
  CHECK((region_of(p, z) & 1u) != 0u);  // any strictly positive value -> set
}

TEST_CASE("region matrix zeroes inactive columns and adds the diagonal") {
  std::mt19937_64 rng(2);
  ModelParams p = testutil::random_model(rng, 3, 2, 1);
  MatrixXd W0 = region_matrix(p, 0u);
  CHECK(W0.col(1).cwiseAbs().sum() == doctest::Approx(std::fabs(p.A(1))));
  CHECK(W0(0, 0) == doctest::Approx(p.W(0, 0) + p.A(0)));
  MatrixXd W3 = region_matrix(p, 3u);
  CHECK(W3(0, 1) == doctest::Approx(p.W(0, 1)));
  CHECK(W3(2, 2) == doctest::Approx(p.W(2, 2) + p.A(2)));
}

TEST_CASE("vector field is continuous across every boundary") {
  std::mt19937_64 rng(3);
  for (int it = 0; it < 200; ++it) {
    ModelParams p = testutil::random_model(rng, 5, 3, 2);
    VectorXd z = testutil::random_state(rng, 5);
    int which = (int)(rng() % 3);
    z(5 - 3 + which) = 0.0;  // put the state exactly on one boundary
    RegionIndex r0 = region_of(p, z);
    RegionIndex r1 = r0 | (RegionIndex(1) << which);
    VectorXd f0 = region_matrix(p, r0) * z + p.h;
    VectorXd f1 = region_matrix(p, r1) * z + p.h;
    CHECK((f0 - f1).cwiseAbs().maxCoeff() <= 1e-12);
    VectorXd fa = vector_field(p, z);
    CHECK((f0 - fa).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("scalar closed form: dz/dt = -z + 1 from z0 = -1") {
  ModelParams p = scalar_decay_model();
  VectorXd z0 = VectorXd::Constant(1, -1.0);
  RegionSolution sol = region_solution(p, z0);
  // z(t) = 1 - 2 e^{-t}
  CHECK(eval_point(sol, 0.0)(0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(eval_point(sol, 1.0)(0) ==
        doctest::Approx(0.26424111765711533).epsilon(1e-12));
  CHECK(eval_time_derivative(sol, 0.0)(0) == doctest::Approx(2.0).epsilon(1e-12));
  // the derivative series must not carry the constant term: the true value at
  // t=30 is 2*exp(-30) ~ 1.9e-13, while a leaked constant would show up as ~1.
  CHECK(std::fabs(eval_time_derivative(sol, 30.0)(0)) < 1e-9);
}

TEST_CASE("rotation quarter turn lands on (0, 1)") {
  ModelParams p = rotation_model();
  VectorXd z0(2);
  z0 << 1.0, 0.0;
  RegionSolution sol = region_solution(p, z0);
  VectorXd z = eval_point(sol, 1.5707963267948966);
  CHECK(std::fabs(z(0) - 0.0) < 1e-8);
  CHECK(std::fabs(z(1) - 1.0) < 1e-8);
}

TEST_CASE("reconstruction at t = 0 over random models") {
  std::mt19937_64 rng(4);
  for (int it = 0; it < 1000; ++it) {
    int M = 1 + (int)(rng() % 10);
    int P = (int)(rng() % (M + 1));
    ModelParams p = testutil::random_model(rng, M, P, 1);
    VectorXd z0 = testutil::random_state(rng, M);
    RegionSolution sol;
    try {
      sol = region_solution(p, z0);
    } catch (const Error&) {
      continue;  // rare near-defective draws are exercised elsewhere
    }
    VectorXd back = eval_point(sol, 0.0);
    double rel = (back - z0).norm() / (1.0 + z0.norm());
    CHECK(rel < 1e-8);
  }
}

TEST_CASE("single-region flow matches RK4 while signs hold") {
  std::mt19937_64 rng(5);
  int done = 0;
  while (done < 50) {
    ModelParams p = testutil::random_model(rng, 4, 2, 2);
    VectorXd z0 = testutil::random_state(rng, 4);
    RegionIndex r0 = region_of(p, z0);
    // find a horizon on which the sign pattern provably holds
    double T = 1.0;
    bool ok = true;
    VectorXd z = z0;
    for (int k = 0; k < 100; ++k) {
      z = testutil::rk4_flow(p, z, T / 100.0, 1e-4);
      if (region_of(p, z) != r0) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    RegionSolution sol = region_solution(p, z0);
    VectorXd zr = testutil::rk4_flow(p, z0, T, 1e-4);
    VectorXd za = eval_point(sol, T);
    CHECK((za - zr).norm() / (1.0 + zr.norm()) < 1e-6);
    ++done;
  }
}

TEST_CASE("time derivative agrees with finite differences of the flow") {
  std::mt19937_64 rng(6);
  for (int it = 0; it < 100; ++it) {
    ModelParams p = testutil::random_model(rng, 5, 2, 2);
    VectorXd z0 = testutil::random_state(rng, 5);
    RegionSolution sol = region_solution(p, z0);
    double t = 0.3;
    double step = 1e-6;
    VectorXd fd = (eval_point(sol, t + step) - eval_point(sol, t - step)) / (2 * step);
    VectorXd an = eval_time_derivative(sol, t);
    CHECK((fd - an).norm() / (1.0 + an.norm()) < 1e-5);
    // and the derivative equals the regional field on the trajectory
    VectorXd zf = eval_point(sol, t);
    VectorXd fld = field_in_region(*sol.eig, zf);
    CHECK((an - fld).norm() / (1.0 + fld.norm()) < 1e-8);
  }
}

TEST_CASE("defective region matrix raises and a perturbation repairs it") {
  ModelParams p;
  p.M = 2;
  p.P = 0;
  p.N = 1;
  p.A = VectorXd::Zero(2);
  p.W.resize(2, 2);
  p.W << 1, 1, 0, 1;  // Jordan block: eigenvalue 1 twice, defective
  p.h = VectorXd::Zero(2);
  CHECK_THROWS_AS((void)build_region_eigen(p, 0u), Error);
  try {
    (void)build_region_eigen(p, 0u);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::near_defective);
  }
  std::mt19937_64 rng(7);
  ModelParams q = perturb_for_diagonalizability(p, rng, 1e-6);
  auto eg = build_region_eigen(q, 0u);
  CHECK(eg->min_gap > 0.0);
  CHECK(q.version == p.version + 1);
}

TEST_CASE("solution cache reuses entries until the version moves") {
  std::mt19937_64 rng(8);
  ModelParams p = testutil::random_model(rng, 3, 1, 1);
  SolutionCache cache;
  auto a = cache.get(p, 0u);
  auto b = cache.get(p, 0u);
  CHECK(a.get() == b.get());
  p.version++;
  auto c = cache.get(p, 0u);
  CHECK(a.get() != c.get());
}
