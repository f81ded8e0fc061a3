#pragma once

// Shared test oracles.  These stay independent of the solver implementation:
// the RK4 integrator works on the raw vector field, the samplers only use the
// public parameter types.

#include <cmath>
#include <random>

#include "cplrnn/model.hpp"

namespace testutil {

using cplrnn::ModelParams;
using cplrnn::VectorXd;

// classic fixed-step RK4 on dz/dt = vector_field(p, z)
inline VectorXd rk4_flow(const ModelParams& p, VectorXd z, double T,
                         double hstep) {
  if (T <= 0.0) return z;
  long n = (long)std::ceil(T / hstep);
  double h = T / (double)n;
  for (long i = 0; i < n; ++i) {
    VectorXd k1 = cplrnn::vector_field(p, z);
    VectorXd k2 = cplrnn::vector_field(p, z + 0.5 * h * k1);
    VectorXd k3 = cplrnn::vector_field(p, z + 0.5 * h * k2);
    VectorXd k4 = cplrnn::vector_field(p, z + h * k3);
    z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return z;
}

// random model with entries scaled so dynamics stay tame over unit horizons
inline ModelParams random_model(std::mt19937_64& rng, int M, int P, int N,
                                double wscale = 0.5) {
  ModelParams p;
  p.M = M;
  p.P = P;
  p.N = N;
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> ua(-1.0, 0.2);
  p.A.resize(M);
  for (int i = 0; i < M; ++i) p.A(i) = ua(rng);
  p.W.resize(M, M);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j) p.W(i, j) = wscale * g(rng) / std::sqrt((double)M);
  p.h.resize(M);
  for (int i = 0; i < M; ++i) p.h(i) = 0.5 * g(rng);
  return p;
}

inline VectorXd random_state(std::mt19937_64& rng, int M, double s = 1.0) {
  std::normal_distribution<double> g(0.0, s);
  VectorXd z(M);
  for (int i = 0; i < M; ++i) z(i) = g(rng);
  return z;
}

// largest real part across every region's dynamics matrix
inline double spectral_abscissa(const ModelParams& p) {
  double worst = -1e300;
  for (cplrnn::RegionIndex r = 0; r < (cplrnn::RegionIndex(1) << p.P); ++r) {
    Eigen::MatrixXd Wo = cplrnn::region_matrix(p, r);
    Eigen::EigenSolver<Eigen::MatrixXd> es(Wo, false);
    for (int i = 0; i < p.M; ++i)
      worst = std::max(worst, es.eigenvalues()(i).real());
  }
  return worst;
}

}  // namespace testutil
