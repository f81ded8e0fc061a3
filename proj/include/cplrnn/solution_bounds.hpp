#pragma once

#include <array>
#include <vector>

#include "cplrnn/interval.hpp"
#include "cplrnn/model.hpp"

namespace cplrnn {

// Over a window wider than this the exponential factors overflow too easily;
// callers must bisect first (TOO_WIDE).
constexpr double kMaxIntervalWidth = 50.0;

// Per-eigenvalue interval factors over a time window T, shared by every
// coordinate's series: exp(alpha T) for real eigenvalues and
// (exp(alpha T), cos(beta T), sin(beta T)) for conjugate pairs.  Computing
// them once per window is what keeps the root search affordable — the
// per-coordinate combination below is then just coefficient arithmetic.
struct SolutionFactors {
  std::vector<Interval> real_E;                    // parallel to real_terms
  std::vector<std::array<Interval, 3>> pair_ECS;   // parallel to pair_terms
};

SolutionFactors solution_factors(const RegionSolution& sol, const Interval& T,
                                 IntervalError* err,
                                 double max_width = kMaxIntervalWidth);

// enclosure of z^(dim)(t) for t in the factors' window
Interval eval_dim_interval(const RegionSolution& sol, int dim,
                           const SolutionFactors& f);

// enclosure of d z^(dim)/dt; same factors, eigenvalue-weighted coefficients
Interval eval_dim_derivative_interval(const RegionSolution& sol, int dim,
                                      const SolutionFactors& f);

// single-window convenience wrapper over the three calls above
Interval eval_solution_interval(const RegionSolution& sol, int dim,
                                const Interval& T, IntervalError* err,
                                double max_width = kMaxIntervalWidth);

}  // namespace cplrnn
