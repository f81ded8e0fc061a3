#pragma once

#include <optional>
#include <random>
#include <vector>

#include "cplrnn/errors.hpp"
#include "cplrnn/event_solver.hpp"
#include "cplrnn/model.hpp"

namespace cplrnn {

// Classification of a region equilibrium from the spectrum of its region
// matrix.  Real parts within 1e-10 (relative to the spectral radius) of zero
// classify as center_marginal.
enum class FixedPointKind {
  stable_node,
  unstable_node,
  stable_spiral,
  unstable_spiral,
  saddle,
  center_marginal,
};

const char* kind_name(FixedPointKind k);

// Equilibrium candidate of one region's affine flow.  is_real means the
// point's sign pattern actually selects the region it was solved in (zero
// counts as the off side, matching region_of); otherwise the candidate is
// virtual: the flow points at it but it lives outside the region's closure.
struct FixedPoint {
  VectorXd z_star;
  RegionIndex region = 0;
  bool is_real = false;
  VectorXcd eigenvalues;  // spectrum of the region matrix
  FixedPointKind kind = FixedPointKind::stable_node;
};

// Solves region_matrix * z = -h for the region's equilibrium candidate.
// Throws SINGULAR_REGION_MATRIX when the condition estimate is past 1e12.
FixedPoint candidate_fixed_point(const ModelParams& p, RegionIndex region);

// Effort knobs for the heuristic search.  restarts = 0 auto-scales with the
// region count (covers 2^P generously for small P).
struct SearchBudget {
  int max_iters = 64;
  int restarts = 0;
};

// Heuristic equilibrium search: start in a random region, solve its
// candidate; a virtual candidate's own sign pattern names the next region to
// try; revisiting a region within one chain triggers a fresh random restart.
// Candidates are memoized per region, results deduplicated by region and by
// distance below 1e-6 * scale.  Best effort: an empty result is valid.
std::vector<FixedPoint> find_fixed_points(const ModelParams& p,
                                          const SearchBudget& budget,
                                          std::mt19937_64& rng);

// All real fixed points by direct enumeration of every region (requires
// P <= 20; cost 2^P linear solves).  Same dedup rule as find_fixed_points.
std::vector<FixedPoint> enumerate_fixed_points(const ModelParams& p);

// Closed orbit crossing r region boundaries.  regions lists the visited
// regions in flow order; dims[i] is the 1-based coordinate whose boundary
// ends segment i (derived from the region sequence; dims.back() closes the
// cycle).  y holds the anchor state's free coordinates: the anchor gamma(0)
// sits on the closing boundary, so its dims.back() coordinate is pinned to 0
// and y lists the remaining M-1 coordinates in ascending index order.
struct CycleSolution {
  std::vector<RegionIndex> regions;
  std::vector<int> dims;
  VectorXd y;
  std::vector<double> flight_times;
  double period = 0.0;
  VectorXcd multipliers;
  bool stable = false;

  VectorXd anchor(int M) const;  // gamma(0) embedded from y
};

struct CycleOptions {
  int max_iters = 120;
  double tol = 1e-11;         // residual target, relative to state scale
  double accept_tol = 1e-9;   // still accepted at the iteration cap
};

// The crossing coordinate for each consecutive region pair (cyclically):
// regions[i] and regions[i+1] must differ in exactly one rectified bit, whose
// coordinate (1-based) becomes dims[i].  Throws INVALID_ITINERARY otherwise
// (in particular for r = 1: a region cannot cross into itself).
std::vector<int> crossing_dims(const ModelParams& p,
                               const std::vector<RegionIndex>& regions);

// Boundary-value solve for a periodic orbit with the given itinerary.
// Unknowns are the M-1 free anchor coordinates and log flight times
// (T_i = exp(s_i) keeps segment durations positive); residuals are the r
// boundary-hit conditions plus M-1 anchor-closure conditions, minimized by
// Levenberg-Marquardt with the analytic Jacobian assembled from the segment
// propagators and endpoint velocities.  On convergence each segment is
// certified to stay inside its region (first_root over the open flight
// window), crossing directions are checked against the region sequence, and
// multipliers come from floquet_multipliers.  Returns nullopt when no cycle
// with this itinerary is found; *why (when given) is then NO_CONVERGENCE
// (residual never reached tolerance, or the region solves failed) or
// INVALID_ITINERARY (inconsistent region sequence, early crossing, or wrong
// crossing direction).  Genuine configuration errors still throw.
std::optional<CycleSolution> find_limit_cycle(const ModelParams& p,
                                              const std::vector<RegionIndex>& regions,
                                              const VectorXd& y0,
                                              const std::vector<double>& T0,
                                              const CycleOptions& opts = {},
                                              SolutionCache* cache = nullptr,
                                              ErrorCode* why = nullptr);

// Starting point for a cycle solve, extracted from observed events.
struct ItineraryGuess {
  std::vector<RegionIndex> regions;
  VectorXd y0;
  std::vector<double> T0;
};

// Scans a trajectory's event list for repeats of the same (region, dim)
// signature; every minimal repeat window yields a guess whose y0 comes from
// the first boundary state and whose T0 are the observed inter-event gaps.
// Guesses are deduplicated by the cyclic-rotation-minimal form of their
// (region, dim) sequence.  Empty when fewer than two events or no repeats.
std::vector<ItineraryGuess> propose_itineraries(const ModelParams& p,
                                                const Trajectory& traj,
                                                int max_proposals = 16);

// Monodromy spectrum of a closed itinerary: the ordered product of segment
// propagators exp(W_{k_r} T_r) * ... * exp(W_{k_1} T_1).  The vector field is
// continuous across boundaries, so the boundary-crossing correction factors
// are identity and propagation matrices alone enter.  One eigenvalue of a
// true cycle is 1 (the flow direction); the cycle is stable when all other
// multipliers lie strictly inside the unit circle.
VectorXcd floquet_multipliers(const ModelParams& p,
                              const std::vector<RegionIndex>& regions,
                              const std::vector<double>& flight_times,
                              SolutionCache* cache = nullptr);

}  // namespace cplrnn
