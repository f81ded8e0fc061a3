#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cplrnn/interval.hpp"
#include "cplrnn/model.hpp"

namespace cplrnn {

// One boundary crossing of a rectified coordinate.  dim is the 1-based state
// coordinate index (so always in M-P+1..M), matching the z1..zM trajectory
// columns.  region_after is recomputed from the nudged state, so when the
// post-crossing nudge hops several near-coincident boundaries at once the two
// masks can differ in more than the crossing bit.
struct SwitchEvent {
  double t_abs = 0.0;
  int dim = 0;
  RegionIndex region_before = 0;
  RegionIndex region_after = 0;
  VectorXd z_at_switch;
};

// One maximal in-region stretch of the trajectory, kept so downstream passes
// (gradients, diagnostics) can re-evaluate the analytic solution without
// re-running the root search.  t_next - t_start includes the post-crossing
// nudge; sigma is the crossing time relative to t_start.
struct TrajectorySegment {
  RegionSolution sol;
  double t_start = 0.0;
  double t_next = 0.0;
  bool has_event = false;
  double sigma = 0.0;
  int event_dim = 0;  // 1-based, like SwitchEvent::dim
};

struct Trajectory {
  std::vector<double> times;
  std::vector<VectorXd> states;
  std::vector<SwitchEvent> events;
  bool truncated = false;
  std::vector<TrajectorySegment> segments;
};

// Candidate window of the branch-and-prune search.  dims is a bitmask over
// the P rectified coordinates (bit j = state coordinate M-P+j+1); X is in
// segment-relative time.
struct SearchNode {
  Interval X = Interval::empty();
  std::uint32_t dims = 0;
  int depth = 0;
};

enum class ContractDecision { Prune, Store, Branch };

// A certified simple zero crossing: slot is the 0-based index into the P
// rectified coordinates.
struct RootHit {
  double t = 0.0;
  int slot = 0;
};

struct ContractResult {
  ContractDecision decision = ContractDecision::Prune;
  SearchNode node;              // the surviving window; meaningful for Branch
  std::vector<RootHit> roots;   // certified sign-changing roots, if any
};

// One interval-Newton contraction of a search node.  Per candidate coordinate:
// drops it when the image interval over node.X excludes zero; otherwise forms
// N(X) = mid(X) - f(mid)/f'(X) with extended division and intersects with X;
// f(mid) is itself enclosed (degenerate-window evaluation) so rounding can
// never shift the Newton image off a true root.
// When the division is single-piece and N(X) lands in the interior of X the
// root is unique in X; it is polished by scalar Newton to |f| < 1e-12 * scale
// and kept only if the signs at t* -/+ 1e-9 actually differ (tangential
// touches are not crossings).  Surviving coordinates form the Branch node,
// whose window is clipped above by the best root seen so far.
ContractResult newton_contract(const RegionSolution& sol, const SearchNode& node,
                               double t_min_so_far);

// Earliest certified sign-changing zero of any rectified coordinate over the
// segment-relative window, or nullopt when the solution provably stays in its
// region.  Branch-and-prune over SearchNodes, always expanding the node with
// the smallest lower bound and stopping once every open node starts after the
// best root.  Windows wider than the interval overflow width are pre-split.
// Returns (t, dim) with dim 1-based as in SwitchEvent.  When the bisection
// depth limit (64) is exhausted, returns the best verified root if one
// exists, else throws SEARCH_INCONCLUSIVE.
std::optional<std::pair<double, int>> first_root(const RegionSolution& sol,
                                                 const Interval& window);

constexpr int kMaxSearchDepth = 64;
// Certification-impossible windows (e.g. an exact double root inside the
// floating-point noise band) would otherwise expand an exponential tree under
// the depth cap alone; exhausting this budget is reported exactly like depth
// exhaustion.
constexpr int kMaxSearchNodes = 20000;

struct SolveLimits {
  std::int64_t max_events = 100000;
  double max_wall_seconds = 0.0;  // 0 disables the wall-clock limit
  double dt_nudge = 1e-4;         // post-crossing advance past the boundary
  // Segment records hold the per-segment solution coefficients; long
  // evaluation-only runs switch this off to keep memory flat.
  bool record_segments = true;
};

// Event-to-event trajectory computation: per segment, build the analytic
// region solution, locate the first boundary crossing, emit every requested
// time before the nudged segment end from the current segment's closed form,
// then advance the state to sigma + dt_nudge along the SAME segment and
// re-derive the region from the nudged state.  times must be strictly
// increasing with times[0] >= 0 (the start-time origin of z0).  Hitting
// max_events or the wall-clock limit truncates the result (truncated = true,
// emitted prefix kept).
Trajectory solve_trajectory(const ModelParams& params, const VectorXd& z0,
                            const std::vector<double>& times,
                            const SolveLimits& limits = {},
                            SolutionCache* cache = nullptr);

}  // namespace cplrnn
