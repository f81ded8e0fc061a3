#include "cplrnn/event_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <queue>
#include <string>

#include "cplrnn/solution_bounds.hpp"

namespace cplrnn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kFlank = 1e-9;          // sign probe offsets around a root
constexpr double kRefineTol = 1e-12;     // |f| target, times dim_scale

// Evaluate every rectified coordinate of the segment solution at one time,
// sharing the per-eigenvalue exponential/trig factors across coordinates.
void eval_boundary_coords(const RegionSolution& sol, double t, double* out) {
  const RegionEigen& eg = *sol.eig;
  const int M = sol.M(), P = eg.P, base = M - P;
  for (int j = 0; j < P; ++j) out[j] = -eg.p_part(base + j);
  for (int idx : eg.real_terms) {
    double E = std::exp(eg.lambda(idx).real() * t);
    for (int j = 0; j < P; ++j) out[j] += sol.ctilde(base + j, idx).real() * E;
  }
  for (int idx : eg.pair_terms) {
    double al = eg.lambda(idx).real(), be = eg.lambda(idx).imag();
    double E = std::exp(al * t), C = std::cos(be * t), S = std::sin(be * t);
    for (int j = 0; j < P; ++j) {
      double a = sol.ctilde(base + j, idx).real();
      double b = sol.ctilde(base + j, idx).imag();
      out[j] += 2.0 * E * (a * C - b * S);
    }
  }
}

// True when f has opposite strict signs at t* -/+ kFlank: the definition of a
// crossing.  Touches that come back without changing sign are not events.
bool is_sign_change(const RegionSolution& sol, int dim0, double t) {
  double fm = eval_dim(sol, dim0, t - kFlank);
  double fp = eval_dim(sol, dim0, t + kFlank);
  return (fm < 0.0 && fp > 0.0) || (fm > 0.0 && fp < 0.0);
}

// Polish a certified root by scalar Newton, staying inside the certified
// window; stops at |f| < kRefineTol * scale or when steps degenerate.
double refine_root(const RegionSolution& sol, int dim0, const Interval& cert) {
  double t = cert.mid();
  for (int it = 0; it < 80; ++it) {
    double f, fd;
    eval_dim_both(sol, dim0, t, &f, &fd);
    if (std::fabs(f) < kRefineTol * dim_scale(sol, dim0, t)) break;
    if (fd == 0.0 || !std::isfinite(fd)) break;
    double step = f / fd;
    double tn = t - step;
    if (tn < cert.lo) tn = cert.lo;
    if (tn > cert.hi) tn = cert.hi;
    if (tn == t) break;
    t = tn;
  }
  return t;
}

// Best-effort coarse scan for an early sign change: geometric blocks from the
// window start, refined by bisection.  Only used to seed the certified search
// with a likely first root; soundness rests entirely on the interval search.
std::optional<RootHit> seed_scan(const RegionSolution& sol,
                                 const Interval& window) {
  const int P = sol.eig->P, base = sol.M() - P;
  std::vector<double> fprev(P), fcur(P);
  double t_prev = window.lo;
  eval_boundary_coords(sol, t_prev, fprev.data());
  double block = std::max(window.width() / 256.0, 1e-12);
  double t0 = window.lo;
  while (t0 < window.hi) {
    double t1 = std::min(t0 + block, window.hi);
    for (int k = 1; k <= 16; ++k) {
      double t = t0 + (t1 - t0) * k / 16.0;
      if (t <= t_prev) continue;
      eval_boundary_coords(sol, t, fcur.data());
      double t_hit = kInf;
      int slot_hit = -1;
      for (int j = 0; j < P; ++j) {
        if (!(fprev[j] * fcur[j] < 0.0)) continue;
        double a = t_prev, b = t, fa = fprev[j];
        for (int bi = 0; bi < 200 && b - a > 1e-15 * (1.0 + b); ++bi) {
          double m = 0.5 * (a + b);
          double fmv = eval_dim(sol, base + j, m);
          if ((fmv > 0.0) == (fa > 0.0)) {
            a = m;
            fa = fmv;
          } else {
            b = m;
          }
        }
        double r = 0.5 * (a + b);
        if (r < t_hit && is_sign_change(sol, base + j, r)) {
          t_hit = r;
          slot_hit = j;
        }
      }
      if (slot_hit >= 0) return RootHit{t_hit, slot_hit};
      std::swap(fprev, fcur);
      t_prev = t;
    }
    t0 = t1;
    block *= 2.0;
  }
  return std::nullopt;
}

struct NodeOrder {
  bool operator()(const SearchNode& a, const SearchNode& b) const {
    if (a.X.lo != b.X.lo) return a.X.lo > b.X.lo;  // min-heap on lower bound
    if (a.X.hi != b.X.hi) return a.X.hi > b.X.hi;
    if (a.dims != b.dims) return a.dims > b.dims;
    return a.depth > b.depth;
  }
};

}  // namespace

ContractResult newton_contract(const RegionSolution& sol, const SearchNode& node,
                               double t_min_so_far) {
  ContractResult res;
  const int M = sol.M(), P = sol.eig->P, base = M - P;

  Interval X = intersect(node.X, Interval(-kInf, t_min_so_far));
  if (X.is_empty() || !(X.lo <= X.hi)) {
    res.decision = ContractDecision::Prune;
    return res;
  }

  IntervalError ferr = IntervalError::none;
  SolutionFactors F = solution_factors(sol, X, &ferr);
  if (ferr == IntervalError::too_wide) {
    // caller bisects oversized windows; keep the node intact
    res.decision = ContractDecision::Branch;
    res.node = SearchNode{X, node.dims, node.depth};
    return res;
  }

  const double tm = X.mid();
  // rigorous enclosure of f(mid): the Newton image must not be shifted by a
  // rounded point evaluation, or a true root could be pruned
  IntervalError merr = IntervalError::none;
  SolutionFactors Fm = solution_factors(sol, Interval::point(tm), &merr);

  double t_min = t_min_so_far;
  std::uint32_t survivors = 0;
  Interval hull_X = Interval::empty();

  for (int j = 0; j < P; ++j) {
    if (!(node.dims & (1u << j))) continue;
    const int dim0 = base + j;

    Interval img = eval_dim_interval(sol, dim0, F);
    if (!img.contains_zero()) continue;  // image excludes zero: no root here

    Interval fm = eval_dim_interval(sol, dim0, Fm);
    Interval fp = eval_dim_derivative_interval(sol, dim0, F);

    IntervalError derr = IntervalError::none;
    IntervalPair q = divide(fm, fp, &derr);
    if (derr == IntervalError::division_by_zero_interval) {
      // derivative enclosure is exactly zero: f is constant on X, and a
      // constant coordinate never produces a sign change
      continue;
    }

    Interval cand = Interval::empty();
    bool single_piece = q.second.is_empty() && !q.first.is_empty();
    Interval Npiece = Interval::empty();
    for (const Interval* piece : {&q.first, &q.second}) {
      if (piece->is_empty()) continue;
      Interval N = sub(Interval::point(tm), *piece);
      if (single_piece) Npiece = N;
      cand = hull(cand, intersect(N, X));
    }
    if (cand.is_empty()) continue;  // Newton image misses X entirely

    if (single_piece && Npiece.inside_interior_of(X) && !Npiece.is_empty()) {
      // unique root in X; polish and keep only genuine crossings
      Interval cert = intersect(Npiece, X);
      double t_star = refine_root(sol, dim0, cert);
      if (is_sign_change(sol, dim0, t_star)) {
        res.roots.push_back(RootHit{t_star, j});
        t_min = std::min(t_min, t_star);
      }
      continue;  // either way the coordinate is resolved on X
    }

    survivors |= (1u << j);
    hull_X = hull(hull_X, cand);
  }

  if (survivors == 0) {
    res.decision =
        res.roots.empty() ? ContractDecision::Prune : ContractDecision::Store;
    return res;
  }
  Interval Xb = intersect(hull_X, Interval(-kInf, t_min));
  if (Xb.is_empty() || !(Xb.lo < Xb.hi)) {
    res.decision =
        res.roots.empty() ? ContractDecision::Prune : ContractDecision::Store;
    return res;
  }
  res.decision = ContractDecision::Branch;
  res.node = SearchNode{Xb, survivors, node.depth};
  return res;
}

std::optional<std::pair<double, int>> first_root(const RegionSolution& sol,
                                                 const Interval& window) {
  const int M = sol.M(), P = sol.eig->P, base = M - P;
  if (P == 0 || window.is_empty() || !(window.lo < window.hi))
    return std::nullopt;
  const std::uint32_t all_dims = (1u << P) - 1u;

  double t_best = kInf;
  int slot_best = -1;
  bool exhausted = false;

  auto take_roots = [&](const std::vector<RootHit>& roots) {
    for (const RootHit& r : roots) {
      if (r.t < t_best) {
        t_best = r.t;
        slot_best = r.slot;
      }
    }
  };

  std::priority_queue<SearchNode, std::vector<SearchNode>, NodeOrder> pq;

  // Warm start: certify the scan's candidate first so the certified search
  // can clip against a tight upper bound from the outset.
  if (auto seed = seed_scan(sol, window)) {
    double w = std::max(1e-7, 1e-6 * std::max(1.0, std::fabs(seed->t)));
    Interval Xs(std::max(window.lo, seed->t - w),
                std::min(window.hi, seed->t + w));
    if (Xs.lo < Xs.hi) {
      std::vector<SearchNode> stack{SearchNode{Xs, 1u << seed->slot, 0}};
      while (!stack.empty()) {
        SearchNode nd = stack.back();
        stack.pop_back();
        ContractResult r = newton_contract(sol, nd, t_best);
        take_roots(r.roots);
        if (r.decision == ContractDecision::Branch && nd.depth < 8) {
          double m = r.node.X.mid();
          SearchNode le{Interval(r.node.X.lo, m), r.node.dims, nd.depth + 1};
          SearchNode ri{Interval(m, r.node.X.hi), r.node.dims, nd.depth + 1};
          if (ri.X.lo < ri.X.hi) stack.push_back(ri);
          if (le.X.lo < le.X.hi) stack.push_back(le);
        }
        // leftovers are covered by the full-window nodes below
      }
    }
  }

  // Full coverage of the window, pre-split to overflow-safe widths with a
  // sliver of overlap so a root exactly on a split point stays interior to
  // one of the pieces.
  {
    const double ovl = 1e-9 * kMaxIntervalWidth;
    double a = window.lo;
    while (a < window.hi) {
      double b = std::min(a + kMaxIntervalWidth, window.hi);
      pq.push(SearchNode{Interval(a, b), all_dims, 0});
      if (b >= window.hi) break;
      a = b - ovl;
    }
  }

  int expanded = 0;
  while (!pq.empty()) {
    SearchNode nd = pq.top();
    pq.pop();
    if (nd.X.lo >= t_best) break;  // ordered by lower bound: nothing earlier
    if (++expanded > kMaxSearchNodes) {
      exhausted = true;
      break;
    }
    ContractResult r = newton_contract(sol, nd, t_best);
    take_roots(r.roots);
    if (r.decision != ContractDecision::Branch) continue;
    if (nd.depth + 1 > kMaxSearchDepth) {
      exhausted = true;
      continue;
    }
    double m = r.node.X.mid();
    SearchNode le{Interval(r.node.X.lo, m), r.node.dims, nd.depth + 1};
    SearchNode ri{Interval(m, r.node.X.hi), r.node.dims, nd.depth + 1};
    if (le.X.lo < le.X.hi) pq.push(le);
    if (ri.X.lo < ri.X.hi) pq.push(ri);
  }

  if (std::isfinite(t_best))
    return std::make_pair(t_best, base + slot_best + 1);
  if (exhausted)
    throw Error(ErrorCode::search_inconclusive,
                "root search hit the bisection depth limit without certifying "
                "a crossing");
  return std::nullopt;
}

Trajectory solve_trajectory(const ModelParams& params, const VectorXd& z0,
                            const std::vector<double>& times,
                            const SolveLimits& limits, SolutionCache* cache) {
  params.validate();
  if (times.empty())
    throw Error(ErrorCode::bad_config, "no requested times");
  if (!(times.front() >= 0.0))
    throw Error(ErrorCode::bad_config, "times must start at or after 0");
  for (std::size_t i = 0; i + 1 < times.size(); ++i)
    if (!(times[i] < times[i + 1]))
      throw Error(ErrorCode::bad_config, "times must be strictly increasing");
  if ((int)z0.size() != params.M || !z0.allFinite())
    throw Error(ErrorCode::bad_config, "bad initial state");

  SolutionCache local;
  if (!cache) cache = &local;

  Trajectory out;
  out.times.reserve(times.size());
  out.states.reserve(times.size());

  const double t_end = times.back();
  const auto t_wall0 = std::chrono::steady_clock::now();
  auto wall_exceeded = [&]() {
    if (limits.max_wall_seconds <= 0.0) return false;
    std::chrono::duration<double> el = std::chrono::steady_clock::now() - t_wall0;
    return el.count() > limits.max_wall_seconds;
  };

  double s = 0.0;
  VectorXd z = z0;
  std::size_t ti = 0;
  std::int64_t restarts = 0;
  const std::size_t n = times.size();

  while (ti < n) {
    RegionSolution sol = region_solution(params, z, cache);
    const RegionIndex region = sol.eig->region;
    const double remaining = t_end - s;

    // An entry state sitting on a rectification boundary puts a root at the
    // left endpoint of the search window, where no interior enclosure can
    // certify it.  Step off by the nudge as a fixed-time handoff, emitting
    // and re-classifying exactly like the post-event advance.
    bool on_boundary = false;
    const double z_mag = 1.0 + z.norm();
    for (int j = params.M - params.P; j < params.M; ++j)
      if (std::fabs(z(j)) <= 1e-12 * z_mag) on_boundary = true;
    if (on_boundary && remaining > limits.dt_nudge) {
      const double s_next = s + limits.dt_nudge;
      while (ti < n && times[ti] < s_next) {
        out.times.push_back(times[ti]);
        out.states.push_back(eval_point(sol, times[ti] - s));
        ++ti;
      }
      VectorXd z_new = eval_point(sol, limits.dt_nudge);
      const RegionIndex region_after = region_of(params, z_new);
      if (region_after != region) {
        int dim1 = 0;
        for (int j = 0; j < params.P; ++j)
          if (((region ^ region_after) >> j) & 1u) {
            dim1 = params.M - params.P + j + 1;
            break;
          }
        out.events.push_back(SwitchEvent{s, dim1, region, region_after, z});
      }
      if (limits.record_segments)
        out.segments.push_back(
            TrajectorySegment{std::move(sol), s, s_next, false, 0.0, 0});
      s = s_next;
      z = std::move(z_new);
      if (++restarts >= limits.max_events || wall_exceeded()) {
        out.truncated = true;
        break;
      }
      continue;
    }

    // reaching here on a boundary means the horizon is within one nudge:
    // close out without a search, the sliver is forfeited anyway
    std::optional<std::pair<double, int>> root;
    if (remaining > 0.0 && !on_boundary)
      root = first_root(sol, Interval(0.0, remaining));

    if (!root) {
      while (ti < n) {
        out.times.push_back(times[ti]);
        out.states.push_back(eval_point(sol, times[ti] - s));
        ++ti;
      }
      if (limits.record_segments)
        out.segments.push_back(
            TrajectorySegment{std::move(sol), s, t_end, false, 0.0, 0});
      break;
    }

    const double sigma = root->first;
    const int dim1 = root->second;
    const double s_next = s + sigma + limits.dt_nudge;

    while (ti < n && times[ti] < s_next) {
      out.times.push_back(times[ti]);
      out.states.push_back(eval_point(sol, times[ti] - s));
      ++ti;
    }

    VectorXd z_sw = eval_point(sol, sigma);
    VectorXd z_new = eval_point(sol, sigma + limits.dt_nudge);
    RegionIndex region_after = region_of(params, z_new);
    out.events.push_back(SwitchEvent{s + sigma, dim1, region, region_after, z_sw});
    if (limits.record_segments)
      out.segments.push_back(
          TrajectorySegment{std::move(sol), s, s_next, true, sigma, dim1});

    s = s_next;
    z = z_new;

    if ((std::int64_t)out.events.size() >= limits.max_events || wall_exceeded()) {
      out.truncated = true;
      break;
    }
  }
  return out;
}

}  // namespace cplrnn
