#include "cplrnn/analysis.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <limits>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "cplrnn/interval.hpp"

namespace cplrnn {

namespace {

FixedPointKind classify_kind(const VectorXcd& lam) {
  double radius = 0.0;
  for (int i = 0; i < lam.size(); ++i) radius = std::max(radius, std::abs(lam(i)));
  const double tol = 1e-10 * std::max(1.0, radius);
  bool marginal = false, pos = false, neg = false, spiral = false;
  for (int i = 0; i < lam.size(); ++i) {
    const double re = lam(i).real();
    if (std::abs(re) <= tol) marginal = true;
    else if (re > 0) pos = true;
    else neg = true;
    if (std::abs(lam(i).imag()) > tol) spiral = true;
  }
  if (marginal) return FixedPointKind::center_marginal;
  if (pos && neg) return FixedPointKind::saddle;
  if (pos) return spiral ? FixedPointKind::unstable_spiral : FixedPointKind::unstable_node;
  return spiral ? FixedPointKind::stable_spiral : FixedPointKind::stable_node;
}

// Distance-based duplicate test used on top of region identity.
bool same_point(const VectorXd& a, const VectorXd& b) {
  const double scale = 1.0 + std::max(a.lpNorm<Eigen::Infinity>(), b.lpNorm<Eigen::Infinity>());
  return (a - b).lpNorm<Eigen::Infinity>() <= 1e-6 * scale;
}

void push_unique(std::vector<FixedPoint>& out, FixedPoint fp) {
  for (const FixedPoint& g : out)
    if (g.region == fp.region || same_point(g.z_star, fp.z_star)) return;
  out.push_back(std::move(fp));
}

// Real propagator exp(W_region * t) from the cached eigensystem.
MatrixXd propagator(const RegionEigen& eg, double t, const MatrixXcd& u_inv) {
  VectorXcd e = (eg.lambda.array() * t).exp();
  MatrixXcd phi = eg.U * e.asDiagonal() * u_inv;
  return phi.real();
}

}  // namespace

const char* kind_name(FixedPointKind k) {
  switch (k) {
    case FixedPointKind::stable_node: return "stable node";
    case FixedPointKind::unstable_node: return "unstable node";
    case FixedPointKind::stable_spiral: return "stable spiral";
    case FixedPointKind::unstable_spiral: return "unstable spiral";
    case FixedPointKind::saddle: return "saddle";
    case FixedPointKind::center_marginal: return "center (marginal)";
  }
  return "unknown";
}

FixedPoint candidate_fixed_point(const ModelParams& p, RegionIndex region) {
  p.validate();
  if (region >= (RegionIndex{1} << p.P))
    throw Error(ErrorCode::bad_config, "region index out of range");
  MatrixXd Wr = region_matrix(p, region);
  Eigen::PartialPivLU<MatrixXd> lu(Wr);
  if (!(lu.rcond() > 1e-12))
    throw Error(ErrorCode::singular_region_matrix,
                "equilibrium solve in region " + std::to_string(region) +
                    ": matrix condition estimate past 1e12");
  FixedPoint fp;
  fp.z_star = lu.solve(-p.h);
  fp.region = region;
  fp.is_real = region_of(p, fp.z_star) == region;
  Eigen::EigenSolver<MatrixXd> es(Wr);
  if (es.info() != Eigen::Success)
    throw Error(ErrorCode::singular_region_matrix,
                "eigen decomposition failed for region " + std::to_string(region));
  fp.eigenvalues = es.eigenvalues();
  fp.kind = classify_kind(fp.eigenvalues);
  return fp;
}

std::vector<FixedPoint> find_fixed_points(const ModelParams& p,
                                          const SearchBudget& budget,
                                          std::mt19937_64& rng) {
  p.validate();
  if (budget.max_iters < 1) throw Error(ErrorCode::bad_config, "max_iters must be positive");
  const RegionIndex n_regions = RegionIndex{1} << p.P;
  int restarts = budget.restarts;
  if (restarts <= 0)
    restarts = 32 + 8 * (int)std::min<std::uint64_t>(std::uint64_t{1} << p.P, 1024);

  std::uniform_int_distribution<RegionIndex> pick(0, n_regions - 1);
  std::unordered_map<RegionIndex, FixedPoint> memo;
  std::unordered_set<RegionIndex> singular;
  std::vector<FixedPoint> out;

  for (int chain = 0; chain < restarts; ++chain) {
    RegionIndex k = pick(rng);
    std::unordered_set<RegionIndex> visited;
    for (int step = 0; step < budget.max_iters; ++step) {
      if (singular.count(k)) break;
      auto it = memo.find(k);
      if (it == memo.end()) {
        try {
          it = memo.emplace(k, candidate_fixed_point(p, k)).first;
        } catch (const Error&) {
          singular.insert(k);
          break;
        }
      }
      const FixedPoint& fp = it->second;
      if (fp.is_real) {
        push_unique(out, fp);
        break;
      }
      RegionIndex next = region_of(p, fp.z_star);
      if (!visited.insert(k).second || next == k) break;
      k = next;
    }
  }
  return out;
}

std::vector<FixedPoint> enumerate_fixed_points(const ModelParams& p) {
  p.validate();
  if (p.P > 20) throw Error(ErrorCode::bad_config, "too many regions to enumerate");
  const RegionIndex n_regions = RegionIndex{1} << p.P;
  std::vector<FixedPoint> out;
  for (RegionIndex k = 0; k < n_regions; ++k) {
    try {
      FixedPoint fp = candidate_fixed_point(p, k);
      if (fp.is_real) push_unique(out, std::move(fp));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::singular_region_matrix) throw;
    }
  }
  return out;
}

std::vector<int> crossing_dims(const ModelParams& p,
                               const std::vector<RegionIndex>& regions) {
  const std::size_t r = regions.size();
  if (r == 0) throw Error(ErrorCode::bad_config, "empty itinerary");
  const RegionIndex n_regions = RegionIndex{1} << p.P;
  for (RegionIndex k : regions)
    if (k >= n_regions) throw Error(ErrorCode::bad_config, "region index out of range");
  std::vector<int> dims(r);
  for (std::size_t i = 0; i < r; ++i) {
    const RegionIndex diff = regions[i] ^ regions[(i + 1) % r];
    if (diff == 0 || !std::has_single_bit(diff))
      throw Error(ErrorCode::invalid_itinerary,
                  "consecutive regions must differ in exactly one coordinate");
    dims[i] = p.M - p.P + std::countr_zero(diff) + 1;
  }
  return dims;
}

VectorXd CycleSolution::anchor(int M) const {
  VectorXd z(M);
  const int pinned = dims.back() - 1;
  int yi = 0;
  for (int c = 0; c < M; ++c) z(c) = (c == pinned) ? 0.0 : y(yi++);
  return z;
}

namespace {

// One residual/Jacobian evaluation of the boundary-value system.  States are
// chained through the segment flows; sensitivities are pushed forward with the
// segment propagators so every row of J is analytic.
struct CycleEval {
  VectorXd R;
  MatrixXd J;
  double scale = 1.0;
  std::vector<RegionSolution> sols;  // one per segment
  std::vector<VectorXd> x;           // x[0] = anchor, x[i] = end of segment i
  std::vector<double> T;
};

VectorXd embed_anchor(int M, int pinned_dim, const VectorXd& y) {
  VectorXd z(M);
  int yi = 0;
  for (int c = 0; c < M; ++c) z(c) = (c == pinned_dim - 1) ? 0.0 : y(yi++);
  return z;
}

CycleEval eval_cycle_system(const ModelParams& p, const std::vector<RegionIndex>& regions,
                            const std::vector<int>& dims, const VectorXd& u,
                            const std::unordered_map<RegionIndex, MatrixXcd>& u_inv,
                            SolutionCache* cache) {
  const int M = p.M;
  const int r = (int)regions.size();
  const int n = M - 1 + r;
  const int pinned = dims.back() - 1;

  CycleEval ev;
  ev.T.resize(r);
  for (int i = 0; i < r; ++i) ev.T[i] = std::exp(u(M - 1 + i));
  ev.R.resize(n);
  ev.J.setZero(n, n);
  ev.x.reserve(r + 1);
  ev.sols.reserve(r);

  // d(anchor)/dy: identity on the free coordinates, zero row for the pinned one.
  MatrixXd Gy = MatrixXd::Zero(M, M - 1);
  {
    int yi = 0;
    for (int c = 0; c < M; ++c)
      if (c != pinned) Gy(c, yi++) = 1.0;
  }
  MatrixXd Gs = MatrixXd::Zero(M, r);

  VectorXd cur = embed_anchor(M, dims.back(), u.head(M - 1));
  ev.x.push_back(cur);
  ev.scale = 1.0 + cur.lpNorm<Eigen::Infinity>();

  for (int i = 0; i < r; ++i) {
    RegionSolution sol = region_solution_in(p, regions[i], cur, cache);
    const double Ti = ev.T[i];
    VectorXd xi = eval_point(sol, Ti);
    VectorXd vi = eval_time_derivative(sol, Ti);

    MatrixXd phi = propagator(*sol.eig, Ti, u_inv.at(regions[i]));
    Gy = phi * Gy;
    Gs = phi * Gs;
    Gs.col(i) += vi * Ti;  // dT_i/ds_i = T_i

    ev.R(i) = xi(dims[i] - 1);
    ev.J.row(i).head(M - 1) = Gy.row(dims[i] - 1);
    ev.J.row(i).tail(r) = Gs.row(dims[i] - 1);

    ev.sols.push_back(std::move(sol));
    ev.x.push_back(xi);
    ev.scale = std::max(ev.scale, 1.0 + xi.lpNorm<Eigen::Infinity>());
    cur = std::move(xi);
  }

  int row = r;
  int yi = 0;
  for (int c = 0; c < M; ++c) {
    if (c == pinned) continue;
    ev.R(row) = ev.x[r](c) - ev.x[0](c);
    ev.J.row(row).head(M - 1) = Gy.row(c);
    ev.J(row, yi) -= 1.0;
    ev.J.row(row).tail(r) = Gs.row(c);
    ++row;
    ++yi;
  }
  return ev;
}

}  // namespace

std::optional<CycleSolution> find_limit_cycle(const ModelParams& p,
                                              const std::vector<RegionIndex>& regions,
                                              const VectorXd& y0,
                                              const std::vector<double>& T0,
                                              const CycleOptions& opts,
                                              SolutionCache* cache,
                                              ErrorCode* why) {
  p.validate();
  const int M = p.M;
  const int r = (int)regions.size();
  if (r < 1) throw Error(ErrorCode::bad_config, "empty itinerary");
  if (y0.size() != M - 1)
    throw Error(ErrorCode::bad_config, "anchor guess must have M-1 coordinates");
  if ((int)T0.size() != r)
    throw Error(ErrorCode::bad_config, "need one initial flight time per segment");
  for (double t : T0)
    if (!(t > 0.0) || !std::isfinite(t))
      throw Error(ErrorCode::bad_config, "initial flight times must be positive");
  if (!y0.allFinite()) throw Error(ErrorCode::bad_config, "non-finite anchor guess");
  if (opts.max_iters < 1) throw Error(ErrorCode::bad_config, "max_iters must be positive");

  auto fail = [&](ErrorCode code) -> std::optional<CycleSolution> {
    if (why) *why = code;
    return std::nullopt;
  };

  std::vector<int> dims;
  try {
    dims = crossing_dims(p, regions);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::invalid_itinerary) return fail(e.code());
    throw;
  }

  SolutionCache local;
  if (!cache) cache = &local;

  // Region eigensystems and inverse eigenbases, shared across iterations.
  std::unordered_map<RegionIndex, MatrixXcd> u_inv;
  try {
    for (RegionIndex k : regions)
      if (!u_inv.count(k)) {
        auto eg = cache->get(p, k);
        MatrixXcd inv = eg->U_lu.inverse();
        u_inv.emplace(k, std::move(inv));
      }
  } catch (const Error&) {
    return fail(ErrorCode::no_convergence);
  }

  const int n = M - 1 + r;
  VectorXd u(n);
  u.head(M - 1) = y0;
  for (int i = 0; i < r; ++i) u(M - 1 + i) = std::log(T0[i]);

  CycleEval cur;
  try {
    cur = eval_cycle_system(p, regions, dims, u, u_inv, cache);
  } catch (const Error&) {
    return fail(ErrorCode::no_convergence);
  }

  // Levenberg-Marquardt with diagonal damping; the system is square so this
  // is damped Newton with a residual-decrease guard.
  double mu = 1e-3;
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    if (cur.R.lpNorm<Eigen::Infinity>() <= opts.tol * cur.scale) break;
    MatrixXd JtJ = cur.J.transpose() * cur.J;
    VectorXd g = cur.J.transpose() * cur.R;
    const double r_norm = cur.R.norm();
    bool stepped = false;
    for (int tries = 0; tries < 30 && mu < 1e15; ++tries) {
      MatrixXd aug = JtJ;
      aug.diagonal().array() += mu * (JtJ.diagonal().array() + 1e-12);
      VectorXd delta = aug.ldlt().solve(-g);
      if (!delta.allFinite()) {
        mu *= 10.0;
        continue;
      }
      VectorXd u_try = u + delta;
      if (u_try.tail(r).lpNorm<Eigen::Infinity>() > 50.0) {
        mu *= 10.0;  // flight time under/overflow: shrink the step
        continue;
      }
      CycleEval next;
      try {
        next = eval_cycle_system(p, regions, dims, u_try, u_inv, cache);
      } catch (const Error&) {
        mu *= 10.0;
        continue;
      }
      if (next.R.allFinite() && next.R.norm() < r_norm) {
        u = std::move(u_try);
        cur = std::move(next);
        mu = std::max(mu * 0.35, 1e-14);
        stepped = true;
        break;
      }
      mu *= 10.0;
    }
    if (!stepped) break;
  }
  if (!(cur.R.lpNorm<Eigen::Infinity>() <= opts.accept_tol * cur.scale))
    return fail(ErrorCode::no_convergence);

  // -- Validation of the converged orbit --
  double period = 0.0;
  for (double t : cur.T) period += t;
  for (double t : cur.T)
    if (!(t > 1e-12 * period)) return fail(ErrorCode::invalid_itinerary);

  for (int i = 0; i < r; ++i) {
    const RegionSolution& sol = cur.sols[i];
    const double Ti = cur.T[i];

    // Crossing direction must move the coordinate onto the next region's side.
    const int bit = dims[i] - 1 - (M - p.P);
    const bool goes_on = (regions[(i + 1) % r] >> bit) & 1u;
    const double fdot = eval_dim_derivative(sol, dims[i] - 1, Ti);
    const double speed = 1.0 + vector_field(p, cur.x[i + 1]).lpNorm<Eigen::Infinity>();
    if (std::abs(fdot) <= 1e-10 * speed) return fail(ErrorCode::invalid_itinerary);
    if (goes_on ? (fdot < 0) : (fdot > 0)) return fail(ErrorCode::invalid_itinerary);

    // No crossing strictly inside the flight window.  The window skips the
    // entry instant (the state sits on the previous boundary there, within
    // residual tolerance) and stops just short of the terminal crossing.
    const int entry_dim = dims[(i + r - 1) % r];
    double f0, fd0;
    eval_dim_both(sol, entry_dim - 1, 0.0, &f0, &fd0);
    const double clearing =
        (f0 == 0.0) ? 0.0
                    : (std::abs(fd0) > 0.0 ? 1e3 * std::abs(f0) / std::abs(fd0) : 0.1 * Ti);
    const double t_lo = std::max(1e-7 * Ti, clearing);
    const double t_hi = Ti * (1.0 - 1e-7);
    if (!(t_lo < t_hi)) return fail(ErrorCode::invalid_itinerary);
    try {
      if (first_root(sol, Interval(t_lo, t_hi))) return fail(ErrorCode::invalid_itinerary);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::search_inconclusive) return fail(ErrorCode::invalid_itinerary);
      return fail(ErrorCode::no_convergence);
    }

    // The vector field must agree on both sides of the crossing boundary;
    // evaluated at the boundary projection this is exact for a continuous
    // piecewise-linear field and guards the identity correction used in the
    // multiplier product.
    VectorXd xe = cur.x[i + 1];
    xe(dims[i] - 1) = 0.0;
    VectorXd va = field_in_region(*cache->get(p, regions[i]), xe);
    VectorXd vb = field_in_region(*cache->get(p, regions[(i + 1) % r]), xe);
    const double v_scale = 1.0 + va.lpNorm<Eigen::Infinity>();
    if ((va - vb).lpNorm<Eigen::Infinity>() > 1e-12 * v_scale)
      return fail(ErrorCode::invalid_itinerary);
  }

  CycleSolution cyc;
  cyc.regions = regions;
  cyc.dims = dims;
  cyc.y = u.head(M - 1);
  cyc.flight_times = cur.T;
  cyc.period = period;
  cyc.multipliers = floquet_multipliers(p, regions, cur.T, cache);

  int trivial = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < cyc.multipliers.size(); ++i) {
    const double d = std::abs(cyc.multipliers(i) - std::complex<double>(1.0, 0.0));
    if (d < best) {
      best = d;
      trivial = i;
    }
  }
  if (!(best <= 1e-6)) return fail(ErrorCode::no_convergence);
  cyc.stable = true;
  for (int i = 0; i < cyc.multipliers.size(); ++i)
    if (i != trivial && !(std::abs(cyc.multipliers(i)) < 1.0)) cyc.stable = false;
  return cyc;
}

std::vector<ItineraryGuess> propose_itineraries(const ModelParams& p,
                                                const Trajectory& traj,
                                                int max_proposals) {
  p.validate();
  const auto& ev = traj.events;
  const int n = (int)ev.size();
  std::vector<ItineraryGuess> out;
  if (n < 2 || max_proposals < 1) return out;

  using Key = std::pair<RegionIndex, int>;
  auto key_of = [&](int i) { return Key{ev[i].region_after, ev[i].dim}; };

  std::set<std::vector<Key>> seen;
  for (int i = 0; i + 1 < n && (int)out.size() < max_proposals; ++i) {
    int j = -1;
    for (int k = i + 1; k < n; ++k)
      if (key_of(k) == key_of(i)) {
        j = k;
        break;
      }
    if (j < 0) continue;
    const int r = j - i;

    // The window must be a clean chain: each event hands exactly its crossing
    // region to the next (the post-crossing nudge can hop extra boundaries;
    // such windows are not usable itineraries).
    bool clean = true;
    std::vector<RegionIndex> regions(r);
    for (int t = 0; t < r; ++t) {
      regions[t] = ev[i + t].region_after;
      if (ev[i + t + 1].region_before != ev[i + t].region_after) clean = false;
    }
    if (!clean) continue;
    std::vector<int> dims;
    try {
      dims = crossing_dims(p, regions);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::invalid_itinerary) continue;
      throw;
    }
    for (int t = 0; t < r; ++t)
      if (dims[t] != ev[i + t + 1].dim) clean = false;
    if (!clean) continue;

    std::vector<Key> signature(r);
    for (int t = 0; t < r; ++t) signature[t] = Key{regions[t], dims[t]};
    std::vector<Key> canon = signature;
    for (int s = 1; s < r; ++s) {
      std::vector<Key> rot(signature.begin() + s, signature.end());
      rot.insert(rot.end(), signature.begin(), signature.begin() + s);
      if (rot < canon) canon = rot;
    }
    if (!seen.insert(canon).second) continue;

    ItineraryGuess guess;
    guess.regions = regions;
    guess.y0.resize(p.M - 1);
    {
      const int pinned = ev[i].dim - 1;
      int yi = 0;
      for (int c = 0; c < p.M; ++c)
        if (c != pinned) guess.y0(yi++) = ev[i].z_at_switch(c);
    }
    guess.T0.resize(r);
    for (int t = 0; t < r; ++t) guess.T0[t] = ev[i + t + 1].t_abs - ev[i + t].t_abs;
    bool positive = true;
    for (double t : guess.T0)
      if (!(t > 0.0)) positive = false;
    if (!positive) continue;
    out.push_back(std::move(guess));
  }
  return out;
}

VectorXcd floquet_multipliers(const ModelParams& p,
                              const std::vector<RegionIndex>& regions,
                              const std::vector<double>& flight_times,
                              SolutionCache* cache) {
  p.validate();
  if (regions.empty() || regions.size() != flight_times.size())
    throw Error(ErrorCode::bad_config, "need one flight time per region");
  for (double t : flight_times)
    if (!(t > 0.0) || !std::isfinite(t))
      throw Error(ErrorCode::bad_config, "flight times must be positive");
  SolutionCache local;
  if (!cache) cache = &local;

  MatrixXd phi = MatrixXd::Identity(p.M, p.M);
  for (std::size_t i = 0; i < regions.size(); ++i) {
    auto eg = cache->get(p, regions[i]);
    MatrixXcd inv = eg->U_lu.inverse();
    phi = propagator(*eg, flight_times[i], inv) * phi;
  }
  Eigen::EigenSolver<MatrixXd> es(phi);
  if (es.info() != Eigen::Success)
    throw Error(ErrorCode::no_convergence, "monodromy eigen decomposition failed");
  return es.eigenvalues();
}

}  // namespace cplrnn
