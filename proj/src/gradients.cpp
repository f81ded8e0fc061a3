#include "cplrnn/gradients.hpp"

#include <cmath>
#include <complex>
#include <string>
#include <utility>

#include "cplrnn/errors.hpp"

namespace cplrnn {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using cd = std::complex<double>;

namespace {

// |f'| below this multiple of the derivative's term-magnitude sum means the
// crossing slope is lost to cancellation: the switch-time sensitivity blows
// up and must be dropped instead.
constexpr double kTangentialRel = 1e-8;

}  // namespace

double dim_derivative_scale(const RegionSolution& sol, int dim, double t) {
  const RegionEigen& eg = *sol.eig;
  double s = 0.0;
  for (int l : eg.real_terms)
    s += std::fabs(sol.ctilde(dim, l).real()) * std::abs(eg.lambda(l)) *
         std::exp(eg.lambda(l).real() * t);
  for (int l : eg.pair_terms)
    s += 2.0 * std::abs(sol.ctilde(dim, l)) * std::abs(eg.lambda(l)) *
         std::exp(eg.lambda(l).real() * t);
  return s;
}

void region_solution_vjp(const RegionSolution& sol,
                         const std::vector<StateUpstream>& upstream,
                         ParamGrad& acc, VectorXd* dz0) {
  if (upstream.empty()) return;
  const RegionEigen& eg = *sol.eig;
  const int M = sol.M();

  // Per-upstream accumulation in the eigenbasis.  For z(t) = e^{Wo t} v - p
  // with v = z0 + p, the propagator cotangent is
  //   Wo_bar = Re(U^-T [ (U^T g) (U^-1 v)^T o F(t) ] U^T),
  // where F_ij = (e^{li t} - e^{lj t}) / (li - lj) and F_ii = t e^{li t}.
  MatrixXcd K = MatrixXcd::Zero(M, M);
  VectorXcd wsum = VectorXcd::Zero(M);
  VectorXd gsum = VectorXd::Zero(M);
  VectorXcd Ehalf(M), E(M), r(M);
  for (const auto& [t, g] : upstream) {
    for (int l = 0; l < M; ++l) {
      Ehalf(l) = std::exp(0.5 * t * eg.lambda(l));
      E(l) = Ehalf(l) * Ehalf(l);
    }
    r.noalias() = eg.U.transpose() * g.cast<cd>();
    wsum += E.cwiseProduct(r);
    gsum += g;
    for (int i = 0; i < M; ++i) {
      const cd rc = r(i);
      if (rc == cd(0.0, 0.0)) continue;
      for (int j = 0; j < M; ++j) {
        const cd x = 0.5 * t * (eg.lambda(i) - eg.lambda(j));
        cd F;
        if (std::abs(x) < 0.05) {
          // divided difference by the sinch series: t e^{(li+lj)t/2} sinh(x)/x
          const cd x2 = x * x;
          const cd S = 1.0 + x2 * (1.0 / 6.0 + x2 * (1.0 / 120.0 + x2 / 5040.0));
          F = t * Ehalf(i) * Ehalf(j) * S;
        } else {
          F = (E(i) - E(j)) / (eg.lambda(i) - eg.lambda(j));
        }
        K(i, j) += rc * sol.c(j) * F;
      }
    }
  }

  // Cotangent of v = z0 + p; the conjugate structure makes these real.
  const VectorXcd vbar_c = eg.U_lu.transpose().solve(wsum);
  const VectorXd vbar = vbar_c.real();
  const MatrixXcd G = eg.U_lu.transpose().solve(MatrixXcd(K * eg.U.transpose()));
  MatrixXd Wbar = G.real();

  // p feeds v = z0 + p and the output -p, then p = Wo^{-1} h.
  const VectorXd pbar = vbar - gsum;
  const VectorXd q = eg.W_lu.transpose().solve(pbar);
  acc.dh += q;
  Wbar.noalias() -= q * eg.p_part.transpose();

  // Wo = diag(A) + W D: diagonal feeds A, active columns feed W.
  acc.dA += Wbar.diagonal();
  const int MP = M - eg.P;
  for (int j = 0; j < M; ++j) {
    const bool active = j < MP || ((eg.region >> (j - MP)) & 1u) != 0u;
    if (active) acc.dW.col(j) += Wbar.col(j);
  }
  if (dz0) *dz0 += vbar;
}

bool switch_time_grad(const RegionSolution& sol, double t_switch, int dim,
                      double upstream, ParamGrad& acc, VectorXd* dz0) {
  const int d0 = dim - 1;
  const double fdot = eval_dim_derivative(sol, d0, t_switch);
  const double scale = dim_derivative_scale(sol, d0, t_switch);
  if (std::fabs(fdot) <= kTangentialRel * scale) {
    ++acc.discarded_segments;
    return false;
  }
  if (upstream != 0.0) {
    VectorXd u = VectorXd::Zero(sol.M());
    u(d0) = -upstream / fdot;
    region_solution_vjp(sol, {{t_switch, u}}, acc, dz0);
  }
  return true;
}

ParamGrad trajectory_vjp(const ModelParams& params, const Trajectory& tr,
                         const std::vector<VectorXd>& state_upstream,
                         VectorXd* dz0) {
  const int M = params.M;
  const size_t K = tr.segments.size();
  if (state_upstream.size() != tr.times.size())
    throw Error(ErrorCode::bad_config,
                "trajectory_vjp needs one upstream vector per emitted state");
  if (K == 0)
    throw Error(ErrorCode::bad_config,
                "trajectory_vjp needs a trajectory solved with segments "
                "recorded");

  ParamGrad acc = ParamGrad::zero(M);

  // Bucket the emitted-state cotangents into their source segments; an
  // emission belongs to the segment whose [t_start, t_next) window holds it
  // (the final time lands in the last segment).
  std::vector<std::vector<StateUpstream>> bucket(K);
  size_t k = 0;
  for (size_t i = 0; i < tr.times.size(); ++i) {
    const double ti = tr.times[i];
    while (k + 1 < K && ti >= tr.segments[k].t_next) ++k;
    bucket[k].push_back({ti - tr.segments[k].t_start, state_upstream[i]});
  }

  // Reverse sweep.  ybar is the cotangent of the next segment's entry state,
  // sbar the cotangent of its absolute origin.
  VectorXd ybar = VectorXd::Zero(M);
  double sbar = 0.0;
  long event_segments = 0;
  for (size_t kk = K; kk-- > 0;) {
    const TrajectorySegment& seg = tr.segments[kk];
    const bool last = (kk + 1 == K);
    std::vector<StateUpstream> ups = std::move(bucket[kk]);

    // Emitted states depend on the origin through their local time.
    double sbar_cur = 0.0;
    for (const auto& [tau, g] : ups)
      sbar_cur -= g.dot(eval_time_derivative(seg.sol, tau));

    if (!last) {
      // The next segment starts from this solution at t_next - t_start and
      // its origin advances by the same amount, whether the handoff came
      // from a certified switch or a fixed-time boundary step.
      const double tau_next = seg.t_next - seg.t_start;
      if (ybar.squaredNorm() != 0.0) ups.push_back({tau_next, ybar});
      sbar_cur += sbar;

      if (seg.has_event) {
        ++event_segments;
        // Implicit switching-time sensitivity: an upstream sigbar becomes
        // an extra cotangent -(sigbar / f') e_d on the boundary coordinate.
        const int d0 = seg.event_dim - 1;
        const double fdot = eval_dim_derivative(seg.sol, d0, seg.sigma);
        const double scale = dim_derivative_scale(seg.sol, d0, seg.sigma);
        if (std::fabs(fdot) <= kTangentialRel * scale) {
          ++acc.discarded_segments;
        } else {
          double sigbar = sbar;
          if (ybar.squaredNorm() != 0.0)
            sigbar += ybar.dot(eval_time_derivative(seg.sol, tau_next));
          if (sigbar != 0.0) {
            VectorXd u = VectorXd::Zero(M);
            u(d0) = -sigbar / fdot;
            ups.push_back({seg.sigma, u});
          }
        }
      }
    }

    VectorXd ybar_new = VectorXd::Zero(M);
    if (!ups.empty()) region_solution_vjp(seg.sol, ups, acc, &ybar_new);
    ybar = std::move(ybar_new);
    sbar = sbar_cur;
  }

  if (event_segments > 0 && 2 * acc.discarded_segments > event_segments)
    throw Error(ErrorCode::degenerate_gradient,
                std::to_string(acc.discarded_segments) + " of " +
                    std::to_string(event_segments) +
                    " switching segments were tangential");
  if (dz0) *dz0 = ybar;
  return acc;
}

StfResult stf_forward(const ModelParams& params,
                      const Eigen::Ref<const VectorXd>& t,
                      const Eigen::Ref<const MatrixXd>& X, int tau,
                      double noise_level, std::mt19937_64& rng,
                      SolutionCache* cache) {
  params.validate();
  const int T = static_cast<int>(t.size());
  const int N = params.N;
  const int M = params.M;
  if (X.rows() != T || X.cols() != N)
    throw Error(ErrorCode::bad_config, "observation matrix must be T x N");
  if (T < 2)
    throw Error(ErrorCode::bad_config, "need at least two observations");
  if (tau < 1)
    throw Error(ErrorCode::bad_config, "teacher forcing interval must be >= 1");
  for (int j = 1; j < T; ++j)
    if (!(t(j) > t(j - 1)))
      throw Error(ErrorCode::bad_config,
                  "observation times must increase strictly");

  StfResult out;
  out.predictions.resize(T - 1, N);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorXd z = VectorXd::Zero(M);
  const auto force = [&](int j) {
    for (int n = 0; n < N; ++n) {
      const double eps = noise_level > 0.0 ? noise_level * gauss(rng) : 0.0;
      z(n) = X(j, n) + eps;
    }
  };
  force(0);

  int a = 0;
  while (a < T - 1) {
    const int e = std::min(a + tau, T - 1);
    std::vector<double> times;
    times.reserve(e - a);
    for (int j = a + 1; j <= e; ++j) times.push_back(t(j) - t(a));

    StfSpan span;
    span.t0_abs = t(a);
    span.z_start = z;
    span.pred_begin = a;
    span.tr = solve_trajectory(params, z, times, SolveLimits{}, cache);
    if (span.tr.truncated)
      throw Error(ErrorCode::search_inconclusive,
                  "event budget exhausted before the forcing span completed");
    for (int i = 0; i < e - a; ++i)
      out.predictions.row(a + i) = span.tr.states[i].head(N).transpose();
    out.total_events += static_cast<long>(span.tr.events.size());
    z = span.tr.states.back();
    out.spans.push_back(std::move(span));

    a = e;
    if (a < T - 1) force(a);
  }
  return out;
}

ParamGrad stf_backward(const ModelParams& params, const StfResult& fw,
                       const Eigen::Ref<const MatrixXd>& pred_bar) {
  const int M = params.M;
  const int N = params.N;
  if (pred_bar.rows() != fw.predictions.rows() ||
      pred_bar.cols() != fw.predictions.cols())
    throw Error(ErrorCode::bad_config,
                "prediction cotangent shape must match the forward pass");

  ParamGrad acc = ParamGrad::zero(M);
  // Cotangent of the hidden block of the next span's start state; the
  // read-out block is overwritten by data at forcing, so its cotangent
  // stops there.
  VectorXd hid_bar = VectorXd::Zero(M - N);
  for (auto it = fw.spans.rbegin(); it != fw.spans.rend(); ++it) {
    const StfSpan& sp = *it;
    const size_t n = sp.tr.times.size();
    std::vector<VectorXd> gb(n, VectorXd::Zero(M));
    for (size_t i = 0; i < n; ++i)
      gb[i].head(N) =
          pred_bar.row(sp.pred_begin + static_cast<int>(i)).transpose();
    if (M > N && hid_bar.squaredNorm() != 0.0) gb[n - 1].tail(M - N) += hid_bar;

    VectorXd dz0 = VectorXd::Zero(M);
    acc += trajectory_vjp(params, sp.tr, gb, &dz0);
    if (M > N) hid_bar = dz0.tail(M - N);
  }
  return acc;
}

double mse_loss(const Eigen::Ref<const MatrixXd>& pred,
                const Eigen::Ref<const MatrixXd>& obs) {
  if (pred.rows() != obs.rows() || pred.cols() != obs.cols())
    throw Error(ErrorCode::bad_config, "loss operands must share a shape");
  if (pred.size() == 0)
    throw Error(ErrorCode::bad_config, "loss needs at least one element");
  return (pred - obs).squaredNorm() / static_cast<double>(pred.size());
}

}  // namespace cplrnn
