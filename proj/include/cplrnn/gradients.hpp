#pragma once

#include <random>
#include <utility>
#include <vector>

#include "cplrnn/event_solver.hpp"
#include "cplrnn/model.hpp"

namespace cplrnn {

// Accumulated loss gradients with respect to the model parameters, plus a
// count of switching events whose sensitivity had to be dropped (tangential
// or numerically degenerate crossings).
struct ParamGrad {
  Eigen::VectorXd dA;
  Eigen::MatrixXd dW;
  Eigen::VectorXd dh;
  long discarded_segments = 0;

  static ParamGrad zero(int M) {
    ParamGrad g;
    g.dA = Eigen::VectorXd::Zero(M);
    g.dW = Eigen::MatrixXd::Zero(M, M);
    g.dh = Eigen::VectorXd::Zero(M);
    return g;
  }

  ParamGrad& operator+=(const ParamGrad& o) {
    dA += o.dA;
    dW += o.dW;
    dh += o.dh;
    discarded_segments += o.discarded_segments;
    return *this;
  }

  double squared_norm() const {
    return dA.squaredNorm() + dW.squaredNorm() + dh.squaredNorm();
  }

  bool all_finite() const {
    return dA.allFinite() && dW.allFinite() && dh.allFinite();
  }
};

// Cancellation-free magnitude estimate for the time derivative of one
// solution coordinate: sum of |lambda|-weighted term magnitudes.  Used to
// decide whether a crossing is tangential (derivative indistinguishable
// from zero at this scale).
double dim_derivative_scale(const RegionSolution& sol, int dim, double t);

// One upstream cotangent on the flow map: d(loss)/d z(t) at segment-local
// time t.
using StateUpstream = std::pair<double, Eigen::VectorXd>;

// Adjoint of the per-region flow map (z0, A, W, h) -> {z(t_k)}.  Folds the
// given state cotangents back through the analytic solution and accumulates
// into `acc`; if `dz0` is non-null the cotangent of the entry state is added
// into it.  Uses the eigenbasis form of the propagator adjoint with
// divided-difference factors (e^{li t} - e^{lj t}) / (li - lj), evaluated in
// a cancellation-safe form near coincident exponents.
void region_solution_vjp(const RegionSolution& sol,
                         const std::vector<StateUpstream>& upstream,
                         ParamGrad& acc, Eigen::VectorXd* dz0 = nullptr);

// Sensitivity of a switching time via the implicit function theorem:
// given d(loss)/d t_switch = upstream, accumulates the induced parameter
// and entry-state cotangents.  Returns false (and bumps the discard
// counter) when the crossing is tangential: |f'(t)| <= 1e-8 * scale.
// `dim` is 1-based, matching SwitchEvent.
bool switch_time_grad(const RegionSolution& sol, double t_switch, int dim,
                      double upstream, ParamGrad& acc,
                      Eigen::VectorXd* dz0 = nullptr);

// Adjoint of solve_trajectory: reverse sweep over the recorded segments.
// `state_upstream[i]` is d(loss)/d z(times[i]) for the i-th emitted state.
// Switching-time sensitivities are folded in through switch_time_grad;
// tangential crossings are dropped and counted.  Throws
// DEGENERATE_GRADIENT when more than half of the event-carrying segments
// had their switch sensitivity discarded.  Requires the trajectory to have
// been solved with record_segments = true.
ParamGrad trajectory_vjp(const ModelParams& params, const Trajectory& tr,
                         const std::vector<Eigen::VectorXd>& state_upstream,
                         Eigen::VectorXd* dz0 = nullptr);

// One sparse-teacher-forced forward pass over an observed sequence.
// Every tau-th observation index (0, tau, 2*tau, ...) overwrites the first
// N latent coordinates with the observation plus N(0, noise^2) jitter;
// hidden coordinates persist across forcing.  Latent hidden states start at
// zero.  Returns one prediction row per observation index 1..T-1, each
// produced by free evolution from the most recent forced state.
struct StfSpan {
  Trajectory tr;           // segment-recorded solve over this span
  double t0_abs = 0.0;     // absolute time of the forced start
  Eigen::VectorXd z_start; // latent state right after forcing
  int pred_begin = 0;      // row in predictions of this span's first output
};

struct StfResult {
  Eigen::MatrixXd predictions; // (T-1) x N; row j-1 predicts observation j
  std::vector<StfSpan> spans;
  long total_events = 0;
};

StfResult stf_forward(const ModelParams& params,
                      const Eigen::Ref<const Eigen::VectorXd>& t,
                      const Eigen::Ref<const Eigen::MatrixXd>& X, int tau,
                      double noise_level, std::mt19937_64& rng,
                      SolutionCache* cache = nullptr);

// Adjoint of stf_forward for cotangents on the prediction rows.  Gradients
// do not flow through forced read-out coordinates (they are data), but do
// flow through the persisting hidden coordinates across spans.
ParamGrad stf_backward(const ModelParams& params, const StfResult& fw,
                       const Eigen::Ref<const Eigen::MatrixXd>& pred_bar);

// Mean squared error normalized by the full element count:
// (1 / (rows * cols)) * sum of squared differences.
double mse_loss(const Eigen::Ref<const Eigen::MatrixXd>& pred,
                const Eigen::Ref<const Eigen::MatrixXd>& obs);

}  // namespace cplrnn
