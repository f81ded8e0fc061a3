#pragma once

#include <Eigen/Dense>
#include <random>

#include "cplrnn/data.hpp"

namespace cplrnn {

// Chaotic three-variable convection benchmark. `dt` is the emitted sampling
// step in system time; each emitted step is integrated with `oversample`
// internal fixed-step fourth-order Runge-Kutta substeps. The first
// `transient` emitted steps are run but discarded so recording starts on the
// attractor, and emitted times are multiplied by `time_scale`.
struct LorenzParams {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  double dt = 1e-2;
  int samples = 100000;
  Eigen::Vector3d z0{1.0, 1.0, 1.0};
  double time_scale = 100.0;
  int transient = 1000;
  int oversample = 10;
};

// Vector field of the convection system.
Eigen::Vector3d lorenz_rhs(const Eigen::Vector3d& z, double sigma, double rho,
                           double beta);

// One classic fourth-order Runge-Kutta step of size h on that field.
Eigen::Vector3d lorenz_step(const Eigen::Vector3d& z, double h, double sigma,
                            double rho, double beta);

// Throws non_finite_state if the integration leaves the trusted range.
Dataset gen_lorenz(const LorenzParams& params = {});

// Leaky integrate-and-fire neuron under constant current. The membrane
// potential follows V(t) = R*I + (V0 - R*I) e^{-(t-t0)/(RC)} between resets,
// so threshold crossings are computed in closed form, one grid sample per
// spike is rendered at V_th (making the discontinuity visible), and the
// potential restarts from V_reset at the exact crossing time. Subthreshold
// drive (R*I <= V_th) emits the plain decay and sets params["subthreshold"].
struct LifParams {
  double R = 5.0;
  double C = 1e-3;
  double V_th = 1.0;
  double V_reset = 0.0;
  double I = 0.25;
  // Chosen so roughly 50 samples cover one default inter-spike interval;
  // recorded in the dataset meta.
  double dt = 1.6e-4;
  int samples = 1000;
};

// Exact spike times land in meta.events. Throws minimum_refractory when the
// configuration cannot separate consecutive spikes (V_reset >= V_th, or an
// inter-spike interval not longer than dt).
Dataset gen_lif(const LifParams& params = {});

// Uniform random subset of the samples without replacement, sorted, with the
// first and last samples always retained; clears the regular flag. A
// fraction of 1 returns the dataset unchanged.
Dataset subsample_irregular(const Dataset& ds, double fraction,
                            std::mt19937_64& rng);

// Rebuilds a state space from one scalar series: output row for source index
// s is (x_s, x_{s-lag}, ..., x_{s-(dim-1)*lag}); rows without full history
// are dropped. Requires a regular single-column dataset longer than
// (dim-1)*lag; irregular input throws embed_requires_regular.
Dataset delay_embed(const Dataset& series, int dim = 6, int lag = 13);

}  // namespace cplrnn
