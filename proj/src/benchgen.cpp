#include "cplrnn/benchgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace cplrnn {

namespace {

constexpr double kStateCap = 1e8;

void check_finite_state(const Eigen::Vector3d& z) {
  if (!z.allFinite() || z.cwiseAbs().maxCoeff() > kStateCap)
    throw Error(ErrorCode::non_finite_state,
                "integration left the trusted range");
}

}  // namespace

Eigen::Vector3d lorenz_rhs(const Eigen::Vector3d& z, double sigma, double rho,
                           double beta) {
  return {sigma * (z(1) - z(0)), z(0) * (rho - z(2)) - z(1),
          z(0) * z(1) - beta * z(2)};
}

Eigen::Vector3d lorenz_step(const Eigen::Vector3d& z, double h, double sigma,
                            double rho, double beta) {
  const Eigen::Vector3d k1 = lorenz_rhs(z, sigma, rho, beta);
  const Eigen::Vector3d k2 = lorenz_rhs(z + 0.5 * h * k1, sigma, rho, beta);
  const Eigen::Vector3d k3 = lorenz_rhs(z + 0.5 * h * k2, sigma, rho, beta);
  const Eigen::Vector3d k4 = lorenz_rhs(z + h * k3, sigma, rho, beta);
  return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Dataset gen_lorenz(const LorenzParams& p) {
  if (!(p.dt > 0.0) || !std::isfinite(p.dt) || p.samples < 1 ||
      p.transient < 0 || p.oversample < 1 || !(p.time_scale > 0.0) ||
      !std::isfinite(p.sigma + p.rho + p.beta + p.time_scale) ||
      !p.z0.allFinite())
    throw Error(ErrorCode::bad_config, "invalid convection-benchmark setup");

  const double h = p.dt / p.oversample;
  const auto advance_one_sample = [&](Eigen::Vector3d& z) {
    for (int s = 0; s < p.oversample; ++s)
      z = lorenz_step(z, h, p.sigma, p.rho, p.beta);
    check_finite_state(z);
  };

  Eigen::Vector3d z = p.z0;
  for (int n = 0; n < p.transient; ++n) advance_one_sample(z);

  Dataset ds;
  ds.times.resize(p.samples);
  ds.values.resize(p.samples, 3);
  for (int n = 0; n < p.samples; ++n) {
    if (n > 0) advance_one_sample(z);
    ds.times(n) = n * p.dt * p.time_scale;
    ds.values.row(n) = z.transpose();
  }

  ds.meta.generator = "lorenz63";
  ds.meta.params = {{"sigma", p.sigma},
                    {"rho", p.rho},
                    {"beta", p.beta},
                    {"dt", p.dt},
                    {"time_scale", p.time_scale},
                    {"transient", static_cast<double>(p.transient)},
                    {"oversample", static_cast<double>(p.oversample)},
                    {"z0_1", p.z0(0)},
                    {"z0_2", p.z0(1)},
                    {"z0_3", p.z0(2)}};
  ds.meta.regular = true;
  return ds;
}

Dataset gen_lif(const LifParams& p) {
  if (!(p.R > 0.0) || !(p.C > 0.0) || !(p.dt > 0.0) || p.samples < 1 ||
      !std::isfinite(p.R + p.C + p.V_th + p.V_reset + p.I + p.dt))
    throw Error(ErrorCode::bad_config, "invalid neuron-benchmark setup");
  if (p.V_reset >= p.V_th)
    throw Error(ErrorCode::minimum_refractory,
                "reset at or above threshold re-spikes immediately");

  const double tau = p.R * p.C;
  const double drive = p.R * p.I;  // asymptotic potential
  const bool spiking = drive > p.V_th;
  double isi = 0.0;
  if (spiking) {
    isi = tau * std::log((drive - p.V_reset) / (drive - p.V_th));
    if (isi <= p.dt)
      throw Error(ErrorCode::minimum_refractory,
                  "sampling step cannot separate consecutive spikes");
  }

  Dataset ds;
  ds.times.resize(p.samples);
  ds.values.resize(p.samples, 1);
  double origin = 0.0;  // time of the most recent reset
  for (int n = 0; n < p.samples; ++n) {
    const double t = n * p.dt;
    ds.times(n) = t;
    if (spiking && t >= origin + isi) {
      // First grid sample at or past the exact crossing renders the spike;
      // the potential itself restarts from the crossing time.
      ds.values(n, 0) = p.V_th;
      origin += isi;
      ds.meta.events.push_back(origin);
    } else {
      ds.values(n, 0) = drive + (p.V_reset - drive) * std::exp((origin - t) / tau);
    }
  }

  ds.meta.generator = "lif";
  ds.meta.params = {{"R", p.R},       {"C", p.C}, {"V_th", p.V_th},
                    {"V_reset", p.V_reset}, {"I", p.I}, {"dt", p.dt}};
  if (!spiking) ds.meta.params["subthreshold"] = 1.0;
  ds.meta.regular = true;
  return ds;
}

Dataset subsample_irregular(const Dataset& ds, double fraction,
                            std::mt19937_64& rng) {
  ds.validate();
  if (!(fraction > 0.0) || fraction > 1.0)
    throw Error(ErrorCode::bad_config, "fraction must lie in (0, 1]");
  const Eigen::Index total = ds.times.size();
  if (total < 2)
    throw Error(ErrorCode::bad_config, "need at least two samples to subsample");

  const Eigen::Index keep = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(total))),
      2, total);
  if (keep == total) return ds;

  std::vector<Eigen::Index> interior(static_cast<std::size_t>(total - 2));
  std::iota(interior.begin(), interior.end(), Eigen::Index{1});
  std::vector<Eigen::Index> picked;
  picked.reserve(static_cast<std::size_t>(keep));
  picked.push_back(0);
  std::sample(interior.begin(), interior.end(), std::back_inserter(picked),
              static_cast<std::size_t>(keep - 2), rng);
  picked.push_back(total - 1);

  Dataset out;
  out.times.resize(keep);
  out.values.resize(keep, ds.values.cols());
  for (Eigen::Index r = 0; r < keep; ++r) {
    out.times(r) = ds.times(picked[static_cast<std::size_t>(r)]);
    out.values.row(r) = ds.values.row(picked[static_cast<std::size_t>(r)]);
  }
  out.meta = ds.meta;
  out.meta.regular = false;
  out.meta.params["subsample_fraction"] = fraction;
  return out;
}

Dataset delay_embed(const Dataset& series, int dim, int lag) {
  series.validate();
  if (series.values.cols() != 1)
    throw Error(ErrorCode::bad_config, "delay embedding needs a scalar series");
  if (dim < 1 || lag < 1)
    throw Error(ErrorCode::bad_config,
                "embedding dimension and lag must be positive");
  if (!series.meta.regular)
    throw Error(ErrorCode::embed_requires_regular,
                "delay embedding needs a regular time grid");
  const Eigen::Index total = series.times.size();
  const Eigen::Index history = static_cast<Eigen::Index>(dim - 1) * lag;
  if (total <= history)
    throw Error(ErrorCode::bad_config,
                "series shorter than the embedding history");

  const Eigen::Index rows = total - history;
  Dataset out;
  out.times.resize(rows);
  out.values.resize(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index s = r + history;
    out.times(r) = series.times(s);
    for (int j = 0; j < dim; ++j)
      out.values(r, j) = series.values(s - static_cast<Eigen::Index>(j) * lag, 0);
  }
  out.meta = series.meta;
  out.meta.params["embed_dim"] = static_cast<double>(dim);
  out.meta.params["embed_lag"] = static_cast<double>(lag);
  return out;
}

}  // namespace cplrnn
