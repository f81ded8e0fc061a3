#pragma once

#include <Eigen/Dense>

#include "cplrnn/errors.hpp"

namespace cplrnn {

// Knobs for the reconstruction metrics. bins_per_dim sets the histogram
// resolution of the state-space overlap measure, spectrum_smoothing is the
// Gaussian kernel width (in frequency bins) applied to power spectra before
// the Hellinger comparison, and mae_horizon is the default short-term
// prediction window in samples.
struct MetricConfig {
  int bins_per_dim = 30;
  double spectrum_smoothing = 0.0;
  int mae_horizon = 25;

  void validate() const;
};

// True when a generated trajectory left the trusted numeric range: any
// non-finite entry or any magnitude above 1e10.
bool is_divergent(const Eigen::MatrixXd& samples);

// Kullback-Leibler divergence between binned occupation measures of the two
// sample sets (rows = samples, columns = state dimensions, equal column
// counts). Bins are an axis-aligned grid over the padded joint bounding box;
// both histograms receive a +1 pseudo-count per bin so the divergence is
// finite for any pair and exactly zero for identical histograms. A divergent
// `generated` set returns +infinity. Throws bad_config on non-finite truth
// data or mismatched dimensions, histogram_too_large when bins_per_dim^N
// would exceed 1e8 bins.
double d_stsp(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& generated,
              const MetricConfig& cfg = {});

// Power spectrum of one series: mean is removed, FFT magnitude squared is
// taken on the one-sided band (length floor(n/2)+1), then smoothed with a
// reflected Gaussian kernel of width sigma bins (sigma = 0 leaves it raw).
// The result is not normalized.
Eigen::VectorXd smoothed_power_spectrum(const Eigen::VectorXd& series,
                                        double sigma);

// Average Hellinger distance between normalized smoothed power spectra,
// taken per column over the common prefix of the two series and averaged
// across columns. Ranges over [0, 1]. A constant column on one side only
// contributes 1 (no shared temporal structure); constant on both sides
// contributes 0. Throws bad_config on non-finite input, empty series, or
// mismatched column counts.
double d_hellinger(const Eigen::MatrixXd& truth,
                   const Eigen::MatrixXd& generated,
                   const MetricConfig& cfg = {});

struct MaeResult {
  double value = 0.0;
  // Set when the requested horizon exceeded the available rows and the
  // average was taken over the shorter span instead.
  bool truncated = false;
};

// Mean absolute error between the first `horizon` rows of the two series,
// averaged over all entries. Throws bad_config on non-finite input, empty
// overlap, mismatched column counts, or horizon < 1.
MaeResult mae(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& generated,
              int horizon);

}  // namespace cplrnn
