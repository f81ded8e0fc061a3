#include "cplrnn/metrics.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cplrnn {

namespace {

constexpr double kDivergenceCap = 1e10;
constexpr double kMaxBins = 1e8;

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

// max |x - mean| relative to the mean's magnitude; flags series with no
// temporal structure so the spectral distance can use its degenerate
// conventions instead of normalizing a zero spectrum.
bool is_constant(const Eigen::VectorXd& x) {
  const double mean = x.mean();
  const double dev = (x.array() - mean).abs().maxCoeff();
  return dev <= 1e-13 * (1.0 + std::abs(mean));
}

// Edge-duplicating reflection of an out-of-range index into [0, n).
int reflect_index(int idx, int n) {
  while (idx < 0 || idx >= n) {
    if (idx < 0) idx = -idx - 1;
    else idx = 2 * n - 1 - idx;
  }
  return idx;
}

}  // namespace

void MetricConfig::validate() const {
  if (bins_per_dim < 2)
    throw Error(ErrorCode::bad_config, "bins_per_dim must be at least 2");
  if (!std::isfinite(spectrum_smoothing) || spectrum_smoothing < 0.0)
    throw Error(ErrorCode::bad_config,
                "spectrum_smoothing must be finite and non-negative");
  if (mae_horizon < 1)
    throw Error(ErrorCode::bad_config, "mae_horizon must be at least 1");
}

bool is_divergent(const Eigen::MatrixXd& samples) {
  if (!samples.allFinite()) return true;
  return samples.cwiseAbs().maxCoeff() > kDivergenceCap;
}

double d_stsp(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& generated,
              const MetricConfig& cfg) {
  cfg.validate();
  const Eigen::Index n_dim = truth.cols();
  if (n_dim < 1 || truth.rows() < 1)
    throw Error(ErrorCode::bad_config, "truth sample set is empty");
  if (generated.cols() != n_dim)
    throw Error(ErrorCode::bad_config, "sample sets differ in dimension");
  if (generated.rows() < 1)
    throw Error(ErrorCode::bad_config, "generated sample set is empty");
  if (!all_finite(truth))
    throw Error(ErrorCode::bad_config, "truth samples contain NaN/Inf");
  if (is_divergent(generated))
    return std::numeric_limits<double>::infinity();

  const int m = cfg.bins_per_dim;
  double bins_d = 1.0;
  for (Eigen::Index d = 0; d < n_dim; ++d) {
    bins_d *= m;
    if (bins_d > kMaxBins)
      throw Error(ErrorCode::histogram_too_large,
                  std::to_string(m) + "^" + std::to_string(n_dim) +
                      " bins exceed the 1e8 cap");
  }
  const std::uint64_t n_bins = static_cast<std::uint64_t>(bins_d);

  // Joint axis-aligned bounds over both sets, padded so boundary samples
  // land strictly inside; a flat dimension gets a unit-wide box instead.
  Eigen::VectorXd lo(n_dim), width(n_dim);
  for (Eigen::Index d = 0; d < n_dim; ++d) {
    double a = std::min(truth.col(d).minCoeff(), generated.col(d).minCoeff());
    double b = std::max(truth.col(d).maxCoeff(), generated.col(d).maxCoeff());
    if (b - a <= 0.0) {
      a -= 0.5;
      b += 0.5;
    } else {
      const double pad = 0.01 * (b - a);
      a -= pad;
      b += pad;
    }
    lo(d) = a;
    width(d) = b - a;
  }

  const auto flat_bin = [&](const Eigen::MatrixXd& set,
                            Eigen::Index row) -> std::uint64_t {
    std::uint64_t idx = 0, stride = 1;
    for (Eigen::Index d = 0; d < n_dim; ++d) {
      int b = static_cast<int>(std::floor((set(row, d) - lo(d)) / width(d) *
                                          static_cast<double>(m)));
      b = std::min(m - 1, std::max(0, b));
      idx += stride * static_cast<std::uint64_t>(b);
      stride *= static_cast<std::uint64_t>(m);
    }
    return idx;
  };

  // Sparse joint histogram; bins empty on both sides are folded into one
  // closed-form term below, so memory scales with samples, not with m^N.
  std::unordered_map<std::uint64_t, std::pair<std::uint32_t, std::uint32_t>>
      counts;
  counts.reserve(static_cast<std::size_t>(truth.rows() + generated.rows()));
  for (Eigen::Index r = 0; r < truth.rows(); ++r)
    counts[flat_bin(truth, r)].first += 1;
  for (Eigen::Index r = 0; r < generated.rows(); ++r)
    counts[flat_bin(generated, r)].second += 1;

  // Canonical summation order keeps the result independent of sample order.
  std::vector<std::pair<std::uint64_t, std::pair<std::uint32_t, std::uint32_t>>>
      ordered(counts.begin(), counts.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  const double tp = static_cast<double>(truth.rows()) + bins_d;
  const double tq = static_cast<double>(generated.rows()) + bins_d;
  double kl = 0.0;
  for (const auto& [bin, c] : ordered) {
    const double p = (static_cast<double>(c.first) + 1.0) / tp;
    const double q = (static_cast<double>(c.second) + 1.0) / tq;
    kl += p * std::log(p / q);
  }
  const double n_empty =
      static_cast<double>(n_bins) - static_cast<double>(counts.size());
  if (n_empty > 0.0) kl += n_empty * (1.0 / tp) * std::log(tq / tp);
  return kl;
}

Eigen::VectorXd smoothed_power_spectrum(const Eigen::VectorXd& series,
                                        double sigma) {
  const int n = static_cast<int>(series.size());
  if (n < 1)
    throw Error(ErrorCode::bad_config, "empty series has no spectrum");
  if (!series.allFinite())
    throw Error(ErrorCode::bad_config, "series contains NaN/Inf");
  if (!std::isfinite(sigma) || sigma < 0.0)
    throw Error(ErrorCode::bad_config,
                "smoothing width must be finite and non-negative");

  std::vector<double> centered(static_cast<std::size_t>(n));
  const double mean = series.mean();
  for (int i = 0; i < n; ++i) centered[static_cast<std::size_t>(i)] =
      series(i) - mean;

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, centered);

  const int half = n / 2 + 1;
  Eigen::VectorXd power(half);
  for (int i = 0; i < half; ++i)
    power(i) = std::norm(freq[static_cast<std::size_t>(i)]);

  if (sigma <= 0.0 || half < 2) return power;

  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  Eigen::VectorXd kernel(2 * radius + 1);
  for (int j = -radius; j <= radius; ++j)
    kernel(j + radius) = std::exp(-0.5 * (j * j) / (sigma * sigma));
  kernel /= kernel.sum();

  Eigen::VectorXd smoothed = Eigen::VectorXd::Zero(half);
  for (int i = 0; i < half; ++i)
    for (int j = -radius; j <= radius; ++j)
      smoothed(i) += kernel(j + radius) * power(reflect_index(i + j, half));
  return smoothed;
}

double d_hellinger(const Eigen::MatrixXd& truth,
                   const Eigen::MatrixXd& generated,
                   const MetricConfig& cfg) {
  cfg.validate();
  const Eigen::Index n_dim = truth.cols();
  if (n_dim < 1)
    throw Error(ErrorCode::bad_config, "series have no dimensions");
  if (generated.cols() != n_dim)
    throw Error(ErrorCode::bad_config, "series differ in dimension");
  const Eigen::Index len = std::min(truth.rows(), generated.rows());
  if (len < 2)
    throw Error(ErrorCode::bad_config,
                "need at least two common samples per series");
  if (!truth.topRows(len).allFinite() || !generated.topRows(len).allFinite())
    throw Error(ErrorCode::bad_config, "series contain NaN/Inf");

  double total = 0.0;
  for (Eigen::Index d = 0; d < n_dim; ++d) {
    const Eigen::VectorXd x = truth.col(d).head(len);
    const Eigen::VectorXd y = generated.col(d).head(len);
    const bool cx = is_constant(x);
    const bool cy = is_constant(y);
    if (cx && cy) continue;  // no temporal structure on either side
    if (cx != cy) {
      total += 1.0;  // structure present on exactly one side
      continue;
    }
    Eigen::VectorXd f = smoothed_power_spectrum(x, cfg.spectrum_smoothing);
    Eigen::VectorXd g = smoothed_power_spectrum(y, cfg.spectrum_smoothing);
    f /= f.sum();
    g /= g.sum();
    const double h =
        (f.array().sqrt() - g.array().sqrt()).matrix().norm() / std::sqrt(2.0);
    total += std::min(1.0, h);
  }
  return total / static_cast<double>(n_dim);
}

MaeResult mae(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& generated,
              int horizon) {
  if (horizon < 1)
    throw Error(ErrorCode::bad_config, "horizon must be at least 1");
  const Eigen::Index n_dim = truth.cols();
  if (n_dim < 1 || generated.cols() != n_dim)
    throw Error(ErrorCode::bad_config, "series differ in dimension");
  const Eigen::Index len = std::min(truth.rows(), generated.rows());
  if (len < 1)
    throw Error(ErrorCode::bad_config, "series have no common samples");

  MaeResult out;
  const Eigen::Index used = std::min<Eigen::Index>(horizon, len);
  out.truncated = used < horizon;
  const Eigen::MatrixXd diff =
      truth.topRows(used) - generated.topRows(used);
  if (!diff.allFinite())
    throw Error(ErrorCode::bad_config, "series contain NaN/Inf");
  out.value = diff.cwiseAbs().mean();
  return out;
}

}  // namespace cplrnn
