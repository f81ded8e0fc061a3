#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cplrnn/errors.hpp"

namespace cplrnn {

// Provenance of a generated or loaded observation series.
struct DatasetMeta {
  std::string generator;  // producing process, e.g. "lorenz63", "lif"
  std::map<std::string, double> params;
  std::uint64_t seed = 0;
  bool regular = true;  // uniformly spaced sample times
  // Exact event times the generator knows analytically (e.g. threshold
  // crossings); empty for event-free processes.
  std::vector<double> events;
};

// One observed multivariate time series: row k of values was measured at
// times(k).  Times are strictly increasing but not necessarily uniform.
struct Dataset {
  Eigen::VectorXd times;
  Eigen::MatrixXd values;  // times.size() x N
  DatasetMeta meta;

  int T() const { return static_cast<int>(times.size()); }
  int N() const { return static_cast<int>(values.cols()); }

  void validate() const {
    if (times.size() == 0 || values.rows() != times.size() ||
        values.cols() < 1)
      throw Error(ErrorCode::bad_config,
                  "dataset needs one value row per sample time");
    for (Eigen::Index i = 1; i < times.size(); ++i)
      if (!(times(i) > times(i - 1)))
        throw Error(ErrorCode::bad_config,
                    "sample times must increase strictly");
    if (!times.allFinite() || !values.allFinite())
      throw Error(ErrorCode::bad_config, "dataset entries must be finite");
  }
};

// Median of the consecutive time differences: the natural length of one
// sampling step for a possibly irregular grid (robust to rare long gaps).
inline double median_time_gap(const Eigen::VectorXd& times) {
  const Eigen::Index T = times.size();
  if (T < 2)
    throw Error(ErrorCode::bad_config,
                "a sampling-step estimate needs at least two times");
  std::vector<double> gaps(static_cast<size_t>(T - 1));
  for (Eigen::Index i = 0; i + 1 < T; ++i)
    gaps[static_cast<size_t>(i)] = times(i + 1) - times(i);
  std::sort(gaps.begin(), gaps.end());
  const size_t n = gaps.size();
  return n % 2 == 1 ? gaps[n / 2] : 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]);
}

}  // namespace cplrnn
