#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "cplrnn/data.hpp"
#include "cplrnn/errors.hpp"
#include "cplrnn/gradients.hpp"
#include "cplrnn/model.hpp"

namespace cplrnn {

// Schedule and regularization knobs of the sparse-teacher-forced MSE fit.
struct TrainConfig {
  int seq_len = 200;          // observations per training subsequence
  int batch_size = 16;        // subsequences per optimizer step
  int batches_per_epoch = 50;
  int epochs = 2000;
  double lr_start = 1e-3;     // exponential decay from lr_start ...
  double lr_end = 1e-5;       // ... reaching lr_end at epoch == epochs
  int tf_interval = 16;       // observations between forced resets (tau)
  double noise_level = 0.05;  // std of Gaussian added to forced observations
  double grad_clip_norm = 10.0;  // global-norm clip; 0 disables

  void validate() const;
};

// Learning rate used during 0-based epoch `epoch`:
//   lr_start * (lr_end / lr_start)^(epoch / epochs).
double lr_at(const TrainConfig& cfg, int epoch);

struct EpochStat {
  int epoch = 0;     // 1-based, matching the loss-history CSV
  double loss = 0.0; // mean over the epoch's batches
  double lr = 0.0;
  std::int64_t discarded_segments = 0;  // tangential discards + dropped members
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStat> history;
  bool diverged = false;  // aborted on a non-finite loss; params hold the
                          // last finite state
};

// Rectified Adam over one flat parameter vector (defaults beta1=0.9,
// beta2=0.999, eps=1e-8).  While the variance estimate is short (rectification
// term rho_t <= 5) the step falls back to unrectified bias-corrected momentum.
class RAdam {
 public:
  explicit RAdam(int dim, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);
  void step(double lr, const Eigen::VectorXd& grad, Eigen::VectorXd& theta);
  std::int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  Eigen::VectorXd m_, v_;
};

// Scales the gradient in place so its flat 2-norm is at most max_norm
// (max_norm <= 0 disables).  Returns the pre-clip norm.
double clip_grad_norm(ParamGrad& g, double max_norm);

// Fresh random initialization whose decay rates are calibrated to the
// dataset's median sampling interval instead of unit time: mildly contracting
// over one typical observation gap.  Read-out width is taken from the data.
ModelParams init_for_dataset(const Dataset& data, int M, int P,
                             std::mt19937_64& rng);

// Called after every completed epoch with the current parameters (expressed
// in the dataset's time units) and that epoch's statistics.
using EpochCallback = std::function<void(const ModelParams&, const EpochStat&)>;

// Fits `init` to the dataset: per epoch, batches_per_epoch batches of
// batch_size uniformly drawn subsequences of seq_len observations; forward by
// sparse teacher forcing, backward through the analytic segment adjoints,
// global-norm clipping, rectified-Adam updates, exponential learning-rate
// decay.  Internally time is rescaled by the dataset's median gap so one
// observation step has unit length (the rate parameters scale inversely);
// `init`, every callback, and the result are all in the dataset's own units.
//
// Per-batch-member solver failures and degenerate switch gradients drop that
// member's contribution (counted in discarded_segments).  A batch in which no
// member produces a finite loss — or a non-finite loss value — aborts the run:
// the result carries diverged = true, the last finite parameters, and the
// completed epochs' history.  Identical seeds give bitwise-identical runs.
TrainResult train(const ModelParams& init, const Dataset& data,
                  const TrainConfig& cfg, std::mt19937_64& rng,
                  const EpochCallback& on_epoch = {});

}  // namespace cplrnn
