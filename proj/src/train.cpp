#include "cplrnn/train.hpp"

#include <cmath>
#include <utility>

namespace cplrnn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

int flat_size(int M) { return 2 * M + M * M; }

// Flat layout [A; vec(W); h] shared by the optimizer state and gradients.
void pack(const VectorXd& A, const MatrixXd& W, const VectorXd& h,
          VectorXd& out) {
  const int M = static_cast<int>(A.size());
  out.resize(flat_size(M));
  out.head(M) = A;
  out.segment(M, M * M) = Eigen::Map<const VectorXd>(W.data(), M * M);
  out.tail(M) = h;
}

void unpack(const VectorXd& flat, ModelParams& p) {
  const int M = p.M;
  p.A = flat.head(M);
  p.W = Eigen::Map<const MatrixXd>(flat.data() + M, M, M);
  p.h = flat.tail(M);
}

// Failures that invalidate one batch member without poisoning the run: the
// member's contribution is dropped and counted, training continues.
bool member_recoverable(ErrorCode c) {
  switch (c) {
    case ErrorCode::degenerate_gradient:
    case ErrorCode::near_defective:
    case ErrorCode::singular_region_matrix:
    case ErrorCode::search_inconclusive:
    case ErrorCode::imaginary_residue:
    case ErrorCode::no_convergence:
      return true;
    default:
      return false;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (seq_len < 2)
    throw Error(ErrorCode::bad_config,
                "seq_len must be >= 2 (one prediction per subsequence)");
  if (batch_size < 1 || batches_per_epoch < 1 || epochs < 1)
    throw Error(ErrorCode::bad_config,
                "batch_size, batches_per_epoch and epochs must be positive");
  if (!(lr_start > 0.0) || !(lr_end > 0.0) || lr_end > lr_start)
    throw Error(ErrorCode::bad_config,
                "learning rates must satisfy 0 < lr_end <= lr_start");
  if (tf_interval < 1)
    throw Error(ErrorCode::bad_config, "tf_interval must be >= 1");
  if (!(noise_level >= 0.0) || !(grad_clip_norm >= 0.0))
    throw Error(ErrorCode::bad_config,
                "noise_level and grad_clip_norm must be non-negative");
}

double lr_at(const TrainConfig& cfg, int epoch) {
  const double ratio = cfg.lr_end / cfg.lr_start;
  return cfg.lr_start *
         std::pow(ratio, static_cast<double>(epoch) /
                             static_cast<double>(cfg.epochs));
}

RAdam::RAdam(int dim, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_ = VectorXd::Zero(dim);
  v_ = VectorXd::Zero(dim);
}

void RAdam::step(double lr, const VectorXd& grad, VectorXd& theta) {
  t_ += 1;
  const double t = static_cast<double>(t_);
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double b1t = std::pow(beta1_, t);
  const double b2t = std::pow(beta2_, t);
  const VectorXd mhat = m_ / (1.0 - b1t);
  const double rho_inf = 2.0 / (1.0 - beta2_) - 1.0;
  const double rho = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
  if (rho > 5.0) {
    // Variance-rectification factor of the adaptive step
    const double r = std::sqrt(((rho - 4.0) * (rho - 2.0) * rho_inf) /
                               ((rho_inf - 4.0) * (rho_inf - 2.0) * rho));
    const VectorXd denom =
        ((v_ / (1.0 - b2t)).cwiseSqrt().array() + eps_).matrix();
    theta.noalias() -= lr * r * mhat.cwiseQuotient(denom);
  } else {
    theta.noalias() -= lr * mhat;
  }
}

double clip_grad_norm(ParamGrad& g, double max_norm) {
  const double norm = std::sqrt(g.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    g.dA *= s;
    g.dW *= s;
    g.dh *= s;
  }
  return norm;
}

ModelParams init_for_dataset(const Dataset& data, int M, int P,
                             std::mt19937_64& rng) {
  data.validate();
  const double gap = median_time_gap(data.times);
  ModelParams p;
  p.M = M;
  p.P = P;
  p.N = data.N();
  // Decay rates ~1 per observation gap dominate the coupling's spectral
  // radius (~0.35), so every region matrix contracts; otherwise hidden
  // coordinates compound over teacher-forced spans and overflow.
  std::uniform_real_distribution<double> ua(-1.2, -0.5);
  std::normal_distribution<double> nw(0.0, 0.35 / std::sqrt((double)M));
  p.A.resize(M);
  for (int i = 0; i < M; ++i) p.A(i) = ua(rng);
  p.W.resize(M, M);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j) p.W(i, j) = nw(rng);
  // Pin the bias so (column means, 0 hidden) is an exact equilibrium; the
  // fit then starts at the data's operating point instead of the origin.
  VectorXd z_bar = VectorXd::Zero(M);
  z_bar.head(data.N()) = data.values.colwise().mean().transpose();
  p.h = -(p.A.cwiseProduct(z_bar) + p.W * activation(p, z_bar));
  p.A /= gap;
  p.W /= gap;
  p.h /= gap;
  p.validate();
  return p;
}

TrainResult train(const ModelParams& init, const Dataset& data,
                  const TrainConfig& cfg, std::mt19937_64& rng,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  init.validate();
  if (init.N != data.N())
    throw Error(ErrorCode::bad_config,
                "model read-out width must match the dataset columns");
  if (data.T() < cfg.seq_len)
    throw Error(ErrorCode::bad_config,
                "dataset holds fewer observations than seq_len");

  const int M = init.M;
  const int rows = cfg.seq_len - 1;  // predictions per subsequence

  // Work in time units of one median observation gap; rates scale inversely.
  const double gap = median_time_gap(data.times);
  const VectorXd tn = data.times / gap;

  ModelParams cur = init;
  cur.A *= gap;
  cur.W *= gap;
  cur.h *= gap;
  cur.version += 1;

  const auto in_data_units = [&](const ModelParams& p) {
    ModelParams q = p;
    q.A /= gap;
    q.W /= gap;
    q.h /= gap;
    return q;
  };

  SolutionCache cache;
  RAdam opt(flat_size(M));
  VectorXd theta;
  pack(cur.A, cur.W, cur.h, theta);
  VectorXd theta_prev = theta;
  VectorXd gflat(flat_size(M));

  std::uniform_int_distribution<int> pick_start(0, data.T() - cfg.seq_len);

  TrainResult out;
  out.history.reserve(static_cast<size_t>(cfg.epochs));
  bool diverged = false;

  for (int e = 0; e < cfg.epochs && !diverged; ++e) {
    const double lr = lr_at(cfg, e);
    double epoch_loss = 0.0;
    int epoch_batches = 0;
    std::int64_t discards = 0;

    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      ParamGrad acc = ParamGrad::zero(M);
      double loss_sum = 0.0;
      int measured = 0;  // members that produced a finite loss
      int kept = 0;      // members whose gradient entered the reduction
      bool bad_loss = false;

      for (int k = 0; k < cfg.batch_size; ++k) {
        const int s = pick_start(rng);
        try {
          const StfResult fw =
              stf_forward(cur, tn.segment(s, cfg.seq_len),
                          data.values.middleRows(s, cfg.seq_len),
                          cfg.tf_interval, cfg.noise_level, rng, &cache);
          const auto target = data.values.middleRows(s + 1, rows);
          const double loss = mse_loss(fw.predictions, target);
          if (!std::isfinite(loss)) {
            bad_loss = true;
            break;
          }
          loss_sum += loss;
          ++measured;
          const MatrixXd pred_bar = (2.0 / static_cast<double>(rows * init.N)) *
                                    (fw.predictions - target);
          ParamGrad g = stf_backward(cur, fw, pred_bar);
          discards += g.discarded_segments;
          if (!g.all_finite()) {
            ++discards;
            continue;
          }
          acc += g;
          ++kept;
        } catch (const Error& err) {
          if (!member_recoverable(err.code())) throw;
          ++discards;
        }
      }

      if (bad_loss || measured == 0) {
        diverged = true;
        break;
      }
      epoch_loss += loss_sum / static_cast<double>(measured);
      ++epoch_batches;

      if (kept > 0) {
        const double inv = 1.0 / static_cast<double>(kept);
        acc.dA *= inv;
        acc.dW *= inv;
        acc.dh *= inv;
        clip_grad_norm(acc, cfg.grad_clip_norm);
        pack(acc.dA, acc.dW, acc.dh, gflat);
        theta_prev = theta;
        opt.step(lr, gflat, theta);
        if (!theta.allFinite()) {
          theta = theta_prev;  // keep the last finite parameters
          diverged = true;
          break;
        }
        unpack(theta, cur);
        cur.version += 1;
      }
    }

    if (!diverged) {
      EpochStat st;
      st.epoch = e + 1;
      st.loss = epoch_loss / static_cast<double>(epoch_batches);
      st.lr = lr;
      st.discarded_segments = discards;
      out.history.push_back(st);
      if (on_epoch) on_epoch(in_data_units(cur), st);
    }
  }

  out.params = in_data_units(cur);
  out.diverged = diverged;
  return out;
}

}  // namespace cplrnn
