#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cplrnn/analysis.hpp"
#include "cplrnn/benchgen.hpp"
#include "cplrnn/event_solver.hpp"
#include "cplrnn/gradients.hpp"
#include "cplrnn/io.hpp"
#include "cplrnn/metrics.hpp"
#include "cplrnn/model.hpp"
#include "cplrnn/train.hpp"

namespace {

using namespace cplrnn;
using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitTrainDiverged = 3;
constexpr int kExitSolver = 4;
constexpr int kExitGradcheck = 5;

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::non_finite_loss:
      return kExitTrainDiverged;
    case ErrorCode::singular_region_matrix:
    case ErrorCode::near_defective:
    case ErrorCode::imaginary_residue:
    case ErrorCode::search_inconclusive:
    case ErrorCode::degenerate_gradient:
    case ErrorCode::non_finite_state:
    case ErrorCode::invalid_itinerary:
    case ErrorCode::no_convergence:
      return kExitSolver;
    default:
      return kExitUsage;  // configuration, file, and format problems
  }
}

// Options shared by every subcommand.
struct Shared {
  std::string out_dir;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string cmdline;
  std::chrono::steady_clock::time_point started;
};

std::string join_cmdline(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    const std::string a = argv[i];
    s += a.find(' ') == std::string::npos ? a : "\"" + a + "\"";
  }
  return s;
}

std::string resolve_out(const Shared& g, const std::string& path) {
  if (path.empty() || path.front() == '/') return path;
  if (g.out_dir.empty() || g.out_dir == ".") return path;
  return g.out_dir + "/" + path;
}

std::string strip_known_ext(const std::string& path) {
  for (const char* ext : {".csv", ".json"}) {
    const std::string e = ext;
    if (path.size() > e.size() &&
        path.compare(path.size() - e.size(), e.size(), e) == 0)
      return path.substr(0, path.size() - e.size());
  }
  return path;
}

void write_manifest(const Shared& g, const std::string& primary_out,
                    const std::string& config_path,
                    std::vector<std::string> inputs,
                    std::vector<std::string> outputs) {
  RunManifest m;
  m.command = g.cmdline;
  m.config_path = config_path;
  m.seed = g.seed;
  m.inputs = std::move(inputs);
  m.outputs = std::move(outputs);
  m.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    g.started)
          .count();
  save_manifest(strip_known_ext(primary_out) + ".manifest.json", m);
}

void warn_jobs(const Shared& g) {
  if (g.jobs != 1)
    std::cerr << "note: --jobs " << g.jobs
              << " requested; running sequentially (multi-job reduction "
                 "order could perturb bitwise reproducibility)\n";
}

json complex_list(const Eigen::VectorXcd& v) {
  json re = json::array(), im = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    re.push_back(v(i).real());
    im.push_back(v(i).imag());
  }
  return json{{"re", re}, {"im", im}};
}

json vector_list(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

// ---------------------------------------------------------------- gen ----

struct GenOpts {
  std::string out = "dataset.csv";
  int samples = 0;  // 0 = generator default
  double fraction = 1.0;
  int embed_dim = 0;  // 0 = no embedding
  int embed_lag = 13;
  int embed_col = 1;
  // lorenz
  double sigma = 10.0, rho = 28.0, beta = 8.0 / 3.0;
  double dt_lorenz = 1e-2, time_scale = 100.0;
  int transient = 1000;
  std::vector<double> z0;
  // lif
  double R = 5.0, C = 1e-3, V_th = 1.0, V_reset = 0.0, I = 0.25;
  double dt_lif = 1.6e-4;
};

int run_gen(const Shared& g, const GenOpts& o, bool lorenz) {
  Dataset ds;
  if (lorenz) {
    LorenzParams p;
    p.sigma = o.sigma;
    p.rho = o.rho;
    p.beta = o.beta;
    p.dt = o.dt_lorenz;
    p.time_scale = o.time_scale;
    p.transient = o.transient;
    if (o.samples > 0) p.samples = o.samples;
    if (!o.z0.empty()) {
      if (o.z0.size() != 3)
        throw Error(ErrorCode::bad_config, "--z0 needs three values");
      p.z0 = Eigen::Vector3d(o.z0[0], o.z0[1], o.z0[2]);
    }
    ds = gen_lorenz(p);
  } else {
    LifParams p;
    p.R = o.R;
    p.C = o.C;
    p.V_th = o.V_th;
    p.V_reset = o.V_reset;
    p.I = o.I;
    p.dt = o.dt_lif;
    if (o.samples > 0) p.samples = o.samples;
    ds = gen_lif(p);
    if (ds.meta.params.count("subthreshold"))
      std::cerr << "warning: drive stays below threshold; emitting the "
                   "subthreshold decay only\n";
  }

  if (o.embed_dim > 0) {
    Dataset scalar;
    if (o.embed_col < 1 || o.embed_col > ds.N())
      throw Error(ErrorCode::bad_config, "--embed-col out of range");
    scalar.times = ds.times;
    scalar.values = ds.values.col(o.embed_col - 1);
    scalar.meta = ds.meta;
    ds = delay_embed(scalar, o.embed_dim, o.embed_lag);
  }
  if (o.fraction < 1.0) {
    std::mt19937_64 rng(g.seed);
    ds = subsample_irregular(ds, o.fraction, rng);
  }
  ds.meta.seed = g.seed;

  const std::string out = resolve_out(g, o.out);
  save_dataset(out, ds);
  write_manifest(g, out, "", {}, {out, meta_path_for(out)});
  std::cout << "wrote " << out << " (" << ds.T() << " samples, " << ds.N()
            << " columns)\n";
  return 0;
}

// -------------------------------------------------------------- train ----

struct TrainOpts {
  std::string data;
  std::string config;
  std::string init_ckpt;
  std::string out = "checkpoint.json";
  int M = 0, P = -1;
  int checkpoint_every = 100;
  TrainConfig cfg;
};

void merge_train_config(const std::string& path, TrainOpts& o,
                        const CLI::App* cmd) {
  json j;
  {
    // Reuse the io-layer error handling by loading through a manifest-free
    // JSON parse; any failure is a usage problem.
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, "cannot read " + path);
    j = json::parse(in, nullptr, false);
    if (j.is_discarded())
      throw Error(ErrorCode::io_error, "malformed JSON in " + path);
  }
  const auto overridden = [&](const char* flag) {
    return cmd->count(flag) > 0;
  };
  if (j.contains("M") && !overridden("--M")) o.M = j["M"].get<int>();
  if (j.contains("P") && !overridden("--P")) o.P = j["P"].get<int>();
  TrainConfig& c = o.cfg;
  if (j.contains("seq_len") && !overridden("--seq"))
    c.seq_len = j["seq_len"].get<int>();
  if (j.contains("batch_size") && !overridden("--batch"))
    c.batch_size = j["batch_size"].get<int>();
  if (j.contains("batches_per_epoch") && !overridden("--batches"))
    c.batches_per_epoch = j["batches_per_epoch"].get<int>();
  if (j.contains("epochs") && !overridden("--epochs"))
    c.epochs = j["epochs"].get<int>();
  if (j.contains("lr_start") && !overridden("--lr"))
    c.lr_start = j["lr_start"].get<double>();
  if (j.contains("lr_end") && !overridden("--lr-end"))
    c.lr_end = j["lr_end"].get<double>();
  if (j.contains("tf_interval") && !overridden("--tau"))
    c.tf_interval = j["tf_interval"].get<int>();
  if (j.contains("noise_level") && !overridden("--noise"))
    c.noise_level = j["noise_level"].get<double>();
  if (j.contains("grad_clip_norm") && !overridden("--clip"))
    c.grad_clip_norm = j["grad_clip_norm"].get<double>();
}

int run_train(const Shared& g, TrainOpts& o, const CLI::App* cmd) {
  warn_jobs(g);
  if (!o.config.empty()) merge_train_config(o.config, o, cmd);
  const Dataset data = load_dataset(o.data);
  if (o.M < 1)
    throw Error(ErrorCode::bad_config,
                "latent dimension --M (or config M) is required");
  if (o.P < 0) o.P = o.M / 2;

  std::mt19937_64 rng(g.seed);
  ModelParams params;
  if (!o.init_ckpt.empty()) {
    params = load_checkpoint(o.init_ckpt);
    if (params.M != o.M && cmd->count("--M"))
      throw Error(ErrorCode::bad_config,
                  "--M disagrees with the initial checkpoint");
  } else {
    params = init_for_dataset(data, o.M, o.P, rng);
  }

  const std::string out = resolve_out(g, o.out);
  const std::string stem = strip_known_ext(out);
  const std::string loss_path = stem + ".loss.csv";

  const int report_every = std::max(1, o.cfg.epochs / 20);
  const EpochCallback cb = [&](const ModelParams& p, const EpochStat& s) {
    if (o.checkpoint_every > 0 && s.epoch % o.checkpoint_every == 0 &&
        s.epoch < o.cfg.epochs)
      save_checkpoint(stem + ".epoch" + std::to_string(s.epoch) + ".json", p);
    if (s.epoch % report_every == 0 || s.epoch == o.cfg.epochs)
      std::cerr << "epoch " << s.epoch << "/" << o.cfg.epochs << "  loss "
                << s.loss << "  lr " << s.lr << "\n";
  };

  const TrainResult res = train(params, data, o.cfg, rng, cb);
  save_checkpoint(out, res.params);
  save_loss_csv(loss_path, res.history);
  write_manifest(g, out, o.config, {o.data}, {out, loss_path});

  if (res.diverged) {
    std::cerr << "error: " << error_name(ErrorCode::non_finite_loss)
              << ": training aborted; last finite checkpoint kept at " << out
              << "\n";
    return kExitTrainDiverged;
  }
  std::cout << "wrote " << out << " (final loss "
            << (res.history.empty() ? 0.0 : res.history.back().loss) << ")\n";
  return 0;
}

// ----------------------------------------------------------- simulate ----

struct SimOpts {
  std::string checkpoint;
  std::string out = "trajectory.csv";
  std::string times_file;
  std::string from_data;
  int from_index = 0;
  std::vector<double> z0;
  double horizon = 10.0;
  double dt = 0.01;
  std::int64_t max_events = 100000;
};

int run_simulate(const Shared& g, const SimOpts& o) {
  const ModelParams params = load_checkpoint(o.checkpoint);

  std::vector<double> times;
  if (!o.times_file.empty()) {
    const Eigen::VectorXd t = load_times_csv(o.times_file);
    times.assign(t.data(), t.data() + t.size());
  } else {
    if (!(o.dt > 0.0) || !(o.horizon > 0.0))
      throw Error(ErrorCode::bad_config, "--horizon and --dt must be positive");
    for (double t = 0.0; t <= o.horizon + 1e-12 * o.horizon; t += o.dt)
      times.push_back(t);
  }

  Eigen::VectorXd z0 = Eigen::VectorXd::Zero(params.M);
  if (!o.z0.empty()) {
    if (static_cast<int>(o.z0.size()) != params.M)
      throw Error(ErrorCode::bad_config,
                  "--z0 needs exactly M = " + std::to_string(params.M) +
                      " values");
    for (int i = 0; i < params.M; ++i) z0(i) = o.z0[static_cast<size_t>(i)];
  } else if (!o.from_data.empty()) {
    const Dataset data = load_dataset(o.from_data);
    if (o.from_index < 0 || o.from_index >= data.T())
      throw Error(ErrorCode::bad_config, "--from-index out of range");
    const int n = std::min<int>(params.N, data.N());
    z0.head(n) = data.values.row(o.from_index).head(n).transpose();
  }

  SolveLimits limits;
  limits.max_events = o.max_events;
  limits.record_segments = false;
  const Trajectory traj = solve_trajectory(params, z0, times, limits);

  const std::string out = resolve_out(g, o.out);
  const std::string events_path = strip_known_ext(out) + ".events.csv";
  save_trajectory_csv(out, traj);
  save_events_csv(events_path, traj.events);
  write_manifest(g, out, "", {o.checkpoint}, {out, events_path});

  if (traj.truncated) {
    std::cerr << "error: trajectory truncated after " << traj.times.size()
              << " of " << times.size() << " requested samples ("
              << traj.events.size() << " events); partial output kept\n";
    return kExitSolver;
  }
  std::cout << "wrote " << out << " (" << traj.times.size() << " states, "
            << traj.events.size() << " events)\n";
  return 0;
}

// ------------------------------------------------------------ analyze ----

struct AnalyzeOpts {
  std::string checkpoint;
  std::string out = "analysis.json";
  bool fp = false;       // presence flags; fixed points always run
  bool cycles = false;
  bool floquet = false;  // implies --cycles
  int max_proposals = 16;
  double sim_horizon = 500.0;
  double sim_dt = 0.05;
  int restarts = 0;  // 0 = automatic budget
};

const char* region_bits(RegionIndex r, int P, std::string& buf) {
  buf.clear();
  for (int b = P - 1; b >= 0; --b) buf += ((r >> b) & 1u) ? '1' : '0';
  if (P == 0) buf = "0";
  return buf.c_str();
}

int run_analyze(const Shared& g, const AnalyzeOpts& o) {
  warn_jobs(g);
  const ModelParams params = load_checkpoint(o.checkpoint);
  std::mt19937_64 rng(g.seed);

  json report;
  report["fixed_points"] = json::array();
  report["cycles"] = json::array();

  SearchBudget budget;
  budget.restarts = o.restarts;
  const auto fps = find_fixed_points(params, budget, rng);
  std::string bits;
  for (const auto& fp : fps) {
    json e;
    e["z"] = vector_list(fp.z_star);
    e["region"] = fp.region;
    e["region_bits"] = region_bits(fp.region, params.P, bits);
    e["real"] = fp.is_real;
    e["kind"] = kind_name(fp.kind);
    e["eigenvalues"] = complex_list(fp.eigenvalues);
    report["fixed_points"].push_back(std::move(e));
  }

  if (o.cycles || o.floquet) {
    // Fresh long free run; every itinerary candidate seen in it becomes a
    // boundary-value solve.
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd z0(params.M);
    for (int i = 0; i < params.M; ++i) z0(i) = gauss(rng);
    std::vector<double> times;
    for (double t = 0.0; t <= o.sim_horizon; t += o.sim_dt)
      times.push_back(t);
    SolveLimits limits;
    limits.record_segments = false;
    const Trajectory traj = solve_trajectory(params, z0, times, limits);

    const auto proposals = propose_itineraries(params, traj, o.max_proposals);
    std::vector<CycleSolution> found;
    for (const auto& guess : proposals) {
      ErrorCode why = ErrorCode::no_convergence;
      std::optional<CycleSolution> cyc;
      try {
        cyc = find_limit_cycle(params, guess.regions, guess.y0, guess.T0, {},
                               nullptr, &why);
      } catch (const Error&) {
        continue;  // solver breakdown on one candidate is not fatal
      }
      if (!cyc) continue;
      const bool dup = std::any_of(
          found.begin(), found.end(), [&](const CycleSolution& c) {
            return c.regions.size() == cyc->regions.size() &&
                   std::abs(c.period - cyc->period) <= 1e-6 * cyc->period;
          });
      if (!dup) found.push_back(std::move(*cyc));
    }

    for (const auto& c : found) {
      json e;
      json regions = json::array();
      for (RegionIndex r : c.regions)
        regions.push_back(json{{"index", r},
                               {"bits", region_bits(r, params.P, bits)}});
      e["regions"] = std::move(regions);
      e["dims"] = c.dims;
      e["period"] = c.period;
      e["flight_times"] = c.flight_times;
      e["anchor"] = vector_list(c.anchor(params.M));
      e["multipliers"] = complex_list(c.multipliers);
      e["stable"] = c.stable;
      report["cycles"].push_back(std::move(e));
    }
  }

  const std::string out = resolve_out(g, o.out);
  {
    std::ofstream ofs(out, std::ios::trunc);
    if (!ofs) throw Error(ErrorCode::io_error, "cannot write " + out);
    ofs << report.dump(2) << '\n';
  }
  write_manifest(g, out, "", {o.checkpoint}, {out});
  std::cout << "wrote " << out << " (" << report["fixed_points"].size()
            << " fixed points, " << report["cycles"].size() << " cycles)\n";
  return 0;
}

// ----------------------------------------------------------- evaluate ----

struct EvalOpts {
  std::string checkpoint;
  std::string generated;  // pre-computed trajectory instead of a model
  std::string data;
  std::string out = "metrics.json";
  int bins = 30;
  double sigma_s = -1.0;  // negative = pick by generator
  int horizon = 25;
  int mae_windows = 20;
};

int run_evaluate(const Shared& g, const EvalOpts& o) {
  const Dataset truth = load_dataset(o.data);
  MetricConfig mc;
  mc.bins_per_dim = o.bins;
  mc.mae_horizon = o.horizon;
  // Spectral smoothing follows the benchmark: none for the spike-train
  // system, 20 bins otherwise, unless given explicitly.
  mc.spectrum_smoothing =
      o.sigma_s >= 0.0 ? o.sigma_s
                       : (truth.meta.generator == "lif" ? 0.0 : 20.0);
  mc.validate();

  json out_json;
  out_json["config"] = {{"bins", mc.bins_per_dim},
                        {"sigma_s", mc.spectrum_smoothing},
                        {"mae_horizon", mc.mae_horizon},
                        {"source", o.generated.empty() ? "model" : "file"}};

  bool diverged = false;
  Eigen::MatrixXd gen_values;
  std::optional<ModelParams> params;
  if (!o.generated.empty()) {
    gen_values = load_dataset(o.generated).values;
    if (gen_values.cols() > truth.values.cols())
      gen_values = gen_values.leftCols(truth.values.cols()).eval();
  } else {
    params = load_checkpoint(o.checkpoint);
    // Free-running generation over the truth time span: initialized from the
    // first observation, never forced afterwards.
    Eigen::VectorXd z0 = Eigen::VectorXd::Zero(params->M);
    const int n_obs = std::min<int>(params->N, truth.N());
    z0.head(n_obs) = truth.values.row(0).head(n_obs).transpose();
    std::vector<double> times(static_cast<size_t>(truth.T()));
    for (int i = 0; i < truth.T(); ++i)
      times[static_cast<size_t>(i)] = truth.times(i) - truth.times(0);
    SolveLimits limits;
    limits.record_segments = false;
    try {
      const Trajectory traj = solve_trajectory(*params, z0, times, limits);
      if (traj.truncated ||
          static_cast<int>(traj.states.size()) != truth.T()) {
        diverged = true;
      } else {
        gen_values.resize(truth.T(), params->N);
        for (int r = 0; r < truth.T(); ++r)
          gen_values.row(r) =
              traj.states[static_cast<size_t>(r)].head(params->N).transpose();
      }
    } catch (const Error&) {
      diverged = true;
    }
  }
  if (!diverged && is_divergent(gen_values)) diverged = true;

  if (diverged) {
    // The run left the trusted range: spectral distance takes its maximum
    // by convention, the others are not computable.
    out_json["diverged"] = true;
    out_json["d_stsp"] = nullptr;
    out_json["d_h"] = 1.0;
    out_json["mae"] = nullptr;
  } else {
    const int shared = std::min<int>(truth.N(), gen_values.cols());
    const Eigen::MatrixXd tv = truth.values.leftCols(shared);
    const Eigen::MatrixXd gv = gen_values.leftCols(shared);
    out_json["diverged"] = false;
    out_json["d_stsp"] = d_stsp(tv, gv, mc);
    out_json["d_h"] = d_hellinger(tv, gv, mc);

    if (!o.generated.empty()) {
      out_json["mae"] = mae(tv, gv, mc.mae_horizon).value;
    } else {
      // Forced windows: restart from each window's first observation and
      // score the following horizon, averaging across windows.
      double total = 0.0;
      int counted = 0;
      const int windows =
          std::min(o.mae_windows, (truth.T() - 1) / mc.mae_horizon);
      for (int w = 0; w < windows; ++w) {
        const int s = w * mc.mae_horizon;
        Eigen::VectorXd z0 = Eigen::VectorXd::Zero(params->M);
        const int n_obs = std::min<int>(params->N, truth.N());
        z0.head(n_obs) = truth.values.row(s).head(n_obs).transpose();
        std::vector<double> times(static_cast<size_t>(mc.mae_horizon) + 1);
        for (int i = 0; i <= mc.mae_horizon; ++i)
          times[static_cast<size_t>(i)] = truth.times(s + i) - truth.times(s);
        SolveLimits limits;
        limits.record_segments = false;
        try {
          const Trajectory tr = solve_trajectory(*params, z0, times, limits);
          if (tr.truncated) continue;
          Eigen::MatrixXd pred(mc.mae_horizon, shared);
          for (int i = 0; i < mc.mae_horizon; ++i)
            pred.row(i) = tr.states[static_cast<size_t>(i) + 1]
                              .head(shared)
                              .transpose();
          const Eigen::MatrixXd obs =
              truth.values.block(s + 1, 0, mc.mae_horizon, shared);
          if (!pred.allFinite()) continue;
          total += (pred - obs).cwiseAbs().mean();
          ++counted;
        } catch (const Error&) {
          continue;  // a failed window is skipped, not fatal
        }
      }
      if (counted > 0)
        out_json["mae"] = total / counted;
      else
        out_json["mae"] = nullptr;
      out_json["config"]["mae_windows"] = counted;
    }
  }

  const std::string out = resolve_out(g, o.out);
  {
    std::ofstream ofs(out, std::ios::trunc);
    if (!ofs) throw Error(ErrorCode::io_error, "cannot write " + out);
    ofs << out_json.dump(2) << '\n';
  }
  std::vector<std::string> inputs = {o.data};
  if (!o.checkpoint.empty()) inputs.push_back(o.checkpoint);
  if (!o.generated.empty()) inputs.push_back(o.generated);
  write_manifest(g, out, "", inputs, {out});
  std::cout << out_json.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------- gradcheck ----

struct GradcheckOpts {
  std::string model_ckpt;
  std::string out = "gradcheck.json";
  int models = 20;
  double tol = 1e-4;
  double fd_step = 1e-5;
  bool inject_tangential = false;
};

// Deterministic loss of a fixed sparse-teacher-forcing problem; the forcing
// noise is frozen by reseeding, so finite differences see a smooth function.
double stf_loss(const ModelParams& p, const Eigen::VectorXd& t,
                const Eigen::MatrixXd& X, int tau, std::uint64_t noise_seed) {
  std::mt19937_64 rng(noise_seed);
  const StfResult fw = stf_forward(p, t, X, tau, 0.01, rng);
  return mse_loss(fw.predictions, X.bottomRows(X.rows() - 1));
}

struct BlockErr {
  double A = 0.0, W = 0.0, h = 0.0;
  double worst() const { return std::max({A, W, h}); }
};

// Central finite differences over every parameter of one model against the
// analytic adjoint; returns per-block maxima of the relative error.
BlockErr check_one_model(const ModelParams& params, const Eigen::VectorXd& t,
                         const Eigen::MatrixXd& X, int tau,
                         std::uint64_t noise_seed, double fd_step,
                         long* discarded) {
  std::mt19937_64 rng(noise_seed);
  const StfResult fw = stf_forward(params, t, X, tau, 0.01, rng);
  const Eigen::MatrixXd obs = X.bottomRows(X.rows() - 1);
  const Eigen::MatrixXd pred_bar =
      2.0 / static_cast<double>(fw.predictions.size()) *
      (fw.predictions - obs);
  const ParamGrad grad = stf_backward(params, fw, pred_bar);
  if (discarded) *discarded += grad.discarded_segments;

  const auto rel = [&](double analytic, double fd) {
    const double scale = std::max(std::abs(analytic), std::abs(fd));
    const double err = std::abs(analytic - fd);
    return err <= 1e-7 ? 0.0 : err / std::max(scale, 1e-7);
  };
  const auto fd_at = [&](ModelParams& probe, double* slot) {
    const double keep = *slot;
    *slot = keep + fd_step;
    probe.version++;
    const double up = stf_loss(probe, t, X, tau, noise_seed);
    *slot = keep - fd_step;
    probe.version++;
    const double dn = stf_loss(probe, t, X, tau, noise_seed);
    *slot = keep;
    probe.version++;
    return (up - dn) / (2.0 * fd_step);
  };

  BlockErr out;
  ModelParams probe = params;
  for (int i = 0; i < params.M; ++i)
    out.A = std::max(out.A, rel(grad.dA(i), fd_at(probe, &probe.A(i))));
  for (int r = 0; r < params.M; ++r)
    for (int c = 0; c < params.M; ++c)
      out.W = std::max(out.W, rel(grad.dW(r, c), fd_at(probe, &probe.W(r, c))));
  for (int i = 0; i < params.M; ++i)
    out.h = std::max(out.h, rel(grad.dh(i), fd_at(probe, &probe.h(i))));
  return out;
}

// A decaying coordinate whose equilibrium sits a hair below the boundary:
// the crossing arrives with near-zero speed, so its switch sensitivity is
// dropped and counted.
long tangential_discard_probe() {
  ModelParams p;
  p.M = 1;
  p.P = 1;
  p.N = 1;
  p.A = Eigen::VectorXd::Constant(1, -1.0);
  p.W = Eigen::MatrixXd::Zero(1, 1);
  p.h = Eigen::VectorXd::Constant(1, -1e-12);
  const std::vector<double> times = {0.0, 10.0, 20.0, 30.0, 40.0};
  const Trajectory tr =
      solve_trajectory(p, Eigen::VectorXd::Constant(1, 1.0), times);
  std::vector<Eigen::VectorXd> upstream(times.size(),
                                        Eigen::VectorXd::Constant(1, 1.0));
  ParamGrad g = ParamGrad::zero(1);
  try {
    g = trajectory_vjp(p, tr, upstream);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::degenerate_gradient) throw;
    return 1;  // every event-carrying segment was tangential
  }
  return g.discarded_segments;
}

int run_gradcheck(const Shared& g, const GradcheckOpts& o) {
  warn_jobs(g);
  std::mt19937_64 rng(g.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> m_pick(2, 4), p_extra(1, 2);

  BlockErr overall;
  long discarded = 0;
  long total_events = 0;
  int checked = 0;
  for (int trial = 0; checked < o.models && trial < o.models * 4; ++trial) {
    ModelParams params;
    Eigen::VectorXd t;
    Eigen::MatrixXd X;
    std::uint64_t noise_seed;
    try {
      if (!o.model_ckpt.empty()) {
        params = load_checkpoint(o.model_ckpt);
      } else {
        const int M = m_pick(rng);
        const int P = std::min(M, p_extra(rng));
        params = init_params(M, P, std::min(M, 2), rng);
      }
      // Observations from the model's own flow plus jitter, so the fitted
      // sequence contains genuine region crossings.
      const int T = 12;
      t.setLinSpaced(T, 0.0, (T - 1) * 0.5);
      Eigen::VectorXd z0(params.M);
      for (int i = 0; i < params.M; ++i) z0(i) = gauss(rng);
      const Trajectory warm = solve_trajectory(
          params, z0, std::vector<double>(t.data(), t.data() + t.size()));
      X.resize(T, params.N);
      for (int r = 0; r < T; ++r)
        X.row(r) = warm.states[static_cast<size_t>(r)]
                       .head(params.N)
                       .transpose() +
                   0.05 * Eigen::RowVectorXd::NullaryExpr(
                              params.N, [&](Eigen::Index) { return gauss(rng); });
      total_events += static_cast<long>(warm.events.size());
      noise_seed = rng();
      const BlockErr be = check_one_model(params, t, X, 4, noise_seed,
                                          o.fd_step, &discarded);
      overall.A = std::max(overall.A, be.A);
      overall.W = std::max(overall.W, be.W);
      overall.h = std::max(overall.h, be.h);
      ++checked;
    } catch (const Error&) {
      if (!o.model_ckpt.empty()) throw;
      continue;  // resample past a degenerate random model
    }
    if (!o.model_ckpt.empty()) break;
  }
  if (checked == 0)
    throw Error(ErrorCode::bad_config, "no model survived the gradient check");

  if (o.inject_tangential) discarded += tangential_discard_probe();

  const bool pass = overall.worst() <= o.tol;
  std::cout << "block  max_rel_err\n";
  std::cout << "A      " << overall.A << "\n";
  std::cout << "W      " << overall.W << "\n";
  std::cout << "h      " << overall.h << "\n";
  std::cout << "models checked: " << checked << "   events seen: "
            << total_events << "   discarded switch gradients: " << discarded
            << "\n";
  std::cout << "tolerance " << o.tol << " -> " << (pass ? "PASS" : "FAIL")
            << "\n";

  json rep;
  rep["models"] = checked;
  rep["max_rel_err"] = {{"A", overall.A}, {"W", overall.W}, {"h", overall.h}};
  rep["tol"] = o.tol;
  rep["events"] = total_events;
  rep["discarded"] = discarded;
  rep["pass"] = pass;
  const std::string out = resolve_out(g, o.out);
  {
    std::ofstream ofs(out, std::ios::trunc);
    if (!ofs) throw Error(ErrorCode::io_error, "cannot write " + out);
    ofs << rep.dump(2) << '\n';
  }
  write_manifest(g, out, "", o.model_ckpt.empty()
                                ? std::vector<std::string>{}
                                : std::vector<std::string>{o.model_ckpt},
                 {out});
  return pass ? 0 : kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  Shared g;
  g.cmdline = join_cmdline(argc, argv);
  g.started = std::chrono::steady_clock::now();
  if (const char* env = std::getenv("CPLRNN_OUT_DIR")) g.out_dir = env;

  CLI::App app{"Event-exact piecewise-linear RNN toolkit"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  app.add_option("--out-dir", g.out_dir,
                 "directory for outputs (env CPLRNN_OUT_DIR)");
  app.add_option("--seed", g.seed, "RNG seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "worker count (1 keeps runs bitwise)")
      ->capture_default_str();

  // gen
  GenOpts gen;
  auto* cmd_gen = app.add_subcommand("gen", "generate a benchmark dataset");
  cmd_gen->require_subcommand(1);
  auto* gen_lor = cmd_gen->add_subcommand("lorenz", "chaotic convection flow");
  auto* gen_lif = cmd_gen->add_subcommand("lif", "leaky integrate-and-fire");
  for (auto* c : {gen_lor, gen_lif}) {
    c->add_option("--out", gen.out, "dataset CSV path")->capture_default_str();
    c->add_option("--samples,--T", gen.samples, "sample count (0 = default)");
    c->add_option("--fraction", gen.fraction,
                  "keep this fraction of samples, irregularly");
    c->add_option("--embed-dim", gen.embed_dim, "delay-embedding dimension");
    c->add_option("--embed-lag", gen.embed_lag, "delay-embedding lag")
        ->capture_default_str();
  }
  gen_lor->add_option("--sigma", gen.sigma)->capture_default_str();
  gen_lor->add_option("--rho", gen.rho)->capture_default_str();
  gen_lor->add_option("--beta", gen.beta)->capture_default_str();
  gen_lor->add_option("--dt", gen.dt_lorenz)->capture_default_str();
  gen_lor->add_option("--time-scale", gen.time_scale)->capture_default_str();
  gen_lor->add_option("--transient", gen.transient)->capture_default_str();
  gen_lor->add_option("--z0", gen.z0, "initial state (three values)")
      ->delimiter(',');
  gen_lor->add_option("--embed-col", gen.embed_col,
                      "1-based column to embed")->capture_default_str();
  gen_lif->add_option("--R", gen.R)->capture_default_str();
  gen_lif->add_option("--C", gen.C)->capture_default_str();
  gen_lif->add_option("--v-th", gen.V_th)->capture_default_str();
  gen_lif->add_option("--v-reset", gen.V_reset)->capture_default_str();
  gen_lif->add_option("--I", gen.I)->capture_default_str();
  gen_lif->add_option("--dt", gen.dt_lif)->capture_default_str();

  // train
  TrainOpts tr;
  auto* cmd_train = app.add_subcommand("train", "fit a model to a dataset");
  cmd_train->add_option("--data", tr.data, "dataset CSV")->required();
  cmd_train->add_option("--config", tr.config, "JSON with training keys");
  cmd_train->add_option("--init", tr.init_ckpt, "checkpoint to resume from");
  cmd_train->add_option("--out", tr.out, "final checkpoint path")
      ->capture_default_str();
  cmd_train->add_option("--M", tr.M, "latent dimension");
  cmd_train->add_option("--P", tr.P, "rectified coordinate count");
  cmd_train->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  cmd_train->add_option("--seq", tr.cfg.seq_len)->capture_default_str();
  cmd_train->add_option("--batch", tr.cfg.batch_size)->capture_default_str();
  cmd_train->add_option("--batches", tr.cfg.batches_per_epoch)
      ->capture_default_str();
  cmd_train->add_option("--tau", tr.cfg.tf_interval)->capture_default_str();
  cmd_train->add_option("--noise", tr.cfg.noise_level)->capture_default_str();
  cmd_train->add_option("--lr", tr.cfg.lr_start)->capture_default_str();
  cmd_train->add_option("--lr-end", tr.cfg.lr_end)->capture_default_str();
  cmd_train->add_option("--clip", tr.cfg.grad_clip_norm)
      ->capture_default_str();
  cmd_train->add_option("--checkpoint-every", tr.checkpoint_every,
                        "periodic checkpoint interval (0 = off)")
      ->capture_default_str();

  // simulate
  SimOpts sim;
  auto* cmd_sim = app.add_subcommand("simulate", "run a checkpointed model");
  cmd_sim->add_option("--checkpoint", sim.checkpoint)->required();
  cmd_sim->add_option("--out", sim.out)->capture_default_str();
  cmd_sim->add_option("--horizon", sim.horizon, "end time of the 0..T grid")
      ->capture_default_str();
  cmd_sim->add_option("--dt", sim.dt, "grid step")->capture_default_str();
  cmd_sim->add_option("--times", sim.times_file,
                      "CSV of query times (overrides --horizon/--dt)");
  cmd_sim->add_option("--z0", sim.z0, "initial latent state")->delimiter(',');
  cmd_sim->add_option("--from-data", sim.from_data,
                      "dataset whose row seeds the read-out coordinates");
  cmd_sim->add_option("--from-index", sim.from_index)->capture_default_str();
  cmd_sim->add_option("--max-events", sim.max_events)->capture_default_str();

  // analyze
  AnalyzeOpts an;
  auto* cmd_an = app.add_subcommand("analyze", "fixed points and cycles");
  cmd_an->add_option("--checkpoint", an.checkpoint)->required();
  cmd_an->add_option("--out", an.out)->capture_default_str();
  cmd_an->add_flag("--fp", an.fp, "fixed-point search (always on)");
  cmd_an->add_flag("--cycles", an.cycles, "limit-cycle search");
  cmd_an->add_flag("--floquet", an.floquet,
                   "cycle stability spectra (implies --cycles)");
  cmd_an->add_option("--max-proposals", an.max_proposals)
      ->capture_default_str();
  cmd_an->add_option("--sim-horizon", an.sim_horizon)->capture_default_str();
  cmd_an->add_option("--sim-dt", an.sim_dt)->capture_default_str();
  cmd_an->add_option("--restarts", an.restarts,
                     "fixed-point restart budget (0 = automatic)");

  // evaluate
  EvalOpts ev;
  auto* cmd_ev = app.add_subcommand("evaluate", "reconstruction metrics");
  cmd_ev->add_option("--data", ev.data, "truth dataset CSV")->required();
  cmd_ev->add_option("--checkpoint", ev.checkpoint, "model to free-run");
  cmd_ev->add_option("--generated", ev.generated,
                     "pre-computed trajectory CSV instead of a checkpoint");
  cmd_ev->add_option("--out", ev.out)->capture_default_str();
  cmd_ev->add_option("--bins", ev.bins)->capture_default_str();
  cmd_ev->add_option("--sigma-s", ev.sigma_s,
                     "spectral smoothing bins (default by system)");
  cmd_ev->add_option("--horizon", ev.horizon, "short-term error window")
      ->capture_default_str();
  cmd_ev->add_option("--mae-windows", ev.mae_windows)->capture_default_str();

  // gradcheck
  GradcheckOpts gc;
  auto* cmd_gc = app.add_subcommand("gradcheck",
                                    "finite-difference gradient audit");
  cmd_gc->add_option("--models", gc.models)->capture_default_str();
  cmd_gc->add_option("--tol", gc.tol)->capture_default_str();
  cmd_gc->add_option("--fd-step", gc.fd_step)->capture_default_str();
  cmd_gc->add_option("--model", gc.model_ckpt, "audit one checkpoint");
  cmd_gc->add_option("--out", gc.out)->capture_default_str();
  cmd_gc->add_flag("--inject-tangential", gc.inject_tangential,
                   "also run the tangential-crossing discard probe");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (app.get_subcommands().empty()) {
    std::cout << app.help();
    return 0;
  }

  try {
    if (cmd_gen->parsed())
      return run_gen(g, gen, gen_lor->parsed());
    if (cmd_train->parsed()) return run_train(g, tr, cmd_train);
    if (cmd_sim->parsed()) return run_simulate(g, sim);
    if (cmd_an->parsed()) return run_analyze(g, an);
    if (cmd_ev->parsed()) {
      if (ev.checkpoint.empty() && ev.generated.empty())
        throw Error(ErrorCode::bad_config,
                    "evaluate needs --checkpoint or --generated");
      return run_evaluate(g, ev);
    }
    if (cmd_gc->parsed()) return run_gradcheck(g, gc);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
