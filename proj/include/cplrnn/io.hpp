#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cplrnn/data.hpp"
#include "cplrnn/event_solver.hpp"
#include "cplrnn/model.hpp"
#include "cplrnn/train.hpp"

namespace cplrnn {

inline constexpr const char* kLibraryVersion = "0.1.0";

// All writers create or truncate their target file and throw io_error on
// filesystem problems; all loaders validate what they read. Floating-point
// values survive a save/load round trip bitwise: CSV cells are printed with
// 17 significant digits and JSON numbers use shortest-round-trip encoding.

// Model checkpoint: JSON object {M, P, N, A, W (row-major rows), h, version}.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

// Sidecar location for a dataset's meta: "<stem>.meta.json" next to the CSV.
std::string meta_path_for(const std::string& csv_path);

// Dataset CSV with header `t,x1,...,xN` plus the sidecar meta JSON.
void save_dataset(const std::string& csv_path, const Dataset& ds);
// Loads the CSV; if the sidecar is missing, meta defaults are used and the
// regular flag is inferred from the spacing of the time column.
Dataset load_dataset(const std::string& csv_path);

// First numeric column of a CSV (header row optional): query times.
Eigen::VectorXd load_times_csv(const std::string& path);

// Trajectory CSV with header `t,z1,...,zM`.
void save_trajectory_csv(const std::string& path, const Trajectory& traj);

// Events CSV with header `t,dim,region_before,region_after`.
void save_events_csv(const std::string& path,
                     const std::vector<SwitchEvent>& events);

// Loss history CSV with header `epoch,loss,lr,discarded_segments`.
void save_loss_csv(const std::string& path,
                   const std::vector<EpochStat>& history);

// Everything needed to rerun a command and reproduce its outputs.
struct RunManifest {
  std::string command;      // reconstructed invocation
  std::string config_path;  // empty when no config file was involved
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string code_version = kLibraryVersion;
  double wall_seconds = 0.0;
};

void save_manifest(const std::string& path, const RunManifest& manifest);
RunManifest load_manifest(const std::string& path);

}  // namespace cplrnn
