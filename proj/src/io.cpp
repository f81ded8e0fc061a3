#include "cplrnn/io.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cplrnn {

namespace {

using nlohmann::json;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path);
  return out;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json parse_json_file(const std::string& path) {
  json j = json::parse(read_all(path), nullptr, false);
  if (j.is_discarded())
    throw Error(ErrorCode::io_error, "malformed JSON in " + path);
  return j;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path);
}

// Splits one CSV line on commas and parses every cell as a double; returns
// false when any cell is not numeric (e.g. a header row).
bool parse_numeric_row(const std::string& line, std::vector<double>& cells) {
  cells.clear();
  std::size_t start = 0;
  while (start <= line.size()) {
    std::size_t end = line.find(',', start);
    if (end == std::string::npos) end = line.size();
    const std::string cell = line.substr(start, end - start);
    char* tail = nullptr;
    const double v = std::strtod(cell.c_str(), &tail);
    if (tail == cell.c_str() || *tail != '\0') return false;
    cells.push_back(v);
    start = end + 1;
    if (end == line.size()) break;
  }
  return !cells.empty();
}

// Rows of numeric cells, all with the same column count; an optional
// non-numeric first line is skipped.
std::vector<std::vector<double>> load_csv_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  std::vector<double> cells;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!parse_numeric_row(line, cells)) {
      if (first) {
        first = false;
        continue;  // header row
      }
      throw Error(ErrorCode::io_error, "non-numeric CSV row in " + path);
    }
    first = false;
    if (!rows.empty() && cells.size() != rows.front().size())
      throw Error(ErrorCode::io_error, "ragged CSV rows in " + path);
    rows.push_back(cells);
  }
  if (rows.empty())
    throw Error(ErrorCode::io_error, "no data rows in " + path);
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vector_from_json(const json& a, const std::string& where) {
  if (!a.is_array())
    throw Error(ErrorCode::io_error, where + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number())
      throw Error(ErrorCode::io_error, where + " must hold numbers");
    v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& p) {
  p.validate();
  json j;
  j["M"] = p.M;
  j["P"] = p.P;
  j["N"] = p.N;
  j["A"] = vector_to_json(p.A);
  json w = json::array();
  for (int r = 0; r < p.M; ++r) w.push_back(vector_to_json(p.W.row(r)));
  j["W"] = w;
  j["h"] = vector_to_json(p.h);
  j["version"] = p.version;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

ModelParams load_checkpoint(const std::string& path) {
  const json j = parse_json_file(path);
  for (const char* key : {"M", "P", "N", "A", "W", "h"})
    if (!j.contains(key))
      throw Error(ErrorCode::io_error,
                  std::string("checkpoint misses key ") + key);
  ModelParams p;
  p.M = j["M"].get<int>();
  p.P = j["P"].get<int>();
  p.N = j["N"].get<int>();
  p.A = vector_from_json(j["A"], "A");
  if (!j["W"].is_array() || static_cast<int>(j["W"].size()) != p.M)
    throw Error(ErrorCode::io_error, "W must hold one row per coordinate");
  p.W.resize(p.M, p.M);
  for (int r = 0; r < p.M; ++r) {
    const Eigen::VectorXd row = vector_from_json(j["W"][r], "W row");
    if (row.size() != p.M)
      throw Error(ErrorCode::io_error, "W rows must have M entries");
    p.W.row(r) = row.transpose();
  }
  p.h = vector_from_json(j["h"], "h");
  p.version = j.value("version", std::uint64_t{0});
  p.validate();
  return p;
}

std::string meta_path_for(const std::string& csv_path) {
  const std::string suffix = ".csv";
  if (csv_path.size() > suffix.size() &&
      csv_path.compare(csv_path.size() - suffix.size(), suffix.size(),
                       suffix) == 0)
    return csv_path.substr(0, csv_path.size() - suffix.size()) + ".meta.json";
  return csv_path + ".meta.json";
}

void save_dataset(const std::string& csv_path, const Dataset& ds) {
  ds.validate();
  auto out = open_out(csv_path);
  out << 't';
  for (int c = 1; c <= ds.N(); ++c) out << ",x" << c;
  out << '\n';
  for (int r = 0; r < ds.T(); ++r) {
    out << fmt17(ds.times(r));
    for (int c = 0; c < ds.N(); ++c) out << ',' << fmt17(ds.values(r, c));
    out << '\n';
  }
  finish(out, csv_path);

  json meta;
  meta["generator"] = ds.meta.generator;
  meta["params"] = json::object();
  for (const auto& [k, v] : ds.meta.params) meta["params"][k] = v;
  meta["seed"] = ds.meta.seed;
  meta["regular"] = ds.meta.regular;
  meta["events"] = ds.meta.events;
  const std::string mpath = meta_path_for(csv_path);
  auto mout = open_out(mpath);
  mout << meta.dump(2) << '\n';
  finish(mout, mpath);
}

Dataset load_dataset(const std::string& csv_path) {
  const auto rows = load_csv_rows(csv_path);
  const Eigen::Index t_count = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index n_cols =
      static_cast<Eigen::Index>(rows.front().size()) - 1;
  if (n_cols < 1)
    throw Error(ErrorCode::io_error, "dataset CSV needs value columns");

  Dataset ds;
  ds.times.resize(t_count);
  ds.values.resize(t_count, n_cols);
  for (Eigen::Index r = 0; r < t_count; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    ds.times(r) = row[0];
    for (Eigen::Index c = 0; c < n_cols; ++c)
      ds.values(r, c) = row[static_cast<std::size_t>(c + 1)];
  }

  std::ifstream probe(meta_path_for(csv_path));
  if (probe) {
    const json meta = parse_json_file(meta_path_for(csv_path));
    ds.meta.generator = meta.value("generator", std::string{});
    if (meta.contains("params"))
      for (const auto& [k, v] : meta["params"].items())
        ds.meta.params[k] = v.get<double>();
    ds.meta.seed = meta.value("seed", std::uint64_t{0});
    ds.meta.regular = meta.value("regular", true);
    if (meta.contains("events"))
      ds.meta.events = meta["events"].get<std::vector<double>>();
  } else if (t_count > 2) {
    // No sidecar: infer regularity from the spacing itself.
    const double gap = ds.times(1) - ds.times(0);
    bool regular = true;
    for (Eigen::Index r = 2; r < t_count && regular; ++r)
      regular = std::abs(ds.times(r) - ds.times(r - 1) - gap) <=
                1e-9 * std::max(1.0, std::abs(gap));
    ds.meta.regular = regular;
  }
  ds.validate();
  return ds;
}

Eigen::VectorXd load_times_csv(const std::string& path) {
  const auto rows = load_csv_rows(path);
  Eigen::VectorXd t(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    t(static_cast<Eigen::Index>(r)) = rows[r][0];
  return t;
}

void save_trajectory_csv(const std::string& path, const Trajectory& traj) {
  auto out = open_out(path);
  const int m =
      traj.states.empty() ? 0 : static_cast<int>(traj.states.front().size());
  out << 't';
  for (int c = 1; c <= m; ++c) out << ",z" << c;
  out << '\n';
  for (std::size_t r = 0; r < traj.times.size(); ++r) {
    out << fmt17(traj.times[r]);
    for (int c = 0; c < m; ++c) out << ',' << fmt17(traj.states[r](c));
    out << '\n';
  }
  finish(out, path);
}

void save_events_csv(const std::string& path,
                     const std::vector<SwitchEvent>& events) {
  auto out = open_out(path);
  out << "t,dim,region_before,region_after\n";
  for (const auto& ev : events)
    out << fmt17(ev.t_abs) << ',' << ev.dim << ',' << ev.region_before << ','
        << ev.region_after << '\n';
  finish(out, path);
}

void save_loss_csv(const std::string& path,
                   const std::vector<EpochStat>& history) {
  auto out = open_out(path);
  out << "epoch,loss,lr,discarded_segments\n";
  for (const auto& e : history)
    out << e.epoch << ',' << fmt17(e.loss) << ',' << fmt17(e.lr) << ','
        << e.discarded_segments << '\n';
  finish(out, path);
}

void save_manifest(const std::string& path, const RunManifest& m) {
  json j;
  j["command"] = m.command;
  j["config_path"] = m.config_path;
  j["seed"] = m.seed;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["code_version"] = m.code_version;
  j["wall_seconds"] = m.wall_seconds;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

RunManifest load_manifest(const std::string& path) {
  const json j = parse_json_file(path);
  RunManifest m;
  m.command = j.value("command", std::string{});
  m.config_path = j.value("config_path", std::string{});
  m.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("inputs"))
    m.inputs = j["inputs"].get<std::vector<std::string>>();
  if (j.contains("outputs"))
    m.outputs = j["outputs"].get<std::vector<std::string>>();
  m.code_version = j.value("code_version", std::string{});
  m.wall_seconds = j.value("wall_seconds", 0.0);
  return m;
}

}  // namespace cplrnn
