#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "riskgrad/algos/cppo.hpp"
#include "riskgrad/harness/config.hpp"
#include "riskgrad/harness/csv.hpp"
#include "riskgrad/harness/train.hpp"

namespace riskgrad::harness {

/// One policy under test.
struct LoadedCheckpoint {
  std::string label;
  /// Training seed (from a seed_<k> directory), or the position within the source.
  std::uint64_t seed = 0;
  std::string path;
  algos::CppoState state;
};

/// Accepts the train output layout ({state, progress}) or a bare state object.
inline algos::CppoState load_checkpoint_file(const fs::path& path) {
  const auto doc = json::parse(read_text(path));
  return algos::checkpoint_from_json(doc.contains("state") ? doc.at("state") : doc);
}

namespace detail {

inline bool seed_from_dir(const fs::path& dir, std::uint64_t& seed) {
  const std::string name = dir.filename().string();
  if (name.rfind("seed_", 0) != 0 || name.size() == 5) return false;
  try {
    std::size_t used = 0;
    seed = std::stoull(name.substr(5), &used);
    return used == name.size() - 5;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace detail

/// A file is one checkpoint; a directory contributes every seed_<k>/checkpoint.json.
inline std::vector<LoadedCheckpoint> load_sources(const std::vector<SweepSource>& sources) {
  std::vector<LoadedCheckpoint> out;
  for (const auto& src : sources) {
    const fs::path p(src.path);
    std::vector<std::pair<std::uint64_t, fs::path>> files;
    if (fs::is_directory(p)) {
      for (const auto& entry : fs::directory_iterator(p)) {
        std::uint64_t seed = 0;
        if (entry.is_directory() && detail::seed_from_dir(entry.path(), seed) &&
            fs::exists(entry.path() / "checkpoint.json"))
          files.emplace_back(seed, entry.path() / "checkpoint.json");
      }
      if (files.empty()) throw std::runtime_error("sweep: no seed_*/checkpoint.json under " + p.string());
      std::sort(files.begin(), files.end());
    } else if (fs::exists(p)) {
      std::uint64_t seed = 0;
      if (!detail::seed_from_dir(p.parent_path(), seed)) seed = 0;
      files.emplace_back(seed, p);
    } else {
      throw std::runtime_error("sweep: checkpoint not found: " + p.string());
    }
    for (const auto& [seed, file] : files) out.push_back({src.label, seed, file.string(), load_checkpoint_file(file)});
  }
  return out;
}

/// Rejects a policy whose input/output sizes do not fit the env.
inline void check_compatible(const envs::EnvSpec& spec, const algos::CppoState& s, const std::string& what) {
  const auto inf = envs::info(spec);
  const auto head = inf.discrete ? nn::HeadKind::Categorical : nn::HeadKind::Gaussian;
  if (s.policy.obs_dim() != inf.obs_dim || s.policy.action_dim() != inf.action_dim || s.policy.head() != head ||
      s.value.sizes.front() != inf.obs_dim)
    throw std::runtime_error("sweep: checkpoint/env dimension mismatch for " + what);
}

struct SweepPoint {
  std::string axis;
  double value = 0.0;
};

/// Env and observation disturbance at one grid point.
inline std::pair<envs::EnvSpec, envs::ObsDisturbance> point_setting(const envs::EnvSpec& base, const SweepPoint& p,
                                                                   envs::FgsmObjective objective) {
  envs::EnvSpec spec = base;
  envs::ObsDisturbance dist;
  if (p.axis == "mass_scale") spec.physics.mass_scale = p.value;
  else if (p.axis == "sigma") dist = envs::ObsDisturbance::gaussian(p.value);
  else if (p.axis == "epsilon") dist = envs::ObsDisturbance::fgsm(p.value, objective);
  else throw ConfigError("sweep: unknown axis " + p.axis);
  spec.validate();
  return {spec, dist};
}

/// Evaluation episodes of a sweep share one stream per evaluation seed, so
/// every grid point and checkpoint sees the same initial states.
inline std::uint64_t sweep_seed(std::uint64_t eval_seed) { return derive_seed(eval_seed, 0x5eebULL << 32); }

struct SweepRow {
  std::string label;
  std::uint64_t checkpoint_seed = 0;
  std::string axis;
  double value = 0.0;
  std::uint64_t eval_seed = 0;
  std::size_t episodes = 0;
  double mean = 0.0;
  double std = 0.0;
  double worst10 = 0.0;
};

inline const std::vector<std::string>& sweep_columns() {
  static const std::vector<std::string> cols{"label", "checkpoint_seed", "axis", "value", "eval_seed",
                                             "episodes", "mean_return", "std_return", "worst10_mean"};
  return cols;
}

inline CsvTable sweep_table(const std::vector<SweepRow>& rows, const std::string& schema) {
  CsvTable t;
  t.schema = schema;
  t.columns = sweep_columns();
  for (const auto& r : rows)
    t.add_row({r.label, std::to_string(r.checkpoint_seed), r.axis, format_double(r.value), std::to_string(r.eval_seed),
               std::to_string(r.episodes), format_double(r.mean), format_double(r.std), format_double(r.worst10)});
  return t;
}

inline std::vector<SweepRow> rows_from_table(const CsvTable& t) {
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& c = t.rows[i];
    rows.push_back({c[0], std::stoull(c[1]), c[2], std::stod(c[3]), std::stoull(c[4]), std::stoull(c[5]),
                    std::stod(c[6]), std::stod(c[7]), std::stod(c[8])});
  }
  return rows;
}

/// Evaluates every checkpoint at every grid point of the selected axes.
/// Rows come back sorted by (axis order, label order, value, checkpoint seed, eval seed).
inline std::vector<SweepRow> sweep_rows(const envs::EnvSpec& base, double gamma, const SweepSpec& spec,
                                        const std::vector<LoadedCheckpoint>& checkpoints, std::size_t workers) {
  spec.validate();
  if (checkpoints.empty()) throw ConfigError("sweep: no checkpoints given");
  for (const auto& c : checkpoints) check_compatible(base, c.state, c.path);
  struct Job {
    std::size_t axis_index;
    SweepPoint point;
    std::size_t checkpoint;
    std::uint64_t eval_seed;
  };
  std::vector<Job> jobs;
  for (std::size_t a = 0; a < spec.axes.size(); ++a)
    for (double v : spec.grid(spec.axes[a]))
      for (std::size_t c = 0; c < checkpoints.size(); ++c)
        for (auto s : spec.seeds) jobs.push_back({a, {spec.axes[a], v}, c, s});
  std::vector<SweepRow> rows(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t i) {
    const auto& j = jobs[i];
    const auto& ck = checkpoints[j.checkpoint];
    const auto [env, dist] = point_setting(base, j.point, spec.fgsm_objective);
    const auto ev = evaluate_policy(env, ck.state.policy, ck.state.value, spec.episodes, sweep_seed(j.eval_seed), gamma, dist);
    rows[i] = {ck.label, ck.seed, j.point.axis, j.point.value, j.eval_seed, spec.episodes, ev.mean, ev.std, ev.worst10};
  });

  // Deterministic order regardless of scheduling.
  std::vector<std::string> labels;
  for (const auto& c : checkpoints)
    if (std::find(labels.begin(), labels.end(), c.label) == labels.end()) labels.push_back(c.label);
  const auto rank = [](const std::vector<std::string>& v, const std::string& x) {
    return std::find(v.begin(), v.end(), x) - v.begin();
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const SweepRow& a, const SweepRow& b) {
    const auto ka = std::make_tuple(rank(spec.axes, a.axis), rank(labels, a.label), a.value, a.checkpoint_seed, a.eval_seed);
    const auto kb = std::make_tuple(rank(spec.axes, b.axis), rank(labels, b.label), b.value, b.checkpoint_seed, b.eval_seed);
    return ka < kb;
  });
  return rows;
}

/// Per (label, value) aggregate used by the plots: mean of row means and the
/// std across rows (the episode std when there is a single row).
struct CurvePoint {
  double value = 0.0;
  double mean = 0.0;
  double std = 0.0;
  double worst10 = 0.0;
  std::size_t rows = 0;
};

inline std::map<std::string, std::vector<CurvePoint>> curves(const std::vector<SweepRow>& rows, const std::string& axis) {
  std::map<std::string, std::map<double, std::vector<const SweepRow*>>> groups;
  for (const auto& r : rows)
    if (r.axis == axis) groups[r.label][r.value].push_back(&r);
  std::map<std::string, std::vector<CurvePoint>> out;
  for (const auto& [label, by_value] : groups)
    for (const auto& [value, rs] : by_value) {
      CurvePoint p;
      p.value = value;
      p.rows = rs.size();
      for (const auto* r : rs) {
        p.mean += r->mean / static_cast<double>(rs.size());
        p.worst10 += r->worst10 / static_cast<double>(rs.size());
      }
      if (rs.size() == 1) {
        p.std = rs.front()->std;
      } else {
        double sq = 0.0;
        for (const auto* r : rs) sq += (r->mean - p.mean) * (r->mean - p.mean);
        p.std = std::sqrt(sq / static_cast<double>(rs.size() - 1));
      }
      out[label].push_back(p);
    }
  return out;
}

/// Mean return against the axis value, one line and +-1 std band per label.
inline std::string sweep_svg(const std::vector<SweepRow>& rows, const std::string& axis, const std::string& title) {
  const auto data = curves(rows, axis);
  const double W = 640, H = 420, L = 70, R = 150, T = 40, B = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [label, pts] : data)
    for (const auto& p : pts) {
      xmin = std::min(xmin, p.value);
      xmax = std::max(xmax, p.value);
      ymin = std::min(ymin, p.mean - p.std);
      ymax = std::max(ymax, p.mean + p.std);
    }
  if (data.empty()) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  const auto sx = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  const auto sy = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  const auto num = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return std::string(buf);
  };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"24\" font-size=\"15\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = xmin + (xmax - xmin) * i / 4.0;
    const double y = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << num(sx(x)) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << num(x) << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << num(sy(y) + 4) << "\" text-anchor=\"end\">" << num(y) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << axis << "</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
     << ")\" text-anchor=\"middle\">mean return</text>\n";
  std::size_t k = 0;
  for (const auto& [label, pts] : data) {
    const char* color = palette[k % (sizeof palette / sizeof *palette)];
    std::ostringstream band, line;
    for (const auto& p : pts) band << num(sx(p.value)) << ',' << num(sy(p.mean + p.std)) << ' ';
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) band << num(sx(it->value)) << ',' << num(sy(it->mean - it->std)) << ' ';
    for (const auto& p : pts) line << num(sx(p.value)) << ',' << num(sy(p.mean)) << ' ';
    os << "<polygon points=\"" << band.str() << "\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    os << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    for (const auto& p : pts)
      os << "<circle cx=\"" << num(sx(p.value)) << "\" cy=\"" << num(sy(p.mean)) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = T + 10 + 20.0 * static_cast<double>(k);
    os << "<line x1=\"" << W - R + 15 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 35 << "\" y2=\"" << ly << "\" stroke=\""
       << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 40 << "\" y=\"" << ly + 4 << "\">" << label << "</text>\n";
    ++k;
  }
  os << "</svg>\n";
  return os.str();
}

/// Writes config.json, <name>.csv and one <name>_<axis>.svg per axis under cfg.out.
inline std::vector<SweepRow> run_sweep_named(const RunConfig& cfg, const SweepSpec& spec, const std::string& name) {
  const auto checkpoints = load_sources(spec.checkpoints);
  const auto rows = sweep_rows(cfg.env, cfg.trainer.gamma, spec, checkpoints, cfg.workers);
  const fs::path out(cfg.out);
  fs::create_directories(out);
  write_resolved_config(out, cfg, name);
  write_csv(out / (name + ".csv"), sweep_table(rows, name));
  for (const auto& axis : spec.axes)
    write_text(out / (name + "_" + axis + ".svg"), sweep_svg(rows, axis, name + ": " + axis));
  return rows;
}

inline std::vector<SweepRow> run_sweep(const RunConfig& cfg) { return run_sweep_named(cfg, cfg.sweep, "sweep"); }

/// The FGSM epsilon axis alone.
inline std::vector<SweepRow> run_attack(const RunConfig& cfg) {
  SweepSpec spec = cfg.sweep;
  spec.axes = {"epsilon"};
  return run_sweep_named(cfg, spec, "attack");
}

}  // namespace riskgrad::harness
