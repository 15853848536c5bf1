#include "gmmct/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace gmmct {

namespace {

using json = nlohmann::ordered_json;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("write failed for " + path);
}

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd mat_from_json(const json& rows) {
  const std::size_t nr = rows.size();
  const std::size_t nc = nr > 0 ? rows[0].size() : 0;
  Eigen::MatrixXd m(nr, nc);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nc; ++j) m(i, j) = rows[i][j].get<double>();
  return m;
}

json geometry_to_json(const AcquisitionGeometry& g) {
  json j;
  j["source"] = vec_to_json(g.source);
  j["detector_start"] = vec_to_json(g.detector_start);
  j["detector_end"] = vec_to_json(g.detector_end);
  j["num_detectors"] = g.num_detectors;
  j["t_min"] = g.t_min;
  j["t_max"] = g.t_max;
  j["num_times"] = g.num_times;
  j["fixed_component_index"] = g.fixed_component_index;
  return j;
}

AcquisitionGeometry geometry_from_json(const json& j) {
  AcquisitionGeometry g;
  g.source = vec_from_json(j.at("source"));
  g.detector_start = vec_from_json(j.at("detector_start"));
  g.detector_end = vec_from_json(j.at("detector_end"));
  g.num_detectors = j.at("num_detectors").get<int>();
  g.t_min = j.at("t_min").get<double>();
  g.t_max = j.at("t_max").get<double>();
  g.num_times = j.at("num_times").get<int>();
  g.fixed_component_index = j.at("fixed_component_index").get<int>();
  return g;
}

json optimizer_to_json(const MinimizeSettings& s) {
  json j;
  j["max_iterations"] = s.max_iterations;
  j["gradient_tolerance"] = s.gradient_tolerance;
  j["memory"] = s.memory;
  j["wolfe_c1"] = s.wolfe_c1;
  j["wolfe_c2"] = s.wolfe_c2;
  j["max_line_search_steps"] = s.max_line_search_steps;
  return j;
}

MinimizeSettings optimizer_from_json(const json& j, MinimizeSettings s) {
  s.max_iterations = j.value("max_iterations", s.max_iterations);
  s.gradient_tolerance = j.value("gradient_tolerance", s.gradient_tolerance);
  s.memory = j.value("memory", s.memory);
  s.wolfe_c1 = j.value("wolfe_c1", s.wolfe_c1);
  s.wolfe_c2 = j.value("wolfe_c2", s.wolfe_c2);
  s.max_line_search_steps =
      j.value("max_line_search_steps", s.max_line_search_steps);
  return s;
}

std::string variables_to_string(TrajectoryVariables v) {
  switch (v) {
    case TrajectoryVariables::kVelocity: return "velocity";
    case TrajectoryVariables::kVelocityPosition: return "velocity_position";
    case TrajectoryVariables::kFull: return "full";
  }
  return "velocity";
}

TrajectoryVariables variables_from_string(const std::string& s) {
  if (s == "velocity") return TrajectoryVariables::kVelocity;
  if (s == "velocity_position") return TrajectoryVariables::kVelocityPosition;
  if (s == "full") return TrajectoryVariables::kFull;
  throw ConfigError("config: unknown trajectory variables '" + s + "'");
}

json particle_to_json(const ParticleParams& p) {
  json j;
  j["alpha"] = p.alpha;
  j["u"] = mat_to_json(p.u);
  j["theta"] = vec_to_json(p.theta);
  j["mu"] = vec_to_json(p.eta.mu);
  j["v"] = vec_to_json(p.eta.v);
  j["a"] = vec_to_json(p.eta.a);
  return j;
}

ParticleParams particle_from_json(const json& j) {
  ParticleParams p;
  p.alpha = j.at("alpha").get<double>();
  p.u = mat_from_json(j.at("u"));
  p.theta = vec_from_json(j.at("theta"));
  p.eta.mu = vec_from_json(j.at("mu"));
  p.eta.v = vec_from_json(j.at("v"));
  p.eta.a = vec_from_json(j.at("a"));
  return p;
}

json parse(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed " + what + ": " + e.what());
  }
}

}  // namespace

std::string sinogram_to_string(const Sinogram& g) {
  g.validate();
  std::ostringstream os;
  os << "# gmmct sinogram v1\n";
  os << "# d = " << g.geometry.dim() << "\n";
  auto vec_line = [&os](const char* key, const Eigen::VectorXd& v) {
    os << "# " << key << " =";
    for (Eigen::Index i = 0; i < v.size(); ++i) os << " " << fmt17(v[i]);
    os << "\n";
  };
  vec_line("source", g.geometry.source);
  vec_line("detector_start", g.geometry.detector_start);
  vec_line("detector_end", g.geometry.detector_end);
  os << "# num_detectors = " << g.geometry.num_detectors << "\n";
  os << "# t_min = " << fmt17(g.geometry.t_min) << "\n";
  os << "# t_max = " << fmt17(g.geometry.t_max) << "\n";
  os << "# num_times = " << g.geometry.num_times << "\n";
  os << "# fixed_component_index = " << g.geometry.fixed_component_index
     << "\n";
  for (int mt = 0; mt < g.geometry.num_times; ++mt) {
    for (int mr = 0; mr < g.geometry.num_detectors; ++mr) {
      if (mr) os << " ";
      os << fmt17(g.values(mr, mt));
    }
    os << "\n";
  }
  return os.str();
}

Sinogram sinogram_from_string(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  AcquisitionGeometry geom;
  int d = 0;
  std::vector<std::vector<double>> rows;

  auto parse_header = [&](const std::string& body) {
    const auto eq = body.find('=');
    if (eq == std::string::npos) return;
    std::string key = body.substr(0, eq);
    std::string val = body.substr(eq + 1);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    key = trim(key);
    val = trim(val);
    std::istringstream vs(val);
    auto read_vec = [&vs]() {
      std::vector<double> v;
      double x;
      while (vs >> x) v.push_back(x);
      return Eigen::Map<Eigen::VectorXd>(v.data(), v.size()).eval();
    };
    if (key == "d") vs >> d;
    else if (key == "source") geom.source = read_vec();
    else if (key == "detector_start") geom.detector_start = read_vec();
    else if (key == "detector_end") geom.detector_end = read_vec();
    else if (key == "num_detectors") vs >> geom.num_detectors;
    else if (key == "t_min") vs >> geom.t_min;
    else if (key == "t_max") vs >> geom.t_max;
    else if (key == "num_times") vs >> geom.num_times;
    else if (key == "fixed_component_index") vs >> geom.fixed_component_index;
  };

  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      parse_header(line.substr(1));
      continue;
    }
    std::istringstream ls(line);
    std::vector<double> row;
    double x;
    while (ls >> x) row.push_back(x);
    if (!row.empty()) rows.push_back(std::move(row));
  }

  if (geom.source.size() == 0 || geom.num_detectors <= 0 || geom.num_times <= 0)
    throw IoError("sinogram: missing or malformed header");
  if (static_cast<int>(rows.size()) != geom.num_times)
    throw IoError("sinogram: expected " + std::to_string(geom.num_times) +
                  " data rows, found " + std::to_string(rows.size()));

  Sinogram g;
  g.geometry = geom;
  g.values.resize(geom.num_detectors, geom.num_times);
  for (int mt = 0; mt < geom.num_times; ++mt) {
    if (static_cast<int>(rows[mt].size()) != geom.num_detectors)
      throw IoError("sinogram: row " + std::to_string(mt) + " has " +
                    std::to_string(rows[mt].size()) + " values");
    for (int mr = 0; mr < geom.num_detectors; ++mr)
      g.values(mr, mt) = rows[mt][mr];
  }
  g.validate();
  return g;
}

void save_sinogram(const Sinogram& g, const std::string& path) {
  write_file(path, sinogram_to_string(g));
}

Sinogram load_sinogram(const std::string& path) {
  return sinogram_from_string(read_file(path));
}

void save_scene(const Scene& scene, const std::string& path) {
  scene.validate();
  json j;
  j["d"] = scene.dim();
  j["particles"] = json::array();
  for (const auto& p : scene.particles) j["particles"].push_back(particle_to_json(p));
  write_file(path, j.dump(2) + "\n");
}

Scene load_scene(const std::string& path) {
  const json j = parse(read_file(path), "scene file " + path);
  Scene scene;
  try {
    for (const auto& pj : j.at("particles"))
      scene.particles.push_back(particle_from_json(pj));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scene file " + path + ": " + e.what());
  }
  scene.validate();
  return scene;
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  json j;
  j["seed"] = cfg.seed;
  j["n_particles"] = cfg.n_particles;
  j["geometry"] = geometry_to_json(cfg.geometry);

  json gen;
  const auto& g = cfg.generation;
  gen["attenuation_mean_base"] = g.attenuation_mean_base;
  gen["attenuation_mean_step"] = g.attenuation_mean_step;
  gen["attenuation_std"] = g.attenuation_std;
  gen["u_diag_min"] = g.u_diag_min;
  gen["u_diag_max"] = g.u_diag_max;
  gen["u_offdiag_mean"] = g.u_offdiag_mean;
  gen["u_offdiag_std"] = g.u_offdiag_std;
  gen["anisotropy_min_ratio"] = g.anisotropy_min_ratio;
  gen["omega_min"] = g.omega_min;
  gen["omega_max"] = g.omega_max;
  gen["guard_band_fraction"] = g.guard_band_fraction;
  gen["mu"] = vec_to_json(g.mu);
  gen["accel"] = vec_to_json(g.accel);
  gen["velocities"] = json::array();
  for (const auto& v : g.velocities) gen["velocities"].push_back(vec_to_json(v));
  gen["velocity_mean"] = vec_to_json(g.velocity_mean);
  gen["velocity_std"] = g.velocity_std;
  gen["rejection_budget"] = g.rejection_budget;
  j["generation"] = std::move(gen);

  json s1;
  s1["n_trials"] = cfg.stage1.n_trials;
  s1["init_mean"] = vec_to_json(cfg.stage1.init_mean);
  s1["init_cov"] = mat_to_json(cfg.stage1.init_cov);
  s1["variables"] = variables_to_string(cfg.stage1.variables);
  s1["optimizer"] = optimizer_to_json(cfg.stage1.optimizer);
  s1["max_assignment_rounds"] = cfg.stage1.max_assignment_rounds;
  json refine;
  refine["max_iterations"] = cfg.stage1.refine.max_iterations;
  refine["step_tolerance"] = cfg.stage1.refine.step_tolerance;
  refine["residual_warn_pitch_fraction"] =
      cfg.stage1.refine.residual_warn_pitch_fraction;
  s1["refine"] = std::move(refine);
  json peaks;
  peaks["prominence_fraction"] = cfg.stage1.peaks.prominence_fraction;
  peaks["min_separation_bins"] = cfg.stage1.peaks.min_separation_bins;
  peaks["max_peaks"] = cfg.stage1.peaks.max_peaks;
  s1["peaks"] = std::move(peaks);
  j["stage1"] = std::move(s1);

  json s2;
  s2["huber_delta"] = cfg.stage2.huber_delta;
  s2["huber_delta_fraction"] = cfg.stage2.huber_delta_fraction;
  s2["n_rot_grid"] = cfg.stage2.n_rot_grid;
  s2["omega_min"] = cfg.stage2.omega_min;
  s2["omega_max"] = cfg.stage2.omega_max;
  s2["n_morph_trials"] = cfg.stage2.n_morph_trials;
  s2["optimizer"] = optimizer_to_json(cfg.stage2.optimizer);
  s2["init_u_diag"] = vec_to_json(cfg.stage2.init_u_diag);
  s2["init_u_offdiag_std"] = cfg.stage2.init_u_offdiag_std;
  s2["init_alpha"] = cfg.stage2.init_alpha;
  j["stage2"] = std::move(s2);

  write_file(path, j.dump(2) + "\n");
}

ExperimentConfig load_config(const std::string& path) {
  const json j = parse(read_file(path), "config file " + path);
  ExperimentConfig cfg = ExperimentConfig::defaults();
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.n_particles = j.value("n_particles", cfg.n_particles);
    if (j.contains("geometry")) cfg.geometry = geometry_from_json(j["geometry"]);

    if (j.contains("generation")) {
      const json& gj = j["generation"];
      auto& g = cfg.generation;
      g.attenuation_mean_base =
          gj.value("attenuation_mean_base", g.attenuation_mean_base);
      g.attenuation_mean_step =
          gj.value("attenuation_mean_step", g.attenuation_mean_step);
      g.attenuation_std = gj.value("attenuation_std", g.attenuation_std);
      g.u_diag_min = gj.value("u_diag_min", g.u_diag_min);
      g.u_diag_max = gj.value("u_diag_max", g.u_diag_max);
      g.u_offdiag_mean = gj.value("u_offdiag_mean", g.u_offdiag_mean);
      g.u_offdiag_std = gj.value("u_offdiag_std", g.u_offdiag_std);
      g.anisotropy_min_ratio =
          gj.value("anisotropy_min_ratio", g.anisotropy_min_ratio);
      g.omega_min = gj.value("omega_min", g.omega_min);
      g.omega_max = gj.value("omega_max", g.omega_max);
      g.guard_band_fraction =
          gj.value("guard_band_fraction", g.guard_band_fraction);
      if (gj.contains("mu")) g.mu = vec_from_json(gj["mu"]);
      if (gj.contains("accel")) g.accel = vec_from_json(gj["accel"]);
      if (gj.contains("velocities")) {
        g.velocities.clear();
        for (const auto& vj : gj["velocities"])
          g.velocities.push_back(vec_from_json(vj));
      }
      if (gj.contains("velocity_mean"))
        g.velocity_mean = vec_from_json(gj["velocity_mean"]);
      g.velocity_std = gj.value("velocity_std", g.velocity_std);
      g.rejection_budget = gj.value("rejection_budget", g.rejection_budget);
    }

    if (j.contains("stage1")) {
      const json& sj = j["stage1"];
      auto& s = cfg.stage1;
      s.n_trials = sj.value("n_trials", s.n_trials);
      if (sj.contains("init_mean")) s.init_mean = vec_from_json(sj["init_mean"]);
      if (sj.contains("init_cov")) s.init_cov = mat_from_json(sj["init_cov"]);
      if (sj.contains("variables"))
        s.variables = variables_from_string(sj["variables"].get<std::string>());
      if (sj.contains("optimizer"))
        s.optimizer = optimizer_from_json(sj["optimizer"], s.optimizer);
      s.max_assignment_rounds =
          sj.value("max_assignment_rounds", s.max_assignment_rounds);
      if (sj.contains("refine")) {
        const json& rj = sj["refine"];
        s.refine.max_iterations =
            rj.value("max_iterations", s.refine.max_iterations);
        s.refine.step_tolerance =
            rj.value("step_tolerance", s.refine.step_tolerance);
        s.refine.residual_warn_pitch_fraction = rj.value(
            "residual_warn_pitch_fraction", s.refine.residual_warn_pitch_fraction);
      }
      if (sj.contains("peaks")) {
        const json& pj = sj["peaks"];
        s.peaks.prominence_fraction =
            pj.value("prominence_fraction", s.peaks.prominence_fraction);
        s.peaks.min_separation_bins =
            pj.value("min_separation_bins", s.peaks.min_separation_bins);
        s.peaks.max_peaks = pj.value("max_peaks", s.peaks.max_peaks);
      }
    }

    if (j.contains("stage2")) {
      const json& sj = j["stage2"];
      auto& s = cfg.stage2;
      s.huber_delta = sj.value("huber_delta", s.huber_delta);
      s.huber_delta_fraction =
          sj.value("huber_delta_fraction", s.huber_delta_fraction);
      s.n_rot_grid = sj.value("n_rot_grid", s.n_rot_grid);
      s.omega_min = sj.value("omega_min", s.omega_min);
      s.omega_max = sj.value("omega_max", s.omega_max);
      s.n_morph_trials = sj.value("n_morph_trials", s.n_morph_trials);
      if (sj.contains("optimizer"))
        s.optimizer = optimizer_from_json(sj["optimizer"], s.optimizer);
      if (sj.contains("init_u_diag"))
        s.init_u_diag = vec_from_json(sj["init_u_diag"]);
      s.init_u_offdiag_std =
          sj.value("init_u_offdiag_std", s.init_u_offdiag_std);
      s.init_alpha = sj.value("init_alpha", s.init_alpha);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  // The launch point and acceleration are shared knowns.
  cfg.stage1.known_mu = cfg.generation.mu;
  cfg.stage1.known_accel = cfg.generation.accel;
  cfg.validate();
  return cfg;
}

void save_trajectory_estimate(const TrajectoryEstimate& est,
                              const std::string& path) {
  json j;
  j["loss"] = est.loss;
  j["trial_index"] = est.trial_index;
  j["converged"] = est.converged;
  j["etas"] = json::array();
  for (const auto& eta : est.etas) {
    json ej;
    ej["mu"] = vec_to_json(eta.mu);
    ej["v"] = vec_to_json(eta.v);
    ej["a"] = vec_to_json(eta.a);
    j["etas"].push_back(std::move(ej));
  }
  j["assignment"] = est.assignment;
  write_file(path, j.dump(2) + "\n");
}

TrajectoryEstimate load_trajectory_estimate(const std::string& path) {
  const json j = parse(read_file(path), "trajectory estimate " + path);
  TrajectoryEstimate est;
  try {
    est.loss = j.at("loss").get<double>();
    est.trial_index = j.at("trial_index").get<int>();
    est.converged = j.at("converged").get<bool>();
    for (const auto& ej : j.at("etas")) {
      TrajectoryParams eta;
      eta.mu = vec_from_json(ej.at("mu"));
      eta.v = vec_from_json(ej.at("v"));
      eta.a = vec_from_json(ej.at("a"));
      est.etas.push_back(std::move(eta));
    }
    est.assignment = j.at("assignment").get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("trajectory estimate " + path + ": " + e.what());
  }
  return est;
}

void save_morphology_estimate(const MorphologyEstimate& est,
                              const std::string& path) {
  json j;
  j["loss"] = est.loss;
  j["trial_index"] = est.trial_index;
  j["converged"] = est.converged;
  j["huber_delta"] = est.huber_delta;
  j["particles"] = json::array();
  for (std::size_t i = 0; i < est.alphas.size(); ++i) {
    json pj;
    pj["alpha"] = est.alphas[i];
    pj["u"] = mat_to_json(est.us[i]);
    pj["theta"] = vec_to_json(est.thetas[i]);
    j["particles"].push_back(std::move(pj));
  }
  write_file(path, j.dump(2) + "\n");
}

MorphologyEstimate load_morphology_estimate(const std::string& path) {
  const json j = parse(read_file(path), "morphology estimate " + path);
  MorphologyEstimate est;
  try {
    est.loss = j.at("loss").get<double>();
    est.trial_index = j.at("trial_index").get<int>();
    est.converged = j.at("converged").get<bool>();
    est.huber_delta = j.at("huber_delta").get<double>();
    for (const auto& pj : j.at("particles")) {
      est.alphas.push_back(pj.at("alpha").get<double>());
      est.us.push_back(mat_from_json(pj.at("u")));
      est.thetas.push_back(vec_from_json(pj.at("theta")));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("morphology estimate " + path + ": " + e.what());
  }
  return est;
}

void save_metrics(const MetricsReport& report, const std::string& path) {
  json j;
  j["per_particle"] = json::array();
  for (const auto& m : report.per_particle) {
    json mj;
    mj["truth_index"] = m.truth_index;
    mj["estimate_index"] = m.estimate_index;
    mj["velocity_error_inf"] = m.velocity_error_inf;
    mj["theta_error_inf"] = m.theta_error_inf;
    mj["alpha_rel_error"] = m.alpha_rel_error;
    mj["gram_rel_error"] = m.gram_rel_error;
    mj["rendered_max_abs_error"] = m.rendered_max_abs_error;
    j["per_particle"].push_back(std::move(mj));
  }
  write_file(path, j.dump(2) + "\n");
}

void save_modes_tsv(const ModeSet& modes, const std::string& path) {
  std::ostringstream os;
  os << "time_index\tdetector_index\trefined_index";
  const int d = [&] {
    for (const auto& col : modes.per_time)
      if (!col.empty()) return static_cast<int>(col.front().position.size());
    return 0;
  }();
  for (int i = 0; i < d; ++i) os << "\tposition_" << i;
  os << "\tvalue\n";
  for (int mt = 0; mt < modes.num_times(); ++mt)
    for (const auto& e : modes.per_time[mt]) {
      os << mt << "\t" << e.detector_index << "\t" << fmt17(e.refined_index);
      for (Eigen::Index i = 0; i < e.position.size(); ++i)
        os << "\t" << fmt17(e.position[i]);
      os << "\t" << fmt17(e.value) << "\n";
    }
  write_file(path, os.str());
}

void save_stage1_trace(const Stage1Trace& trace, const std::string& path) {
  std::ostringstream os;
  os << "trial\tround\titeration\tloss\tgrad_norm\thausdorff\n";
  for (const auto& r : trace)
    os << r.trial << "\t" << r.round << "\t" << r.iteration << "\t"
       << fmt17(r.loss) << "\t" << fmt17(r.grad_norm) << "\t"
       << fmt17(r.hausdorff) << "\n";
  write_file(path, os.str());
}

void save_stage2_trace(const Stage2Trace& trace, const std::string& path) {
  std::ostringstream os;
  os << "trial\titeration\tloss\tgrad_norm\n";
  for (const auto& r : trace)
    os << r.trial << "\t" << r.iteration << "\t" << fmt17(r.loss) << "\t"
       << fmt17(r.grad_norm) << "\n";
  write_file(path, os.str());
}

}  // namespace gmmct
