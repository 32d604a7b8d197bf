#include "app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "ndha/errors.hpp"
#include "ndha/io_util.hpp"

namespace fs = std::filesystem;

namespace ndha::app {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e)) return kValidation;
  if (dynamic_cast<const IntegrationError*>(&e) || dynamic_cast<const NumericalError*>(&e)) return kNumerical;
  return kFailure;
}

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double get_num(const json& j, const char* key, double if_null) {
  if (!j.contains(key) || j.at(key).is_null()) return if_null;
  return j.at(key).get<double>();
}

json matrix(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(num(m(i, k)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j) {
  if (!j.is_array() || j.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    for (std::size_t k = 0; k < j[i].size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          j[i][k].is_null() ? std::numeric_limits<double>::quiet_NaN() : j[i][k].get<double>();
  return m;
}

json numbers(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

json to_json(const FitResult& f) {
  return json{{"names", f.names},
              {"values", numbers(f.values)},
              {"j_opt", num(f.j_opt)},
              {"sse", num(f.sse)},
              {"points", f.points},
              {"evaluations", f.evaluations},
              {"failed_evaluations", f.failed_evaluations},
              {"fim", matrix(f.fim)},
              {"covariance", matrix(f.covariance)},
              {"cv_percent", numbers(f.cv_percent)},
              {"correlation", matrix(f.correlation)},
              {"gamma", num(f.gamma)},
              {"aic", num(f.aic)},
              {"log_rde", num(f.log_rde)},
              {"inv_mod_e", num(f.inv_mod_e)},
              {"j_crit", num(f.j_crit)},
              {"fim_condition", num(f.fim_condition)},
              {"fim_singular", f.fim_singular},
              {"rmse_per_series", numbers(f.rmse_per_series)},
              {"series_labels", f.series_labels}};
}

FitResult fit_from_json(const json& j) {
  FitResult f;
  f.names = j.at("names").get<std::vector<std::string>>();
  for (const auto& v : j.at("values")) f.values.push_back(v.is_null() ? kInf : v.get<double>());
  f.j_opt = get_num(j, "j_opt", kInf);
  f.sse = get_num(j, "sse", kInf);
  f.points = j.value("points", std::size_t{0});
  f.evaluations = j.value("evaluations", std::size_t{0});
  f.failed_evaluations = j.value("failed_evaluations", std::size_t{0});
  f.fim = matrix_from(j.value("fim", json::array()));
  f.covariance = matrix_from(j.value("covariance", json::array()));
  for (const auto& v : j.value("cv_percent", json::array())) f.cv_percent.push_back(v.is_null() ? kInf : v.get<double>());
  f.correlation = matrix_from(j.value("correlation", json::array()));
  f.gamma = get_num(j, "gamma", kInf);
  f.aic = get_num(j, "aic", kInf);
  f.log_rde = get_num(j, "log_rde", -kInf);
  f.inv_mod_e = get_num(j, "inv_mod_e", 0.0);
  f.j_crit = get_num(j, "j_crit", kInf);
  f.fim_condition = get_num(j, "fim_condition", kInf);
  f.fim_singular = j.value("fim_singular", false);
  for (const auto& v : j.value("rmse_per_series", json::array())) f.rmse_per_series.push_back(v.get<double>());
  f.series_labels = j.value("series_labels", std::vector<std::string>{});
  return f;
}

json to_json(const SubsetTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"subset", r.subset}, {"error", r.error}, {"identifiable", r.identifiable()}, {"fit", to_json(r.fit)}});
  return json{{"rows", rows},
              {"selected", t.selected ? json(*t.selected) : json(nullptr)},
              {"last_size", t.last_size}};
}

namespace {

SubsetTable subset_table_from_json(const json& j) {
  SubsetTable t;
  for (const auto& r : j.at("rows")) {
    SubsetRow row;
    row.subset = r.at("subset").get<std::vector<std::string>>();
    row.error = r.value("error", std::string{});
    row.fit = fit_from_json(r.at("fit"));
    t.rows.push_back(std::move(row));
  }
  if (j.contains("selected") && !j.at("selected").is_null()) t.selected = j.at("selected").get<std::size_t>();
  t.last_size = j.value("last_size", std::size_t{0});
  return t;
}

}  // namespace

json to_json(const std::vector<SeriesDiagnostics>& rows) {
  json out = json::array();
  for (const auto& d : rows) {
    out.push_back({{"label", d.label},
                   {"n", d.n},
                   {"r2", num(d.r2)},
                   {"rmse", num(d.rmse)},
                   {"msep",
                    {{"msep", num(d.msep.msep)},
                     {"me", num(d.msep.me)},
                     {"se", num(d.msep.se)},
                     {"nc", num(d.msep.nc)},
                     {"defined", d.msep.defined}}},
                   {"f_test",
                    {{"statistic", num(d.f_test.statistic)},
                     {"critical", num(d.f_test.critical)},
                     {"intercept", num(d.f_test.intercept)},
                     {"slope", num(d.f_test.slope)},
                     {"pass", d.f_test.pass},
                     {"text", d.f_test.format()}}},
                   {"ks",
                    {{"statistic", num(d.ks.statistic)},
                     {"critical", num(d.ks.critical)},
                     {"p_value", num(d.ks.p_value)},
                     {"reject", d.ks.reject},
                     {"qq_correlation", num(d.ks.qq.correlation)}}},
                   {"acf", {{"values", numbers(d.acf.values)}, {"band", num(d.acf.band)}, {"outside_band", d.acf.outside_band}}}});
  }
  return out;
}

json to_json(const SolverOptions& s) {
  return json{{"rtol", s.rtol}, {"atol", s.atol}, {"report_interval_min", s.report_interval_min}, {"max_steps", s.max_steps}};
}

json to_json(const FitOptions& o) {
  return json{{"global_starts", o.global_starts},   {"local_searches", o.local_searches},
              {"initial_mesh", o.initial_mesh},     {"polish_mesh", o.polish_mesh},
              {"local_box", o.local_box},           {"mesh_tolerance", o.mesh_tolerance},
              {"max_evaluations", o.max_evaluations}, {"seed", o.seed},
              {"fd_relative_step", o.fd_relative_step}, {"fim_solver", to_json(o.fim_solver)}};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string trajectory_csv(const Trajectory& traj) {
  std::ostringstream out;
  out << "time_min";
  for (std::size_t c = 0; c < kComponentCount; ++c) out << "," << component_name(static_cast<Component>(c));
  out << ",DO,N2O\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& s = traj.states[i];
    out << format_double(traj.times_min[i]);
    for (double v : s.values) out << "," << format_double(v);
    out << "," << format_double(s[observable_component(Observable::DO)]) << ","
        << format_double(s[observable_component(Observable::N2O)]) << "\n";
  }
  return out.str();
}

Experiment synthesize(const Experiment& design, const ParameterSet& params, const std::vector<SyntheticSeries>& series,
                      double interval_min, double ar1, std::uint64_t seed, const SolverOptions& solver) {
  if (!(interval_min > 0.0)) throw ValidationError("sampling interval must be > 0");
  if (!(ar1 > -1.0 && ar1 < 1.0)) throw ValidationError("AR(1) coefficient must lie in (-1, 1)");
  if (series.empty()) throw ValidationError("no series to synthesize");
  std::vector<double> times;
  const auto n = static_cast<std::size_t>(std::floor(design.horizon_min / interval_min + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) times.push_back(static_cast<double>(i) * interval_min);
  const Trajectory traj = simulate_at(design, params, times, solver);

  Experiment out = design;
  out.measured.clear();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  const double innovation = std::sqrt(1.0 - ar1 * ar1);
  for (const auto& s : series) {
    if (!(s.relative_sigma > 0.0)) throw ValidationError("relative noise level must be > 0");
    MeasuredSeries m;
    m.observable = s.observable;
    m.times_min = times;
    m.values = observables(traj, s.observable, times);
    double peak = 0.0;
    for (double v : m.values) peak = std::max(peak, std::abs(v));
    if (!(peak > 0.0)) throw ValidationError(std::string("series ") + std::string(observable_name(s.observable)) + " is identically zero");
    m.sigma = s.relative_sigma * peak;
    double e = m.sigma * z(rng);
    for (double& v : m.values) {
      v += e;
      e = ar1 * e + innovation * m.sigma * z(rng);
    }
    out.measured.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------- config

namespace {

struct Node {
  YAML::Node node;
  std::string where;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError(where + ":" + std::to_string(node.Mark().line + 1) + ": " + msg);
  }
  void only(std::initializer_list<const char*> keys) const {
    for (const auto& kv : node) {
      const auto k = kv.first.as<std::string>();
      if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
        Node{kv.first, where}.fail("unknown key '" + k + "'");
    }
  }
  Node operator[](const char* key) const { return {node[key], where}; }
  explicit operator bool() const { return static_cast<bool>(node); }

  template <class T>
  T as(const char* what) const {
    try {
      return node.as<T>();
    } catch (const YAML::Exception&) {
      fail(std::string("bad value for ") + what);
    }
  }
  std::vector<std::string> strings(const char* what) const {
    if (!node) return {};
    if (!node.IsSequence()) fail(std::string(what) + " must be a list");
    return as<std::vector<std::string>>(what);
  }
  std::vector<double> doubles(const char* what) const {
    if (!node) return {};
    if (!node.IsSequence()) fail(std::string(what) + " must be a list");
    return as<std::vector<double>>(what);
  }
};

std::vector<Observable> observable_list(const Node& n, const char* what) {
  std::vector<Observable> out;
  for (const auto& s : n.strings(what)) {
    const auto o = observable_from_name(s);
    if (!o) n.fail("unknown series '" + s + "'");
    out.push_back(*o);
  }
  return out;
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& text, const std::string& base_dir, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ValidationError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  const Node r{root, source};
  if (!root.IsMap()) r.fail("pipeline config must be a mapping");
  r.only({"params", "output", "seed", "solver", "fit", "sensitivity", "stages", "uncertainty", "scenario"});

  PipelineConfig c;
  c.source = source;
  if (r["params"]) c.params_file = resolve_path(base_dir, r["params"].as<std::string>("params"));
  if (r["output"]) c.output_dir = resolve_path(base_dir, r["output"].as<std::string>("output"));
  if (r["seed"]) c.seed = r["seed"].as<std::uint64_t>("seed");
  if (const auto s = r["solver"]) {
    s.only({"rtol", "atol"});
    if (s["rtol"]) c.solver.rtol = s["rtol"].as<double>("rtol");
    if (s["atol"]) c.solver.atol = s["atol"].as<double>("atol");
  }
  if (const auto f = r["fit"]) {
    f.only({"global_starts", "local_searches", "max_evaluations", "mesh_tolerance"});
    if (f["global_starts"]) c.fit.global_starts = f["global_starts"].as<std::size_t>("global_starts");
    if (f["local_searches"]) c.fit.local_searches = f["local_searches"].as<std::size_t>("local_searches");
    if (f["max_evaluations"]) c.fit.max_evaluations = f["max_evaluations"].as<std::size_t>("max_evaluations");
    if (f["mesh_tolerance"]) c.fit.mesh_tolerance = f["mesh_tolerance"].as<double>("mesh_tolerance");
  }
  if (const auto s = r["sensitivity"]) {
    s.only({"samples", "interval_min"});
    if (s["samples"]) c.sensitivity_samples = s["samples"].as<std::size_t>("samples");
    if (s["interval_min"]) c.sensitivity_interval_min = s["interval_min"].as<double>("interval_min");
  }
  if (const auto stages = r["stages"]) {
    if (!stages.node.IsSequence()) stages.fail("stages must be a list");
    for (const auto& sn : stages.node) {
      const Node s{sn, source};
      s.only({"id", "experiments", "series", "candidates", "estimate", "reopen", "max_subset", "bounds",
              "sensitivity"});
      StageConfig st;
      if (!s["id"]) s.fail("stage without id");
      st.id = s["id"].as<std::string>("id");
      for (const auto& e : s["experiments"].strings("experiments")) st.experiments.push_back(resolve_path(base_dir, e));
      st.series = observable_list(s["series"], "series");
      st.candidates = s["candidates"].strings("candidates");
      st.estimate = s["estimate"].strings("estimate");
      st.reopen = s["reopen"].strings("reopen");
      if (s["max_subset"]) st.max_subset = s["max_subset"].as<std::size_t>("max_subset");
      if (s["sensitivity"]) st.sensitivity = s["sensitivity"].as<bool>("sensitivity");
      if (const auto b = s["bounds"]) {
        if (!b.node.IsMap()) b.fail("bounds must map names to [lower, upper]");
        for (const auto& kv : b.node) {
          const auto v = Node{kv.second, source}.doubles("bound");
          if (v.size() != 2) Node{kv.second, source}.fail("bound needs [lower, upper]");
          st.bounds[kv.first.as<std::string>()] = {v[0], v[1]};
        }
      }
      if (st.candidates.empty()) st.candidates = st.estimate;
      c.stages.push_back(std::move(st));
    }
  }
  if (const auto u = r["uncertainty"]) {
    u.only({"experiments", "observables", "samples", "interval_min"});
    c.uncertainty.enabled = true;
    for (const auto& e : u["experiments"].strings("experiments"))
      c.uncertainty.experiments.push_back(resolve_path(base_dir, e));
    if (u["observables"]) c.uncertainty.observables = observable_list(u["observables"], "observables");
    if (u["samples"]) c.uncertainty.samples = u["samples"].as<std::size_t>("samples");
    if (u["interval_min"]) c.uncertainty.interval_min = u["interval_min"].as<double>("interval_min");
  }
  if (const auto s = r["scenario"]) {
    s.only({"do", "tno2", "tan", "pH", "uncertainty_samples"});
    c.scenario.enabled = true;
    c.scenario.do_levels = s["do"].doubles("do");
    c.scenario.tno2_levels = s["tno2"].doubles("tno2");
    if (s["tan"]) c.scenario.tan_levels = s["tan"].doubles("tan");
    if (s["pH"]) c.scenario.ph = s["pH"].as<double>("pH");
    if (s["uncertainty_samples"]) c.scenario.uncertainty_samples = s["uncertainty_samples"].as<std::size_t>("uncertainty_samples");
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  return parse_pipeline_config(read_file(path), fs::path(path).parent_path().string(), path);
}

void PipelineConfig::validate() const {
  const std::string who = source.empty() ? "pipeline config" : source;
  if (!params_file.empty() && !fs::exists(params_file))
    throw ValidationError(who + ": parameter file '" + params_file + "' does not exist");
  const ParameterSet& known = ParameterSet::defaults();
  std::set<std::string> ids, seen;
  for (const auto& st : stages) {
    const std::string where = who + ": stage '" + st.id + "'";
    if (st.id.empty()) throw ValidationError(who + ": stage id must be nonempty");
    if (!ids.insert(st.id).second) throw ValidationError(where + " appears twice");
    if (st.experiments.empty()) throw ValidationError(where + " lists no experiments");
    for (const auto& e : st.experiments)
      if (!fs::exists(e)) throw ValidationError(where + ": experiment file '" + e + "' does not exist");
    if (st.candidates.empty()) throw ValidationError(where + " has no candidate parameters");
    if (st.max_subset == 0) throw ValidationError(where + ": max_subset must be >= 1");
    for (const auto& n : st.candidates)
      if (!known.contains(n)) throw ValidationError(where + ": unknown parameter '" + n + "'");
    for (const auto& n : st.estimate)
      if (std::find(st.candidates.begin(), st.candidates.end(), n) == st.candidates.end())
        throw ValidationError(where + ": estimated parameter '" + n + "' is not a candidate");
    for (const auto& [n, b] : st.bounds) {
      if (std::find(st.candidates.begin(), st.candidates.end(), n) == st.candidates.end())
        throw ValidationError(where + ": bound given for non-candidate '" + n + "'");
      if (!(b.lower > 0.0 && b.upper > b.lower)) throw ValidationError(where + ": bad bound for '" + n + "'");
    }
    for (const auto& n : st.candidates)
      if (seen.count(n) && std::find(st.reopen.begin(), st.reopen.end(), n) == st.reopen.end())
        throw ValidationError(where + ": '" + n + "' was a candidate of an earlier stage; list it under reopen");
    for (const auto& n : st.reopen)
      if (!seen.count(n)) throw ValidationError(where + ": reopened '" + n + "' was not a candidate before");
    seen.insert(st.candidates.begin(), st.candidates.end());
  }
  if (uncertainty.enabled) {
    if (uncertainty.experiments.empty()) throw ValidationError(who + ": uncertainty lists no experiments");
    for (const auto& e : uncertainty.experiments)
      if (!fs::exists(e)) throw ValidationError(who + ": experiment file '" + e + "' does not exist");
    if (uncertainty.samples < 50) throw ValidationError(who + ": uncertainty needs at least 50 samples");
  }
  if (scenario.enabled && (scenario.do_levels.empty() || scenario.tno2_levels.empty() || scenario.tan_levels.empty()))
    throw ValidationError(who + ": scenario needs do, tno2 and tan levels");
  if (scenario.enabled && scenario.uncertainty_samples > 0 && scenario.uncertainty_samples < 50)
    throw ValidationError(who + ": scenario uncertainty needs at least 50 samples");
}

// -------------------------------------------------------------- pipeline

namespace {

std::string stage_dir_name(std::size_t i, const std::string& id) {
  std::string safe;
  for (char ch : id) safe += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-') ? ch : '_';
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02zu_", i + 1);
  return std::string("stage_") + buf + safe;
}

std::string params_text(const ParameterSet& p) {
  std::ostringstream out;
  write_parameter_file(out, p);
  return out.str();
}

struct Writer {
  fs::path root;
  std::vector<std::string> artifacts;

  void put(const fs::path& rel, const std::string& content) {
    fs::create_directories((root / rel).parent_path());
    write_file_atomic((root / rel).string(), content);
    artifacts.push_back(rel.generic_string());
  }
};

std::vector<Observable> measured_observables(const std::vector<Experiment>& exps, const std::vector<Observable>& filter) {
  std::vector<Observable> out;
  for (const auto& e : exps)
    for (const auto& m : e.measured)
      if ((filter.empty() || std::count(filter.begin(), filter.end(), m.observable)) &&
          !std::count(out.begin(), out.end(), m.observable))
        out.push_back(m.observable);
  return out;
}

json load_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot read '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace

std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, bool resume) {
  config.validate();
  if (config.output_dir.empty()) throw ValidationError("pipeline needs an output directory");
  Writer w{config.output_dir, {}};
  fs::create_directories(w.root);

  ParameterSet params = config.params_file.empty() ? ParameterSet::defaults() : load_parameter_file(config.params_file);

  json checkpoint = {{"completed", json::array()}};
  const fs::path checkpoint_path = w.root / "checkpoint.json";
  if (resume && fs::exists(checkpoint_path)) checkpoint = load_json(checkpoint_path);

  json manifest = {{"tool", "ndha"},
                   {"config", config.source},
                   {"params_file", config.params_file},
                   {"seed", config.seed},
                   {"solver", to_json(config.solver)},
                   {"fit_options", to_json(config.fit)},
                   {"sensitivity", {{"samples", config.sensitivity_samples}, {"interval_min", config.sensitivity_interval_min}}},
                   {"stages", json::array()}};

  std::vector<StageOutcome> outcomes;
  std::map<std::string, double> estimated_so_far;
  for (std::size_t si = 0; si < config.stages.size(); ++si) {
    const StageConfig& st = config.stages[si];
    const fs::path dir = stage_dir_name(si, st.id);
    StageOutcome oc;
    oc.id = st.id;
    oc.frozen_inputs = estimated_so_far;
    for (auto& [n, v] : oc.frozen_inputs) v = params.value(n);

    FitOptions fo = config.fit;
    fo.seed = config.seed + 1000 * (si + 1);
    json stage_json = {{"id", st.id},
                       {"directory", dir.generic_string()},
                       {"experiments", st.experiments},
                       {"candidates", st.candidates},
                       {"seed", fo.seed},
                       {"frozen_inputs", oc.frozen_inputs}};
    json series = json::array();
    for (Observable o : st.series) series.push_back(std::string(observable_name(o)));
    stage_json["series"] = series;

    const bool done = si < checkpoint["completed"].size() && checkpoint["completed"][si].value("id", "") == st.id;
    if (done) {
      const json fj = load_json(w.root / dir / "fit.json");
      oc.fit = fit_from_json(fj);
      oc.estimated = oc.fit.names;
      for (std::size_t k = 0; k < oc.fit.names.size(); ++k) params.set(oc.fit.names[k], oc.fit.values[k]);
      stage_json["resumed"] = true;
      for (const auto& a : checkpoint["completed"][si].value("artifacts", json::array())) w.artifacts.push_back(a);
      stage_json["artifacts"] = checkpoint["completed"][si].value("artifacts", json::array());
    } else {
      const std::size_t first_artifact = w.artifacts.size();
      std::vector<Experiment> exps;
      for (const auto& path : st.experiments) exps.push_back(load_experiment(path));

      if (st.sensitivity && config.sensitivity_samples > 0) {
        const SamplePlan plan =
            SamplePlan::from_classes(params, st.candidates, config.sensitivity_samples, config.seed + 1000 * (si + 1) + 1);
        const auto outs = measured_observables({exps.front()}, st.series);
        if (!outs.empty()) {
          const SensitivityStudy study =
              sensitivity_study(exps.front(), params, plan, outs, config.sensitivity_interval_min, config.solver);
          for (std::size_t k = 0; k < outs.size(); ++k) {
            const std::string o(observable_name(outs[k]));
            w.put(dir / ("src_" + o + ".csv"), src_csv(study.results[k]));
            try {
              w.put(dir / ("ranking_" + o + ".csv"),
                    ranking_csv(rank_parameters(study.results[k], 0.0, exps.front().horizon_min)));
            } catch (const ValidationError&) {
              // no valid regression point: nothing to rank
            }
          }
          stage_json["sensitivity_failed"] = study.failed;
        }
      }

      CalibrationProblem problem = CalibrationProblem::with_default_bounds(exps, params, st.candidates);
      problem.series = st.series;
      problem.solver = config.solver;
      for (const auto& [n, b] : st.bounds)
        problem.bounds[static_cast<std::size_t>(std::find(problem.candidates.begin(), problem.candidates.end(), n) -
                                                problem.candidates.begin())] = b;

      if (st.estimate.empty()) {
        const SubsetTable table = subset_search(problem, st.max_subset, fo);
        w.put(dir / "subsets.json", dump(to_json(table)));
        w.put(dir / "subsets.txt", subset_table_text(table));
        if (!table.selected) {
          w.put("checkpoint.json", dump(checkpoint));
          throw NumericalError("stage '" + st.id + "': no identifiable subset lowers the AIC");
        }
        oc.fit = table.rows[*table.selected].fit;
      } else {
        oc.fit = fit(problem.restricted(st.estimate), fo);
      }
      oc.estimated = oc.fit.names;
      w.put(dir / "fit.json", dump(to_json(oc.fit)));

      const CalibrationProblem fitted = problem.restricted(oc.estimated);
      const Objective objective(fitted);
      const auto diag = diagnose(objective, objective.assign(oc.fit.values), 20, fo.seed);
      w.put(dir / "diagnostics.json", dump(to_json(diag)));
      w.put(dir / "diagnostics.txt", diagnostics_table(diag));

      for (std::size_t k = 0; k < oc.fit.names.size(); ++k) params.set(oc.fit.names[k], oc.fit.values[k]);
      w.put(dir / "params_after.params", params_text(params));

      json produced(std::vector<std::string>(w.artifacts.begin() + static_cast<std::ptrdiff_t>(first_artifact), w.artifacts.end()));
      stage_json["artifacts"] = produced;
      json entry = {{"id", st.id}, {"artifacts", produced}};
      if (checkpoint["completed"].size() > si) checkpoint["completed"].erase(checkpoint["completed"].begin() + static_cast<std::ptrdiff_t>(si), checkpoint["completed"].end());
      checkpoint["completed"].push_back(entry);
      write_file_atomic((w.root / "checkpoint.json").string(), dump(checkpoint));
    }
    stage_json["estimated"] = oc.estimated;
    json values = json::object();
    for (std::size_t k = 0; k < oc.fit.names.size(); ++k) values[oc.fit.names[k]] = oc.fit.values[k];
    stage_json["values"] = values;
    manifest["stages"].push_back(stage_json);
    for (const auto& n : oc.estimated) estimated_so_far[n] = 0.0;
    outcomes.push_back(std::move(oc));
  }
  if (!config.stages.empty()) w.put("params_final.params", params_text(params));

  // Everything estimated, with the calibrated CVs, for the uncertainty steps.
  std::vector<std::string> est_names;
  std::vector<double> est_values, est_cv;
  for (const auto& oc : outcomes)
    for (std::size_t k = 0; k < oc.fit.names.size(); ++k) {
      est_names.push_back(oc.fit.names[k]);
      est_values.push_back(oc.fit.values[k]);
      est_cv.push_back(oc.fit.cv_percent.empty() ? kInf : oc.fit.cv_percent[k]);
    }

  if (config.uncertainty.enabled && !est_names.empty()) {
    // Both distributions are centred on the estimates; they differ in width.
    const auto cls = ParameterDistribution::from_classes(params, est_names);
    const auto cal = ParameterDistribution::from_calibration(est_names, est_values, est_cv);
    json cov = json::array();
    for (const auto& path : config.uncertainty.experiments) {
      const Experiment e = load_experiment(path);
      using Arm = std::tuple<const char*, const ParameterDistribution*, const ParameterSet*>;
      for (const auto& [tag, dist, base] : {Arm{"class", &cls, &params}, Arm{"calibrated", &cal, &params}}) {
        const auto prop = propagate(*dist, e, *base, config.uncertainty.samples, config.seed + 7,
                                    config.uncertainty.observables, config.uncertainty.interval_min, config.solver);
        for (const auto& band : prop.bands) {
          const std::string o(observable_name(band.observable));
          w.put(fs::path("uncertainty") / (e.label + "_" + o + "_" + tag + ".csv"), band_csv(band));
          for (const auto& m : e.measured)
            if (m.observable == band.observable) {
              const auto c = pci_puci(band, m.times_min, m.values);
              cov.push_back({{"experiment", e.label}, {"series", o}, {"distribution", std::string(tag)}, {"pci", c.pci},
                             {"aril", c.aril}, {"puci", c.puci}, {"failed", prop.failed}});
            }
        }
      }
    }
    w.put("uncertainty/coverage.json", dump(cov));
    manifest["uncertainty"] = {{"samples", config.uncertainty.samples}, {"seed", config.seed + 7}};
  }

  if (config.scenario.enabled) {
    ScenarioSpec base;
    base.ph = config.scenario.ph;
    const auto cells = grid_scan(config.scenario.do_levels, config.scenario.tno2_levels, config.scenario.tan_levels,
                                 params, base, config.solver);
    w.put("scenario/grid.csv", grid_csv(cells));
    json sj = {{"cells", cells.size()}};
    if (config.scenario.uncertainty_samples > 0 && !est_names.empty()) {
      std::vector<ScenarioSpec> specs;
      for (const auto& c : cells) specs.push_back(c.spec);
      const auto cls = ParameterDistribution::from_classes(params, est_names);
      const auto cal = ParameterDistribution::from_calibration(est_names, est_values, est_cv);
      for (const auto& [tag, dist] : {std::pair{"class", &cls}, std::pair{"calibrated", &cal}}) {
        const auto u = scenario_uncertainty(specs, *dist, params, config.scenario.uncertainty_samples, config.seed + 11,
                                            config.solver);
        w.put(fs::path("scenario") / (std::string("uncertainty_") + tag + ".csv"), uncertainty_csv(u));
        sj[std::string("mean_relative_") + tag] = u.mean_relative();
      }
      sj["seed"] = config.seed + 11;
    }
    manifest["scenario"] = sj;
  }

  manifest["artifacts"] = w.artifacts;
  write_file_atomic((w.root / "manifest.json").string(), dump(manifest));
  return outcomes;
}

// ----------------------------------------------------------------- report

namespace {

std::string fmt(const char* f, double v) {
  if (!std::isfinite(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string unit_of(const std::string& name) {
  const auto& d = ParameterSet::defaults();
  return d.contains(name) ? d.at(name).unit : "";
}

std::string pad(std::string s, std::size_t n) {
  if (s.size() < n) s.append(n - s.size(), ' ');
  return s;
}

}  // namespace

std::string parameter_table(const std::vector<std::pair<std::string, FitResult>>& stages) {
  std::ostringstream out;
  out << pad("Scenario", 14) << pad("Parameter", 18) << pad("Unit", 12) << pad("Best-fit", 12) << pad("CV(%)", 8)
      << pad("Correlation", 24) << "RMSE\n";
  for (const auto& [id, f] : stages) {
    double rmse = 0.0;
    for (double r : f.rmse_per_series) rmse = std::max(rmse, r);
    for (std::size_t k = 0; k < f.names.size(); ++k) {
      std::string corr;
      if (f.names.size() > 1 && f.correlation.rows() == static_cast<Eigen::Index>(f.names.size()))
        for (std::size_t i = 0; i < f.names.size(); ++i)
          corr += (i ? " " : "") + fmt("%.2f", f.correlation(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)));
      out << pad(k == 0 ? id : "", 14) << pad(f.names[k], 18) << pad(unit_of(f.names[k]), 12)
          << pad(fmt("%.4g", f.values[k]), 12) << pad(fmt("%.1f", k < f.cv_percent.size() ? f.cv_percent[k] : kInf), 8)
          << pad(corr, 24) << (k == 0 ? fmt("%.3g", f.rmse_per_series.empty() ? kInf : rmse) : "") << "\n";
    }
  }
  return out.str();
}

std::string subset_table_text(const SubsetTable& t) {
  std::ostringstream out;
  out << pad("Parameters", 44) << pad("AIC", 12) << pad("log(RDE)", 10) << pad("1/modE", 10) << pad("Values", 30)
      << pad("Corr", 8) << "Gamma\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    std::string names;
    for (std::size_t k = 0; k < r.subset.size(); ++k) names += (k ? " / " : "") + r.subset[k];
    if (t.selected && *t.selected == i) names += " *";
    if (!r.error.empty()) {
      out << pad(names, 44) << "failed: " << r.error << "\n";
      continue;
    }
    std::string vals;
    for (std::size_t k = 0; k < r.fit.values.size(); ++k) vals += (k ? " - " : "") + fmt("%.3g", r.fit.values[k]);
    const std::string corr = r.fit.names.size() == 2 && r.fit.correlation.size() == 4
                                 ? fmt("%.2f", r.fit.correlation(0, 1))
                                 : (r.fit.names.size() > 2 ? fmt("%.2f", r.fit.max_abs_correlation()) : "");
    out << pad(names, 44) << pad(fmt("%.1f", r.fit.aic), 12) << pad(fmt("%.2f", r.fit.log_rde), 10)
        << pad(fmt("%.3g", r.fit.inv_mod_e), 10) << pad(vals, 30) << pad(corr, 8)
        << (r.subset.size() > 1 ? fmt("%.1f", r.fit.gamma) : "") << "\n";
  }
  out << "(*) selected subset\n";
  return out.str();
}

std::string render_report(const std::string& dir_in) {
  const fs::path dir(dir_in);
  std::ostringstream out;
  std::vector<std::string> missing;
  if (!fs::exists(dir / "manifest.json")) {
    missing.push_back("manifest.json");
    out << "No manifest in " << dir.string() << "\n";
  } else {
    const json m = load_json(dir / "manifest.json");
    out << "Run of " << m.value("config", std::string("?")) << " (seed " << m.value("seed", 0) << ")\n\n";
    std::vector<std::pair<std::string, FitResult>> fits;
    std::ostringstream subsets, diags;
    for (const auto& st : m.value("stages", json::array())) {
      const std::string id = st.value("id", std::string("?"));
      const fs::path sd = dir / st.value("directory", std::string());
      if (fs::exists(sd / "fit.json"))
        fits.emplace_back(id, fit_from_json(load_json(sd / "fit.json")));
      else
        missing.push_back((fs::path(st.value("directory", std::string())) / "fit.json").generic_string());
      if (fs::exists(sd / "subsets.json"))
        subsets << "Subset selection, " << id << "\n" << subset_table_text(subset_table_from_json(load_json(sd / "subsets.json"))) << "\n";
      if (fs::exists(sd / "diagnostics.json")) {
        diags << "Residual diagnostics, " << id << "\n";
        for (const auto& d : load_json(sd / "diagnostics.json"))
          diags << "  " << pad(d.value("label", std::string()), 28) << " n=" << d.value("n", 0) << "  R2="
                << fmt("%.4f", d["r2"].is_null() ? kInf : d["r2"].get<double>()) << "  F-test "
                << d["f_test"].value("text", std::string()) << "  KS reject=" << (d["ks"].value("reject", false) ? 1 : 0)
                << "  ACF outside band=" << d["acf"].value("outside_band", 0) << "\n";
        diags << "\n";
      } else {
        missing.push_back((fs::path(st.value("directory", std::string())) / "diagnostics.json").generic_string());
      }
    }
    if (!fits.empty()) out << "Estimated parameters\n" << parameter_table(fits) << "\n";
    out << subsets.str() << diags.str();
    if (m.contains("scenario")) {
      if (fs::exists(dir / "scenario" / "grid.csv"))
        out << "Scenario grid: " << m["scenario"].value("cells", 0) << " cells in scenario/grid.csv\n";
      else
        missing.push_back("scenario/grid.csv");
      for (const char* tag : {"class", "calibrated"}) {
        const std::string key = std::string("mean_relative_") + tag;
        if (m["scenario"].contains(key))
          out << "Scenario relative uncertainty (" << tag << "): " << fmt("%.1f", 100.0 * m["scenario"][key].get<double>())
              << " %\n";
      }
    }
    if (m.contains("uncertainty")) {
      if (fs::exists(dir / "uncertainty" / "coverage.json")) {
        out << "Prediction bands\n";
        for (const auto& c : load_json(dir / "uncertainty" / "coverage.json"))
          out << "  " << pad(c.value("experiment", std::string()) + ":" + c.value("series", std::string()), 28)
              << pad(c.value("distribution", std::string()), 12) << "PCI=" << fmt("%.2f", c.value("pci", 0.0))
              << "  ARIL=" << fmt("%.3g", c.value("aril", 0.0)) << "  PUCI=" << fmt("%.3g", c.value("puci", 0.0)) << "\n";
      } else {
        missing.push_back("uncertainty/coverage.json");
      }
    }
    for (const auto& a : m.value("artifacts", json::array()))
      if (!fs::exists(dir / a.get<std::string>()) &&
          std::find(missing.begin(), missing.end(), a.get<std::string>()) == missing.end())
        missing.push_back(a.get<std::string>());
  }
  if (!missing.empty()) {
    out << "\nMissing artifacts:\n";
    for (const auto& m : missing) out << "  " << m << "\n";
  }
  return out.str();
}

json report_metrics(const std::string& dir_in) {
  const fs::path dir(dir_in);
  json out = {{"stages", json::array()}, {"missing", json::array()}};
  if (!fs::exists(dir / "manifest.json")) {
    out["missing"].push_back("manifest.json");
    return out;
  }
  const json m = load_json(dir / "manifest.json");
  out["seed"] = m.value("seed", json(nullptr));
  out["solver"] = m.value("solver", json(nullptr));
  for (const auto& st : m.value("stages", json::array())) {
    const fs::path rel = st.value("directory", std::string());
    json entry = {{"id", st.value("id", std::string())}};
    if (fs::exists(dir / rel / "fit.json")) {
      const FitResult f = fit_from_json(load_json(dir / rel / "fit.json"));
      json params = json::object();
      for (std::size_t k = 0; k < f.names.size(); ++k)
        params[f.names[k]] = {{"value", num(f.values[k])}, {"cv_percent", num(k < f.cv_percent.size() ? f.cv_percent[k] : kInf)}};
      entry["parameters"] = params;
      entry["gamma"] = num(f.gamma);
      entry["aic"] = num(f.aic);
      entry["j_opt"] = num(f.j_opt);
      entry["max_abs_correlation"] = num(f.max_abs_correlation());
      json rm = json::object();
      for (std::size_t k = 0; k < f.series_labels.size() && k < f.rmse_per_series.size(); ++k)
        rm[f.series_labels[k]] = num(f.rmse_per_series[k]);
      entry["rmse"] = rm;
    } else {
      out["missing"].push_back((rel / "fit.json").generic_string());
    }
    if (fs::exists(dir / rel / "subsets.json")) {
      const json t = load_json(dir / rel / "subsets.json");
      if (!t.value("selected", json(nullptr)).is_null())
        entry["selected_subset"] = t["rows"][t["selected"].get<std::size_t>()]["subset"];
    }
    out["stages"].push_back(entry);
  }
  if (m.contains("uncertainty")) {
    if (fs::exists(dir / "uncertainty" / "coverage.json"))
      out["coverage"] = load_json(dir / "uncertainty" / "coverage.json");
    else
      out["missing"].push_back("uncertainty/coverage.json");
  }
  if (m.contains("scenario")) out["scenario"] = m["scenario"];
  for (const auto& a : m.value("artifacts", json::array()))
    if (!fs::exists(dir / a.get<std::string>()) &&
        std::find(out["missing"].begin(), out["missing"].end(), a) == out["missing"].end())
      out["missing"].push_back(a);
  return out;
}

}  // namespace ndha::app
