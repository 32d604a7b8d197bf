#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "app.hpp"
#include "ndha/errors.hpp"
#include "ndha/io_util.hpp"

namespace fs = std::filesystem;
using namespace ndha;
using namespace ndha::app;

namespace {

struct Common {
  std::string params;
  std::vector<std::string> experiments;
  std::string config;
  std::uint64_t seed = 1;
  std::string out;
  double rtol = SolverOptions{}.rtol;
  double atol = SolverOptions{}.atol;
  std::size_t samples = 100;

  SolverOptions solver() const {
    SolverOptions s;
    s.rtol = rtol;
    s.atol = atol;
    if (!(rtol > 0.0) || !(atol > 0.0)) throw ValidationError("--rtol and --atol must be > 0");
    return s;
  }
  ParameterSet parameters() const { return params.empty() ? ParameterSet::defaults() : load_parameter_file(params); }
  std::vector<Experiment> load() const {
    if (experiments.empty()) throw ValidationError("no --experiment given");
    std::vector<Experiment> out;
    for (const auto& e : experiments) out.push_back(load_experiment(e));
    return out;
  }
};

void add_params(CLI::App* c, Common& o) { c->add_option("--params", o.params, "parameter file (default: model defaults)"); }
void add_experiments(CLI::App* c, Common& o) { c->add_option("--experiment", o.experiments, "experiment YAML (repeatable)"); }
void add_solver(CLI::App* c, Common& o) {
  c->add_option("--rtol", o.rtol, "relative integration tolerance");
  c->add_option("--atol", o.atol, "absolute integration tolerance");
}

// Writes to --out, or stdout when it is empty or "-".
void emit(const std::string& out, const std::string& content) {
  if (out.empty() || out == "-") {
    std::cout << content;
    return;
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_file_atomic(out, content);
}

std::vector<Observable> parse_observables(const std::vector<std::string>& names) {
  std::vector<Observable> out;
  for (const auto& n : names) {
    const auto o = observable_from_name(n);
    if (!o) throw ValidationError("unknown series '" + n + "'");
    out.push_back(*o);
  }
  return out;
}

CalibrationProblem problem_from(const Common& o, const std::vector<std::string>& candidates,
                                const std::vector<std::string>& series) {
  CalibrationProblem p = CalibrationProblem::with_default_bounds(o.load(), o.parameters(), candidates);
  p.series = parse_observables(series);
  p.solver = o.solver();
  return p;
}

FitOptions fit_options(const Common& o) {
  FitOptions f;
  f.seed = o.seed;
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"N2O biokinetic model toolkit"};
  cli.require_subcommand(1);
  Common o;

  auto* sim = cli.add_subcommand("simulate", "integrate one experiment and write the trajectory CSV");
  add_params(sim, o);
  add_experiments(sim, o);
  add_solver(sim, o);
  sim->add_option("--out", o.out, "output CSV (default stdout)");

  std::vector<std::string> names, series_names{"DO"};
  double interval = 1.0;
  auto* sens = cli.add_subcommand("sensitivity", "Monte-Carlo standardized regression coefficients");
  add_params(sens, o);
  add_experiments(sens, o);
  add_solver(sens, o);
  sens->add_option("--names", names, "parameters to vary (default: all not fixed by convention)");
  sens->add_option("--series", series_names, "observables")->delimiter(',');
  sens->add_option("--samples", o.samples, "LHS sample size");
  sens->add_option("--seed", o.seed, "random seed");
  sens->add_option("--interval", interval, "output interval, min");
  sens->add_option("--out", o.out, "output directory")->required();

  auto* fitc = cli.add_subcommand("fit", "estimate parameters against measured series");
  add_params(fitc, o);
  add_experiments(fitc, o);
  add_solver(fitc, o);
  fitc->add_option("--names", names, "parameters to estimate")->required()->delimiter(',');
  fitc->add_option("--series", series_names, "series in the objective")->delimiter(',');
  fitc->add_option("--seed", o.seed, "random seed");
  fitc->add_option("--out", o.out, "output directory")->required();

  std::size_t max_size = 2;
  auto* subs = cli.add_subcommand("subsets", "AIC subset search with the identifiability screen");
  add_params(subs, o);
  add_experiments(subs, o);
  add_solver(subs, o);
  subs->add_option("--names", names, "candidate parameters")->required()->delimiter(',');
  subs->add_option("--series", series_names, "series in the objective")->delimiter(',');
  subs->add_option("--max-size", max_size, "largest subset size");
  subs->add_option("--seed", o.seed, "random seed");
  subs->add_option("--out", o.out, "output directory")->required();

  auto* diag = cli.add_subcommand("diagnose", "residual diagnostics at the given parameters");
  add_params(diag, o);
  add_experiments(diag, o);
  add_solver(diag, o);
  diag->add_option("--series", series_names, "series to diagnose")->delimiter(',');
  diag->add_option("--seed", o.seed, "seed of the Lilliefors reference samples");
  diag->add_option("--out", o.out, "output JSON (text table goes to stdout)");

  std::string fit_json;
  auto* prop = cli.add_subcommand("propagate", "Monte-Carlo prediction bands");
  add_params(prop, o);
  add_experiments(prop, o);
  add_solver(prop, o);
  prop->add_option("--fit", fit_json, "fit.json: sample from the calibrated CVs");
  prop->add_option("--names", names, "without --fit: sample these by uncertainty class")->delimiter(',');
  prop->add_option("--series", series_names, "observables")->delimiter(',');
  prop->add_option("--samples", o.samples, "sample size (>= 50)");
  prop->add_option("--seed", o.seed, "random seed");
  prop->add_option("--interval", interval, "output interval, min");
  prop->add_option("--out", o.out, "output directory")->required();

  std::vector<double> do_levels, tno2_levels, tan_levels{70.0};
  double ph = 7.5;
  auto* scen = cli.add_subcommand("scenario", "steady-state N2O emission factor over a DO x TNO2 x TAN grid");
  add_params(scen, o);
  add_solver(scen, o);
  scen->add_option("--do", do_levels, "DO levels, mg/L")->required()->delimiter(',');
  scen->add_option("--tno2", tno2_levels, "TNO2 levels, mgN/L")->required()->delimiter(',');
  scen->add_option("--tan", tan_levels, "TAN levels, mgN/L")->delimiter(',');
  scen->add_option("--ph", ph, "pH");
  scen->add_option("--out", o.out, "output CSV (default stdout)");

  std::string design, series_dir;
  std::vector<std::string> noise{"DO=0.01"};
  double ar1 = 0.0, sample_interval = 0.5;
  auto* syn = cli.add_subcommand("synthesize", "simulate a design and attach noisy measurements");
  add_params(syn, o);
  add_solver(syn, o);
  syn->add_option("--design", design, "experiment YAML without measurements")->required();
  syn->add_option("--noise", noise, "SERIES=relative sigma, e.g. DO=0.01")->delimiter(',');
  syn->add_option("--interval", sample_interval, "sampling interval, min");
  syn->add_option("--ar1", ar1, "AR(1) coefficient of the noise");
  syn->add_option("--seed", o.seed, "random seed");
  syn->add_option("--series-dir", series_dir, "directory for the series CSVs (default: inline)");
  syn->add_option("--out", o.out, "output experiment YAML")->required();

  bool resume = false;
  auto* pipe = cli.add_subcommand("pipeline", "staged calibration, uncertainty and scenario run");
  pipe->add_option("--config", o.config, "pipeline YAML")->required();
  pipe->add_option("--out", o.out, "output directory (overrides the config)");
  pipe->add_option("--seed", o.seed, "seed (overrides the config)");
  pipe->add_flag("--resume", resume, "reuse stages recorded in checkpoint.json");
  add_solver(pipe, o);

  auto* rep = cli.add_subcommand("report", "summarize a pipeline output directory (writes report.txt and metrics.json)");
  rep->add_option("--out", o.out, "pipeline output directory")->required();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*sim) {
      if (o.experiments.size() != 1) throw ValidationError("simulate takes exactly one --experiment");
      emit(o.out, trajectory_csv(simulate(o.load().front(), o.parameters(), o.solver())));
    } else if (*sens) {
      if (o.experiments.size() != 1) throw ValidationError("sensitivity takes exactly one --experiment");
      const Experiment e = o.load().front();
      const ParameterSet p = o.parameters();
      const SamplePlan plan = SamplePlan::from_classes(p, names, o.samples, o.seed);
      const auto outs = parse_observables(series_names);
      const auto study = sensitivity_study(e, p, plan, outs, interval, o.solver());
      fs::create_directories(o.out);
      for (std::size_t k = 0; k < outs.size(); ++k) {
        const std::string n(observable_name(outs[k]));
        write_file_atomic((fs::path(o.out) / ("src_" + n + ".csv")).string(), src_csv(study.results[k]));
        write_file_atomic((fs::path(o.out) / ("ranking_" + n + ".csv")).string(),
                          ranking_csv(rank_parameters(study.results[k], 0.0, e.horizon_min)));
      }
      if (study.failed) std::cerr << study.failed << " simulations failed\n";
    } else if (*fitc) {
      const auto problem = problem_from(o, names, series_names);
      const FitResult f = fit(problem, fit_options(o));
      fs::create_directories(o.out);
      write_file_atomic((fs::path(o.out) / "fit.json").string(), dump(to_json(f)));
      ParameterSet p = problem.base;
      for (std::size_t k = 0; k < f.names.size(); ++k) p.set(f.names[k], f.values[k]);
      std::ostringstream ps;
      write_parameter_file(ps, p);
      write_file_atomic((fs::path(o.out) / "params_after.params").string(), ps.str());
      std::cout << parameter_table({{"fit", f}});
    } else if (*subs) {
      const auto problem = problem_from(o, names, series_names);
      const SubsetTable t = subset_search(problem, max_size, fit_options(o));
      fs::create_directories(o.out);
      write_file_atomic((fs::path(o.out) / "subsets.json").string(), dump(to_json(t)));
      const std::string text = subset_table_text(t);
      write_file_atomic((fs::path(o.out) / "subsets.txt").string(), text);
      std::cout << text;
      if (!t.selected) throw NumericalError("no identifiable subset lowers the AIC");
    } else if (*diag) {
      const auto problem = problem_from(o, {}, series_names);
      const Objective obj(problem);
      const auto rows = diagnose(obj, problem.base, 20, o.seed);
      if (!o.out.empty()) emit(o.out, dump(to_json(rows)));
      std::cout << diagnostics_table(rows);
    } else if (*prop) {
      if (o.experiments.size() != 1) throw ValidationError("propagate takes exactly one --experiment");
      const Experiment e = o.load().front();
      ParameterSet p = o.parameters();
      ParameterDistribution dist;
      if (!fit_json.empty()) {
        std::ifstream in(fit_json);
        if (!in) throw ValidationError("cannot read '" + fit_json + "'");
        json j;
        try {
          j = json::parse(in);
        } catch (const json::exception& ex) {
          throw ValidationError("'" + fit_json + "' is not valid JSON: " + ex.what());
        }
        const FitResult f = fit_from_json(j);
        for (std::size_t k = 0; k < f.names.size(); ++k) p.set(f.names[k], f.values[k]);
        dist = ParameterDistribution::from_fit(f);
      } else {
        if (names.empty()) throw ValidationError("propagate needs --fit or --names");
        dist = ParameterDistribution::from_classes(p, names);
      }
      const auto outs = parse_observables(series_names);
      const auto res = propagate(dist, e, p, o.samples, o.seed, outs, interval, o.solver());
      fs::create_directories(o.out);
      json cov = json::array();
      for (const auto& band : res.bands) {
        const std::string n(observable_name(band.observable));
        write_file_atomic((fs::path(o.out) / ("band_" + n + ".csv")).string(), band_csv(band));
        for (const auto& m : e.measured)
          if (m.observable == band.observable) {
            const auto c = pci_puci(band, m.times_min, m.values);
            cov.push_back({{"series", n}, {"pci", c.pci}, {"aril", c.aril}, {"puci", c.puci}});
          }
      }
      write_file_atomic((fs::path(o.out) / "coverage.json").string(),
                        dump({{"samples", o.samples}, {"seed", o.seed}, {"failed", res.failed}, {"coverage", cov}}));
    } else if (*scen) {
      ScenarioSpec base;
      base.ph = ph;
      const auto cells = grid_scan(do_levels, tno2_levels, tan_levels, o.parameters(), base, o.solver());
      emit(o.out, grid_csv(cells));
    } else if (*syn) {
      std::vector<SyntheticSeries> req;
      for (const auto& s : noise) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ValidationError("--noise expects SERIES=relative_sigma, got '" + s + "'");
        const auto ob = parse_observables({s.substr(0, eq)});
        double rel = 0.0;
        try {
          rel = std::stod(s.substr(eq + 1));
        } catch (const std::exception&) {
          throw ValidationError("bad noise level in '" + s + "'");
        }
        req.push_back({ob.front(), rel});
      }
      const Experiment d = load_experiment(design);
      Experiment e = synthesize(d, o.parameters(), req, sample_interval, ar1, o.seed, o.solver());
      if (!series_dir.empty()) {
        fs::create_directories(series_dir);
        const fs::path out_dir = fs::path(o.out).parent_path();
        for (auto& m : e.measured) {
          const fs::path file = fs::path(series_dir) / (e.label + "_" + std::string(observable_name(m.observable)) + ".csv");
          write_series_csv(file.string(), m.times_min, m.values);
          m.source = fs::relative(fs::absolute(file), fs::absolute(out_dir.empty() ? fs::path(".") : out_dir)).generic_string();
        }
      }
      emit(o.out, serialize_experiment(e, series_dir.empty()));
    } else if (*pipe) {
      PipelineConfig c = load_pipeline_config(o.config);
      if (!o.out.empty()) c.output_dir = o.out;
      if (pipe->count("--seed")) c.seed = o.seed;
      if (pipe->count("--rtol")) c.solver.rtol = o.rtol;
      if (pipe->count("--atol")) c.solver.atol = o.atol;
      const auto stages = run_pipeline(c, resume);
      std::vector<std::pair<std::string, FitResult>> rows;
      for (const auto& s : stages) rows.emplace_back(s.id, s.fit);
      std::cout << parameter_table(rows);
    } else if (*rep) {
      const std::string text = render_report(o.out);
      if (fs::is_directory(o.out)) {
        write_file_atomic((fs::path(o.out) / "report.txt").string(), text);
        write_file_atomic((fs::path(o.out) / "metrics.json").string(), dump(report_metrics(o.out)));
      }
      std::cout << text;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}
