#include "ndha/experiment_io.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "ndha/errors.hpp"
#include "ndha/io_util.hpp"

namespace ndha {

namespace {

struct Context {
  std::string source;
  std::string base_dir;

  [[noreturn]] void fail(const YAML::Node& node, const std::string& what) const {
    std::ostringstream msg;
    msg << source;
    if (node.IsDefined() && node.Mark().line >= 0) msg << ":" << node.Mark().line + 1;
    msg << ": " << what;
    throw ValidationError(msg.str());
  }

  double number(const YAML::Node& node, const std::string& key) const {
    if (!node.IsScalar()) fail(node, key + " must be a number");
    try {
      return node.as<double>();
    } catch (const YAML::Exception&) {
      fail(node, key + " must be a number, got '" + node.Scalar() + "'");
    }
  }

  bool flag(const YAML::Node& node, const std::string& key) const {
    try {
      return node.as<bool>();
    } catch (const YAML::Exception&) {
      fail(node, key + " must be true or false");
    }
  }

  void check_keys(const YAML::Node& map, std::initializer_list<const char*> allowed) const {
    if (!map.IsMap()) fail(map, "expected a mapping");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& kv : map) {
      const auto key = kv.first.as<std::string>();
      if (!ok.count(key)) fail(kv.first, "unknown key '" + key + "'");
    }
  }

  std::vector<double> numbers(const YAML::Node& node, const std::string& key) const {
    if (!node.IsSequence()) fail(node, key + " must be a list of numbers");
    std::vector<double> out;
    for (const auto& v : node) out.push_back(number(v, key));
    return out;
  }
};

Component component_or_fail(const Context& ctx, const YAML::Node& node) {
  const auto name = node.as<std::string>();
  auto c = component_from_name(name);
  if (!c) ctx.fail(node, "unknown component '" + name + "'");
  return *c;
}

}  // namespace

Series read_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open series file " + path);
  Series s;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (lineno == 1 && line.find_first_of("0123456789") != 0 && line[0] != '-' && line[0] != '.') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 'time_min,value'");
    try {
      s.times_min.push_back(std::stod(line.substr(0, comma)));
      s.values.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": bad number in '" + line + "'");
    }
  }
  return s;
}

void write_series_csv(const std::string& path, const std::vector<double>& times_min,
                      const std::vector<double>& values) {
  std::string out = "time_min,value\n";
  for (std::size_t i = 0; i < times_min.size(); ++i)
    out += format_double(times_min[i]) + "," + format_double(values[i]) + "\n";
  write_file_atomic(path, out);
}

Experiment parse_experiment(const std::string& text, const std::string& base_dir, const std::string& source) {
  const Context ctx{source, base_dir};
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ValidationError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  ctx.check_keys(root, {"label", "scenario", "environment", "initial_state", "biomass", "precondition_min",
                        "horizon_min", "pulses", "measurements"});

  Experiment e;
  e.label = root["label"] ? root["label"].as<std::string>() : std::filesystem::path(source).stem().string();

  if (const auto env = root["environment"]) {
    ctx.check_keys(env, {"pH", "temperature_C", "aeration", "stripping", "pKa_NH4_25", "pKa_HNO2_25",
                         "pKa_temperature_dependent"});
    if (env["pH"]) e.environment.ph = ctx.number(env["pH"], "pH");
    if (env["temperature_C"]) e.environment.temperature_c = ctx.number(env["temperature_C"], "temperature_C");
    if (env["aeration"]) e.environment.aeration_enabled = ctx.flag(env["aeration"], "aeration");
    if (env["stripping"]) e.environment.stripping_enabled = ctx.flag(env["stripping"], "stripping");
    if (env["pKa_NH4_25"]) e.environment.speciation.pka_nh4_25 = ctx.number(env["pKa_NH4_25"], "pKa_NH4_25");
    if (env["pKa_HNO2_25"]) e.environment.speciation.pka_hno2_25 = ctx.number(env["pKa_HNO2_25"], "pKa_HNO2_25");
    if (env["pKa_temperature_dependent"])
      e.environment.speciation.temperature_dependent =
          ctx.flag(env["pKa_temperature_dependent"], "pKa_temperature_dependent");
  }

  if (const auto init = root["initial_state"]) {
    if (!init.IsMap()) ctx.fail(init, "initial_state must be a mapping");
    for (const auto& kv : init) e.initial[component_or_fail(ctx, kv.first)] = ctx.number(kv.second, "initial_state");
  }

  if (const auto bio = root["biomass"]) {
    ctx.check_keys(bio, {"vss_g_per_l", "cod_per_vss", "fractions"});
    if (!bio["vss_g_per_l"]) ctx.fail(bio, "biomass block needs vss_g_per_l");
    const double vss = ctx.number(bio["vss_g_per_l"], "vss_g_per_l");
    const double factor = bio["cod_per_vss"] ? ctx.number(bio["cod_per_vss"], "cod_per_vss") : 1.42;
    const auto fr = bio["fractions"];
    if (!fr || !fr.IsMap()) ctx.fail(bio, "biomass block needs a fractions mapping");
    double total = 0.0;
    for (const auto& kv : fr) {
      const Component c = component_or_fail(ctx, kv.first);
      if (c != Component::X_AOB && c != Component::X_NOB && c != Component::X_HB && c != Component::X_I &&
          c != Component::X_S)
        ctx.fail(kv.first, "biomass fractions apply to particulate components only");
      const double f = ctx.number(kv.second, "fraction");
      if (f < 0.0) ctx.fail(kv.second, "fractions must be >= 0");
      total += f;
      e.initial[c] += vss * 1000.0 * factor * f;
    }
    if (total > 1.0 + 1e-9) ctx.fail(fr, "biomass fractions sum to more than 1");
  }

  if (root["precondition_min"]) e.precondition_min = ctx.number(root["precondition_min"], "precondition_min");
  if (!root["horizon_min"]) ctx.fail(root, "missing horizon_min");
  e.horizon_min = ctx.number(root["horizon_min"], "horizon_min");

  if (const auto pulses = root["pulses"]) {
    if (!pulses.IsSequence()) ctx.fail(pulses, "pulses must be a list");
    for (const auto& p : pulses) {
      ctx.check_keys(p, {"time_min", "species", "delta"});
      if (!p["species"]) ctx.fail(p, "pulse is missing its species");
      if (!p["time_min"]) ctx.fail(p, "pulse is missing time_min");
      if (!p["delta"]) ctx.fail(p, "pulse is missing delta");
      Pulse pulse;
      pulse.time_min = ctx.number(p["time_min"], "time_min");
      pulse.species = component_or_fail(ctx, p["species"]);
      if (!is_pulse_species(pulse.species))
        ctx.fail(p["species"], "component '" + p["species"].as<std::string>() + "' cannot be pulsed");
      pulse.delta = ctx.number(p["delta"], "delta");
      e.pulses.push_back(pulse);
    }
  }

  if (const auto ms = root["measurements"]) {
    if (!ms.IsSequence()) ctx.fail(ms, "measurements must be a list");
    for (const auto& m : ms) {
      ctx.check_keys(m, {"series", "sigma", "file", "times", "values"});
      if (!m["series"]) ctx.fail(m, "measurement is missing its series name");
      MeasuredSeries series;
      const auto name = m["series"].as<std::string>();
      auto obs = observable_from_name(name);
      if (!obs) ctx.fail(m["series"], "unknown series '" + name + "'");
      series.observable = *obs;
      if (!m["sigma"]) ctx.fail(m, "measurement is missing sigma");
      series.sigma = ctx.number(m["sigma"], "sigma");
      if (m["file"]) {
        series.source = m["file"].as<std::string>();
        const Series data = read_series_csv(resolve_path(base_dir, series.source));
        series.times_min = data.times_min;
        series.values = data.values;
      } else {
        if (!m["times"] || !m["values"]) ctx.fail(m, "measurement needs a file or inline times/values");
        series.times_min = ctx.numbers(m["times"], "times");
        series.values = ctx.numbers(m["values"], "values");
      }
      e.measured.push_back(std::move(series));
    }
  }

  e.validate();
  return e;
}

Experiment load_experiment(const std::string& path) {
  const std::string base = std::filesystem::path(path).parent_path().string();
  return parse_experiment(read_file(path), base.empty() ? "." : base, path);
}

std::string serialize_experiment(const Experiment& e, bool inline_series) {
  // Shortest round-trip text instead of the emitter's fixed precision.
  const auto num = [](double v) { return format_double(v); };
  const auto nums = [](const std::vector<double>& v) {
    std::vector<std::string> out;
    for (double x : v) out.push_back(format_double(x));
    return out;
  };
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "label" << YAML::Value << e.label;
  out << YAML::Key << "environment" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "pH" << YAML::Value << num(e.environment.ph);
  out << YAML::Key << "temperature_C" << YAML::Value << num(e.environment.temperature_c);
  out << YAML::Key << "aeration" << YAML::Value << e.environment.aeration_enabled;
  out << YAML::Key << "stripping" << YAML::Value << e.environment.stripping_enabled;
  const SpeciationConstants defaults{};
  if (e.environment.speciation.pka_nh4_25 != defaults.pka_nh4_25)
    out << YAML::Key << "pKa_NH4_25" << YAML::Value << num(e.environment.speciation.pka_nh4_25);
  if (e.environment.speciation.pka_hno2_25 != defaults.pka_hno2_25)
    out << YAML::Key << "pKa_HNO2_25" << YAML::Value << num(e.environment.speciation.pka_hno2_25);
  if (!e.environment.speciation.temperature_dependent)
    out << YAML::Key << "pKa_temperature_dependent" << YAML::Value << false;
  out << YAML::EndMap;

  out << YAML::Key << "initial_state" << YAML::Value << YAML::BeginMap;
  for (std::size_t i = 0; i < kComponentCount; ++i) {
    if (e.initial.values[i] == 0.0) continue;
    out << YAML::Key << std::string(component_name(static_cast<Component>(i))) << YAML::Value
        << num(e.initial.values[i]);
  }
  out << YAML::EndMap;
  if (e.precondition_min > 0.0) out << YAML::Key << "precondition_min" << YAML::Value << num(e.precondition_min);
  out << YAML::Key << "horizon_min" << YAML::Value << num(e.horizon_min);

  if (!e.pulses.empty()) {
    out << YAML::Key << "pulses" << YAML::Value << YAML::BeginSeq;
    for (const auto& p : e.pulses) {
      out << YAML::Flow << YAML::BeginMap << YAML::Key << "time_min" << YAML::Value << num(p.time_min) << YAML::Key
          << "species" << YAML::Value << std::string(component_name(p.species)) << YAML::Key << "delta"
          << YAML::Value << num(p.delta) << YAML::EndMap;
    }
    out << YAML::EndSeq;
  }

  if (!e.measured.empty()) {
    out << YAML::Key << "measurements" << YAML::Value << YAML::BeginSeq;
    for (const auto& m : e.measured) {
      out << YAML::BeginMap;
      out << YAML::Key << "series" << YAML::Value << std::string(observable_name(m.observable));
      out << YAML::Key << "sigma" << YAML::Value << num(m.sigma);
      if (!m.source.empty() && !inline_series) {
        out << YAML::Key << "file" << YAML::Value << m.source;
      } else {
        out << YAML::Key << "times" << YAML::Value << YAML::Flow << nums(m.times_min);
        out << YAML::Key << "values" << YAML::Value << YAML::Flow << nums(m.values);
      }
      out << YAML::EndMap;
    }
    out << YAML::EndSeq;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace ndha
