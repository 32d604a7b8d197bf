#include "ndha/parameters.hpp"
#include "ndha/io_util.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "ndha/errors.hpp"

namespace ndha {

double relative_half_width(UncertaintyClass c) {
  switch (c) {
    case UncertaintyClass::Low: return 0.10;
    case UncertaintyClass::Medium: return 0.25;
    case UncertaintyClass::High: return 0.50;
  }
  return 0.50;
}

namespace {

using K = ParameterKind;
using U = UncertaintyClass;

ParameterSet build_defaults() {
  const Parameter table[] = {
      // AOB
      {"K_AOB.NH2OH", 0.3, "mgN/L", U::High, K::Affinity},
      {"K_AOB.NH2OH.ND", 0.3, "mgN/L", U::High, K::Affinity},
      {"K_AOB.NH3", 0.0075, "mgN/L", U::High, K::Affinity},
      {"K_AOB.NO.ND", 0.004, "mgN/L", U::High, K::Affinity},
      {"K_AOB.HNO2", 0.0001, "mgN/L", U::High, K::Affinity},
      {"K_AOB.O2.AMO", 0.4, "mgO2/L", U::High, K::Affinity},
      {"K_AOB.O2.HAO", 0.4, "mgO2/L", U::High, K::Affinity},
      {"K_AOB.O2.i", 0.1, "mgO2/L", U::High, K::Affinity},
      {"K_AOB.i.NH3", 10.0, "mgN/L", U::High, K::Affinity},
      {"K_AOB.i.HNO2", 0.75, "mgN/L", U::High, K::Affinity},
      {"eps_AOB", 0.001, "-", U::High, K::Factor},
      {"eta_NIR", 0.15, "-", U::High, K::Factor},
      {"eta_NOR", 0.15, "-", U::High, K::Factor},
      {"mu_AOB.AMO", 0.78, "1/d", U::Medium, K::Rate},
      {"mu_AOB.HAO", 0.78, "1/d", U::Medium, K::Rate},
      {"b_AOB", 0.096, "1/d", U::Medium, K::Rate},
      {"Y_AOB", 0.18, "mgCOD/mgN", U::Low, K::Yield},
      // NOB
      {"K_NOB.HNO2", 0.0001, "mgN/L", U::High, K::Affinity},
      {"K_NOB.O2", 1.2, "mgO2/L", U::High, K::Affinity},
      {"K_NOB.i.NH3", 0.5, "mgN/L", U::High, K::Affinity},
      {"K_NOB.i.HNO2", 0.1, "mgN/L", U::High, K::Affinity},
      {"mu_NOB", 0.78, "1/d", U::Medium, K::Rate},
      {"b_NOB", 0.096, "1/d", U::Medium, K::Rate},
      {"Y_NOB", 0.06, "mgCOD/mgN", U::Low, K::Yield},
      // HB
      {"K_HB.NH4", 0.01, "mgN/L", U::High, K::Affinity},
      {"K_HB.NO3", 0.2, "mgN/L", U::High, K::Affinity},
      {"K_HB.NO2", 0.2, "mgN/L", U::High, K::Affinity},
      {"K_HB.NO", 0.05, "mgN/L", U::High, K::Affinity},
      {"K_HB.N2O", 0.05, "mgN/L", U::High, K::Affinity},
      {"K_HB.S", 20.0, "mgCOD/L", U::High, K::Affinity},
      {"K_HB.S.NAR", 20.0, "mgCOD/L", U::High, K::Affinity},
      {"K_HB.S.NIR", 20.0, "mgCOD/L", U::High, K::Affinity},
      {"K_HB.S.NOR", 20.0, "mgCOD/L", U::High, K::Affinity},
      {"K_HB.S.NOS", 40.0, "mgCOD/L", U::High, K::Affinity},
      {"K_HB.O2", 0.1, "mgO2/L", U::High, K::Affinity},
      {"K_HB.O2.i.NAR", 0.1, "mgO2/L", U::High, K::Affinity},
      {"K_HB.O2.i.NIR", 0.1, "mgO2/L", U::High, K::Affinity},
      {"K_HB.O2.i.NOR", 0.1, "mgO2/L", U::High, K::Affinity},
      {"K_HB.O2.i.NOS", 0.1, "mgO2/L", U::High, K::Affinity},
      {"K_HB.NO.i.NIR", 0.5, "mgN/L", U::High, K::Affinity},
      {"K_HB.NO.i.NOR", 0.3, "mgN/L", U::High, K::Affinity},
      {"K_HB.NO.i.NOS", 0.075, "mgN/L", U::High, K::Affinity},
      {"mu_HB", 6.24, "1/d", U::Medium, K::Rate},
      {"mu_HB.NAR", 1.754, "1/d", U::Medium, K::Rate},
      {"mu_HB.NIR", 1.0, "1/d", U::Medium, K::Rate},
      {"mu_HB.NOR", 2.18, "1/d", U::Medium, K::Rate},
      {"mu_HB.NOS", 2.18, "1/d", U::Medium, K::Rate},
      {"eta_HD", 0.2, "-", U::Medium, K::Factor},
      {"b_HB", 0.41, "1/d", U::Medium, K::Rate},
      {"Y_HB", 0.6, "mgCOD/mgCOD", U::Low, K::Yield},
      // Others
      {"f_XI", 0.08, "-", U::Low, K::Composition},
      {"i_NXB", 0.086, "mgN/mgCOD", U::Low, K::Composition},
      {"i_NXI", 0.02, "mgN/mgCOD", U::Low, K::Composition},
      {"i_NXS", 0.06, "mgN/mgCOD", U::Low, K::Composition},
      {"eta_b", 0.33, "-", U::Medium, K::Factor},
      {"K_O2.b", 0.2, "mgO2/L", U::High, K::Affinity},
      {"K_NOx", 0.2, "mgN/L", U::High, K::Affinity},
      {"k_H", 2.21, "1/d", U::Medium, K::Rate},
      {"K_X", 0.15, "mgCOD/mgCOD", U::High, K::Affinity},
      {"eta_anox", 0.4, "-", U::Medium, K::Factor},
      {"eta_anaer", 0.4, "-", U::Medium, K::Factor},
      // Gas transfer; only active when the environment enables aeration or
      // stripping.
      {"K_La.O2", 240.0, "1/d", U::Low, K::Transfer},
      {"K_La.N2O", 216.0, "1/d", U::Low, K::Transfer},
      {"K_La.NO", 228.0, "1/d", U::Low, K::Transfer},
      {"Ssat_O2", 8.0, "mgO2/L", U::Low, K::Transfer},
      {"Ssat_N2O", 0.0, "mgN/L", U::Low, K::Transfer},
      {"Ssat_NO", 0.0, "mgN/L", U::Low, K::Transfer},
  };
  ParameterSet set;
  for (const auto& p : table) set.upsert(p);
  return set;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const ParameterSet& ParameterSet::defaults() {
  static const ParameterSet set = build_defaults();
  return set;
}

const Parameter& ParameterSet::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second];
}

bool ParameterSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

void ParameterSet::set(std::string_view name, double value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  entries_[it->second].value = value;
}

void ParameterSet::upsert(Parameter p) {
  auto it = index_.find(p.name);
  if (it != index_.end()) {
    entries_[it->second] = std::move(p);
    return;
  }
  index_.emplace(p.name, entries_.size());
  entries_.push_back(std::move(p));
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& p : entries_) out.push_back(p.name);
  return out;
}

void ParameterSet::validate() const {
  for (const auto& p : entries_) {
    if (!std::isfinite(p.value)) throw ValidationError("parameter " + p.name + " is not finite");
    switch (p.kind) {
      case ParameterKind::Transfer:
        if (p.value < 0.0) throw ValidationError("parameter " + p.name + " must be >= 0");
        break;
      case ParameterKind::Factor:
      case ParameterKind::Composition:
        if (!(p.value > 0.0 && p.value <= 1.0))
          throw ValidationError("parameter " + p.name + " must lie in (0, 1]");
        break;
      default:
        if (!(p.value > 0.0)) throw ValidationError("parameter " + p.name + " must be > 0");
    }
  }
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value != b.value || a.unit != b.unit || a.uncertainty != b.uncertainty)
      return false;
  }
  return true;
}

bool is_fixed_by_convention(const Parameter& p) {
  return p.kind == ParameterKind::Yield || p.kind == ParameterKind::Composition ||
         p.kind == ParameterKind::Transfer;
}

ParameterSet parse_parameter_file(std::istream& in, const std::string& source) {
  ParameterSet out;
  const auto& defaults = ParameterSet::defaults();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    auto where = [&] { return source + ":" + std::to_string(lineno) + ": "; };

    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ValidationError(where() + "expected 'name = value': " + body);
    Parameter p;
    p.name = trim(std::string_view(body).substr(0, eq));
    if (p.name.empty()) throw ValidationError(where() + "missing parameter name");

    std::istringstream rest(body.substr(eq + 1));
    std::string token;
    if (!(rest >> token)) throw ValidationError(where() + "missing value for " + p.name);
    try {
      std::size_t used = 0;
      p.value = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ValidationError(where() + "bad numeric value '" + token + "'");
    }

    std::optional<std::string> unit;
    std::optional<int> cls;
    while (rest >> token) {
      if (token.front() == '[') {
        std::string u = token;
        while (u.back() != ']') {
          std::string more;
          if (!(rest >> more)) throw ValidationError(where() + "unterminated unit bracket");
          u += " " + more;
        }
        unit = u.substr(1, u.size() - 2);
      } else if (token.rfind("class=", 0) == 0) {
        const std::string v = token.substr(6);
        if (v != "1" && v != "2" && v != "3")
          throw ValidationError(where() + "uncertainty class must be 1, 2 or 3");
        cls = std::stoi(v);
      } else {
        throw ValidationError(where() + "unexpected token '" + token + "'");
      }
    }

    if (defaults.contains(p.name)) {
      const auto& d = defaults.at(p.name);
      p.kind = d.kind;
      p.unit = unit.value_or(d.unit);
      p.uncertainty = cls ? static_cast<UncertaintyClass>(*cls) : d.uncertainty;
    } else {
      if (!unit || !cls)
        throw ValidationError(where() + "parameter '" + p.name +
                              "' is not a model parameter; unit and class are required");
      p.unit = *unit;
      p.uncertainty = static_cast<UncertaintyClass>(*cls);
      p.kind = ParameterKind::Affinity;
    }
    out.upsert(std::move(p));
  }
  return out;
}

ParameterSet load_parameter_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open parameter file " + path);
  // Entries missing from the file keep their default values.
  ParameterSet merged = ParameterSet::defaults();
  const ParameterSet parsed = parse_parameter_file(in, path);
  for (const auto& p : parsed.entries()) merged.upsert(p);
  merged.validate();
  return merged;
}

void write_parameter_file(std::ostream& out, const ParameterSet& params) {
  for (const auto& p : params.entries())
    out << p.name << " = " << format_double(p.value) << " [" << p.unit << "] class=" << static_cast<int>(p.uncertainty)
        << '\n';
}

ParameterSet temperature_correct(const ParameterSet& params, double temperature_c,
                                 const ThetaTable& thetas) {
  if (!(temperature_c >= 0.0 && temperature_c <= 45.0))
    throw ValidationError("temperature must lie in [0, 45] C");
  ParameterSet out = params;
  for (const auto& [name, theta] : thetas) {
    if (!params.contains(name)) throw ValidationError("theta given for unknown parameter '" + name + "'");
    out.set(name, params.value(name) * std::exp(theta * (temperature_c - 20.0)));
  }
  return out;
}

}  // namespace ndha
