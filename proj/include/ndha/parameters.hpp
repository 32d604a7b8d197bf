#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ndha {

// Prior uncertainty band of a parameter: class 1 = +/-10 %, 2 = +/-25 %,
// 3 = +/-50 % around its default value.
enum class UncertaintyClass : int { Low = 1, Medium = 2, High = 3 };

double relative_half_width(UncertaintyClass c);

enum class ParameterKind {
  Rate,        // maximum rates and decay/hydrolysis constants, 1/d
  Affinity,    // half-saturation and inhibition constants
  Factor,      // reduction factors and fractions in (0, 1]
  Yield,
  Composition, // nitrogen content of particulates
  Transfer,    // gas transfer coefficients and saturation concentrations
};

struct Parameter {
  std::string name;
  double value = 0.0;
  std::string unit;
  UncertaintyClass uncertainty = UncertaintyClass::High;
  ParameterKind kind = ParameterKind::Affinity;
};

// Named kinetic, stoichiometric and transfer constants. Entry order is the
// canonical order of the default table and is preserved on write.
class ParameterSet {
public:
  // The full default table of the model.
  static const ParameterSet& defaults();

  const Parameter& at(std::string_view name) const;
  double value(std::string_view name) const { return at(name).value; }
  bool contains(std::string_view name) const;
  void set(std::string_view name, double value);
  // Adds a new entry or replaces an existing one in place.
  void upsert(Parameter p);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Parameter>& entries() const { return entries_; }
  std::vector<std::string> names() const;

  // Throws ValidationError naming the first offending parameter.
  void validate() const;

  bool operator==(const ParameterSet& other) const;

private:
  std::vector<Parameter> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Parameters that are never offered for calibration or ranked: yields,
// composition and gas-transfer constants.
bool is_fixed_by_convention(const Parameter& p);

// Flat text format, one parameter per line:
//   name = value [unit] class=<1|2|3>
// '#' starts a comment. Unit and class are optional when the name exists in
// the default table (its unit and class are then inherited).
ParameterSet parse_parameter_file(std::istream& in, const std::string& source = "<stream>");
ParameterSet load_parameter_file(const std::string& path);
void write_parameter_file(std::ostream& out, const ParameterSet& params);

// Per-parameter Arrhenius-type coefficients, exp(theta * (T - 20)).
using ThetaTable = std::map<std::string, double, std::less<>>;

// Scales each parameter named in `thetas` by exp(theta * (T - 20)). T in
// degrees C, [0, 45]. Unknown names raise ValidationError.
ParameterSet temperature_correct(const ParameterSet& params, double temperature_c,
                                 const ThetaTable& thetas);

}  // namespace ndha
