#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "ndha/errors.hpp"
#include "ndha/parameters.hpp"

using namespace ndha;

TEST(Parameters, DefaultsAreValid) {
  const auto& p = ParameterSet::defaults();
  EXPECT_NO_THROW(p.validate());
  EXPECT_DOUBLE_EQ(p.value("mu_AOB.AMO"), 0.78);
  EXPECT_DOUBLE_EQ(p.value("K_AOB.HNO2"), 1e-4);
  EXPECT_DOUBLE_EQ(p.value("K_HB.S.NOS"), 40.0);
  EXPECT_EQ(p.at("Y_HB").uncertainty, UncertaintyClass::Low);
}

TEST(Parameters, WriteParseRoundTrip) {
  ParameterSet p = ParameterSet::defaults();
  p.set("mu_NOB", 0.1 + 0.2);  // not representable in short decimal
  p.set("eps_AOB", 4.83e-4);
  std::ostringstream out;
  write_parameter_file(out, p);
  std::istringstream in(out.str());
  const ParameterSet back = parse_parameter_file(in);
  EXPECT_TRUE(back == p);
  std::ostringstream again;
  write_parameter_file(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Parameters, InheritsUnitAndClassFromDefaults) {
  std::istringstream in("mu_NOB = 0.66   # Table value\n\n");
  const auto p = parse_parameter_file(in);
  EXPECT_EQ(p.size(), 1u);
  EXPECT_EQ(p.at("mu_NOB").unit, "1/d");
  EXPECT_EQ(p.at("mu_NOB").uncertainty, UncertaintyClass::Medium);
}

TEST(Parameters, ErrorsNameTheLine) {
  std::istringstream in("mu_NOB = 0.66\nk_H = abc\n");
  try {
    parse_parameter_file(in, "p.params");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("p.params:2"), std::string::npos);
  }
}

TEST(Parameters, UnknownNameNeedsUnitAndClass) {
  std::istringstream bad("foo = 1\n");
  EXPECT_THROW(parse_parameter_file(bad), ValidationError);
  std::istringstream good("foo = 1 [mg/L] class=2\n");
  EXPECT_EQ(parse_parameter_file(good).at("foo").unit, "mg/L");
}

TEST(Parameters, ValidationRejectsOutOfDomain) {
  ParameterSet p = ParameterSet::defaults();
  p.set("eta_NOR", 1.5);
  EXPECT_THROW(p.validate(), ValidationError);
  p = ParameterSet::defaults();
  p.set("K_AOB.NH3", 0.0);
  EXPECT_THROW(p.validate(), ValidationError);
  p = ParameterSet::defaults();
  p.set("mu_NOB", std::nan(""));
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(TemperatureCorrection, IdentityAt20) {
  const auto& p = ParameterSet::defaults();
  EXPECT_TRUE(temperature_correct(p, 20.0, {{"mu_NOB", 0.07}, {"k_H", 0.04}}) == p);
}

TEST(TemperatureCorrection, ZeroThetaIdentity) {
  const auto& p = ParameterSet::defaults();
  EXPECT_TRUE(temperature_correct(p, 33.0, {{"mu_NOB", 0.0}}) == p);
}

TEST(TemperatureCorrection, Q10OfTwo) {
  const auto& p = ParameterSet::defaults();
  const double theta = std::log(2.0) / 10.0;
  const auto t = temperature_correct(p, 25.0, {{"mu_NOB", theta}});
  EXPECT_NEAR(t.value("mu_NOB") / p.value("mu_NOB"), std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(t.value("mu_NOB") / p.value("mu_NOB"), 1.414, 1e-3);
}

TEST(TemperatureCorrection, RejectsBadInput) {
  const auto& p = ParameterSet::defaults();
  EXPECT_THROW(temperature_correct(p, 50.0, {}), ValidationError);
  EXPECT_THROW(temperature_correct(p, 25.0, {{"nope", 0.1}}), ValidationError);
}
