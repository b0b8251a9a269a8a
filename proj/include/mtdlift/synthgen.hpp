#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mtdlift/dataset.hpp"

namespace mtdlift {

enum class EffectFamily { Null, Constant, Linear, Group, OrderTiming };
enum class PropensityFamily { Constant, Logistic };

std::string_view effect_family_name(EffectFamily f);
EffectFamily parse_effect_family(std::string_view name);
std::string_view propensity_family_name(PropensityFamily f);
PropensityFamily parse_propensity_family(std::string_view name);

// Expected marginals to calibrate toward, as fractions.
struct TargetMarginals {
  double treated_fraction = 0.5;
  double control_positive_rate = 0.1;
  double treated_positive_rate = 0.2;
};

// Effects add to the bankruptcy logit: a positive effect raises the chance of
// outcome 1, a negative one is protective. The family terms are listed in
// docs/formats.md.
struct GeneratorSpec {
  std::size_t n = 1000;
  std::size_t d = 8;
  std::size_t k = 24;
  std::size_t s = 16;
  std::uint64_t seed = 0;
  // Contexts drawn from a pool of this many profiles; 0 draws every context fresh.
  std::size_t profiles = 0;

  double baseline_intercept = -2.0;
  double baseline_scale = 1.0;

  EffectFamily effect = EffectFamily::Group;
  double effect_intercept = 0.0;
  double effect_scale = 1.0;
  double heterogeneity = 0.5;
  // Per-act logit effect of each group (PERSONNEL, INFORMATION, OTHER).
  std::array<double, 3> group_effects{0.3, 1.0, 0.3};

  PropensityFamily propensity = PropensityFamily::Constant;
  double treat_probability = 0.5;
  double propensity_intercept = 0.0;
  double confounding = 0.0;

  // Each step after the first is present with this probability.
  double act_rate = 0.15;
  // Strength of the context tilt on which categories occur.
  double category_tilt = 0.5;
  // Restricts act draws to one group's categories.
  std::optional<CategoryGroup> only_group;

  std::optional<TargetMarginals> target;
  // Free-form label carried into manifests, e.g. "time_sensitive".
  std::string label;

  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep defaults; unknown keys are rejected.
  static GeneratorSpec from_json(const nlohmann::json& doc);
  static GeneratorSpec load(const std::string& path);
};

// table2-basic, table2-personnel, table2-information, table2-other,
// time-sensitive, linear-rct, null, rq1-information.
GeneratorSpec preset_spec(std::string_view name);
std::vector<std::string> preset_names();

struct CalibrationReport {
  bool calibrated = false;
  TargetMarginals expected;  // marginals implied by the final intercepts
};

struct Generated {
  Dataset data;
  GeneratorSpec spec;  // calibrated intercepts filled in, target cleared
  CalibrationReport calibration;
};

Generated generate_with_report(const GeneratorSpec& spec);
Dataset generate(const GeneratorSpec& spec);

// Fixed random directions of one spec (depend on d, k and seed only).
struct GeneratorWeights {
  std::vector<double> baseline;    // unit norm
  std::vector<double> effect;      // unit norm
  std::vector<double> propensity;  // unit norm
  std::vector<std::vector<double>> category;  // k unit vectors
};

GeneratorWeights generator_weights(const GeneratorSpec& spec);

double baseline_logit(const GeneratorSpec& spec, const GeneratorWeights& w, std::span<const double> x);
double effect_logit(const GeneratorSpec& spec, const GeneratorWeights& w, std::span<const double> x,
                    std::span<const Act> acts);
double treat_probability(const GeneratorSpec& spec, const GeneratorWeights& w, std::span<const double> x);
double true_ite(double baseline, double effect);

// K = 3, S = 4 suite where the sign of the effect depends on the order of
// categories 0 and 1 and on act timing. Label "time_sensitive".
GeneratorSpec time_sensitive_spec(std::uint64_t seed, std::size_t n = 20000);
Dataset make_time_sensitive_suite(std::uint64_t seed, std::size_t n = 20000);

}  // namespace mtdlift
