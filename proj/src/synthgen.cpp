#include "mtdlift/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "mtdlift/error.hpp"
#include "mtdlift/neural.hpp"
#include "mtdlift/random.hpp"

namespace mtdlift {

namespace {

constexpr double kHorizonDays = 365.0;
// Order/timing suite: per-category weights on the timing ramp and the bonus
// for category 0 preceding category 1.
constexpr std::array<double, 3> kTimingWeights{1.5, -1.5, 1.0};
constexpr double kOrderBonus = 1.5;

std::vector<double> unit_vector(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(d);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm > 0)
    for (auto& x : v) x /= norm;
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool finite_all(std::initializer_list<double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

std::string_view effect_family_name(EffectFamily f) {
  switch (f) {
    case EffectFamily::Null: return "null";
    case EffectFamily::Constant: return "constant";
    case EffectFamily::Linear: return "linear";
    case EffectFamily::Group: return "group";
    case EffectFamily::OrderTiming: return "order_timing";
  }
  return "null";
}

EffectFamily parse_effect_family(std::string_view name) {
  for (auto f : {EffectFamily::Null, EffectFamily::Constant, EffectFamily::Linear, EffectFamily::Group,
                 EffectFamily::OrderTiming})
    if (effect_family_name(f) == name) return f;
  fail(ErrorKind::InvalidArgument, "unknown effect family '" + std::string(name) + "'");
}

std::string_view propensity_family_name(PropensityFamily f) {
  return f == PropensityFamily::Constant ? "constant" : "logistic";
}

PropensityFamily parse_propensity_family(std::string_view name) {
  if (name == "constant") return PropensityFamily::Constant;
  if (name == "logistic") return PropensityFamily::Logistic;
  fail(ErrorKind::InvalidArgument, "unknown propensity family '" + std::string(name) + "'");
}

// --- spec -----------------------------------------------------------------------------

void GeneratorSpec::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::InvalidArgument, "generator spec: " + what); };
  if (n < 1) bad("n must be >= 1");
  if (d < 1) bad("d must be >= 1");
  if (k < 1) bad("k must be >= 1");
  if (s < 1) bad("s must be >= 1");
  if (!finite_all({baseline_intercept, baseline_scale, effect_intercept, effect_scale, heterogeneity,
                   propensity_intercept, confounding, category_tilt, group_effects[0], group_effects[1],
                   group_effects[2]}))
    bad("all coefficients must be finite");
  if (!(treat_probability >= 0.0 && treat_probability <= 1.0)) bad("treat_probability must lie in [0, 1]");
  if (!(act_rate >= 0.0 && act_rate <= 1.0)) bad("act_rate must lie in [0, 1]");
  if (effect == EffectFamily::OrderTiming && k < 2) bad("order_timing needs k >= 2");
  if (only_group) {
    const auto map = CategoryMap::default_map(k);
    bool any = false;
    for (std::size_t c = 0; c < k; ++c) any = any || map.group(c) == *only_group;
    if (!any) bad("only_group " + std::string(group_name(*only_group)) + " has no category at this k");
  }
}

nlohmann::json GeneratorSpec::to_json() const {
  nlohmann::json doc = {{"n", n},
                        {"d", d},
                        {"k", k},
                        {"s", s},
                        {"seed", seed},
                        {"profiles", profiles},
                        {"baseline_intercept", baseline_intercept},
                        {"baseline_scale", baseline_scale},
                        {"effect", std::string(effect_family_name(effect))},
                        {"effect_intercept", effect_intercept},
                        {"effect_scale", effect_scale},
                        {"heterogeneity", heterogeneity},
                        {"group_effects",
                         {{"PERSONNEL", group_effects[0]},
                          {"INFORMATION", group_effects[1]},
                          {"OTHER", group_effects[2]}}},
                        {"propensity", std::string(propensity_family_name(propensity))},
                        {"treat_probability", treat_probability},
                        {"propensity_intercept", propensity_intercept},
                        {"confounding", confounding},
                        {"act_rate", act_rate},
                        {"category_tilt", category_tilt},
                        {"label", label}};
  doc["only_group"] = only_group ? nlohmann::json(std::string(group_name(*only_group))) : nlohmann::json(nullptr);
  if (target)
    doc["target"] = {{"treated_fraction", target->treated_fraction},
                     {"control_positive_rate", target->control_positive_rate},
                     {"treated_positive_rate", target->treated_positive_rate}};
  else
    doc["target"] = nullptr;
  return doc;
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) fail(ErrorKind::Parse, "generator spec must be a JSON object");
  GeneratorSpec g;
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "n") g.n = v.get<std::size_t>();
      else if (key == "d") g.d = v.get<std::size_t>();
      else if (key == "k") g.k = v.get<std::size_t>();
      else if (key == "s") g.s = v.get<std::size_t>();
      else if (key == "seed") g.seed = v.get<std::uint64_t>();
      else if (key == "profiles") g.profiles = v.get<std::size_t>();
      else if (key == "baseline_intercept") g.baseline_intercept = v.get<double>();
      else if (key == "baseline_scale") g.baseline_scale = v.get<double>();
      else if (key == "effect") g.effect = parse_effect_family(v.get<std::string>());
      else if (key == "effect_intercept") g.effect_intercept = v.get<double>();
      else if (key == "effect_scale") g.effect_scale = v.get<double>();
      else if (key == "heterogeneity") g.heterogeneity = v.get<double>();
      else if (key == "group_effects") {
        for (const auto& [group, value] : v.items())
          g.group_effects[static_cast<std::size_t>(parse_group(group))] = value.get<double>();
      } else if (key == "propensity") g.propensity = parse_propensity_family(v.get<std::string>());
      else if (key == "treat_probability") g.treat_probability = v.get<double>();
      else if (key == "propensity_intercept") g.propensity_intercept = v.get<double>();
      else if (key == "confounding") g.confounding = v.get<double>();
      else if (key == "act_rate") g.act_rate = v.get<double>();
      else if (key == "category_tilt") g.category_tilt = v.get<double>();
      else if (key == "label") g.label = v.get<std::string>();
      else if (key == "only_group") {
        if (v.is_null()) g.only_group.reset();
        else g.only_group = parse_group(v.get<std::string>());
      } else if (key == "target") {
        if (v.is_null()) {
          g.target.reset();
        } else {
          TargetMarginals t;
          t.treated_fraction = v.at("treated_fraction").get<double>();
          t.control_positive_rate = v.at("control_positive_rate").get<double>();
          t.treated_positive_rate = v.at("treated_positive_rate").get<double>();
          g.target = t;
        }
      } else {
        fail(ErrorKind::Schema, "generator spec: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("generator spec: ") + e.what());
  }
  g.validate();
  return g;
}

GeneratorSpec GeneratorSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open generator spec '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, "generator spec '" + path + "': " + e.what());
  }
  return from_json(doc);
}

// --- presets ------------------------------------------------------------------------------

namespace {

TargetMarginals table2_column(double c0, double c1, double t0, double t1) {
  // Counts of (T, y) cells: c0 = control y=0, c1 = control y=1, t0/t1 likewise.
  const double control = c0 + c1, treated = t0 + t1;
  return {treated / (control + treated), c1 / control, t1 / treated};
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"table2-basic", "table2-personnel", "table2-information", "table2-other",
          "time-sensitive", "linear-rct",     "null",               "rq1-information"};
}

GeneratorSpec preset_spec(std::string_view name) {
  GeneratorSpec g;
  g.d = 16;
  g.k = 24;
  g.s = 16;
  if (name.rfind("table2-", 0) == 0) {
    g.n = 46604;
    g.propensity = PropensityFamily::Logistic;
    g.confounding = 0.5;
    g.effect = EffectFamily::Group;
    g.label = std::string(name);
    if (name == "table2-basic") {
      g.target = table2_column(21820, 2281, 17974, 4529);
    } else if (name == "table2-personnel") {
      g.only_group = CategoryGroup::Personnel;
      g.target = table2_column(25600, 3589, 14194, 3221);
    } else if (name == "table2-information") {
      g.only_group = CategoryGroup::Information;
      g.target = table2_column(34417, 5347, 5377, 1463);
    } else if (name == "table2-other") {
      g.only_group = CategoryGroup::Other;
      g.target = table2_column(25600, 3589, 14194, 3221);
    } else {
      fail(ErrorKind::InvalidArgument, "unknown preset '" + std::string(name) + "'");
    }
    return g;
  }
  if (name == "time-sensitive") return time_sensitive_spec(0);
  if (name == "linear-rct") {
    g.n = 20000;
    g.d = 8;
    g.effect = EffectFamily::Linear;
    g.effect_scale = 1.5;
    g.baseline_intercept = -1.0;
    g.propensity = PropensityFamily::Constant;
    g.treat_probability = 0.5;
    g.label = "linear_rct";
    return g;
  }
  if (name == "null") {
    g.n = 5000;
    g.d = 8;
    g.effect = EffectFamily::Null;
    g.baseline_intercept = -1.5;
    g.propensity = PropensityFamily::Constant;
    g.label = "null_effect";
    return g;
  }
  if (name == "rq1-information") {
    g.n = 20000;
    g.d = 8;
    g.effect = EffectFamily::Group;
    g.group_effects = {0.0, 1.0, 0.0};
    g.heterogeneity = 0.8;
    g.baseline_intercept = -1.5;
    g.propensity = PropensityFamily::Constant;
    g.label = "rq1_information";
    return g;
  }
  fail(ErrorKind::InvalidArgument, "unknown preset '" + std::string(name) + "'");
}

GeneratorSpec time_sensitive_spec(std::uint64_t seed, std::size_t n) {
  GeneratorSpec g;
  g.n = n;
  g.d = 8;
  g.k = 3;
  g.s = 4;
  g.seed = seed;
  g.profiles = 500;
  g.baseline_intercept = -1.5;
  g.effect = EffectFamily::OrderTiming;
  g.effect_scale = 1.0;
  g.heterogeneity = 0.5;
  g.propensity = PropensityFamily::Logistic;
  g.confounding = 0.5;
  g.act_rate = 0.5;
  g.category_tilt = 0.0;
  g.label = "time_sensitive";
  return g;
}

Dataset make_time_sensitive_suite(std::uint64_t seed, std::size_t n) { return generate(time_sensitive_spec(seed, n)); }

// --- structural functions -----------------------------------------------------------------

GeneratorWeights generator_weights(const GeneratorSpec& spec) {
  GeneratorWeights w;
  w.baseline = unit_vector(spec.d, derive_seed(spec.seed, "baseline"));
  w.effect = unit_vector(spec.d, derive_seed(spec.seed, "effect"));
  w.propensity = unit_vector(spec.d, derive_seed(spec.seed, "propensity"));
  for (std::size_t c = 0; c < spec.k; ++c)
    w.category.push_back(unit_vector(spec.d, derive_seed(spec.seed, "category-" + std::to_string(c))));
  return w;
}

double baseline_logit(const GeneratorSpec& spec, const GeneratorWeights& w, std::span<const double> x) {
  return spec.baseline_intercept + spec.baseline_scale * dot(w.baseline, x);
}

double effect_logit(const GeneratorSpec& spec, const GeneratorWeights& w, std::span<const double> x,
                    std::span<const Act> acts) {
  if (spec.effect == EffectFamily::Null || acts.empty()) return 0.0;
  const double modifier = 1.0 + spec.heterogeneity * std::tanh(dot(w.effect, x));
  double term = 0.0;
  switch (spec.effect) {
    case EffectFamily::Null: break;
    case EffectFamily::Constant: term = spec.effect_scale; break;
    case EffectFamily::Linear: term = spec.effect_scale * dot(w.effect, x); break;
    case EffectFamily::Group: {
      const auto map = CategoryMap::default_map(spec.k);
      double sum = 0.0;
      for (const auto& a : acts) sum += spec.group_effects[static_cast<std::size_t>(map.group(a.category))];
      term = spec.effect_scale * modifier * sum;
      break;
    }
    case EffectFamily::OrderTiming: {
      double sum = 0.0;
      std::optional<double> first0, first1;
      for (const auto& a : acts) {
        if (a.category < kTimingWeights.size())
          sum += kTimingWeights[a.category] * (1.0 - 2.0 * a.timestamp / kHorizonDays);
        if (a.category == 0 && !first0) first0 = a.timestamp;
        if (a.category == 1 && !first1) first1 = a.timestamp;
      }
      if (first0 && first1) sum += *first0 < *first1 ? kOrderBonus : -kOrderBonus;
      term = spec.effect_scale * modifier * sum;
      break;
    }
  }
  return spec.effect_intercept + term;
}

double treat_probability(const GeneratorSpec& spec, const GeneratorWeights& w, std::span<const double> x) {
  if (spec.propensity == PropensityFamily::Constant) return spec.treat_probability;
  return nn::sigmoid(spec.propensity_intercept + spec.confounding * dot(w.propensity, x));
}

double true_ite(double baseline, double effect) { return nn::sigmoid(baseline + effect) - nn::sigmoid(baseline); }

// --- generation ---------------------------------------------------------------------------

namespace {

struct Draw {
  std::vector<double> x;
  std::vector<Act> acts;  // potential sequence, sorted by time
  double u_arm = 0.0;
  double u_outcome = 0.0;
};

std::vector<Draw> draw_population(const GeneratorSpec& spec, const GeneratorWeights& w) {
  std::vector<std::vector<double>> pool;
  if (spec.profiles > 0) {
    Rng rng(derive_seed(spec.seed, "profiles"));
    pool.resize(spec.profiles, std::vector<double>(spec.d));
    for (auto& p : pool)
      for (auto& v : p) v = rng.normal();
  }
  const auto map = CategoryMap::default_map(spec.k);
  std::vector<std::size_t> allowed;
  for (std::size_t c = 0; c < spec.k; ++c)
    if (!spec.only_group || map.group(c) == *spec.only_group) allowed.push_back(c);

  std::vector<Draw> draws(spec.n);
  std::vector<double> weights(allowed.size());
  for (std::size_t i = 0; i < spec.n; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    Draw& dr = draws[i];
    if (pool.empty()) {
      dr.x.resize(spec.d);
      for (auto& v : dr.x) v = rng.normal();
    } else {
      dr.x = pool[rng.below(pool.size())];
    }
    double total = 0.0;
    for (std::size_t a = 0; a < allowed.size(); ++a) {
      weights[a] = std::exp(spec.category_tilt * dot(w.category[allowed[a]], dr.x));
      total += weights[a];
    }
    std::size_t steps = 1;
    for (std::size_t t = 1; t < spec.s; ++t) steps += rng.bernoulli(spec.act_rate) ? 1 : 0;
    for (std::size_t t = 0; t < steps; ++t) {
      double u = rng.uniform() * total;
      std::size_t pick = allowed.size() - 1;
      for (std::size_t a = 0; a < allowed.size(); ++a) {
        if (u < weights[a]) {
          pick = a;
          break;
        }
        u -= weights[a];
      }
      dr.acts.push_back({allowed[pick], rng.uniform(0.0, kHorizonDays)});
    }
    std::stable_sort(dr.acts.begin(), dr.acts.end(),
                     [](const Act& a, const Act& b) { return a.timestamp < b.timestamp; });
    dr.u_arm = rng.uniform();
    dr.u_outcome = rng.uniform();
  }
  return draws;
}

// Increasing f; finds z with f(z) = target inside [-40, 40].
double solve_increasing(const std::function<double(double)>& f, double target, const std::string& constraint) {
  double lo = -40.0, hi = 40.0;
  const double flo = f(lo), fhi = f(hi);
  if (target < flo || target > fhi) {
    std::ostringstream msg;
    msg << "constraint " << constraint << " = " << target << " is infeasible (attainable range [" << flo << ", "
        << fhi << "])";
    fail(ErrorKind::Calibration, msg.str());
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

TargetMarginals expected_marginals(const GeneratorSpec& spec, const GeneratorWeights& w,
                                   const std::vector<Draw>& draws) {
  double treated = 0.0, pos_c = 0.0, pos_t = 0.0;
  for (const auto& dr : draws) {
    const double p = treat_probability(spec, w, dr.x);
    const double b = baseline_logit(spec, w, dr.x);
    const double e = effect_logit(spec, w, dr.x, dr.acts);
    treated += p;
    pos_c += (1.0 - p) * nn::sigmoid(b);
    pos_t += p * nn::sigmoid(b + e);
  }
  const double n = static_cast<double>(draws.size());
  return {treated / n, pos_c / (n - treated), pos_t / treated};
}

CalibrationReport calibrate(GeneratorSpec& spec, const GeneratorWeights& w, const std::vector<Draw>& draws) {
  const TargetMarginals t = *spec.target;
  auto in_open_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!in_open_unit(t.treated_fraction))
    fail(ErrorKind::Calibration, "constraint treated_fraction must lie strictly between 0 and 1");
  if (!in_open_unit(t.control_positive_rate))
    fail(ErrorKind::Calibration, "constraint control_positive_rate must lie strictly between 0 and 1");
  if (!in_open_unit(t.treated_positive_rate))
    fail(ErrorKind::Calibration, "constraint treated_positive_rate must lie strictly between 0 and 1");

  const std::size_t n = draws.size();
  std::vector<double> prop_lin(n), base_lin(n), eff_lin(n), prob(n);
  GeneratorSpec probe = spec;
  probe.baseline_intercept = 0.0;
  probe.effect_intercept = 0.0;
  probe.propensity_intercept = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    prop_lin[i] = probe.confounding * dot(w.propensity, draws[i].x);
    base_lin[i] = baseline_logit(probe, w, draws[i].x);
    eff_lin[i] = effect_logit(probe, w, draws[i].x, draws[i].acts);
  }
  const double nd = static_cast<double>(n);

  if (spec.propensity == PropensityFamily::Constant) {
    spec.treat_probability = t.treated_fraction;
    std::fill(prob.begin(), prob.end(), t.treated_fraction);
  } else {
    spec.propensity_intercept = solve_increasing(
        [&](double a) {
          double s = 0.0;
          for (double v : prop_lin) s += nn::sigmoid(a + v);
          return s / nd;
        },
        t.treated_fraction, "treated_fraction");
    for (std::size_t i = 0; i < n; ++i) prob[i] = nn::sigmoid(spec.propensity_intercept + prop_lin[i]);
  }
  double mass_c = 0.0, mass_t = 0.0;
  for (double p : prob) {
    mass_c += 1.0 - p;
    mass_t += p;
  }

  spec.baseline_intercept = solve_increasing(
      [&](double c) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += (1.0 - prob[i]) * nn::sigmoid(c + base_lin[i]);
        return s / mass_c;
      },
      t.control_positive_rate, "control_positive_rate");

  auto treated_rate = [&](double delta) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = draws[i].acts.empty() || spec.effect == EffectFamily::Null ? 0.0 : eff_lin[i] + delta;
      s += prob[i] * nn::sigmoid(spec.baseline_intercept + base_lin[i] + e);
    }
    return s / mass_t;
  };
  if (spec.effect == EffectFamily::Null) {
    const double reached = treated_rate(0.0);
    if (std::abs(reached - t.treated_positive_rate) > 0.02) {
      std::ostringstream msg;
      msg << "constraint treated_positive_rate = " << t.treated_positive_rate
          << " is infeasible with the null effect family (fixed at " << reached << ")";
      fail(ErrorKind::Calibration, msg.str());
    }
  } else {
    spec.effect_intercept = solve_increasing(treated_rate, t.treated_positive_rate, "treated_positive_rate");
  }

  CalibrationReport report;
  report.calibrated = true;
  spec.target.reset();
  report.expected = expected_marginals(spec, w, draws);
  return report;
}

std::string sample_id(std::size_t i, std::size_t n) {
  std::string digits = std::to_string(i);
  const std::size_t width = std::max<std::size_t>(6, std::to_string(n > 0 ? n - 1 : 0).size());
  return "c" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

}  // namespace

Generated generate_with_report(const GeneratorSpec& input) {
  input.validate();
  Generated out;
  out.spec = input;
  GeneratorSpec& spec = out.spec;
  const GeneratorWeights w = generator_weights(spec);
  const std::vector<Draw> draws = draw_population(spec, w);
  if (spec.target) out.calibration = calibrate(spec, w, draws);
  else out.calibration.expected = expected_marginals(spec, w, draws);

  out.data = Dataset(Dims{spec.d, spec.k, spec.s});
  for (std::size_t i = 0; i < spec.n; ++i) {
    const Draw& dr = draws[i];
    const double b = baseline_logit(spec, w, dr.x);
    const double e = effect_logit(spec, w, dr.x, dr.acts);
    const bool treated = dr.u_arm < treat_probability(spec, w, dr.x);
    Sample s;
    s.id = sample_id(i, spec.n);
    s.context = dr.x;
    s.treatments = treated ? TreatmentSeq::from_acts(dr.acts, spec.s, spec.k) : TreatmentSeq(spec.s, spec.k);
    s.outcome = dr.u_outcome < nn::sigmoid(b + (treated ? e : 0.0)) ? 1 : 0;
    s.true_ite = true_ite(b, e);
    out.data.add(std::move(s));
  }
  return out;
}

Dataset generate(const GeneratorSpec& spec) { return generate_with_report(spec).data; }

}  // namespace mtdlift
