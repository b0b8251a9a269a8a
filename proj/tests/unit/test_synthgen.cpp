#include <doctest.h>

#include <map>
#include <sstream>

#include "mtdlift/dataset.hpp"
#include "mtdlift/error.hpp"
#include "mtdlift/metrics.hpp"
#include "mtdlift/model.hpp"
#include "mtdlift/synthgen.hpp"

using namespace mtdlift;

namespace {

std::string serialize(const Dataset& d) {
  std::ostringstream out;
  write_dataset(out, d);
  return out.str();
}

struct Marginals {
  double treated_fraction, control_rate, treated_rate;
};

Marginals realized(const Dataset& d) {
  double t = 0, yt = 0, yc = 0;
  for (const auto& s : d.samples()) {
    t += s.treated();
    (s.treated() ? yt : yc) += s.outcome;
  }
  const double n = double(d.size());
  return {t / n, yc / (n - t), yt / t};
}

}  // namespace

TEST_CASE("null effect gives zero ITE everywhere") {
  const Dataset d = generate(preset_spec("null"));
  CHECK(d.size() == 5000);
  for (const auto& s : d.samples()) CHECK(*s.true_ite == 0.0);
}

TEST_CASE("true ITE is a probability difference") {
  CHECK(true_ite(0.0, -1.0) == doctest::Approx(-0.2310585786300049).epsilon(1e-15));
  CHECK(true_ite(0.3, 0.0) == 0.0);
  // Raising the effect logit raises the bankruptcy probability under treatment.
  for (double b = -4; b <= 4; b += 0.5)
    for (double e = -3; e <= 3; e += 0.5) CHECK(true_ite(b, e + 0.25) >= true_ite(b, e));
}

TEST_CASE("generation is reproducible and per-sample") {
  GeneratorSpec spec = preset_spec("linear-rct");
  spec.n = 400;
  spec.seed = 5;
  CHECK(serialize(generate(spec)) == serialize(generate(spec)));
  GeneratorSpec larger = spec;
  larger.n = 800;
  const Dataset a = generate(spec), b = generate(larger);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  GeneratorSpec other = spec;
  other.seed = 6;
  CHECK(serialize(generate(other)) != serialize(a));
}

TEST_CASE("spec json round trip and strictness") {
  const GeneratorSpec spec = preset_spec("table2-information");
  const auto back = GeneratorSpec::from_json(spec.to_json());
  CHECK(back.to_json() == spec.to_json());
  auto doc = spec.to_json();
  doc["colour"] = "blue";
  CHECK_THROWS_AS(GeneratorSpec::from_json(doc), Error);
  CHECK_THROWS_AS(preset_spec("nope"), Error);
  for (const auto& name : preset_names()) CHECK_NOTHROW(preset_spec(name).validate());
  GeneratorSpec bad;
  bad.treat_probability = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("calibration toward the BASIC column") {
  const auto g = generate_with_report(preset_spec("table2-basic"));
  CHECK(g.calibration.calibrated);
  const double tf = (17974.0 + 4529.0) / 46604.0, cr = 2281.0 / 24101.0, tr = 4529.0 / 22503.0;
  CHECK(std::abs(g.calibration.expected.treated_fraction - tf) < 1e-3);
  CHECK(std::abs(g.calibration.expected.control_positive_rate - cr) < 1e-3);
  CHECK(std::abs(g.calibration.expected.treated_positive_rate - tr) < 1e-3);
  const Marginals m = realized(g.data);
  CHECK(std::abs(m.treated_fraction - tf) < 0.02);
  CHECK(std::abs(m.control_rate - cr) < 0.02);
  CHECK(std::abs(m.treated_rate - tr) < 0.02);
  CHECK_FALSE(g.spec.target.has_value());
}

TEST_CASE("infeasible marginals raise a calibration error") {
  GeneratorSpec spec = preset_spec("null");
  spec.target = TargetMarginals{0.5, 0.1, 0.3};
  try {
    generate(spec);
    FAIL("expected a calibration error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Calibration);
    CHECK(std::string(e.what()).find("treated") != std::string::npos);
  }
  GeneratorSpec out_of_range = preset_spec("linear-rct");
  out_of_range.target = TargetMarginals{0.5, 0.1, 1.0};
  CHECK_THROWS_AS(generate(out_of_range), Error);
}

TEST_CASE("empirical effect in an RCT matches the mean true ITE") {
  GeneratorSpec spec = preset_spec("linear-rct");
  spec.n = 50000;
  spec.seed = 9;
  const Dataset d = generate(spec);
  double nt = 0, nc = 0, yt = 0, yc = 0, ite = 0;
  for (const auto& s : d.samples()) {
    (s.treated() ? nt : nc) += 1;
    (s.treated() ? yt : yc) += s.outcome;
    ite += *s.true_ite;
  }
  const double pt = yt / nt, pc = yc / nc;
  const double se = std::sqrt(pt * (1 - pt) / nt + pc * (1 - pc) / nc);
  CHECK(std::abs((pt - pc) - ite / double(d.size())) < 3.0 * se);
}

TEST_CASE("time-sensitive suite depends on order and timing") {
  GeneratorSpec spec = time_sensitive_spec(0, 100);
  const auto w = generator_weights(spec);
  const std::vector<double> x(spec.d, 0.1);
  const std::vector<Act> ab{{0, 30.0}, {1, 200.0}}, ba{{1, 30.0}, {0, 200.0}};
  CHECK(effect_logit(spec, w, x, ab) != effect_logit(spec, w, x, ba));
  CHECK(std::signbit(effect_logit(spec, w, x, ab)) != std::signbit(effect_logit(spec, w, x, ba)));
  const std::vector<Act> early{{0, 10.0}}, late{{0, 300.0}};
  CHECK(effect_logit(spec, w, x, early) != effect_logit(spec, w, x, late));

  const Dataset d = make_time_sensitive_suite(0, 20000);
  const Dataset c = collapse_multi(d);
  std::map<std::string, std::pair<double, double>> groups;  // key -> (min, max) true ITE
  std::map<std::string, std::pair<double, double>> sums;    // key -> (sum, count)
  auto key_of = [&](std::size_t i) {
    std::ostringstream k;
    for (double v : d[i].context) k << v << ',';
    for (std::size_t j = 0; j < c.dims().categories; ++j) k << c[i].treatments.at(0, j);
    return k.str();
  };
  std::vector<std::string> keys;
  for (std::size_t i = 0; i < d.size(); ++i) {
    keys.push_back(key_of(i));
    const double t = *d[i].true_ite;
    auto [it, fresh] = groups.try_emplace(keys.back(), t, t);
    it->second.first = std::min(it->second.first, t);
    it->second.second = std::max(it->second.second, t);
    sums[keys.back()].first += t;
    sums[keys.back()].second += 1;
  }
  bool clash = false;
  for (const auto& [k, mm] : groups) clash = clash || mm.first != mm.second;
  CHECK(clash);

  std::vector<double> truth, blind;
  for (std::size_t i = 0; i < d.size(); ++i) {
    truth.push_back(*d[i].true_ite);
    blind.push_back(sums[keys[i]].first / sums[keys[i]].second);
  }
  CHECK(metrics::qini_score(score(d, truth)) > metrics::qini_score(score(d, blind)));
}
