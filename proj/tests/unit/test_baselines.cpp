#include <doctest.h>

#include <map>
#include <sstream>

#include "mtdlift/baselines.hpp"
#include "mtdlift/error.hpp"
#include "mtdlift/random.hpp"
#include "mtdlift/synthgen.hpp"

using namespace mtdlift;
using nn::Tensor;

namespace {

struct Row {
  std::vector<double> x;
  bool treated;
  int y;
};

Dataset binary_dataset(const std::vector<Row>& rows) {
  const Dims dims{rows.front().x.size(), 1, 1};
  Dataset d(dims);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Sample s;
    s.id = "r" + std::to_string(i);
    s.context = rows[i].x;
    s.treatments = rows[i].treated ? TreatmentSeq::from_acts({{0, 0.0}}, 1, 1) : TreatmentSeq(1, 1);
    s.outcome = rows[i].y;
    d.add(s);
  }
  return d;
}

// Fits the mean label of each distinct feature row, optionally ignoring the
// last column.
class Lookup final : public BaseLearner {
 public:
  explicit Lookup(bool drop_last = false) : drop_last_(drop_last) {}
  std::string kind() const override { return "lookup"; }
  void fit(const Tensor& x, std::span<const int> y) override {
    std::map<std::vector<double>, std::pair<double, double>> acc;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto& a = acc[key(x, i)];
      a.first += y[i];
      a.second += 1;
    }
    for (const auto& [k, v] : acc) table_[k] = v.first / v.second;
  }
  std::vector<double> predict_proba(const Tensor& x) const override {
    std::vector<double> p;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto it = table_.find(key(x, i));
      p.push_back(it == table_.end() ? 0.5 : it->second);
    }
    return p;
  }
  std::unique_ptr<BaseLearner> clone() const override { return std::make_unique<Lookup>(*this); }
  void save(std::ostream&) const override {}

 private:
  std::vector<double> key(const Tensor& x, std::size_t i) const {
    const auto r = x.row(i);
    return {r.begin(), r.end() - (drop_last_ ? 1 : 0)};
  }
  bool drop_last_;
  std::map<std::vector<double>, double> table_;
};

double accuracy(const BaseLearner& l, const Tensor& x, const std::vector<int>& y) {
  const auto p = l.predict_proba(x);
  double ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ok += ((p[i] >= 0.5) == (y[i] == 1)) ? 1 : 0;
  return ok / double(y.size());
}

}  // namespace

TEST_CASE("logistic regression separates a linear toy set") {
  Rng rng(1);
  Tensor x(200, 2);
  std::vector<int> y(200);
  for (std::size_t i = 0; i < 200; ++i) {
    x(i, 0) = rng.uniform(-1, 1);
    x(i, 1) = rng.uniform(-1, 1);
    const double m = x(i, 0) + 0.5 * x(i, 1);
    if (std::abs(m) < 0.1) x(i, 0) += m > 0 ? 0.2 : -0.2;
    y[i] = x(i, 0) + 0.5 * x(i, 1) > 0 ? 1 : 0;
  }
  LogisticRegression lr;
  lr.fit(x, y);
  CHECK(accuracy(lr, x, y) == 1.0);

  // A constant extra column leaves every prediction unchanged.
  Tensor x2(200, 3);
  for (std::size_t i = 0; i < 200; ++i) {
    x2(i, 0) = x(i, 0);
    x2(i, 1) = 4.25;
    x2(i, 2) = x(i, 1);
  }
  LogisticRegression lr2;
  lr2.fit(x2, y);
  const auto a = lr.predict_proba(x), b = lr2.predict_proba(x2);
  for (std::size_t i = 0; i < 200; ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-8);
}

TEST_CASE("boosted trees fit XOR clusters") {
  Rng rng(2);
  Tensor x(400, 2);
  std::vector<int> y(400);
  for (std::size_t i = 0; i < 400; ++i) {
    const int cx = int(rng.below(2)), cy = int(rng.below(2));
    x(i, 0) = (cx ? 1.0 : -1.0) + 0.2 * rng.normal();
    x(i, 1) = (cy ? 1.0 : -1.0) + 0.2 * rng.normal();
    y[i] = cx ^ cy;
  }
  BoostedStumps gb;
  gb.fit(x, y);
  CHECK(accuracy(gb, x, y) > 0.95);
}

TEST_CASE("single-class fits predict the clamped class rate") {
  const Tensor x(5, 2, 1.0);
  for (auto* l : std::initializer_list<BaseLearner*>{new LogisticRegression, new BoostedStumps}) {
    std::unique_ptr<BaseLearner> own(l);
    own->fit(x, std::vector<int>(5, 1));
    for (double p : own->predict_proba(x)) CHECK(p == 1.0 - nn::kProbabilityClamp);
    own->fit(x, std::vector<int>(5, 0));
    for (double p : own->predict_proba(x)) CHECK(p == nn::kProbabilityClamp);
  }
}

TEST_CASE("S-learner with a learner blind to T has zero ITE") {
  std::vector<Row> rows;
  for (int i = 0; i < 20; ++i) rows.push_back({{double(i % 4)}, i % 2 == 0, i % 3 == 0 ? 1 : 0});
  const Dataset d = binary_dataset(rows);
  const auto s = fit_s_learner(d, Lookup(true));
  for (double ite : s.predict_ite(d)) CHECK(ite == 0.0);
}

TEST_CASE("S- and T-learner agree with a lookup-table learner on exhaustive arms") {
  Rng rng(3);
  std::vector<Row> rows;
  for (int i = 0; i < 400; ++i)
    rows.push_back({{double(rng.below(3)), double(rng.below(2))}, rng.bernoulli(0.5), rng.bernoulli(0.4) ? 1 : 0});
  const Dataset d = binary_dataset(rows);
  const auto a = fit_s_learner(d, Lookup()).predict_ite(d);
  const auto b = fit_t_learner(d, Lookup()).predict_ite(d);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-15));
}

TEST_CASE("treatment flipping the label gives correctly signed ITE") {
  Rng rng(4);
  std::vector<Row> rows;
  for (int i = 0; i < 400; ++i) {
    const double x = rng.uniform(-1, 1);
    const bool t = rng.bernoulli(0.5);
    rows.push_back({{x}, t, (x > 0) != t ? 1 : 0});
  }
  const Dataset d = binary_dataset(rows);
  for (const std::string kind : {"logistic", "boosted"}) {
    const auto t = fit_t_learner(d, *make_base_learner(kind)).predict_ite(d);
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(t[i] > -1.0);
      CHECK(t[i] < 1.0);
      if (std::abs(d[i].context[0]) > 0.2) CHECK((d[i].context[0] > 0 ? t[i] < 0 : t[i] > 0));
    }
  }
  const auto s = fit_s_learner(d, BoostedStumps()).predict_ite(d);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (std::abs(d[i].context[0]) > 0.2) CHECK((d[i].context[0] > 0 ? s[i] < 0 : s[i] > 0));
}

TEST_CASE("T-learner edge constructions") {
  Rng rng(5);
  std::vector<Row> base;
  for (int i = 0; i < 300; ++i) {
    const double x = rng.normal();
    base.push_back({{x, rng.normal()}, false, rng.bernoulli(0.3 + 0.2 * (x > 0)) ? 1 : 0});
  }
  std::vector<Row> twin = base;
  for (auto r : base) {
    r.treated = true;
    twin.push_back(r);
  }
  const Dataset same = binary_dataset(twin);
  for (double ite : fit_t_learner(same, LogisticRegression()).predict_ite(same)) CHECK(std::abs(ite) < 0.05);

  std::vector<Row> split_labels = twin;
  for (auto& r : split_labels) r.y = r.treated ? 1 : 0;
  const Dataset sl = binary_dataset(split_labels);
  for (double ite : fit_t_learner(sl, LogisticRegression()).predict_ite(sl)) CHECK(ite > 0.99);

  std::vector<Row> one_arm = base;
  CHECK_THROWS_AS(fit_t_learner(binary_dataset(one_arm), LogisticRegression()), Error);
}

TEST_CASE("meta-learners recover the effect sign on the category-focused suite") {
  GeneratorSpec spec = preset_spec("rq1-information");
  spec.n = 4000;
  spec.seed = 6;
  const Dataset raw = generate(spec);
  const Dataset d = binarize(raw, BinarizeMode::Information, CategoryMap::default_map(spec.k));
  double truth = 0;
  for (const auto& s : raw.samples()) truth += *s.true_ite;
  for (const std::string kind : {"logistic", "boosted"}) {
    for (const bool t_learner : {false, true}) {
      const auto proto = make_base_learner(kind);
      const auto ite = t_learner ? fit_t_learner(d, *proto).predict_ite(d) : fit_s_learner(d, *proto).predict_ite(d);
      double mean = 0;
      for (double v : ite) mean += v;
      CAPTURE(kind);
      CHECK((mean > 0) == (truth > 0));
    }
  }
}

TEST_CASE("learner checkpoints round-trip") {
  Rng rng(7);
  std::vector<Row> rows;
  for (int i = 0; i < 200; ++i) {
    const double x = rng.normal();
    rows.push_back({{x, rng.normal(), 1.0}, rng.bernoulli(0.5), rng.bernoulli(x > 0 ? 0.6 : 0.3) ? 1 : 0});
  }
  const Dataset d = binary_dataset(rows);
  for (const std::string kind : {"logistic", "boosted"}) {
    const auto proto = make_base_learner(kind);
    const SLearner s = fit_s_learner(d, *proto);
    const TLearner t = fit_t_learner(d, *proto);
    for (const UpliftModel* m : {static_cast<const UpliftModel*>(&s), static_cast<const UpliftModel*>(&t)}) {
      std::stringstream buf;
      save_model(buf, *m);
      const auto back = load_model(buf);
      CHECK(back->kind() == m->kind());
      CHECK(back->predict_ite(d) == m->predict_ite(d));
    }
  }
  CHECK_THROWS_AS(make_base_learner("forest"), Error);
}
