#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "gradcheck.hpp"
#include "mtdlift/error.hpp"
#include "mtdlift/metrics.hpp"
#include "mtdlift/model.hpp"
#include "mtdlift/mtdnet.hpp"
#include "mtdlift/synthgen.hpp"

using namespace mtdlift;
using nn::Tensor;

namespace {

Dataset small_suite(std::uint64_t seed, std::size_t n = 200) { return make_time_sensitive_suite(seed, n); }

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 32;
  c.epochs = 5;
  c.learning_rate = 1e-3;
  c.hidden_size = 8;
  c.output_size = 4;
  c.seed = 3;
  return c;
}

std::vector<std::size_t> all_rows(const Dataset& d) {
  std::vector<std::size_t> r(d.size());
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

}  // namespace

TEST_CASE("config json round trip and validation") {
  TrainConfig c = small_config();
  c.use_timestamps = false;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"batchsize", 3}}), Error);
  TrainConfig bad;
  bad.patience = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(TrainConfig{}.within_search_grid());
  CHECK_FALSE(small_config().within_search_grid());
}

TEST_CASE("zero weights predict one half everywhere") {
  const Dataset d = small_suite(1, 20);
  MtdNet net(d.dims(), small_config());
  for (std::size_t i = 0; i < net.params().size(); ++i) net.params().value(i).fill(0.0);
  for (const auto& p : net.predict(d)) {
    CHECK(p.control == 0.5);
    CHECK(p.treated == 0.5);
  }
}

TEST_CASE("forward partitions representation rows by arm") {
  const Dataset d = small_suite(2, 60);
  MtdNet net(d.dims(), small_config());
  std::size_t c = d.size(), t = d.size();
  for (std::size_t i = 0; i < d.size(); ++i) (d[i].treated() ? t : c) = i;
  const std::vector<std::size_t> rows{c, t};
  const auto out = net.forward(d, rows);
  CHECK(out.repr_control_rows.rows() == 1);
  CHECK(out.repr_treated_rows.rows() == 1);
  for (double p : out.pred_control) CHECK((p > 0.0 && p < 1.0));
  for (double p : out.pred_treated) CHECK((p > 0.0 && p < 1.0));
}

TEST_CASE("control path ignores the treatment sequence") {
  const Dataset d = small_suite(3, 40);
  MtdNet net(d.dims(), small_config());
  Dataset stripped(d.dims());
  for (auto s : d.samples()) {
    s.treatments = TreatmentSeq(d.dims().steps, d.dims().categories);
    stripped.add(s);
  }
  const auto a = net.predict(d), b = net.predict(stripped);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(a[i].control == b[i].control);
    if (!d[i].treated()) CHECK(a[i].treated == b[i].treated);
  }
}

TEST_CASE("zeroed pooled input with shared heads gives zero ITE") {
  const Dataset d = small_suite(4, 40);
  MtdNet net(d.dims(), small_config());
  auto& ps = net.params();
  const std::size_t r = net.config().output_size;
  const Tensor& c0 = ps.value("control.head.l0.W");
  Tensor& t0 = ps.value("treated.head.l0.W");
  t0.fill(0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < t0.cols(); ++j) t0(i, j) = c0(i, j);
  ps.value("treated.head.l0.b") = ps.value("control.head.l0.b");
  ps.value("treated.head.l1.W") = ps.value("control.head.l1.W");
  ps.value("treated.head.l1.b") = ps.value("control.head.l1.b");
  for (double ite : net.predict_ite(d)) CHECK(ite == 0.0);
}

TEST_CASE("total loss components") {
  // Hand-built 4-sample batch.
  BatchOutput out;
  out.pred_control = {0.2, 0.7, 0.4, 0.5};
  out.pred_treated = {0.3, 0.6, 0.9, 0.8};
  out.treated = {0, 0, 1, 1};
  out.repr_control_rows = Tensor(2, 2, {0.0, 1.0, 2.0, 3.0});
  out.repr_treated_rows = Tensor(2, 2, {1.0, 1.0, 2.0, 5.0});
  const std::vector<int> y{0, 1, 1, 0};
  const auto parts = total_loss(out, y, 1.0);
  const double lc = nn::bce_loss(std::vector<double>{0.2, 0.7}, std::vector<int>{0, 1}).loss;
  const double lt = nn::bce_loss(std::vector<double>{0.9, 0.8}, std::vector<int>{1, 0}).loss;
  const double ld = nn::gaussian_kld(out.repr_control_rows, out.repr_treated_rows).value;
  CHECK(parts.control == doctest::Approx(lc).epsilon(1e-15));
  CHECK(parts.treated == doctest::Approx(lt).epsilon(1e-15));
  CHECK(parts.divergence == doctest::Approx(ld).epsilon(1e-15));
  CHECK(std::abs(parts.total - (lc + lt + ld)) <= 1e-12);

  const auto no_kld = total_loss(out, y, 0.0);
  CHECK(no_kld.total == no_kld.control + no_kld.treated);

  BatchOutput same = out;
  same.repr_treated_rows = same.repr_control_rows;
  CHECK(std::abs(total_loss(same, y, 1.0).divergence) <= 1e-12);

  BatchOutput lopsided = out;
  lopsided.treated = {0, 0, 0, 1};
  lopsided.repr_control_rows = Tensor(3, 2, 1.0);
  lopsided.repr_treated_rows = Tensor(1, 2, 1.0);
  const auto skipped = total_loss(lopsided, y, 1.0);
  CHECK(skipped.divergence_skipped);
  CHECK(skipped.divergence == 0.0);
}

TEST_CASE("loss components are invariant to batch order") {
  const Dataset d = small_suite(5, 64);
  MtdNet net(d.dims(), small_config());
  auto rows = all_rows(d);
  const auto a = net.evaluate(d, rows);
  std::reverse(rows.begin(), rows.end());
  const auto b = net.evaluate(d, rows);
  CHECK(std::abs(a.control - b.control) <= 1e-10);
  CHECK(std::abs(a.treated - b.treated) <= 1e-10);
  CHECK(std::abs(a.divergence - b.divergence) <= 1e-10);
}

TEST_CASE("whole-network gradients match finite differences") {
  for (bool shared : {true, false}) {
    for (bool on_repr : {true, false}) {
      const Dataset d = small_suite(6, 24);
      TrainConfig cfg = small_config();
      cfg.hidden_size = 4;
      cfg.output_size = 3;
      cfg.shared_repr = shared;
      cfg.attention_on_repr = on_repr;
      MtdNet net(d.dims(), cfg);
      // Zero biases put all-zero context rows exactly on a ReLU kink.
      for (std::size_t p = 0; p < net.params().size(); ++p) {
        if (!net.params().name(p).ends_with(".b")) continue;
        Tensor& b = net.params().value(p);
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += 0.05 * double(i % 3 + 1);
      }
      const auto rows = all_rows(d);
      net.params().zero_grad();
      net.accumulate_gradients(d, rows);
      gradcheck::Report rep{"mtdnet"};
      for (std::size_t p = 0; p < net.params().size(); ++p) {
        const Tensor analytic = net.params().grad(p);
        gradcheck::compare(rep, net.params().value(p), analytic, [&] { return net.evaluate(d, rows).total; });
      }
      CAPTURE(shared);
      CAPTURE(on_repr);
      CAPTURE(rep.max_rel_error);
      CHECK(rep.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("training logs satisfy the loss identity and are deterministic") {
  const Dataset d = small_suite(7, 300);
  MtdNet a(d.dims(), small_config()), b(d.dims(), small_config());
  const auto ha = train(a, d);
  const auto hb = train(b, d);
  REQUIRE_FALSE(ha.steps.empty());
  for (const auto& s : ha.steps) CHECK(std::abs(s.total - (s.control + s.treated + s.divergence)) <= 1e-12);
  CHECK(ha.metrics_log() == hb.metrics_log());
  std::ostringstream sa, sb;
  save_model(sa, a);
  save_model(sb, b);
  CHECK(sa.str() == sb.str());
  CHECK(ha.metrics_log().rfind("epoch L_C L_T L_D total val_total\n", 0) == 0);

  TrainConfig other = small_config();
  other.seed = 4;
  MtdNet c(d.dims(), other);
  train(c, d);
  std::ostringstream sc;
  save_model(sc, c);
  CHECK(sc.str() != sa.str());
}

TEST_CASE("best validation parameters are restored") {
  const Dataset d = small_suite(8, 300);
  TrainConfig cfg = small_config();
  cfg.epochs = 12;
  cfg.learning_rate = 3e-2;
  cfg.patience = 3;
  MtdNet net(d.dims(), cfg);
  const auto h = train(net, d);
  const auto [fit, val] = split_indices(d, {1.0 - cfg.validation_fraction, derive_seed(cfg.seed, "validation")});
  const double restored = net.evaluate(d, val).total;
  CHECK(std::abs(restored - h.best_val) <= 1e-12);
  for (const auto& e : h.epochs) CHECK(h.best_val <= e.val_total);
}

TEST_CASE("early stopping rule") {
  EarlyStopping s(2);
  CHECK(s.update(1.0));
  CHECK_FALSE(s.update(1.0));
  CHECK_FALSE(s.should_stop());
  CHECK(s.update(0.5));
  CHECK_FALSE(s.update(0.7));
  CHECK_FALSE(s.update(0.6));
  CHECK(s.should_stop());

  const Dataset d = small_suite(9, 120);
  TrainConfig frozen = small_config();
  frozen.learning_rate = 0.0;
  frozen.epochs = 50;
  MtdNet net(d.dims(), frozen);
  const auto h = train(net, d);
  CHECK(h.stopped_early);
  CHECK(h.epochs.size() == frozen.patience + 1);
  CHECK(h.best_epoch == 1);

  TrainConfig improving = small_config();
  improving.epochs = 4;
  improving.learning_rate = 1e-3;
  MtdNet net2(d.dims(), improving);
  const auto h2 = train(net2, d);
  bool strictly = true;
  for (std::size_t i = 1; i < h2.epochs.size(); ++i) strictly = strictly && h2.epochs[i].val_total < h2.epochs[i - 1].val_total;
  if (strictly) CHECK(h2.epochs.size() == improving.epochs);
}

TEST_CASE("training rejects a single-arm set") {
  const Dataset d = small_suite(10, 80);
  Dataset controls(d.dims());
  for (const auto& s : d.samples())
    if (!s.treated()) controls.add(s);
  MtdNet net(d.dims(), small_config());
  try {
    train(net, controls);
    FAIL("expected a training error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Training);
    CHECK(std::string(e.what()).find("treated") != std::string::npos);
  }
}

TEST_CASE("checkpoints round-trip") {
  const Dataset d = small_suite(11, 100);
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  MtdNet net(d.dims(), cfg);
  train(net, d);
  std::stringstream buf;
  save_model(buf, net);
  const auto back = load_model(buf);
  CHECK(back->kind() == "mtdnet");
  const auto a = net.predict(d), b = back->predict(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(a[i].control == b[i].control);
    CHECK(a[i].treated == b[i].treated);
  }

  const auto t = train_neural_t_learner(d, cfg);
  std::stringstream tb;
  save_model(tb, t);
  const auto tback = load_model(tb);
  CHECK(tback->kind() == "neural-tlearner");
  CHECK(tback->predict_ite(d) == t.predict_ite(d));
}

TEST_CASE("disjoint MTDnet without divergence matches the neural T-learner") {
  const Dataset d = small_suite(12, 150);
  TrainConfig cfg = small_config();
  cfg.shared_repr = false;
  cfg.kld_weight = 0.0;
  cfg.batch_size = d.size();
  cfg.validation_fraction = 0.0;
  cfg.epochs = 6;
  cfg.learning_rate = 1e-2;
  MtdNet net(d.dims(), cfg);
  train(net, d);
  const auto t = train_neural_t_learner(d, cfg);
  const auto a = net.predict_ite(d), b = t.predict_ite(d);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst < 1e-8);
}

TEST_CASE("grid search") {
  const Dataset d = small_suite(13, 200);
  TrainConfig base = small_config();
  base.epochs = 3;
  SearchGrid one{{32}, {3}, {1e-3}, {1e-5}, {8}, {4}};
  const auto r1 = grid_search(d, one, base);
  CHECK(r1.scores.size() == 1);
  CHECK(r1.best == 0);

  SearchGrid two{{32}, {3}, {0.0, 1e-2}, {1e-5}, {8}, {4}};
  const auto r2 = grid_search(d, two, base, 2);
  CHECK(r2.configs.size() == 2);
  CHECK(r2.best == 1);
  const std::string csv = r2.table_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  CHECK(SearchGrid::full().size() == 972);
  CHECK(SearchGrid::sub12().size() == 12);
  const auto g = SearchGrid::sub12();
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.at(i, TrainConfig{}).within_search_grid());
  CHECK(SearchGrid::from_json(g.to_json()).size() == 12);
}

TEST_CASE("predicted ITE tracks the ground truth on the time-sensitive suite") {
  const Dataset d = make_time_sensitive_suite(21, 3000);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.learning_rate = 1e-3;
  cfg.hidden_size = 32;
  cfg.seed = 1;
  MtdNet net(d.dims(), cfg);
  train(net, d);
  const auto ite = net.predict_ite(d);
  std::vector<double> truth;
  for (const auto& s : d.samples()) truth.push_back(*s.true_ite);
  const double rho = metrics::spearman(ite, truth);
  CHECK(rho > 0.0);
  CHECK(metrics::spearman_p_value(rho, ite.size()) < 0.01);
}
