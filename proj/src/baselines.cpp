#include "mtdlift/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mtdlift/error.hpp"

namespace mtdlift {

using nn::Tensor;

namespace {

double clamp_probability(double p) { return std::clamp(p, nn::kProbabilityClamp, 1.0 - nn::kProbabilityClamp); }

// Single-class or empty label vectors get a constant model.
bool single_class(std::span<const int> y, double& rate) {
  std::size_t positives = 0;
  for (int v : y) positives += v != 0;
  rate = clamp_probability(static_cast<double>(positives) / static_cast<double>(y.size()));
  return positives == 0 || positives == y.size();
}

void check_fit_input(const Tensor& x, std::span<const int> y) {
  if (x.rows() == 0) fail(ErrorKind::Training, "base learner: empty training set");
  if (x.rows() != y.size()) fail(ErrorKind::InvalidArgument, "base learner: feature/label length mismatch");
  for (int v : y)
    if (v != 0 && v != 1) fail(ErrorKind::InvalidArgument, "base learner: labels must be 0 or 1");
  nn::check_finite(x, "base learner features");
}

void write_vector(std::ostream& out, const char* tag, const std::vector<double>& v) {
  out << tag << ' ' << v.size();
  for (double x : v) out << ' ' << format_double(x);
  out << '\n';
}

std::string next_token(std::istream& in, const char* what) {
  std::string token;
  if (!(in >> token)) fail(ErrorKind::Parse, std::string("checkpoint: unexpected end while reading ") + what);
  return token;
}

void expect_token(std::istream& in, const std::string& expected) {
  const auto token = next_token(in, expected.c_str());
  if (token != expected) fail(ErrorKind::Parse, "checkpoint: expected '" + expected + "', got '" + token + "'");
}

double read_double(std::istream& in, const char* what) { return parse_double(next_token(in, what)); }

std::size_t read_size(std::istream& in, const char* what) {
  const auto token = next_token(in, what);
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(token, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != token.size()) fail(ErrorKind::Parse, std::string("checkpoint: bad integer for ") + what);
  return static_cast<std::size_t>(v);
}

long long read_int(std::istream& in, const char* what) {
  const auto token = next_token(in, what);
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(token, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != token.size()) fail(ErrorKind::Parse, std::string("checkpoint: bad integer for ") + what);
  return v;
}

std::vector<double> read_vector(std::istream& in, const char* tag) {
  expect_token(in, tag);
  const std::size_t n = read_size(in, tag);
  std::vector<double> v(n);
  for (auto& x : v) x = read_double(in, tag);
  return v;
}

void write_dims(std::ostream& out, const Dims& d) {
  out << "dims " << d.context << ' ' << d.categories << ' ' << d.steps << '\n';
}

Dims read_dims(std::istream& in) {
  expect_token(in, "dims");
  Dims d;
  d.context = read_size(in, "dims");
  d.categories = read_size(in, "dims");
  d.steps = read_size(in, "dims");
  return d;
}

}  // namespace

// --- logistic regression -----------------------------------------------------------

void LogisticRegression::fit(const Tensor& x, std::span<const int> y) {
  check_fit_input(x, y);
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  mean_.assign(d, 0.0);
  scale_.assign(d, 0.0);
  weights_.assign(d, 0.0);
  intercept_ = 0.0;
  constant_ = single_class(y, constant_p_);
  if (constant_) return;

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean_[j] += x(i, j);
  for (auto& m : mean_) m /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - mean_[j];
      var[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(n));
    scale_[j] = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
  Tensor z(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) z(i, j) = (x(i, j) - mean_[j]) * scale_[j];

  std::vector<double> residual(n), grad(d);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t it = 0; it < config_.iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = intercept_;
      const double* row = &z(i, 0);
      for (std::size_t j = 0; j < d; ++j) s += row[j] * weights_[j];
      residual[i] = nn::sigmoid(s) - y[i];
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = residual[i];
      grad_b += r;
      const double* row = &z(i, 0);
      for (std::size_t j = 0; j < d; ++j) grad[j] += r * row[j];
    }
    for (std::size_t j = 0; j < d; ++j)
      weights_[j] -= config_.learning_rate * (grad[j] * inv_n + config_.l2 * weights_[j]);
    intercept_ -= config_.learning_rate * grad_b * inv_n;
  }
}

std::vector<double> LogisticRegression::predict_proba(const Tensor& x) const {
  if (x.cols() != mean_.size()) fail(ErrorKind::Schema, "logistic: feature width differs from the fitted width");
  std::vector<double> p(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (constant_) {
      p[i] = constant_p_;
      continue;
    }
    double s = intercept_;
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (scale_[j] != 0.0) s += (x(i, j) - mean_[j]) * scale_[j] * weights_[j];
    p[i] = clamp_probability(nn::sigmoid(s));
  }
  return p;
}

void LogisticRegression::save(std::ostream& out) const {
  out << "learner logistic\n";
  out << "config " << format_double(config_.l2) << ' ' << format_double(config_.learning_rate) << ' '
      << config_.iterations << '\n';
  out << "constant " << (constant_ ? 1 : 0) << ' ' << format_double(constant_p_) << '\n';
  write_vector(out, "mean", mean_);
  write_vector(out, "scale", scale_);
  write_vector(out, "weights", weights_);
  out << "intercept " << format_double(intercept_) << '\n';
}

LogisticRegression LogisticRegression::read(std::istream& in) {
  expect_token(in, "config");
  LogisticConfig c;
  c.l2 = read_double(in, "l2");
  c.learning_rate = read_double(in, "learning_rate");
  c.iterations = read_size(in, "iterations");
  LogisticRegression m(c);
  expect_token(in, "constant");
  m.constant_ = read_size(in, "constant") != 0;
  m.constant_p_ = read_double(in, "constant");
  m.mean_ = read_vector(in, "mean");
  m.scale_ = read_vector(in, "scale");
  m.weights_ = read_vector(in, "weights");
  expect_token(in, "intercept");
  m.intercept_ = read_double(in, "intercept");
  if (m.scale_.size() != m.mean_.size() || m.weights_.size() != m.mean_.size())
    fail(ErrorKind::Schema, "logistic checkpoint: inconsistent vector lengths");
  return m;
}

// --- boosted trees ------------------------------------------------------------------

namespace {

struct Binned {
  std::vector<std::vector<double>> thresholds;  // per feature, ascending
  std::vector<std::uint8_t> bins;               // n x d, row-major
  std::size_t d = 0;
  std::uint8_t at(std::size_t i, std::size_t j) const { return bins[i * d + j]; }
};

Binned bin_features(const Tensor& x, std::size_t max_bins) {
  Binned b;
  b.d = x.cols();
  const std::size_t n = x.rows();
  b.thresholds.resize(b.d);
  b.bins.resize(n * b.d);
  std::vector<double> column(n);
  for (std::size_t j = 0; j < b.d; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = x(i, j);
    std::sort(column.begin(), column.end());
    auto& thr = b.thresholds[j];
    for (std::size_t q = 1; q < max_bins; ++q) {
      const double v = column[std::min(n - 1, q * n / max_bins)];
      // Threshold sits at the last value below v so that v itself goes right.
      const auto it = std::lower_bound(column.begin(), column.end(), v);
      if (it == column.begin()) continue;
      const double t = *(it - 1);
      if (thr.empty() || t > thr.back()) thr.push_back(t);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto pos = std::lower_bound(thr.begin(), thr.end(), x(i, j)) - thr.begin();
      b.bins[i * b.d + j] = static_cast<std::uint8_t>(pos);
    }
  }
  return b;
}

struct TreeBuilder {
  const Binned& binned;
  const std::vector<double>& g;
  const std::vector<double>& h;
  const StumpsConfig& cfg;
  BoostedStumps::Tree tree;
  std::vector<double> leaf_of;  // per training row

  int build(std::vector<std::size_t>& rows, std::size_t depth) {
    double gs = 0.0, hs = 0.0;
    for (auto r : rows) {
      gs += g[r];
      hs += h[r];
    }
    const int id = static_cast<int>(tree.size());
    tree.emplace_back();
    const double parent = gs * gs / (hs + cfg.lambda);

    double best_gain = 1e-12;
    int best_feature = -1;
    std::size_t best_bin = 0;
    if (depth < cfg.depth && rows.size() >= 2) {
      std::vector<double> hg, hh;
      for (std::size_t j = 0; j < binned.d; ++j) {
        const std::size_t nb = binned.thresholds[j].size() + 1;
        if (nb < 2) continue;
        hg.assign(nb, 0.0);
        hh.assign(nb, 0.0);
        for (auto r : rows) {
          const auto bin = binned.at(r, j);
          hg[bin] += g[r];
          hh[bin] += h[r];
        }
        double gl = 0.0, hl = 0.0;
        for (std::size_t k = 0; k + 1 < nb; ++k) {
          gl += hg[k];
          hl += hh[k];
          const double gr = gs - gl, hr = hs - hl;
          if (hl < 1e-6 || hr < 1e-6) continue;
          const double gain = gl * gl / (hl + cfg.lambda) + gr * gr / (hr + cfg.lambda) - parent;
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = static_cast<int>(j);
            best_bin = k;
          }
        }
      }
    }
    if (best_feature < 0) {
      const double value = -gs / (hs + cfg.lambda);
      tree[id].value = value;
      for (auto r : rows) leaf_of[r] = value;
      return id;
    }
    std::vector<std::size_t> left, right;
    const auto f = static_cast<std::size_t>(best_feature);
    for (auto r : rows) (binned.at(r, f) <= best_bin ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    tree[id].feature = best_feature;
    tree[id].threshold = binned.thresholds[f][best_bin];
    const int l = build(left, depth + 1);
    const int rr = build(right, depth + 1);
    tree[id].left = l;
    tree[id].right = rr;
    return id;
  }
};

}  // namespace

void BoostedStumps::fit(const Tensor& x, std::span<const int> y) {
  check_fit_input(x, y);
  if (config_.bins < 2 || config_.bins > 256) fail(ErrorKind::InvalidArgument, "boosted: bins must lie in [2, 256]");
  trees_.clear();
  constant_ = single_class(y, constant_p_);
  if (constant_) return;

  const std::size_t n = x.rows();
  base_ = std::log(constant_p_ / (1.0 - constant_p_));
  const Binned binned = bin_features(x, config_.bins);
  std::vector<double> f(n, base_), g(n), h(n);
  for (std::size_t m = 0; m < config_.rounds; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = nn::sigmoid(f[i]);
      g[i] = p - y[i];
      h[i] = std::max(p * (1.0 - p), 1e-12);
    }
    TreeBuilder builder{binned, g, h, config_, {}, std::vector<double>(n, 0.0)};
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    builder.build(rows, 0);
    for (auto& node : builder.tree) node.value *= config_.shrinkage;
    for (std::size_t i = 0; i < n; ++i) f[i] += config_.shrinkage * builder.leaf_of[i];
    trees_.push_back(std::move(builder.tree));
  }
}

double BoostedStumps::raw_score(std::span<const double> row) const {
  double s = base_;
  for (const auto& tree : trees_) {
    int node = 0;
    while (tree[node].feature >= 0)
      node = row[static_cast<std::size_t>(tree[node].feature)] <= tree[node].threshold ? tree[node].left
                                                                                         : tree[node].right;
    s += tree[node].value;
  }
  return s;
}

std::vector<double> BoostedStumps::predict_proba(const Tensor& x) const {
  std::vector<double> p(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) p[i] = constant_ ? constant_p_ : clamp_probability(nn::sigmoid(raw_score(x.row(i))));
  return p;
}

void BoostedStumps::save(std::ostream& out) const {
  out << "learner boosted\n";
  out << "config " << config_.rounds << ' ' << config_.depth << ' ' << format_double(config_.shrinkage) << ' '
      << config_.bins << ' ' << format_double(config_.lambda) << '\n';
  out << "constant " << (constant_ ? 1 : 0) << ' ' << format_double(constant_p_) << '\n';
  out << "base " << format_double(base_) << '\n';
  out << "trees " << trees_.size() << '\n';
  for (const auto& tree : trees_) {
    out << "nodes " << tree.size() << '\n';
    for (const auto& node : tree)
      out << node.feature << ' ' << format_double(node.threshold) << ' ' << node.left << ' ' << node.right << ' '
          << format_double(node.value) << '\n';
  }
}

BoostedStumps BoostedStumps::read(std::istream& in) {
  expect_token(in, "config");
  StumpsConfig c;
  c.rounds = read_size(in, "rounds");
  c.depth = read_size(in, "depth");
  c.shrinkage = read_double(in, "shrinkage");
  c.bins = read_size(in, "bins");
  c.lambda = read_double(in, "lambda");
  BoostedStumps m(c);
  expect_token(in, "constant");
  m.constant_ = read_size(in, "constant") != 0;
  m.constant_p_ = read_double(in, "constant");
  expect_token(in, "base");
  m.base_ = read_double(in, "base");
  expect_token(in, "trees");
  const std::size_t count = read_size(in, "trees");
  for (std::size_t t = 0; t < count; ++t) {
    expect_token(in, "nodes");
    Tree tree(read_size(in, "nodes"));
    for (auto& node : tree) {
      node.feature = static_cast<int>(read_int(in, "feature"));
      node.threshold = read_double(in, "threshold");
      node.left = static_cast<int>(read_int(in, "left"));
      node.right = static_cast<int>(read_int(in, "right"));
      node.value = read_double(in, "value");
    }
    const int size = static_cast<int>(tree.size());
    for (const auto& node : tree)
      if (node.feature >= 0 && (node.left <= 0 || node.left >= size || node.right <= 0 || node.right >= size))
        fail(ErrorKind::Schema, "boosted checkpoint: dangling child index");
    m.trees_.push_back(std::move(tree));
  }
  return m;
}

std::unique_ptr<BaseLearner> make_base_learner(const std::string& kind) {
  if (kind == "logistic") return std::make_unique<LogisticRegression>();
  if (kind == "boosted") return std::make_unique<BoostedStumps>();
  fail(ErrorKind::InvalidArgument, "unknown base learner '" + kind + "' (expected logistic or boosted)");
}

std::unique_ptr<BaseLearner> read_base_learner(std::istream& in) {
  expect_token(in, "learner");
  const auto kind = next_token(in, "learner kind");
  if (kind == "logistic") return std::make_unique<LogisticRegression>(LogisticRegression::read(in));
  if (kind == "boosted") return std::make_unique<BoostedStumps>(BoostedStumps::read(in));
  fail(ErrorKind::Parse, "checkpoint: unknown base learner '" + kind + "'");
}

// --- meta-learners -------------------------------------------------------------------

Tensor context_features(const Dataset& data) {
  const std::size_t d = data.dims().context;
  Tensor x(data.size(), d);
  for (std::size_t i = 0; i < data.size(); ++i) std::copy_n(data[i].context.begin(), d, x.row(i).begin());
  return x;
}

namespace {

Tensor with_arm_column(const Tensor& x, double arm) {
  Tensor out(x.rows(), x.cols() + 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::copy_n(x.row(i).begin(), x.cols(), out.row(i).begin());
    out(i, x.cols()) = arm;
  }
  return out;
}

void check_arms(const Dataset& data, const char* who) {
  if (data.empty()) fail(ErrorKind::Training, std::string(who) + ": training set is empty");
  const std::size_t treated = data.treated_count();
  if (treated == 0) fail(ErrorKind::Training, std::string(who) + ": training set has no treated samples");
  if (treated == data.size()) fail(ErrorKind::Training, std::string(who) + ": training set has no control samples");
}

void check_dims(const Dims& model, const Dataset& data) {
  if (model.context != data.dims().context) fail(ErrorKind::Schema, "dataset context width differs from the model");
}

}  // namespace

std::vector<Prediction> SLearner::predict(const Dataset& data) const {
  check_dims(dims_, data);
  const Tensor x = context_features(data);
  const auto p0 = learner_->predict_proba(with_arm_column(x, 0.0));
  const auto p1 = learner_->predict_proba(with_arm_column(x, 1.0));
  std::vector<Prediction> out(data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {p0[i], p1[i]};
  return out;
}

void SLearner::save_body(std::ostream& out) const {
  write_dims(out, dims_);
  learner_->save(out);
}

std::vector<Prediction> TLearner::predict(const Dataset& data) const {
  check_dims(dims_, data);
  const Tensor x = context_features(data);
  const auto p0 = control_->predict_proba(x);
  const auto p1 = treated_->predict_proba(x);
  std::vector<Prediction> out(data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {p0[i], p1[i]};
  return out;
}

void TLearner::save_body(std::ostream& out) const {
  write_dims(out, dims_);
  control_->save(out);
  treated_->save(out);
}

SLearner fit_s_learner(const Dataset& train_set, const BaseLearner& prototype) {
  check_arms(train_set, "S-learner");
  const std::size_t n = train_set.size();
  const std::size_t d = train_set.dims().context;
  Tensor x(n, d + 1);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = train_set[i];
    std::copy_n(s.context.begin(), d, x.row(i).begin());
    x(i, d) = s.treated() ? 1.0 : 0.0;
    y[i] = s.outcome;
  }
  auto learner = prototype.clone();
  learner->fit(x, y);
  return SLearner(train_set.dims(), std::move(learner));
}

TLearner fit_t_learner(const Dataset& train_set, const BaseLearner& prototype) {
  check_arms(train_set, "T-learner");
  const std::size_t d = train_set.dims().context;
  const std::size_t nt = train_set.treated_count();
  const std::size_t nc = train_set.size() - nt;
  Tensor xc(nc, d), xt(nt, d);
  std::vector<int> yc, yt;
  std::size_t ic = 0, it = 0;
  for (const auto& s : train_set.samples()) {
    if (s.treated()) {
      std::copy_n(s.context.begin(), d, xt.row(it++).begin());
      yt.push_back(s.outcome);
    } else {
      std::copy_n(s.context.begin(), d, xc.row(ic++).begin());
      yc.push_back(s.outcome);
    }
  }
  auto control = prototype.clone();
  auto treated = prototype.clone();
  control->fit(xc, yc);
  treated->fit(xt, yt);
  return TLearner(train_set.dims(), std::move(control), std::move(treated));
}

std::unique_ptr<UpliftModel> read_s_learner(std::istream& in) {
  const Dims dims = read_dims(in);
  return std::make_unique<SLearner>(dims, read_base_learner(in));
}

std::unique_ptr<UpliftModel> read_t_learner(std::istream& in) {
  const Dims dims = read_dims(in);
  auto control = read_base_learner(in);
  auto treated = read_base_learner(in);
  return std::make_unique<TLearner>(dims, std::move(control), std::move(treated));
}

}  // namespace mtdlift
