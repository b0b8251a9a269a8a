#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtdlift/dataset.hpp"
#include "mtdlift/model.hpp"
#include "mtdlift/neural.hpp"

namespace mtdlift {

// Supervised binary classifier used inside the meta-learners.
class BaseLearner {
 public:
  virtual ~BaseLearner() = default;

  virtual std::string kind() const = 0;
  virtual void fit(const nn::Tensor& x, std::span<const int> y) = 0;
  // Probabilities in [1e-7, 1 - 1e-7].
  virtual std::vector<double> predict_proba(const nn::Tensor& x) const = 0;
  virtual std::unique_ptr<BaseLearner> clone() const = 0;

  virtual void save(std::ostream& out) const = 0;
};

struct LogisticConfig {
  double l2 = 1e-4;  // on the weights only; the intercept is unpenalized
  double learning_rate = 0.5;
  std::size_t iterations = 500;
};

// L2-regularized logistic regression, full-batch gradient descent on
// standardized features. Columns with zero training variance are mapped to 0,
// so a constant column cannot move any prediction.
class LogisticRegression final : public BaseLearner {
 public:
  explicit LogisticRegression(LogisticConfig config = {}) : config_(config) {}

  std::string kind() const override { return "logistic"; }
  void fit(const nn::Tensor& x, std::span<const int> y) override;
  std::vector<double> predict_proba(const nn::Tensor& x) const override;
  std::unique_ptr<BaseLearner> clone() const override { return std::make_unique<LogisticRegression>(*this); }
  void save(std::ostream& out) const override;
  static LogisticRegression read(std::istream& in);

  const std::vector<double>& weights() const { return weights_; }
  double intercept() const { return intercept_; }

 private:
  LogisticConfig config_;
  std::vector<double> mean_, scale_;  // scale 0 marks a constant column
  std::vector<double> weights_;
  double intercept_ = 0.0;
  bool constant_ = false;
  double constant_p_ = 0.5;
};

struct StumpsConfig {
  std::size_t rounds = 100;
  std::size_t depth = 2;
  double shrinkage = 0.1;
  std::size_t bins = 32;
  double lambda = 1.0;
};

// Gradient-boosted depth-limited trees on the logistic loss with histogram
// split finding and Newton leaf values.
class BoostedStumps final : public BaseLearner {
 public:
  explicit BoostedStumps(StumpsConfig config = {}) : config_(config) {}

  std::string kind() const override { return "boosted"; }
  void fit(const nn::Tensor& x, std::span<const int> y) override;
  std::vector<double> predict_proba(const nn::Tensor& x) const override;
  std::unique_ptr<BaseLearner> clone() const override { return std::make_unique<BoostedStumps>(*this); }
  void save(std::ostream& out) const override;
  static BoostedStumps read(std::istream& in);

  struct Node {
    // Internal node: go left when x[feature] <= threshold. Leaf: feature < 0.
    int feature = -1;
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
  };
  using Tree = std::vector<Node>;

 private:
  double raw_score(std::span<const double> row) const;

  StumpsConfig config_;
  double base_ = 0.0;
  std::vector<Tree> trees_;
  bool constant_ = false;
  double constant_p_ = 0.5;
};

std::unique_ptr<BaseLearner> make_base_learner(const std::string& kind);
std::unique_ptr<BaseLearner> read_base_learner(std::istream& in);

// Binary arm per sample: any act in the treatment sequence.
nn::Tensor context_features(const Dataset& data);

// One learner on context ⊕ [T]; ITE = p(x, 1) - p(x, 0).
class SLearner final : public UpliftModel {
 public:
  SLearner(Dims dims, std::unique_ptr<BaseLearner> learner) : dims_(dims), learner_(std::move(learner)) {}

  std::string kind() const override { return "slearner"; }
  Dims dims() const override { return dims_; }
  std::vector<Prediction> predict(const Dataset& data) const override;
  void save_body(std::ostream& out) const override;

  const BaseLearner& learner() const { return *learner_; }

 private:
  Dims dims_;
  std::unique_ptr<BaseLearner> learner_;
};

// Separate learners per arm; ITE = p1(x) - p0(x).
class TLearner final : public UpliftModel {
 public:
  TLearner(Dims dims, std::unique_ptr<BaseLearner> control, std::unique_ptr<BaseLearner> treated)
      : dims_(dims), control_(std::move(control)), treated_(std::move(treated)) {}

  std::string kind() const override { return "tlearner"; }
  Dims dims() const override { return dims_; }
  std::vector<Prediction> predict(const Dataset& data) const override;
  void save_body(std::ostream& out) const override;

 private:
  Dims dims_;
  std::unique_ptr<BaseLearner> control_;
  std::unique_ptr<BaseLearner> treated_;
};

// Both throw Training when an arm is empty.
SLearner fit_s_learner(const Dataset& train_set, const BaseLearner& prototype);
TLearner fit_t_learner(const Dataset& train_set, const BaseLearner& prototype);

std::unique_ptr<UpliftModel> read_s_learner(std::istream& in);
std::unique_ptr<UpliftModel> read_t_learner(std::istream& in);

}  // namespace mtdlift
