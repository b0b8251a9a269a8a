#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtdlift/dataset.hpp"
#include "mtdlift/model.hpp"
#include "mtdlift/neural.hpp"

namespace mtdlift {

// Hyperparameters of one training run. The search-grid members default to a
// point inside the grid.
struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  double learning_rate = 1e-4;
  double l2 = 1e-5;
  std::size_t hidden_size = 64;
  std::size_t output_size = 16;
  std::size_t patience = 8;
  std::uint64_t seed = 0;
  double kld_weight = 1.0;
  // Slice of the training set monitored for early stopping; 0 trains for the
  // full epoch budget without monitoring.
  double validation_fraction = 0.15;
  // false: each arm gets its own representation stack.
  bool shared_repr = true;
  // Attention context: the shared representation (true) or the raw context.
  bool attention_on_repr = true;
  // Feed each step's timestamp (days / 365) to the LSTM next to the act row.
  bool use_timestamps = true;

  void validate() const;
  bool within_search_grid() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& doc);
};

// Per-batch forward results. Representation rows are grouped by factual arm.
struct BatchOutput {
  std::vector<double> pred_control;
  std::vector<double> pred_treated;
  std::vector<std::uint8_t> treated;  // factual arm per batch row
  nn::Tensor repr_control_rows;
  nn::Tensor repr_treated_rows;
};

struct LossParts {
  double control = 0.0;     // L_C
  double treated = 0.0;     // L_T
  double divergence = 0.0;  // L_D (already weighted)
  double total = 0.0;
  bool divergence_skipped = false;
};

struct LossGrads {
  std::vector<double> d_pred_control;
  std::vector<double> d_pred_treated;
  nn::Tensor d_repr_control_rows;
  nn::Tensor d_repr_treated_rows;
};

// total = L_C + L_T + kld_weight * KL(treated ‖ control). L_C and L_T are mean
// BCE over the factual control / treated rows; the divergence term is skipped
// when either arm has fewer than two rows.
LossParts total_loss(const BatchOutput& out, std::span<const int> labels, double kld_weight,
                     LossGrads* grads = nullptr);

struct StepRecord {
  double control, treated, divergence, total;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double control = 0, treated = 0, divergence = 0, total = 0;
  double val_total = 0;
  std::size_t kld_skipped = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  std::size_t best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  std::size_t kld_skipped = 0;

  // "epoch L_C L_T L_D total val_total", one line per epoch.
  std::string metrics_log() const;
};

// Stops after `patience` consecutive evaluations without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);
  // Returns true when `value` is a new best.
  bool update(double value);
  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }
  std::size_t evaluations() const { return evaluations_; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  std::size_t evaluations_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

// Two-head network: representation stack on the context, an LSTM + additive
// attention encoder over the act sequence, a control head on the
// representation and a treated head on [representation, pooled sequence].
class MtdNet final : public UpliftModel {
 public:
  MtdNet(Dims dims, TrainConfig config);
  MtdNet(Dims dims, TrainConfig config, nn::ParamStore params);

  std::string kind() const override { return "mtdnet"; }
  Dims dims() const override { return dims_; }
  std::vector<Prediction> predict(const Dataset& data) const override;
  void save_body(std::ostream& out) const override;

  const TrainConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  std::size_t step_input_width() const { return dims_.categories + (config_.use_timestamps ? 1 : 0); }

  BatchOutput forward(const Dataset& data, std::span<const std::size_t> rows) const;

  // Forward + backward for one mini-batch; parameter gradients are
  // accumulated into params(). Returns the loss components.
  LossParts accumulate_gradients(const Dataset& data, std::span<const std::size_t> rows);

  // Loss over a whole set (chunked forward, one divergence term).
  LossParts evaluate(const Dataset& data, std::span<const std::size_t> rows) const;

 private:
  struct Cache;
  BatchOutput run(const Dataset& data, std::span<const std::size_t> rows, Cache* cache) const;
  void backward(const Dataset& data, std::span<const std::size_t> rows, Cache& cache, const LossGrads& grads);
  void init_params();

  Dims dims_;
  TrainConfig config_;
  nn::ParamStore params_;
};

// Mini-batch training with early stopping on a validation slice carved from
// `train_set`; best-validation parameters are restored at the end.
TrainHistory train(MtdNet& model, const Dataset& train_set);

// Two MtdNet instances with disjoint stacks, each fit on one arm only.
class NeuralTLearner final : public UpliftModel {
 public:
  NeuralTLearner(MtdNet control_model, MtdNet treated_model)
      : control_(std::move(control_model)), treated_(std::move(treated_model)) {}

  std::string kind() const override { return "neural-tlearner"; }
  Dims dims() const override { return control_.dims(); }
  std::vector<Prediction> predict(const Dataset& data) const override;
  void save_body(std::ostream& out) const override;

  const MtdNet& control_model() const { return control_; }
  const MtdNet& treated_model() const { return treated_; }

 private:
  MtdNet control_;
  MtdNet treated_;
};

NeuralTLearner train_neural_t_learner(const Dataset& train_set, TrainConfig config);

// Cartesian hyperparameter grid.
struct SearchGrid {
  std::vector<std::size_t> batch_size;
  std::vector<std::size_t> epochs;
  std::vector<double> learning_rate;
  std::vector<double> l2;
  std::vector<std::size_t> hidden_size;
  std::vector<std::size_t> output_size;

  static SearchGrid full();   // 3*3*3*3*4*3 = 972 points
  static SearchGrid sub12();  // documented 12-point subset (docs/experiments.md)
  static SearchGrid from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  std::size_t size() const;
  // Point i in row-major order (batch size slowest, output size fastest).
  TrainConfig at(std::size_t i, const TrainConfig& base) const;
};

struct GridResult {
  std::vector<TrainConfig> configs;
  std::vector<double> scores;  // best validation total loss per point
  std::size_t best = 0;

  std::string table_csv() const;
};

// Points run on up to `jobs` threads; results are stored by grid index.
GridResult grid_search(const Dataset& train_set, const SearchGrid& grid, const TrainConfig& base,
                       std::size_t jobs = 1);

}  // namespace mtdlift
